use std::collections::{BTreeMap, BTreeSet};

use mitskit_core::dataset::Split;
use mitskit_core::ingest::{make_split, CohortRules, StayInfo};
use mitskit_core::metrics::{auroc, average_precision};
use mitskit_core::transforms::{apply_value_pending, redact_values, Countermeasure, PendingPolicy};
use mitskit_core::{
    flatten, parse, render, ChannelRegistry, FlatObservation, MitsSample, Modality, Observation, RenderMode, Task, Value,
};
use proptest::prelude::*;

fn registry() -> ChannelRegistry {
    ChannelRegistry::mimic_iv()
}

fn observation() -> impl Strategy<Value = Observation> {
    let reg = registry();
    let numeric: Vec<String> = reg.ids_by_modality(Modality::Numeric).map(String::from).collect();
    let text: Vec<String> = reg.ids_by_modality(Modality::Text).map(String::from).collect();
    let time = (0u32..2400).prop_map(|c| c as f64 / 100.0);
    let store = proptest::option::of(0u32..4800).prop_map(|s| s.map(|c| c as f64 / 100.0));
    prop_oneof![
        (time.clone(), proptest::sample::select(numeric), -50_000i32..50_000, store.clone())
            .prop_map(|(t, ch, v, st)| Observation { storetime: st, ..Observation::numeric(t, ch, v as f64 / 100.0) }),
        (time, proptest::sample::select(text), "[A-Za-z][A-Za-z0-9 .,:]{0,40}", store)
            .prop_map(|(t, ch, v, st)| Observation { storetime: st, ..Observation::text(t, ch, v) }),
    ]
}

fn sample() -> impl Strategy<Value = MitsSample> {
    proptest::collection::vec(observation(), 0..40).prop_map(|obs| MitsSample::new("p", 0, obs))
}

fn key(flat: &[FlatObservation]) -> Vec<(String, String, Option<String>)> {
    flat.iter().map(|o| (o.time_text(), o.channel.clone(), o.value.clone())).collect()
}

fn scores_and_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..40).prop_flat_map(|n| {
        (
            proptest::collection::vec((0u32..20).prop_map(|v| v as f64 / 20.0), n),
            proptest::collection::vec(any::<bool>(), n),
        )
            .prop_map(|(s, mut l)| {
                l[0] = true;
                l[1] = false;
                (s, l)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn flatten_ignores_input_order(s in sample(), seed in any::<u64>()) {
        let reg = registry();
        let mut shuffled = s.clone();
        let n = shuffled.observations.len();
        if n > 1 {
            let mut state = seed;
            for i in (1..n).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.observations.swap(i, (state >> 33) as usize % (i + 1));
            }
        }
        let (a, b) = (flatten(&s, &reg).unwrap(), flatten(&shuffled, &reg).unwrap());
        let order = |f: &[FlatObservation]| f.iter().map(|o| (o.time_text(), o.channel.clone())).collect::<Vec<_>>();
        prop_assert_eq!(order(&a), order(&b));
        let multiset = |f: &[FlatObservation]| {
            let mut k = key(f);
            k.sort();
            k
        };
        prop_assert_eq!(multiset(&a), multiset(&b));
    }

    #[test]
    fn flatten_keeps_input_order_for_exact_duplicates(s in sample()) {
        let flat = flatten(&s, &registry()).unwrap();
        let mut seen: BTreeMap<(String, String), Vec<String>> = BTreeMap::new();
        for o in &flat {
            seen.entry((o.time_text(), o.channel.clone())).or_default().push(o.value.clone().unwrap());
        }
        let mut expected: BTreeMap<(String, String), Vec<String>> = BTreeMap::new();
        for o in &s.observations {
            let v = match &o.value {
                Value::Numeric(x) => format!("{x:.2}"),
                Value::Text(t) => t.clone(),
            };
            expected.entry((format!("{:.2}", o.charttime), o.channel.clone())).or_default().push(v);
        }
        prop_assert_eq!(seen, expected);
    }

    #[test]
    fn flatten_is_time_ordered(s in sample()) {
        let flat = flatten(&s, &registry()).unwrap();
        prop_assert!(flat.windows(2).all(|w| (w[0].charttime, w[0].tie_rank) <= (w[1].charttime, w[1].tie_rank)));
    }

    #[test]
    fn render_parse_round_trip(s in sample()) {
        let reg = registry();
        let flat = flatten(&s, &reg).unwrap();
        let policy = PendingPolicy::new(24.0, Countermeasure::ShowPresence).unwrap();
        for (mode, view) in [
            (RenderMode::FullTriplet, flat.clone()),
            (RenderMode::RedactedPair, redact_values(&flat)),
            (RenderMode::MixedByPendingFlag, apply_value_pending(&flat, &policy)),
        ] {
            let text = render(&view, mode).unwrap().text;
            prop_assert_eq!(key(&parse(&text, &reg).unwrap()), key(&view));
        }
    }

    #[test]
    fn redaction_is_idempotent(s in sample()) {
        let flat = flatten(&s, &registry()).unwrap();
        let once = redact_values(&flat);
        prop_assert_eq!(redact_values(&once), once.clone());
        prop_assert_eq!(once.len(), flat.len());
    }

    #[test]
    fn drop_keeps_only_available(s in sample(), cutoff in 1u32..48) {
        let flat = flatten(&s, &registry()).unwrap();
        let policy = PendingPolicy::new(cutoff as f64, Countermeasure::DropObservation).unwrap();
        let kept = apply_value_pending(&flat, &policy);
        prop_assert!(kept.iter().all(|o| o.storetime.is_none_or(|t| t <= cutoff as f64)));
        let expected = flat.iter().filter(|o| !policy.is_pending(o.storetime)).count();
        prop_assert_eq!(kept.len(), expected);
    }

    #[test]
    fn auroc_invariant_to_monotone_maps((s, l) in scores_and_labels()) {
        let base = auroc(&s, &l).unwrap();
        let mapped: Vec<f64> = s.iter().map(|x| (3.0 * x).exp() + 7.0).collect();
        prop_assert!((auroc(&mapped, &l).unwrap() - base).abs() < 1e-12);
        let ap_base = average_precision(&s, &l).unwrap();
        prop_assert!((average_precision(&mapped, &l).unwrap() - ap_base).abs() < 1e-12);
    }

    #[test]
    fn auroc_of_negated_scores_is_complement((s, l) in scores_and_labels()) {
        let neg: Vec<f64> = s.iter().map(|x| -x).collect();
        let sum = auroc(&s, &l).unwrap() + auroc(&neg, &l).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_lie_in_unit_interval((s, l) in scores_and_labels()) {
        let a = auroc(&s, &l).unwrap();
        let p = average_precision(&s, &l).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(p > 0.0 && p <= 1.0);
    }

    #[test]
    fn stricter_cohort_admits_subset(
        labs in 0usize..120,
        notes in 0usize..12,
        los in 0u32..200,
        extra_labs in 0usize..40,
        shrink_lo in 0usize..3,
        shrink_hi in 0usize..3,
        extra_los in 0u32..50,
        task in prop_oneof![Just(Task::Ihm), Just(Task::Los)],
    ) {
        let stay = StayInfo { stay_id: "s".into(), los_hours: los as f64, hospital_expired: false, unit_expired: None };
        let loose = CohortRules::mimic_iv(task);
        let (lo, hi) = loose.note_count_range;
        let strict = CohortRules {
            min_labs: loose.min_labs + extra_labs,
            note_count_range: (lo + shrink_lo, hi.saturating_sub(shrink_hi)),
            min_los_hours: loose.min_los_hours + extra_los as f64,
            ..loose.clone()
        };
        if strict.admits(labs, notes, &stay) {
            prop_assert!(loose.admits(labs, notes, &stay));
        }
    }

    #[test]
    fn split_is_a_partition(n in 10usize..400, seed in any::<u64>()) {
        let ids: Vec<String> = (0..n).map(|i| format!("id{i}")).collect();
        let split = make_split(&ids, seed).unwrap();
        let assigned: BTreeSet<&str> = split.assignment.keys().map(String::as_str).collect();
        prop_assert_eq!(assigned.len(), n);
        prop_assert!(ids.iter().all(|id| assigned.contains(id.as_str())));
        let held = n * 15 / 100;
        prop_assert_eq!(split.count(Split::Validation), held);
        prop_assert_eq!(split.count(Split::Test), held);
        prop_assert_eq!(split.count(Split::Train), n - 2 * held);
        prop_assert_eq!(make_split(&ids, seed).unwrap(), split);
    }
}
