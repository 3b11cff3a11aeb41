//! Value redaction and value-pending views of a flattened sample.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FlatObservation, Hours, MitsSample, Observation};
use crate::registry::Modality;

/// Removes every value, keeping the (charttime, channel) sequence.
pub fn redact_values(flat: &[FlatObservation]) -> Vec<FlatObservation> {
    flat.iter()
        .map(|obs| FlatObservation {
            value: None,
            ..obs.clone()
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Countermeasure {
    DropObservation,
    ShowPresence,
}

impl FromStr for Countermeasure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drop" | "drop_observation" | "drop-observation" => Ok(Countermeasure::DropObservation),
            "show-presence" | "show_presence" => Ok(Countermeasure::ShowPresence),
            other => Err(Error::Config(format!("unknown countermeasure `{other}`"))),
        }
    }
}

impl fmt::Display for Countermeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Countermeasure::DropObservation => "drop",
            Countermeasure::ShowPresence => "show-presence",
        })
    }
}

/// How an absent storetime is interpreted. Only one rule exists: the value
/// counts as available at its charttime.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingStoretimeRule {
    #[default]
    TreatAvailable,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendingPolicy {
    pub cutoff_hours: Hours,
    pub countermeasure: Countermeasure,
    #[serde(default)]
    pub missing_storetime_rule: MissingStoretimeRule,
}

impl PendingPolicy {
    pub fn new(cutoff_hours: Hours, countermeasure: Countermeasure) -> Result<Self> {
        if !(cutoff_hours > 0.0) {
            return Err(Error::Config(format!(
                "cutoff_hours must be positive, got {cutoff_hours}"
            )));
        }
        Ok(PendingPolicy {
            cutoff_hours,
            countermeasure,
            missing_storetime_rule: MissingStoretimeRule::TreatAvailable,
        })
    }

    /// Pending iff a storetime exists and strictly exceeds the cutoff.
    pub fn is_pending(&self, storetime: Option<Hours>) -> bool {
        match (storetime, self.missing_storetime_rule) {
            (Some(st), _) => st > self.cutoff_hours,
            (None, MissingStoretimeRule::TreatAvailable) => false,
        }
    }
}

impl Default for PendingPolicy {
    fn default() -> Self {
        PendingPolicy {
            cutoff_hours: 24.0,
            countermeasure: Countermeasure::DropObservation,
            missing_storetime_rule: MissingStoretimeRule::TreatAvailable,
        }
    }
}

pub fn apply_value_pending(flat: &[FlatObservation], policy: &PendingPolicy) -> Vec<FlatObservation> {
    match policy.countermeasure {
        Countermeasure::DropObservation => flat
            .iter()
            .filter(|obs| !policy.is_pending(obs.storetime))
            .cloned()
            .collect(),
        Countermeasure::ShowPresence => flat
            .iter()
            .map(|obs| {
                if policy.is_pending(obs.storetime) {
                    FlatObservation {
                        value: None,
                        pending: true,
                        ..obs.clone()
                    }
                } else {
                    FlatObservation {
                        pending: false,
                        ..obs.clone()
                    }
                }
            })
            .collect(),
    }
}

/// Per-modality pending summary over a dataset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PendingStats {
    pub n_samples: usize,
    pub modalities: BTreeMap<Modality, ModalityPending>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModalityPending {
    /// Mean number of pending observations per sample.
    pub mean_count: f64,
    /// Mean of per-sample pending / total, over samples with at least one
    /// observation of this modality.
    pub mean_rate: f64,
    pub total_pending: usize,
    pub total_observations: usize,
    /// Samples contributing to `mean_rate`.
    pub rated_samples: usize,
}

pub fn pending_statistics(dataset: &[MitsSample], policy: &PendingPolicy) -> PendingStats {
    let mut stats = PendingStats {
        n_samples: dataset.len(),
        modalities: BTreeMap::new(),
    };
    let mut rate_sums: BTreeMap<Modality, f64> = BTreeMap::new();
    for modality in [Modality::Numeric, Modality::Text] {
        stats.modalities.insert(modality, ModalityPending::default());
        rate_sums.insert(modality, 0.0);
    }
    for sample in dataset {
        let mut per: BTreeMap<Modality, (usize, usize)> = BTreeMap::new();
        for obs in &sample.observations {
            let e = per.entry(obs.value.modality()).or_default();
            e.1 += 1;
            if is_observation_pending(obs, policy) {
                e.0 += 1;
            }
        }
        for (modality, (pending, total)) in per {
            let m = stats.modalities.get_mut(&modality).expect("both modalities seeded");
            m.total_pending += pending;
            m.total_observations += total;
            m.rated_samples += 1;
            *rate_sums.get_mut(&modality).expect("seeded") += pending as f64 / total as f64;
        }
    }
    for (modality, m) in stats.modalities.iter_mut() {
        if stats.n_samples > 0 {
            m.mean_count = m.total_pending as f64 / stats.n_samples as f64;
        }
        if m.rated_samples > 0 {
            m.mean_rate = rate_sums[modality] / m.rated_samples as f64;
        }
    }
    stats
}

pub fn is_observation_pending(obs: &Observation, policy: &PendingPolicy) -> bool {
    policy.is_pending(obs.storetime)
}

impl PendingStats {
    /// `modality,mean_count,mean_rate,total_pending,total_observations`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("modality,mean_count,mean_rate,total_pending,total_observations\n");
        for (modality, m) in &self.modalities {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                modality, m.mean_count, m.mean_rate, m.total_pending, m.total_observations
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{flatten, Observation};
    use crate::registry::ChannelRegistry;
    use crate::xml::{render, RenderMode};

    fn flat_for(obs: Vec<Observation>) -> Vec<FlatObservation> {
        flatten(&MitsSample::new("s", 0, obs), &ChannelRegistry::mimic_iv()).unwrap()
    }

    fn drop_policy() -> PendingPolicy {
        PendingPolicy::new(24.0, Countermeasure::DropObservation).unwrap()
    }

    fn show_policy() -> PendingPolicy {
        PendingPolicy::new(24.0, Countermeasure::ShowPresence).unwrap()
    }

    #[test]
    fn redaction_turns_triplets_into_pairs() {
        let flat = flat_for(vec![
            Observation::numeric(0.88, "glucose", 170.0),
            Observation::numeric(3.80, "anion_gap", 11.0),
            Observation::text(4.0, "radiology_note", "Portable chest..."),
        ]);
        let red = redact_values(&flat);
        assert_eq!(
            render(&red, RenderMode::RedactedPair).unwrap().text,
            "<time> 0.88 hours </time> <channel> Glucose (mg/dL) </channel>\n\
             <time> 3.80 hours </time> <channel> Anion Gap (mEq/L) </channel>\n\
             <time> 4.00 hours </time> <channel> Radiology Note </channel>"
        );
        assert_eq!(redact_values(&red), red);
        assert!(redact_values(&[]).is_empty());
    }

    #[test]
    fn late_storetime_is_dropped() {
        let flat = flat_for(vec![Observation::numeric(19.10, "bicarbonate", 20.0).with_storetime(26.5)]);
        assert!(apply_value_pending(&flat, &drop_policy()).is_empty());
    }

    #[test]
    fn missing_storetime_is_available() {
        let flat = flat_for(vec![Observation::numeric(19.10, "bicarbonate", 20.0)]);
        let out = apply_value_pending(&flat, &drop_policy());
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].value.as_deref(), Some("20.00"));
    }

    #[test]
    fn on_time_storetime_stays_a_triplet() {
        let flat = flat_for(vec![Observation::numeric(23.9, "glucose", 90.0).with_storetime(23.95)]);
        let out = apply_value_pending(&flat, &show_policy());
        assert!(!out[0].pending);
        assert_eq!(out[0].value.as_deref(), Some("90.00"));
    }

    #[test]
    fn storetime_at_cutoff_is_available() {
        assert!(!drop_policy().is_pending(Some(24.0)));
        assert!(drop_policy().is_pending(Some(24.000001)));
    }

    #[test]
    fn show_presence_renders_pending_snippet() {
        let flat = flat_for(vec![
            Observation::numeric(19.10, "anion_gap", 14.0).with_storetime(20.0),
            Observation::numeric(19.10, "bicarbonate", 22.0).with_storetime(25.0),
            Observation::numeric(19.10, "red_blood_cells", 2.85).with_storetime(19.5),
        ]);
        let out = apply_value_pending(&flat, &show_policy());
        assert_eq!(out.len(), 3);
        assert_eq!(
            render(&out, RenderMode::MixedByPendingFlag).unwrap().text,
            "<time> 19.10 hours </time> <channel> Anion Gap (mEq/L) </channel> <value> 14.00 </value>\n\
             <time> 19.10 hours </time> <channel> Bicarbonate (mEq/L) </channel>\n\
             <time> 19.10 hours </time> <channel> Red Blood Cells (K/uL) </channel> <value> 2.85 </value>"
        );
    }

    #[test]
    fn cutoff_must_be_positive() {
        assert!(PendingPolicy::new(0.0, Countermeasure::ShowPresence).is_err());
    }

    #[test]
    fn statistics_direct_ratio() {
        let notes = (0..4)
            .map(|i| {
                Observation::text(i as f64, "radiology_note", "n")
                    .with_storetime(if i < 2 { 30.0 } else { 10.0 })
            })
            .collect();
        let stats = pending_statistics(&[MitsSample::new("s", 1, notes)], &drop_policy());
        let text = &stats.modalities[&Modality::Text];
        assert_eq!(text.mean_rate, 0.5);
        assert_eq!(text.mean_count, 2.0);
        assert_eq!(stats.modalities[&Modality::Numeric].mean_rate, 0.0);
    }

    #[test]
    fn statistics_without_storetimes_are_zero() {
        let s = MitsSample::new("s", 0, vec![Observation::numeric(1.0, "glucose", 1.0)]);
        let stats = pending_statistics(&[s], &drop_policy());
        assert!(stats.modalities.values().all(|m| m.mean_rate == 0.0 && m.mean_count == 0.0));
    }
}
