//! Synthetic MITS with label-dependent sampling intensity.
//!
//! Every channel is an independent homogeneous Poisson process over the
//! window. Positive samples (label 1) use `intensity_ratio * rate`, negative
//! samples use `rate`. Each sample draws from its own ChaCha stream derived
//! from the config seed and the sample index, so output does not depend on
//! how generation is scheduled across threads.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FlatObservation, Hours, MitsSample, Observation, TimeWindow};
use crate::registry::{ChannelRegistry, Modality};

/// Sampling and value model for one channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub channel: String,
    /// Events per hour for label 0.
    pub rate_per_hour: f64,
    #[serde(default)]
    pub mean: f64,
    #[serde(default)]
    pub spread: f64,
    /// Added to `mean` for label 1.
    #[serde(default)]
    pub label_shift: f64,
}

impl ChannelModel {
    fn numeric(channel: &str, per_day: f64, mean: f64, spread: f64, label_shift: f64) -> Self {
        ChannelModel {
            channel: channel.to_string(),
            rate_per_hour: per_day / 24.0,
            mean,
            spread,
            label_shift,
        }
    }

    fn text(channel: &str, per_day: f64) -> Self {
        ChannelModel::numeric(channel, per_day, 0.0, 0.0, 0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoteModel {
    pub neutral: Vec<String>,
    pub concerning: Vec<String>,
    /// Share of concerning sentences in label-0 notes.
    pub concerning_share_negative: f64,
    /// Share of concerning sentences in label-1 notes.
    pub concerning_share_positive: f64,
    pub min_sentences: usize,
    pub max_sentences: usize,
}

impl Default for NoteModel {
    fn default() -> Self {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect();
        NoteModel {
            neutral: s(&[
                "Lines and tubes are unchanged in position.",
                "No focal consolidation is seen.",
                "Cardiomediastinal silhouette is within normal limits.",
                "No pneumothorax.",
                "Mild bibasilar atelectasis.",
                "Patient resting comfortably, vital signs stable.",
                "Tolerating diet, ambulating with assistance.",
            ]),
            concerning: s(&[
                "Worsening bilateral opacities concerning for edema.",
                "New left lower lobe consolidation.",
                "Moderate bilateral pleural effusions, increased.",
                "Patient remains intubated on pressor support.",
                "Increasing oxygen requirement overnight.",
                "Family meeting held regarding goals of care.",
                "Persistent hypotension despite fluid resuscitation.",
            ]),
            concerning_share_negative: 0.2,
            concerning_share_positive: 0.6,
            min_sentences: 2,
            max_sentences: 4,
        }
    }
}

/// Exponential storetime delays per modality.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DelayModel {
    pub numeric_mean_hours: f64,
    pub text_mean_hours: f64,
}

impl Default for DelayModel {
    fn default() -> Self {
        DelayModel {
            numeric_mean_hours: 1.0,
            text_mean_hours: 5.7,
        }
    }
}

impl DelayModel {
    pub fn mean_for(&self, modality: Modality) -> f64 {
        match modality {
            Modality::Numeric => self.numeric_mean_hours,
            Modality::Text => self.text_mean_hours,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_samples: usize,
    pub positive_rate: f64,
    pub intensity_ratio: f64,
    pub window: TimeWindow,
    /// Builtin per-channel defaults used for registry channels that have no
    /// entry in `channels`: `mimic_iv` or `eicu`.
    pub preset: String,
    pub channels: Vec<ChannelModel>,
    pub notes: NoteModel,
    pub delays: DelayModel,
    /// When false, observations carry no storetime.
    pub storetimes: bool,
    pub id_prefix: String,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 0,
            n_samples: 1000,
            positive_rate: 0.25,
            intensity_ratio: 2.0,
            window: TimeWindow::default(),
            preset: "mimic_iv".into(),
            channels: Vec::new(),
            notes: NoteModel::default(),
            delays: DelayModel::default(),
            storetimes: true,
            id_prefix: "synth".into(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.positive_rate > 0.0 && self.positive_rate < 1.0) {
            return bad(format!("positive_rate must lie in (0, 1), got {}", self.positive_rate));
        }
        if !(self.intensity_ratio >= 1.0) || !self.intensity_ratio.is_finite() {
            return bad(format!("intensity_ratio must be >= 1, got {}", self.intensity_ratio));
        }
        if !(self.window.length() > 0.0) {
            return bad("window must have positive length".into());
        }
        for c in &self.channels {
            if !(c.rate_per_hour > 0.0) || !c.rate_per_hour.is_finite() {
                return bad(format!("rate for `{}` must be positive", c.channel));
            }
            if !(c.spread >= 0.0) {
                return bad(format!("spread for `{}` must be non-negative", c.channel));
            }
        }
        let d = &self.delays;
        if !(d.numeric_mean_hours > 0.0 && d.text_mean_hours > 0.0) {
            return bad("delay means must be positive".into());
        }
        let n = &self.notes;
        if n.neutral.is_empty() || n.concerning.is_empty() {
            return bad("note pools must be non-empty".into());
        }
        if n.min_sentences == 0 || n.min_sentences > n.max_sentences {
            return bad("note sentence range must satisfy 1 <= min <= max".into());
        }
        for p in [n.concerning_share_negative, n.concerning_share_positive] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("concerning share {p} outside [0, 1]"));
            }
        }
        preset_channels(&self.preset)?;
        Ok(())
    }

    /// Per-channel models for every channel of `registry`, in registry order.
    pub fn resolve_channels(&self, registry: &ChannelRegistry) -> Result<Vec<(ChannelModel, Modality)>> {
        let preset = preset_channels(&self.preset)?;
        for c in &self.channels {
            if registry.get(&c.channel).is_none() {
                return Err(Error::UnknownChannel(c.channel.clone()));
            }
        }
        registry
            .channels()
            .iter()
            .map(|spec| {
                let model = self
                    .channels
                    .iter()
                    .chain(preset.iter())
                    .find(|c| c.channel == spec.id)
                    .cloned()
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "no generator model for channel `{}` in preset `{}`",
                            spec.id, self.preset
                        ))
                    })?;
                Ok((model, spec.modality))
            })
            .collect()
    }
}

/// Per-channel daily counts follow the cohort statistics of the IHM cohorts.
pub fn preset_channels(name: &str) -> Result<Vec<ChannelModel>> {
    let n = ChannelModel::numeric;
    match name {
        "mimic_iv" | "mimic-iv" | "mimic" => Ok(vec![
            n("anion_gap", 4.18, 14.0, 3.0, 2.0),
            n("bicarbonate", 4.21, 24.0, 4.0, -2.0),
            n("urea_nitrogen", 4.22, 25.0, 12.0, 10.0),
            n("calcium_total", 3.78, 8.5, 0.7, -0.3),
            n("chloride", 4.33, 104.0, 5.0, 0.0),
            n("creatinine", 4.22, 1.2, 0.6, 0.5),
            n("glucose", 3.43, 130.0, 35.0, 15.0),
            n("hematocrit", 5.28, 30.0, 5.0, -1.5),
            n("hemoglobin", 1.91, 10.0, 1.8, -0.5),
            n("magnesium", 3.98, 2.0, 0.3, 0.05),
            n("mch", 4.73, 30.0, 2.0, 0.0),
            n("mchc", 4.74, 33.0, 1.5, 0.0),
            n("mcv", 4.74, 90.0, 6.0, 1.0),
            n("neutrophils", 0.77, 75.0, 10.0, 4.0),
            n("phosphate", 3.80, 3.5, 1.0, 0.5),
            n("platelet_count", 4.96, 200.0, 80.0, -30.0),
            n("red_blood_cells", 4.74, 3.4, 0.6, -0.2),
            n("rdw", 4.73, 15.0, 2.0, 1.0),
            n("sodium", 4.27, 139.0, 4.0, 0.0),
            n("vancomycin", 0.13, 18.0, 7.0, 0.0),
            n("white_blood_cells", 4.74, 11.0, 5.0, 3.0),
            ChannelModel::text("radiology_note", 3.12),
        ]),
        "eicu" => Ok(vec![
            n("anion_gap", 1.73, 13.0, 3.0, 2.0),
            n("bicarbonate", 1.99, 24.0, 4.0, -2.0),
            n("bun", 1.98, 28.0, 15.0, 10.0),
            n("calcium", 1.93, 8.4, 0.7, -0.3),
            n("chloride", 2.01, 104.0, 5.0, 0.0),
            n("creatinine", 1.98, 1.4, 0.8, 0.5),
            n("glucose", 2.03, 140.0, 40.0, 15.0),
            n("hct", 1.90, 32.0, 5.0, -1.5),
            n("hgb", 1.94, 10.5, 1.8, -0.5),
            n("magnesium", 1.29, 2.0, 0.3, 0.05),
            n("mch", 1.64, 30.0, 2.0, 0.0),
            n("mchc", 1.65, 33.0, 1.5, 0.0),
            n("mcv", 1.65, 90.0, 6.0, 1.0),
            n("neutrophils", 0.69, 75.0, 10.0, 4.0),
            n("phosphate", 0.97, 3.5, 1.0, 0.5),
            n("platelets", 1.67, 200.0, 80.0, -30.0),
            n("potassium", 2.26, 4.1, 0.6, 0.2),
            n("rbc", 1.65, 3.5, 0.6, -0.2),
            n("rdw", 1.50, 15.0, 2.0, 1.0),
            n("sodium", 2.17, 139.0, 4.0, 0.0),
            n("vancomycin", 0.07, 18.0, 7.0, 0.0),
            n("wbc", 1.65, 11.0, 5.0, 3.0),
            ChannelModel::text("care_plan_note", 3.86),
        ]),
        other => Err(Error::Config(format!("unknown generator preset `{other}`"))),
    }
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn note_text(rng: &mut ChaCha8Rng, notes: &NoteModel, label: usize) -> String {
    let share = if label == 1 {
        notes.concerning_share_positive
    } else {
        notes.concerning_share_negative
    };
    let k = rng.random_range(notes.min_sentences..=notes.max_sentences);
    let mut parts = Vec::with_capacity(k);
    for _ in 0..k {
        let pool = if rng.random_bool(share) {
            &notes.concerning
        } else {
            &notes.neutral
        };
        parts.push(pool[rng.random_range(0..pool.len())].as_str());
    }
    parts.join(" ")
}

fn generate_one(
    index: usize,
    config: &GeneratorConfig,
    channels: &[(ChannelModel, Modality)],
) -> MitsSample {
    let mut rng = sample_rng(config.seed, index);
    let label = usize::from(rng.random_bool(config.positive_rate));
    let multiplier = if label == 1 { config.intensity_ratio } else { 1.0 };
    let start = config.window.start;
    let end = config.window.end;
    let mut observations = Vec::new();
    for (model, modality) in channels {
        let gap = Exp::new(model.rate_per_hour * multiplier).expect("validated rate");
        let delay = Exp::new(1.0 / config.delays.mean_for(*modality)).expect("validated delay");
        let shift = if label == 1 { model.label_shift } else { 0.0 };
        let value_dist = Normal::new(model.mean + shift, model.spread).expect("validated spread");
        let mut t: Hours = start;
        loop {
            t += gap.sample(&mut rng);
            if t > end {
                break;
            }
            let charttime = round2(t).min(end);
            let mut obs = match modality {
                Modality::Numeric => {
                    let v = round2(value_dist.sample(&mut rng).max(0.0));
                    Observation::numeric(charttime, &model.channel, v)
                }
                Modality::Text => {
                    Observation::text(charttime, &model.channel, note_text(&mut rng, &config.notes, label))
                }
            };
            let d = delay.sample(&mut rng);
            if config.storetimes {
                obs = obs.with_storetime(round2(charttime + d));
            }
            observations.push(obs);
        }
    }
    let mut sample = MitsSample::new(format!("{}-{index:06}", config.id_prefix), label, observations);
    sample.window = config.window;
    sample
}

/// Generates `config.n_samples` samples over the channels of `registry`.
pub fn generate_dataset(config: &GeneratorConfig, registry: &ChannelRegistry) -> Result<Vec<MitsSample>> {
    config.validate()?;
    let channels = config.resolve_channels(registry)?;
    let n = config.n_samples;
    let workers = std::thread::available_parallelism()
        .map(|w| w.get())
        .unwrap_or(1)
        .min(n.max(1));
    let chunk = n.div_ceil(workers).max(1);
    let mut out: Vec<MitsSample> = Vec::with_capacity(n);
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..n)
            .step_by(chunk)
            .map(|lo| {
                let channels = &channels;
                scope.spawn(move || {
                    (lo..(lo + chunk).min(n))
                        .map(|i| generate_one(i, config, channels))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            out.extend(h.join().expect("generator worker panicked"));
        }
    });
    Ok(out)
}

/// Total observation count.
pub fn count_baseline_score(sample: &MitsSample) -> f64 {
    sample.observations.len() as f64
}

/// Count score of an already transformed view.
pub fn count_baseline_flat(flat: &[FlatObservation]) -> f64 {
    flat.len() as f64
}

/// `label,modality,count,n_samples` rows: how many samples of each label
/// have exactly `count` observations of each modality, plus `total`.
pub fn count_histogram_csv(dataset: &[MitsSample]) -> String {
    let mut hist: BTreeMap<(usize, &'static str, usize), usize> = BTreeMap::new();
    for s in dataset {
        let numeric = s.count_modality(Modality::Numeric);
        let text = s.count_modality(Modality::Text);
        for (kind, c) in [("numeric", numeric), ("text", text), ("total", numeric + text)] {
            *hist.entry((s.label, kind, c)).or_default() += 1;
        }
    }
    let mut out = String::from("label,modality,count,n_samples\n");
    for ((label, kind, count), n) in hist {
        out.push_str(&format!("{label},{kind},{count},{n}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::to_jsonl;
    use crate::model::validate_sample;

    fn unit_rate_config(r: f64, n: usize) -> GeneratorConfig {
        GeneratorConfig {
            seed: 7,
            n_samples: n,
            positive_rate: 0.5,
            intensity_ratio: r,
            channels: vec![ChannelModel::numeric("glucose", 24.0, 100.0, 10.0, 0.0)],
            ..GeneratorConfig::default()
        }
    }

    fn mean_counts(data: &[MitsSample], channel: &str) -> (f64, f64) {
        let mut sums = [0.0; 2];
        let mut ns = [0.0; 2];
        for s in data {
            let c = s.observations.iter().filter(|o| o.channel == channel).count();
            sums[s.label] += c as f64;
            ns[s.label] += 1.0;
        }
        (sums[0] / ns[0], sums[1] / ns[1])
    }

    #[test]
    fn poisson_means_follow_the_ratio() {
        let reg = ChannelRegistry::mimic_iv();
        let data = generate_dataset(&unit_rate_config(2.0, 2000), &reg).unwrap();
        let (neg, pos) = mean_counts(&data, "glucose");
        assert!((neg - 24.0).abs() < 0.6, "{neg}");
        assert!((pos - 48.0).abs() < 0.9, "{pos}");
    }

    #[test]
    fn ratio_one_gives_equal_means() {
        let reg = ChannelRegistry::mimic_iv();
        let data = generate_dataset(&unit_rate_config(1.0, 2000), &reg).unwrap();
        let (neg, pos) = mean_counts(&data, "glucose");
        assert!((neg - pos).abs() < 0.8, "{neg} vs {pos}");
    }

    #[test]
    fn same_seed_same_bytes() {
        let reg = ChannelRegistry::mimic_iv();
        let cfg = GeneratorConfig {
            n_samples: 50,
            ..GeneratorConfig::default()
        };
        let a = to_jsonl(&generate_dataset(&cfg, &reg).unwrap()).unwrap();
        let b = to_jsonl(&generate_dataset(&cfg, &reg).unwrap()).unwrap();
        assert_eq!(a, b);
        let other = GeneratorConfig { seed: 1, ..cfg };
        assert_ne!(a, to_jsonl(&generate_dataset(&other, &reg).unwrap()).unwrap());
    }

    #[test]
    fn samples_validate() {
        for (preset, reg) in [("mimic_iv", ChannelRegistry::mimic_iv()), ("eicu", ChannelRegistry::eicu())] {
            let cfg = GeneratorConfig {
                n_samples: 30,
                preset: preset.into(),
                ..GeneratorConfig::default()
            };
            for s in generate_dataset(&cfg, &reg).unwrap() {
                assert!(validate_sample(&s, &reg).is_empty(), "{preset}");
            }
        }
    }

    #[test]
    fn count_score() {
        assert_eq!(count_baseline_score(&MitsSample::new("e", 0, vec![])), 0.0);
        let mut obs: Vec<_> = (0..81).map(|i| Observation::numeric(i as f64 / 10.0, "glucose", 1.0)).collect();
        obs.extend((0..3).map(|i| Observation::text(i as f64, "radiology_note", "x")));
        assert_eq!(count_baseline_score(&MitsSample::new("s", 1, obs)), 84.0);
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            GeneratorConfig { positive_rate: 1.0, ..Default::default() },
            GeneratorConfig { intensity_ratio: 0.5, ..Default::default() },
            GeneratorConfig { preset: "nope".into(), ..Default::default() },
            GeneratorConfig {
                channels: vec![ChannelModel::numeric("glucose", 0.0, 1.0, 1.0, 0.0)],
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn histogram_rows() {
        let data = vec![
            MitsSample::new("a", 0, vec![Observation::numeric(1.0, "glucose", 1.0)]),
            MitsSample::new("b", 1, vec![]),
        ];
        let csv = count_histogram_csv(&data);
        assert!(csv.contains("0,numeric,1,1\n"));
        assert!(csv.contains("1,total,0,1\n"));
    }
}
