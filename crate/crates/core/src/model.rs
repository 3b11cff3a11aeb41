//! MITS data model: timestamped observations per channel, the sample that
//! groups them with a label, and the deterministic flattening into one
//! time-ordered list.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::{ChannelRegistry, Modality};
use crate::util;

/// Hours since the start of the observation window.
pub type Hours = f64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Numeric(f64),
    Text(String),
}

impl Value {
    pub fn modality(&self) -> Modality {
        match self {
            Value::Numeric(_) => Modality::Numeric,
            Value::Text(_) => Modality::Text,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub charttime: Hours,
    pub channel: String,
    pub value: Value,
    /// When the value became available. `None` means available at `charttime`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub storetime: Option<Hours>,
}

impl Observation {
    pub fn numeric(charttime: Hours, channel: impl Into<String>, value: f64) -> Self {
        Observation {
            charttime,
            channel: channel.into(),
            value: Value::Numeric(value),
            storetime: None,
        }
    }

    pub fn text(charttime: Hours, channel: impl Into<String>, value: impl Into<String>) -> Self {
        Observation {
            charttime,
            channel: channel.into(),
            value: Value::Text(value.into()),
            storetime: None,
        }
    }

    pub fn with_storetime(mut self, storetime: Hours) -> Self {
        self.storetime = Some(storetime);
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: Hours,
    pub end: Hours,
}

impl TimeWindow {
    pub fn hours(end: Hours) -> Self {
        TimeWindow { start: 0.0, end }
    }

    pub fn length(&self) -> Hours {
        self.end - self.start
    }

    pub fn contains(&self, t: Hours) -> bool {
        t >= 0.0 && t <= self.length()
    }
}

impl Default for TimeWindow {
    fn default() -> Self {
        TimeWindow::hours(24.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MitsSample {
    pub sample_id: String,
    pub label: usize,
    #[serde(default)]
    pub window: TimeWindow,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
    pub observations: Vec<Observation>,
}

impl MitsSample {
    pub fn new(sample_id: impl Into<String>, label: usize, observations: Vec<Observation>) -> Self {
        MitsSample {
            sample_id: sample_id.into(),
            label,
            window: TimeWindow::default(),
            metadata: BTreeMap::new(),
            observations,
        }
    }

    /// n_c for every channel that has at least one observation.
    pub fn channel_counts(&self) -> BTreeMap<&str, usize> {
        let mut counts = BTreeMap::new();
        for obs in &self.observations {
            *counts.entry(obs.channel.as_str()).or_insert(0) += 1;
        }
        counts
    }

    pub fn count_modality(&self, modality: Modality) -> usize {
        self.observations
            .iter()
            .filter(|o| o.value.modality() == modality)
            .count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    OutOfWindow { index: usize, charttime: Hours },
    ModalityMismatch { index: usize, channel: String },
    StoretimeBeforeCharttime { index: usize },
    UnknownChannel { index: usize, channel: String },
}

impl Violation {
    pub fn kind(&self) -> &'static str {
        match self {
            Violation::OutOfWindow { .. } => "out-of-window",
            Violation::ModalityMismatch { .. } => "modality mismatch",
            Violation::StoretimeBeforeCharttime { .. } => "storetime before charttime",
            Violation::UnknownChannel { .. } => "unknown channel",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::OutOfWindow { index, charttime } => {
                write!(f, "observation {index}: {} ({charttime} h)", self.kind())
            }
            Violation::ModalityMismatch { index, channel }
            | Violation::UnknownChannel { index, channel } => {
                write!(f, "observation {index}: {} ({channel})", self.kind())
            }
            Violation::StoretimeBeforeCharttime { index } => {
                write!(f, "observation {index}: {}", self.kind())
            }
        }
    }
}

/// Checks a sample against its window and the registry. Violations are
/// returned as data; an empty vector means the sample is well formed.
pub fn validate_sample(sample: &MitsSample, registry: &ChannelRegistry) -> Vec<Violation> {
    let mut out = Vec::new();
    for (index, obs) in sample.observations.iter().enumerate() {
        if !obs.charttime.is_finite() || !sample.window.contains(obs.charttime) {
            out.push(Violation::OutOfWindow {
                index,
                charttime: obs.charttime,
            });
        }
        match registry.get(&obs.channel) {
            None => out.push(Violation::UnknownChannel {
                index,
                channel: obs.channel.clone(),
            }),
            Some(spec) if spec.modality != obs.value.modality() => {
                out.push(Violation::ModalityMismatch {
                    index,
                    channel: obs.channel.clone(),
                })
            }
            Some(_) => {}
        }
        if let Some(st) = obs.storetime {
            if st.is_nan() || st < obs.charttime {
                out.push(Violation::StoretimeBeforeCharttime { index });
            }
        }
    }
    out
}

/// How values become text at render time.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FormatPolicy {
    /// Truncate note text to this many characters. `None` keeps it whole.
    #[serde(default)]
    pub max_note_chars: Option<usize>,
}

impl FormatPolicy {
    pub fn format_value(&self, value: &Value, decimals: usize) -> String {
        match value {
            Value::Numeric(x) => util::fixed(*x, decimals),
            Value::Text(s) => match self.max_note_chars {
                Some(max) => s.chars().take(max).collect(),
                None => s.clone(),
            },
        }
    }
}

/// One entry of the flattened sequence, with the value already formatted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatObservation {
    pub charttime: Hours,
    pub channel: String,
    pub display_name: String,
    pub modality: Modality,
    pub tie_rank: u32,
    pub value: Option<String>,
    pub storetime: Option<Hours>,
    pub pending: bool,
}

impl FlatObservation {
    /// Time as rendered: two decimals.
    pub fn time_text(&self) -> String {
        util::fixed(self.charttime, 2)
    }
}

pub fn flatten(sample: &MitsSample, registry: &ChannelRegistry) -> Result<Vec<FlatObservation>> {
    flatten_with(sample, registry, &FormatPolicy::default())
}

/// Orders all observations by (charttime, tie_rank). The sort is stable, so
/// repeated readings of one channel at one time keep their input order.
pub fn flatten_with(
    sample: &MitsSample,
    registry: &ChannelRegistry,
    policy: &FormatPolicy,
) -> Result<Vec<FlatObservation>> {
    let mut flat = sample
        .observations
        .iter()
        .map(|obs| {
            let spec = registry
                .get(&obs.channel)
                .ok_or_else(|| Error::UnknownChannel(obs.channel.clone()))?;
            Ok(FlatObservation {
                charttime: obs.charttime,
                channel: spec.id.clone(),
                display_name: spec.display_name.clone(),
                modality: spec.modality,
                tie_rank: spec.tie_rank,
                value: Some(policy.format_value(&obs.value, spec.decimals())),
                storetime: obs.storetime,
                pending: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    flat.sort_by(|a, b| {
        a.charttime
            .total_cmp(&b.charttime)
            .then(a.tie_rank.cmp(&b.tie_rank))
    });
    Ok(flat)
}

/// Counting-process values N_c(t) = #{k : t_k <= t} on a time grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SamplingStats {
    pub grid: Vec<Hours>,
    /// One entry per registry channel, in registry order.
    pub per_channel: Vec<(String, Vec<usize>)>,
    pub per_modality: BTreeMap<Modality, Vec<usize>>,
}

impl SamplingStats {
    pub fn channel(&self, id: &str) -> Option<&[usize]> {
        self.per_channel
            .iter()
            .find(|(c, _)| c == id)
            .map(|(_, v)| v.as_slice())
    }
}

pub fn sampling_stats(
    sample: &MitsSample,
    registry: &ChannelRegistry,
    grid: &[Hours],
) -> SamplingStats {
    let mut times: BTreeMap<&str, Vec<Hours>> = BTreeMap::new();
    for obs in &sample.observations {
        times.entry(obs.channel.as_str()).or_default().push(obs.charttime);
    }
    for v in times.values_mut() {
        v.sort_by(f64::total_cmp);
    }
    let mut per_modality: BTreeMap<Modality, Vec<usize>> = BTreeMap::new();
    let per_channel = registry
        .channels()
        .iter()
        .map(|spec| {
            let ts = times.get(spec.id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
            let counts: Vec<usize> = grid
                .iter()
                .map(|&t| ts.partition_point(|&x| x <= t))
                .collect();
            let totals = per_modality
                .entry(spec.modality)
                .or_insert_with(|| vec![0; grid.len()]);
            for (acc, c) in totals.iter_mut().zip(&counts) {
                *acc += c;
            }
            (spec.id.clone(), counts)
        })
        .collect();
    SamplingStats {
        grid: grid.to_vec(),
        per_channel,
        per_modality,
    }
}
