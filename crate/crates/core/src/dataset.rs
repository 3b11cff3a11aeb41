//! Line-delimited dataset records shared by the generator and the ingest
//! pipeline.
//!
//! Each line is one JSON object:
//!
//! ```json
//! {"sample_id":"synth-000001","label":1,"window":{"start":0.0,"end":24.0},
//!  "metadata":{"los_hours":"71.5"},
//!  "observations":[{"charttime":0.88,"channel":"glucose","value":170.0,"storetime":0.93},
//!                  {"charttime":4.0,"channel":"radiology_note","value":"Portable chest..."}]}
//! ```
//!
//! `value` is a JSON number for numeric channels and a string for text
//! channels. `storetime` and `metadata` are omitted when absent.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MitsSample;
use crate::util;

pub fn to_jsonl(samples: &[MitsSample]) -> Result<String> {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(s)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn from_jsonl(text: &str) -> Result<Vec<MitsSample>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::Config(format!("dataset line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn write_dataset(path: &Path, samples: &[MitsSample]) -> Result<()> {
    util::write_file(path, to_jsonl(samples)?.as_bytes())
}

pub fn read_dataset(path: &Path) -> Result<Vec<MitsSample>> {
    from_jsonl(&util::read_to_string(path)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// Sample id to split, plus the seed that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub assignment: BTreeMap<String, Split>,
}

impl SplitAssignment {
    pub fn get(&self, sample_id: &str) -> Option<Split> {
        self.assignment.get(sample_id).copied()
    }

    pub fn ids(&self, split: Split) -> impl Iterator<Item = &str> {
        self.assignment
            .iter()
            .filter(move |(_, s)| **s == split)
            .map(|(id, _)| id.as_str())
    }

    pub fn count(&self, split: Split) -> usize {
        self.ids(split).count()
    }

    /// Samples of `dataset` that fall in `split`, in dataset order.
    pub fn select<'a>(&self, dataset: &'a [MitsSample], split: Split) -> Vec<&'a MitsSample> {
        dataset
            .iter()
            .filter(|s| self.get(&s.sample_id) == Some(split))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&util::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Observation;

    #[test]
    fn record_shape() {
        let s = MitsSample::new(
            "a",
            1,
            vec![
                Observation::numeric(0.88, "glucose", 170.0).with_storetime(0.93),
                Observation::text(4.0, "radiology_note", "Portable chest..."),
            ],
        );
        let line = to_jsonl(std::slice::from_ref(&s)).unwrap();
        assert_eq!(
            line,
            "{\"sample_id\":\"a\",\"label\":1,\"window\":{\"start\":0.0,\"end\":24.0},\"observations\":[{\"charttime\":0.88,\"channel\":\"glucose\",\"value\":170.0,\"storetime\":0.93},{\"charttime\":4.0,\"channel\":\"radiology_note\",\"value\":\"Portable chest...\"}]}\n"
        );
        assert_eq!(from_jsonl(&line).unwrap(), vec![s]);
    }

    #[test]
    fn bad_line_is_reported() {
        let err = from_jsonl("{}\n").unwrap_err();
        assert!(err.to_string().contains("line 1"));
    }
}
