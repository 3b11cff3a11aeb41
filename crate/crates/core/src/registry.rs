//! Channel registry.
//!
//! On disk the registry is a UTF-8, tab-separated table with a header row:
//!
//! ```text
//! id	display_name	modality	tie_rank	decimals	aliases
//! glucose	Glucose (mg/dL)	numeric	6		Glucose
//! ```
//!
//! * `id` is the opaque channel identifier used in dataset records.
//! * `display_name` is the string shown to the model, units included.
//! * `modality` is `numeric` or `text`.
//! * `tie_rank` orders observations sharing a timestamp (lower first). An
//!   empty cell falls back to the declaration order.
//! * `decimals` (optional) overrides the two-decimal numeric formatting.
//! * `aliases` (optional) is a `|`-separated list of source names that map
//!   onto this channel, used when ingesting raw event tables.
//!
//! Lines starting with `#` are comments.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util;

pub const DEFAULT_DECIMALS: usize = 2;

const MIMIC_IV: &str = include_str!("../assets/registry/mimic_iv.tsv");
const EICU: &str = include_str!("../assets/registry/eicu.tsv");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Numeric,
    Text,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Numeric => "numeric",
            Modality::Text => "text",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "numeric" => Ok(Modality::Numeric),
            "text" => Ok(Modality::Text),
            other => Err(Error::Registry(format!("unknown modality `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub id: String,
    pub display_name: String,
    pub modality: Modality,
    pub tie_rank: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decimals: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
}

impl ChannelSpec {
    pub fn new(
        id: impl Into<String>,
        display_name: impl Into<String>,
        modality: Modality,
        tie_rank: u32,
    ) -> Self {
        ChannelSpec {
            id: id.into(),
            display_name: display_name.into(),
            modality,
            tie_rank,
            decimals: None,
            aliases: Vec::new(),
        }
    }

    pub fn decimals(&self) -> usize {
        self.decimals.unwrap_or(DEFAULT_DECIMALS)
    }
}

/// Immutable set of channels with lookup by id, display name and alias.
#[derive(Clone, Debug)]
pub struct ChannelRegistry {
    channels: Vec<ChannelSpec>,
    by_id: HashMap<String, usize>,
    by_display: HashMap<String, usize>,
    by_alias: HashMap<String, usize>,
}

impl ChannelRegistry {
    pub fn new(channels: Vec<ChannelSpec>) -> Result<Self> {
        let mut by_id = HashMap::new();
        let mut by_display = HashMap::new();
        let mut by_alias = HashMap::new();
        let mut ranks = HashSet::new();
        for (idx, ch) in channels.iter().enumerate() {
            if ch.id.trim().is_empty() {
                return Err(Error::Registry(format!("channel #{idx} has an empty id")));
            }
            if ch.display_name.is_empty() {
                return Err(Error::Registry(format!("channel `{}` has an empty display name", ch.id)));
            }
            if ch.display_name.contains(['\n', '\r']) {
                return Err(Error::Registry(format!(
                    "display name of `{}` contains a line break",
                    ch.id
                )));
            }
            if ch.display_name.contains("</channel>") {
                return Err(Error::Registry(format!(
                    "display name of `{}` cannot be delimited by the channel tag",
                    ch.id
                )));
            }
            if by_id.insert(ch.id.clone(), idx).is_some() {
                return Err(Error::Registry(format!("duplicate channel id `{}`", ch.id)));
            }
            if by_display.insert(ch.display_name.clone(), idx).is_some() {
                return Err(Error::Registry(format!(
                    "duplicate display name `{}`",
                    ch.display_name
                )));
            }
            if !ranks.insert(ch.tie_rank) {
                return Err(Error::Registry(format!(
                    "tie_rank {} is used by more than one channel",
                    ch.tie_rank
                )));
            }
            for alias in &ch.aliases {
                if let Some(prev) = by_alias.insert(alias.clone(), idx) {
                    if prev != idx {
                        return Err(Error::Registry(format!("alias `{alias}` maps to two channels")));
                    }
                }
            }
        }
        Ok(ChannelRegistry {
            channels,
            by_id,
            by_display,
            by_alias,
        })
    }

    /// The 21 MIMIC-IV lab channels plus radiology notes.
    pub fn mimic_iv() -> Self {
        Self::from_tsv(MIMIC_IV).expect("bundled MIMIC-IV registry is valid")
    }

    /// The 24 eICU lab sources (22 channels after aliasing) plus care plan notes.
    pub fn eicu() -> Self {
        Self::from_tsv(EICU).expect("bundled eICU registry is valid")
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "mimic-iv" | "mimic_iv" | "mimic" => Some(Self::mimic_iv()),
            "eicu" => Some(Self::eicu()),
            _ => None,
        }
    }

    /// Loads a built-in registry by name or a TSV file by path.
    pub fn load(name_or_path: &str) -> Result<Self> {
        match Self::builtin(name_or_path) {
            Some(r) => Ok(r),
            None => Self::from_path(Path::new(name_or_path)),
        }
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_tsv(&util::read_to_string(path)?)
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .comment(Some(b'#'))
            .flexible(true)
            .quoting(false)
            .from_reader(text.as_bytes());
        let headers = rdr.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h.trim() == name);
        let id_col = col("id").ok_or_else(|| Error::Registry("missing `id` column".into()))?;
        let name_col = col("display_name")
            .ok_or_else(|| Error::Registry("missing `display_name` column".into()))?;
        let modality_col =
            col("modality").ok_or_else(|| Error::Registry("missing `modality` column".into()))?;
        let rank_col = col("tie_rank");
        let decimals_col = col("decimals");
        let aliases_col = col("aliases");

        let mut channels = Vec::new();
        for (row_idx, record) in rdr.records().enumerate() {
            let record = record?;
            let line = record.position().map(|p| p.line() as usize).unwrap_or(row_idx + 2);
            let field = |i: Option<usize>| i.and_then(|i| record.get(i)).unwrap_or("").trim();
            let id = field(Some(id_col));
            if id.is_empty() {
                continue;
            }
            let modality = field(Some(modality_col))
                .parse::<Modality>()
                .map_err(|e| Error::RegistryLine {
                    line,
                    message: e.to_string(),
                })?;
            let tie_rank = match field(rank_col) {
                "" => channels.len() as u32,
                s => s.parse::<u32>().map_err(|_| Error::RegistryLine {
                    line,
                    message: format!("tie_rank `{s}` is not a non-negative integer"),
                })?,
            };
            let decimals = match field(decimals_col) {
                "" => None,
                s => Some(s.parse::<usize>().map_err(|_| Error::RegistryLine {
                    line,
                    message: format!("decimals `{s}` is not a non-negative integer"),
                })?),
            };
            let aliases = field(aliases_col)
                .split('|')
                .map(str::trim)
                .filter(|a| !a.is_empty())
                .map(String::from)
                .collect();
            channels.push(ChannelSpec {
                id: id.to_string(),
                display_name: field(Some(name_col)).to_string(),
                modality,
                tie_rank,
                decimals,
                aliases,
            });
        }
        Self::new(channels)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("id\tdisplay_name\tmodality\ttie_rank\tdecimals\taliases\n");
        for ch in &self.channels {
            let decimals = ch.decimals.map(|d| d.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                ch.id,
                ch.display_name,
                ch.modality,
                ch.tie_rank,
                decimals,
                ch.aliases.join("|")
            ));
        }
        out
    }

    pub fn channels(&self) -> &[ChannelSpec] {
        &self.channels
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ChannelSpec> {
        self.by_id.get(id).map(|&i| &self.channels[i])
    }

    pub fn by_display_name(&self, name: &str) -> Option<&ChannelSpec> {
        self.by_display.get(name).map(|&i| &self.channels[i])
    }

    /// Resolves a raw source name: channel id first, then alias, then display name.
    pub fn resolve(&self, name: &str) -> Option<&ChannelSpec> {
        self.by_id
            .get(name)
            .or_else(|| self.by_alias.get(name))
            .or_else(|| self.by_display.get(name))
            .map(|&i| &self.channels[i])
    }

    pub fn ids_by_modality(&self, modality: Modality) -> impl Iterator<Item = &str> {
        self.channels
            .iter()
            .filter(move |c| c.modality == modality)
            .map(|c| c.id.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_registries_load() {
        let mimic = ChannelRegistry::mimic_iv();
        assert_eq!(mimic.ids_by_modality(Modality::Numeric).count(), 21);
        assert_eq!(mimic.ids_by_modality(Modality::Text).count(), 1);
        let eicu = ChannelRegistry::eicu();
        assert_eq!(eicu.ids_by_modality(Modality::Numeric).count(), 22);
        assert_eq!(eicu.resolve("Vancomycin - trough").unwrap().id, "vancomycin");
        assert_eq!(eicu.resolve("-polys").unwrap().id, "neutrophils");
    }

    #[test]
    fn snippet_channels_are_ordered_for_ties() {
        let r = ChannelRegistry::mimic_iv();
        let rank = |n: &str| r.by_display_name(n).unwrap().tie_rank;
        assert!(rank("Anion Gap (mEq/L)") < rank("Bicarbonate (mEq/L)"));
        assert!(rank("Bicarbonate (mEq/L)") < rank("Red Blood Cells (K/uL)"));
    }

    #[test]
    fn rejects_duplicate_tie_rank() {
        let chans = vec![
            ChannelSpec::new("a", "A", Modality::Numeric, 0),
            ChannelSpec::new("b", "B", Modality::Numeric, 0),
        ];
        assert!(ChannelRegistry::new(chans).is_err());
    }

    #[test]
    fn rejects_multiline_display_name() {
        let chans = vec![ChannelSpec::new("a", "A\nB", Modality::Numeric, 0)];
        assert!(ChannelRegistry::new(chans).is_err());
        let chans = vec![ChannelSpec::new("a", "", Modality::Numeric, 0)];
        assert!(ChannelRegistry::new(chans).is_err());
    }

    #[test]
    fn tsv_round_trip() {
        let r = ChannelRegistry::eicu();
        let back = ChannelRegistry::from_tsv(&r.to_tsv()).unwrap();
        assert_eq!(r.channels(), back.channels());
    }

    #[test]
    fn tie_rank_defaults_to_declaration_order() {
        let text = "id\tdisplay_name\tmodality\tb\nx\tX\tnumeric\ny\tY\ttext\n";
        let r = ChannelRegistry::from_tsv("id\tdisplay_name\tmodality\nx\tX\tnumeric\ny\tY\ttext\n")
            .unwrap();
        assert_eq!(r.get("y").unwrap().tie_rank, 1);
        assert!(ChannelRegistry::from_tsv(text).is_ok());
    }

    #[test]
    fn bad_modality_reports_line() {
        let err = ChannelRegistry::from_tsv("id\tdisplay_name\tmodality\nx\tX\tvideo\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}
