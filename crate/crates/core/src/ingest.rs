//! Dataset construction from EHR-style CSV exports.
//!
//! Input schemas (header row required, extra columns ignored):
//!
//! * labs: `stay_id, charttime, storetime?, channel, value`
//! * notes: `stay_id, charttime, storetime?, note_type, text`
//! * eICU note rows (with [`NoteRules`]): `stay_id, charttime, note_type, notepath, notevalue`
//! * stays: `stay_id, los_hours, hospital_expired, unit_expired?`
//!
//! `?` marks optional columns. Times are relative to ICU admission, in the
//! unit given by [`LoadOptions::time_unit`]. Lab channels and note types are
//! resolved through the registry (id, alias, then display name); a note type
//! that does not resolve falls back to the registry's only text channel when
//! there is exactly one.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Split, SplitAssignment};
use crate::error::{Error, Result};
use crate::model::{Hours, MitsSample, Observation, TimeWindow, Value};
use crate::registry::{ChannelRegistry, Modality};
use crate::task::Task;
use crate::util;

const EICU_RULES: &str = include_str!("../assets/rules/eicu_notes.toml");

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeUnit {
    #[default]
    Hours,
    Minutes,
}

impl TimeUnit {
    pub fn to_hours(self, t: f64) -> Hours {
        match self {
            TimeUnit::Hours => t,
            TimeUnit::Minutes => t / 60.0,
        }
    }
}

impl std::str::FromStr for TimeUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hours" | "h" => Ok(TimeUnit::Hours),
            "minutes" | "min" => Ok(TimeUnit::Minutes),
            other => Err(Error::Config(format!("unknown time unit `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadOptions {
    pub window_hours: Hours,
    pub time_unit: TimeUnit,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            window_hours: 24.0,
            time_unit: TimeUnit::Hours,
        }
    }
}

/// eICU care-plan note reconstruction rules.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoteRules {
    pub exclude_note_types: Vec<String>,
    pub deny_sections: Vec<String>,
    pub deny_labels: Vec<String>,
    pub deny_values: Vec<String>,
    pub value_only_sections: Vec<String>,
}

impl NoteRules {
    pub fn eicu() -> Self {
        toml::from_str(EICU_RULES).expect("bundled eICU rules parse")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        NoteRules::from_toml(&util::read_to_string(path)?)
    }

    /// `eicu` selects the bundled file; anything else is a path.
    pub fn load(name_or_path: &str) -> Result<Self> {
        match name_or_path {
            "eicu" => Ok(NoteRules::eicu()),
            path => NoteRules::from_path(Path::new(path)),
        }
    }

    /// The token a note row contributes, or `None` for noise rows.
    pub fn token(&self, notepath: &str, notevalue: &str) -> Option<String> {
        let parts: Vec<&str> = notepath.split('/').collect();
        if parts.len() < 4 {
            return None;
        }
        let section = parts[2];
        let label = parts[parts.len() - 2];
        let value = if notevalue.trim().is_empty() {
            parts[parts.len() - 1].trim()
        } else {
            notevalue.trim()
        };
        let listed = |list: &[String], s: &str| list.iter().any(|x| x == s);
        if value.is_empty()
            || listed(&self.deny_sections, section)
            || listed(&self.deny_labels, label)
            || listed(&self.deny_values, value)
        {
            return None;
        }
        if listed(&self.value_only_sections, section) {
            Some(value.to_string())
        } else {
            Some(format!("{label}: {value}"))
        }
    }
}

/// Row accounting for one load.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub rows_read: usize,
    pub kept: usize,
    pub unparseable: usize,
    pub unknown_channel: usize,
    pub out_of_window: usize,
    pub excluded_note_type: usize,
    pub noise_rows: usize,
    pub empty_notes: usize,
}

impl LoadReport {
    fn absorb(&mut self, other: &LoadReport) {
        self.rows_read += other.rows_read;
        self.kept += other.kept;
        self.unparseable += other.unparseable;
        self.unknown_channel += other.unknown_channel;
        self.out_of_window += other.out_of_window;
        self.excluded_note_type += other.excluded_note_type;
        self.noise_rows += other.noise_rows;
        self.empty_notes += other.empty_notes;
    }
}

/// Observations grouped by stay id.
pub type StayEvents = BTreeMap<String, Vec<Observation>>;

struct Table {
    path: String,
    reader: csv::Reader<Box<dyn std::io::Read>>,
    columns: HashMap<String, usize>,
}

impl Table {
    fn open(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Table::from_reader(Box::new(file), &path.display().to_string())
    }

    fn from_reader(reader: Box<dyn std::io::Read>, name: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
        let columns = reader
            .headers()?
            .iter()
            .enumerate()
            .map(|(i, h)| (h.trim().to_string(), i))
            .collect();
        Ok(Table {
            path: name.to_string(),
            reader,
            columns,
        })
    }

    fn required(&self, column: &str) -> Result<usize> {
        self.columns.get(column).copied().ok_or_else(|| Error::MissingColumn {
            column: column.to_string(),
            path: self.path.clone().into(),
        })
    }

    fn optional(&self, column: &str) -> Option<usize> {
        self.columns.get(column).copied()
    }

    /// Yields `(1-based data line, record)`; malformed records become `Err`.
    fn rows(&mut self) -> impl Iterator<Item = (usize, std::result::Result<csv::StringRecord, csv::Error>)> + '_ {
        self.reader.records().enumerate().map(|(i, r)| (i + 2, r))
    }
}

fn field<'a>(rec: &'a csv::StringRecord, idx: usize) -> Option<&'a str> {
    rec.get(idx).map(str::trim)
}

fn parse_time(rec: &csv::StringRecord, idx: usize, unit: TimeUnit) -> Option<Hours> {
    let v: f64 = field(rec, idx)?.parse().ok()?;
    v.is_finite().then(|| unit.to_hours(v))
}

/// `Ok(None)` for an empty cell, `Err(())` for garbage.
fn parse_optional_time(
    rec: &csv::StringRecord,
    idx: Option<usize>,
    unit: TimeUnit,
) -> std::result::Result<Option<Hours>, ()> {
    match idx.and_then(|i| field(rec, i)) {
        None | Some("") => Ok(None),
        Some(_) => parse_time(rec, idx.unwrap_or_default(), unit).map(Some).ok_or(()),
    }
}

fn text_fallback(registry: &ChannelRegistry) -> Option<String> {
    let mut text = registry.ids_by_modality(Modality::Text);
    match (text.next(), text.next()) {
        (Some(id), None) => Some(id.to_string()),
        _ => None,
    }
}

fn skip(counter: &mut usize, path: &str, line: usize, why: &str) {
    *counter += 1;
    warn!("{path}:{line}: skipped, {why}");
}

/// Reads the lab table.
pub fn load_labs(path: &Path, registry: &ChannelRegistry, opts: &LoadOptions) -> Result<(StayEvents, LoadReport)> {
    load_labs_from(Table::open(path)?, registry, opts)
}

fn load_labs_from(mut t: Table, registry: &ChannelRegistry, opts: &LoadOptions) -> Result<(StayEvents, LoadReport)> {
    let (c_stay, c_time, c_chan, c_val) = (
        t.required("stay_id")?,
        t.required("charttime")?,
        t.required("channel")?,
        t.required("value")?,
    );
    let c_store = t.optional("storetime");
    let window = TimeWindow::hours(opts.window_hours);
    let path = t.path.clone();
    let mut out = StayEvents::new();
    let mut rep = LoadReport::default();
    for (line, rec) in t.rows() {
        rep.rows_read += 1;
        let Ok(rec) = rec else {
            skip(&mut rep.unparseable, &path, line, "malformed record");
            continue;
        };
        let (Some(stay), Some(charttime), Some(value), Ok(storetime)) = (
            field(&rec, c_stay).filter(|s| !s.is_empty()),
            parse_time(&rec, c_time, opts.time_unit),
            field(&rec, c_val).and_then(|v| v.parse::<f64>().ok()).filter(|v| v.is_finite()),
            parse_optional_time(&rec, c_store, opts.time_unit),
        ) else {
            skip(&mut rep.unparseable, &path, line, "unparseable field");
            continue;
        };
        let name = field(&rec, c_chan).unwrap_or_default();
        let Some(spec) = registry.resolve(name).filter(|s| s.modality == Modality::Numeric) else {
            rep.unknown_channel += 1;
            continue;
        };
        if !window.contains(charttime) {
            rep.out_of_window += 1;
            continue;
        }
        if storetime.is_some_and(|s| s < charttime) {
            skip(&mut rep.unparseable, &path, line, "storetime before charttime");
            continue;
        }
        let mut obs = Observation::numeric(charttime, spec.id.clone(), value);
        obs.storetime = storetime;
        out.entry(stay.to_string()).or_default().push(obs);
        rep.kept += 1;
    }
    Ok((out, rep))
}

/// Reads a free-text note table.
pub fn load_notes(path: &Path, registry: &ChannelRegistry, opts: &LoadOptions) -> Result<(StayEvents, LoadReport)> {
    load_notes_from(Table::open(path)?, registry, opts)
}

fn load_notes_from(mut t: Table, registry: &ChannelRegistry, opts: &LoadOptions) -> Result<(StayEvents, LoadReport)> {
    let (c_stay, c_time, c_type, c_text) = (
        t.required("stay_id")?,
        t.required("charttime")?,
        t.required("note_type")?,
        t.required("text")?,
    );
    let c_store = t.optional("storetime");
    let window = TimeWindow::hours(opts.window_hours);
    let fallback = text_fallback(registry);
    let path = t.path.clone();
    let mut out = StayEvents::new();
    let mut rep = LoadReport::default();
    for (line, rec) in t.rows() {
        rep.rows_read += 1;
        let Ok(rec) = rec else {
            skip(&mut rep.unparseable, &path, line, "malformed record");
            continue;
        };
        let (Some(stay), Some(charttime), Ok(storetime)) = (
            field(&rec, c_stay).filter(|s| !s.is_empty()),
            parse_time(&rec, c_time, opts.time_unit),
            parse_optional_time(&rec, c_store, opts.time_unit),
        ) else {
            skip(&mut rep.unparseable, &path, line, "unparseable field");
            continue;
        };
        let note_type = field(&rec, c_type).unwrap_or_default();
        let channel = registry
            .resolve(note_type)
            .filter(|s| s.modality == Modality::Text)
            .map(|s| s.id.clone())
            .or_else(|| fallback.clone());
        let Some(channel) = channel else {
            rep.unknown_channel += 1;
            continue;
        };
        if !window.contains(charttime) {
            rep.out_of_window += 1;
            continue;
        }
        if storetime.is_some_and(|s| s < charttime) {
            skip(&mut rep.unparseable, &path, line, "storetime before charttime");
            continue;
        }
        let text = rec.get(c_text).unwrap_or_default();
        if text.trim().is_empty() {
            rep.empty_notes += 1;
            continue;
        }
        let mut obs = Observation::text(charttime, channel, text);
        obs.storetime = storetime;
        out.entry(stay.to_string()).or_default().push(obs);
        rep.kept += 1;
    }
    Ok((out, rep))
}

/// Reads eICU-style note rows and rebuilds one note per
/// (stay, charttime, note type) event.
pub fn load_note_rows(
    path: &Path,
    registry: &ChannelRegistry,
    rules: &NoteRules,
    opts: &LoadOptions,
) -> Result<(StayEvents, LoadReport)> {
    load_note_rows_from(Table::open(path)?, registry, rules, opts)
}

fn load_note_rows_from(
    mut t: Table,
    registry: &ChannelRegistry,
    rules: &NoteRules,
    opts: &LoadOptions,
) -> Result<(StayEvents, LoadReport)> {
    let (c_stay, c_time, c_type, c_path, c_value) = (
        t.required("stay_id")?,
        t.required("charttime")?,
        t.required("note_type")?,
        t.required("notepath")?,
        t.required("notevalue")?,
    );
    let c_store = t.optional("storetime");
    let channel = text_fallback(registry).ok_or_else(|| {
        Error::Registry("note reconstruction needs exactly one text channel".into())
    })?;
    let window = TimeWindow::hours(opts.window_hours);
    let path = t.path.clone();

    struct Event {
        stay: String,
        charttime: Hours,
        storetime: Option<Hours>,
        note_type: String,
        tokens: Vec<String>,
        seen: BTreeSet<String>,
    }
    // Key uses the raw time text so that events group exactly as written.
    let mut order: Vec<(String, String, String)> = Vec::new();
    let mut events: HashMap<(String, String, String), Event> = HashMap::new();
    let mut rep = LoadReport::default();
    for (line, rec) in t.rows() {
        rep.rows_read += 1;
        let Ok(rec) = rec else {
            skip(&mut rep.unparseable, &path, line, "malformed record");
            continue;
        };
        let (Some(stay), Some(charttime), Ok(storetime)) = (
            field(&rec, c_stay).filter(|s| !s.is_empty()),
            parse_time(&rec, c_time, opts.time_unit),
            parse_optional_time(&rec, c_store, opts.time_unit),
        ) else {
            skip(&mut rep.unparseable, &path, line, "unparseable field");
            continue;
        };
        let note_type = field(&rec, c_type).unwrap_or_default();
        if rules.exclude_note_types.iter().any(|x| x == note_type) {
            rep.excluded_note_type += 1;
            continue;
        }
        if !window.contains(charttime) {
            rep.out_of_window += 1;
            continue;
        }
        let key = (
            stay.to_string(),
            field(&rec, c_time).unwrap_or_default().to_string(),
            note_type.to_string(),
        );
        let event = events.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            Event {
                stay: stay.to_string(),
                charttime,
                storetime: None,
                note_type: note_type.to_string(),
                tokens: Vec::new(),
                seen: BTreeSet::new(),
            }
        });
        if let Some(st) = storetime.filter(|&st| st >= charttime) {
            event.storetime = Some(event.storetime.map_or(st, |cur| cur.max(st)));
        }
        let token = rules.token(
            field(&rec, c_path).unwrap_or_default(),
            field(&rec, c_value).unwrap_or_default(),
        );
        match token {
            Some(tok) => {
                if event.seen.insert(tok.clone()) {
                    event.tokens.push(tok);
                }
            }
            None => rep.noise_rows += 1,
        }
    }
    let mut out = StayEvents::new();
    for key in order {
        let ev = events.remove(&key).expect("every ordered key has an event");
        if ev.tokens.is_empty() {
            rep.empty_notes += 1;
            continue;
        }
        let text = format!("[{}]\n{}", ev.note_type, ev.tokens.join("\n"));
        let mut obs = Observation::text(ev.charttime, channel.clone(), text);
        obs.storetime = ev.storetime;
        out.entry(ev.stay).or_default().push(obs);
        rep.kept += 1;
    }
    Ok((out, rep))
}

/// Stay-level outcome information.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StayInfo {
    pub stay_id: String,
    pub los_hours: Hours,
    pub hospital_expired: bool,
    /// Death before unit discharge, when known.
    pub unit_expired: Option<bool>,
}

impl StayInfo {
    /// Survival used by the short-stay label: unit outcome when known,
    /// otherwise hospital outcome.
    pub fn survived(&self) -> bool {
        !self.unit_expired.unwrap_or(self.hospital_expired)
    }
}

fn parse_flag(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "expired" | "yes" => Some(true),
        "0" | "false" | "alive" | "no" => Some(false),
        _ => None,
    }
}

pub fn load_stays(path: &Path) -> Result<(BTreeMap<String, StayInfo>, LoadReport)> {
    load_stays_from(Table::open(path)?)
}

fn load_stays_from(mut t: Table) -> Result<(BTreeMap<String, StayInfo>, LoadReport)> {
    let (c_stay, c_los, c_hosp) = (
        t.required("stay_id")?,
        t.required("los_hours")?,
        t.required("hospital_expired")?,
    );
    let c_unit = t.optional("unit_expired");
    let path = t.path.clone();
    let mut out = BTreeMap::new();
    let mut rep = LoadReport::default();
    for (line, rec) in t.rows() {
        rep.rows_read += 1;
        let Ok(rec) = rec else {
            skip(&mut rep.unparseable, &path, line, "malformed record");
            continue;
        };
        let unit = match c_unit.and_then(|i| field(&rec, i)) {
            None | Some("") => Ok(None),
            Some(v) => parse_flag(v).map(Some).ok_or(()),
        };
        let (Some(stay), Some(los), Some(hosp), Ok(unit)) = (
            field(&rec, c_stay).filter(|s| !s.is_empty()),
            field(&rec, c_los).and_then(|v| v.parse::<f64>().ok()).filter(|v| v.is_finite()),
            field(&rec, c_hosp).and_then(parse_flag),
            unit,
        ) else {
            skip(&mut rep.unparseable, &path, line, "unparseable field");
            continue;
        };
        out.insert(
            stay.to_string(),
            StayInfo {
                stay_id: stay.to_string(),
                los_hours: los,
                hospital_expired: hosp,
                unit_expired: unit,
            },
        );
        rep.kept += 1;
    }
    Ok((out, rep))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    /// Label 1 iff the patient died in hospital.
    HospitalExpireFlag,
    /// Label 1 iff LOS < 96 h and the patient survived.
    ShortStayUnder96hAndSurvived,
}

impl LabelRule {
    pub fn label(self, stay: &StayInfo) -> usize {
        let positive = match self {
            LabelRule::HospitalExpireFlag => stay.hospital_expired,
            LabelRule::ShortStayUnder96hAndSurvived => stay.los_hours < 96.0 && stay.survived(),
        };
        usize::from(positive)
    }

    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Ihm => LabelRule::HospitalExpireFlag,
            Task::Los => LabelRule::ShortStayUnder96hAndSurvived,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortRules {
    pub window_hours: Hours,
    pub min_labs: usize,
    pub note_count_range: (usize, usize),
    pub min_los_hours: Hours,
    pub label_rule: LabelRule,
}

impl CohortRules {
    fn preset(min_labs: usize, notes: (usize, usize), task: Task) -> Self {
        CohortRules {
            window_hours: 24.0,
            min_labs,
            note_count_range: notes,
            min_los_hours: match task {
                Task::Ihm => 24.0,
                Task::Los => 48.0,
            },
            label_rule: LabelRule::for_task(task),
        }
    }

    pub fn mimic_iv(task: Task) -> Self {
        CohortRules::preset(64, (2, 6), task)
    }

    pub fn eicu(task: Task) -> Self {
        CohortRules::preset(16, (3, 10), task)
    }

    /// `mimic_iv` or `eicu`.
    pub fn for_dataset(name: &str, task: Task) -> Result<Self> {
        match name {
            "mimic_iv" | "mimic-iv" | "mimic" => Ok(CohortRules::mimic_iv(task)),
            "eicu" => Ok(CohortRules::eicu(task)),
            other => Err(Error::Config(format!("no cohort preset for `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.note_count_range;
        if lo > hi {
            return Err(Error::Config(format!("note count range [{lo}, {hi}] is empty")));
        }
        if !(self.window_hours > 0.0) {
            return Err(Error::Config("window_hours must be positive".into()));
        }
        Ok(())
    }

    /// Inclusion test on counts inside the window.
    pub fn admits(&self, labs: usize, notes: usize, stay: &StayInfo) -> bool {
        let (lo, hi) = self.note_count_range;
        labs >= self.min_labs && (lo..=hi).contains(&notes) && stay.los_hours >= self.min_los_hours
    }
}

/// Why stays were excluded.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortReport {
    pub candidates: usize,
    pub kept: usize,
    pub no_stay_info: usize,
    pub too_few_labs: usize,
    pub notes_out_of_range: usize,
    pub too_short: usize,
}

/// Filters stays and attaches labels. Output is ordered by stay id.
pub fn apply_cohort(
    events: &StayEvents,
    stays: &BTreeMap<String, StayInfo>,
    rules: &CohortRules,
) -> Result<(Vec<MitsSample>, CohortReport)> {
    rules.validate()?;
    let window = TimeWindow::hours(rules.window_hours);
    let mut rep = CohortReport::default();
    let mut out = Vec::new();
    for (stay_id, observations) in events {
        rep.candidates += 1;
        let Some(info) = stays.get(stay_id) else {
            rep.no_stay_info += 1;
            continue;
        };
        let observations: Vec<Observation> = observations
            .iter()
            .filter(|o| window.contains(o.charttime))
            .cloned()
            .collect();
        let labs = observations
            .iter()
            .filter(|o| matches!(o.value, Value::Numeric(_)))
            .count();
        let notes = observations.len() - labs;
        let (lo, hi) = rules.note_count_range;
        if labs < rules.min_labs {
            rep.too_few_labs += 1;
        } else if !(lo..=hi).contains(&notes) {
            rep.notes_out_of_range += 1;
        } else if info.los_hours < rules.min_los_hours {
            rep.too_short += 1;
        }
        if !rules.admits(labs, notes, info) {
            continue;
        }
        let mut sample = MitsSample::new(stay_id.clone(), rules.label_rule.label(info), observations);
        sample.window = window;
        sample
            .metadata
            .insert("los_hours".into(), info.los_hours.to_string());
        sample
            .metadata
            .insert("hospital_expired".into(), info.hospital_expired.to_string());
        out.push(sample);
        rep.kept += 1;
    }
    Ok((out, rep))
}

/// Input locations for [`build_dataset`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestInputs {
    pub labs: std::path::PathBuf,
    pub notes: std::path::PathBuf,
    pub stays: std::path::PathBuf,
    /// Present for eICU-style note rows.
    pub note_rules: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub events: LoadReport,
    pub stays: LoadReport,
    pub cohort: CohortReport,
}

/// Loads all three tables and applies the cohort.
pub fn build_dataset(
    inputs: &IngestInputs,
    registry: &ChannelRegistry,
    rules: &CohortRules,
    time_unit: TimeUnit,
) -> Result<(Vec<MitsSample>, IngestReport)> {
    let opts = LoadOptions {
        window_hours: rules.window_hours,
        time_unit,
    };
    let (mut events, mut rep) = load_labs(&inputs.labs, registry, &opts)?;
    let (notes, note_rep) = match &inputs.note_rules {
        Some(r) => load_note_rows(&inputs.notes, registry, &NoteRules::load(r)?, &opts)?,
        None => load_notes(&inputs.notes, registry, &opts)?,
    };
    rep.absorb(&note_rep);
    for (stay, obs) in notes {
        events.entry(stay).or_default().extend(obs);
    }
    let (stays, stay_rep) = load_stays(&inputs.stays)?;
    let (samples, cohort) = apply_cohort(&events, &stays, rules)?;
    if rep.unparseable + stay_rep.unparseable > 0 {
        warn!(
            "skipped {} unparseable rows",
            rep.unparseable + stay_rep.unparseable
        );
    }
    Ok((
        samples,
        IngestReport {
            events: rep,
            stays: stay_rep,
            cohort,
        },
    ))
}

/// Seeded 70/15/15 split.
///
/// Ids are sorted and deduplicated, shuffled with a ChaCha8 generator seeded
/// by `seed`, then cut in order: validation and test each receive
/// `floor(0.15 * n)` ids and train receives the remainder.
pub fn make_split<S: AsRef<str>>(sample_ids: &[S], seed: u64) -> Result<SplitAssignment> {
    let mut ids: Vec<&str> = sample_ids.iter().map(AsRef::as_ref).collect();
    ids.sort_unstable();
    ids.dedup();
    let n = ids.len();
    if n < 10 {
        return Err(Error::Config(format!("a split needs at least 10 samples, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let held_out = n * 15 / 100;
    let n_train = n - 2 * held_out;
    let assignment = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + held_out {
                Split::Validation
            } else {
                Split::Test
            };
            (id.to_string(), split)
        })
        .collect();
    Ok(SplitAssignment { seed, assignment })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(text: &str) -> Table {
        Table::from_reader(Box::new(std::io::Cursor::new(text.to_string().into_bytes())), "t.csv").unwrap()
    }

    #[test]
    fn minutes_become_hours() {
        let (ev, rep) = load_labs_from(
            table("stay_id,charttime,channel,value\n1,90,glucose,100\n"),
            &ChannelRegistry::eicu(),
            &LoadOptions {
                time_unit: TimeUnit::Minutes,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(ev["1"][0].charttime, 1.5);
        assert_eq!(ev["1"][0].storetime, None);
        assert_eq!(rep.kept, 1);
    }

    #[test]
    fn window_and_garbage_rows() {
        let csv = "stay_id,charttime,storetime,channel,value\n\
                   1,30,31,Glucose,100\n\
                   1,2,abc,Glucose,100\n\
                   1,2,3,Unobtainium,1\n\
                   1,2,,RBC,3.1\n";
        let (ev, rep) = load_labs_from(table(csv), &ChannelRegistry::mimic_iv(), &LoadOptions::default()).unwrap();
        assert_eq!(rep.out_of_window, 1);
        assert_eq!(rep.unparseable, 1);
        assert_eq!(rep.unknown_channel, 1);
        assert_eq!(ev["1"].len(), 1);
        assert_eq!(ev["1"][0].channel, "red_blood_cells");
    }

    #[test]
    fn missing_column_is_fatal() {
        let err = load_labs_from(
            table("stay_id,charttime,channel\n1,1,Glucose\n"),
            &ChannelRegistry::mimic_iv(),
            &LoadOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::MissingColumn { ref column, .. } if column == "value"));
    }

    #[test]
    fn notes_without_storetime_column() {
        let (ev, _) = load_notes_from(
            table("stay_id,charttime,note_type,text\n7,4,RR,\"Portable chest, AP\"\n"),
            &ChannelRegistry::mimic_iv(),
            &LoadOptions::default(),
        )
        .unwrap();
        let obs = &ev["7"][0];
        assert_eq!(obs.channel, "radiology_note");
        assert_eq!(obs.storetime, None);
        assert_eq!(obs.value, Value::Text("Portable chest, AP".into()));
    }

    #[test]
    fn eicu_note_events() {
        let csv = "stay_id,charttime,note_type,notepath,notevalue\n\
            5,60,Brief Progress,notes/Progress Notes/Other/Communication/Communication with other healthcare providers and/or family,Communication with other healthcare providers and/or family\n\
            5,60,Brief Progress,notes/Progress Notes/Interventions/Major/Respiratory failure - evaluation and management,Respiratory failure - evaluation and management\n\
            5,60,Brief Progress,notes/Progress Notes/View and Save/View Options/System View,System View\n\
            5,60,Brief Progress,notes/Progress Notes/Interventions/Major/Respiratory failure - evaluation and management,Respiratory failure - evaluation and management\n\
            5,120,Admission,notes/Progress Notes/Social History/Smoking Status/denies smoking,denies smoking\n\
            5,120,Admission,notes/Progress Notes/Social History/Ethanol Use/rare,rare\n\
            5,180,CPR,notes/CPR/Event/Start/yes,yes\n\
            5,240,Admission,notes/Progress Notes/Other/Sign As/Performed,Performed\n";
        let mut rules = NoteRules::eicu();
        rules.value_only_sections.push("Other".into());
        let (ev, rep) = load_note_rows_from(
            table(csv),
            &ChannelRegistry::eicu(),
            &rules,
            &LoadOptions {
                time_unit: TimeUnit::Minutes,
                ..Default::default()
            },
        )
        .unwrap();
        let notes = &ev["5"];
        assert_eq!(notes.len(), 2);
        assert_eq!(
            notes[0].value,
            Value::Text(
                "[Brief Progress]\nCommunication with other healthcare providers and/or family\n\
                 Respiratory failure - evaluation and management"
                    .into()
            )
        );
        assert_eq!(
            notes[1].value,
            Value::Text("[Admission]\nSmoking Status: denies smoking\nEthanol Use: rare".into())
        );
        assert_eq!(notes[1].charttime, 2.0);
        assert_eq!(rep.excluded_note_type, 1);
        assert_eq!(rep.empty_notes, 1);
    }

    fn stay(los: f64, hosp: bool) -> StayInfo {
        StayInfo {
            stay_id: "s".into(),
            los_hours: los,
            hospital_expired: hosp,
            unit_expired: None,
        }
    }

    #[test]
    fn los_label_rule() {
        let r = LabelRule::ShortStayUnder96hAndSurvived;
        assert_eq!(r.label(&stay(90.0, false)), 1);
        assert_eq!(r.label(&stay(90.0, true)), 0);
        assert_eq!(r.label(&stay(100.0, false)), 0);
        assert_eq!(r.label(&stay(96.0, false)), 0);
        assert_eq!(LabelRule::HospitalExpireFlag.label(&stay(30.0, true)), 1);
    }

    #[test]
    fn cohort_bounds() {
        let rules = CohortRules::mimic_iv(Task::Ihm);
        assert!(!rules.admits(63, 3, &stay(30.0, false)));
        assert!(rules.admits(64, 2, &stay(24.0, false)));
        assert!(!rules.admits(64, 7, &stay(30.0, false)));
        assert!(!rules.admits(64, 1, &stay(30.0, false)));
        assert!(!rules.admits(100, 3, &stay(23.9, false)));
        assert!(!CohortRules::mimic_iv(Task::Los).admits(100, 3, &stay(47.0, false)));
        let e = CohortRules::eicu(Task::Ihm);
        assert!(e.admits(16, 10, &stay(24.0, false)));
        assert!(!e.admits(16, 11, &stay(24.0, false)));
        assert!(!e.admits(15, 3, &stay(24.0, false)));
    }

    #[test]
    fn split_sizes() {
        let ids: Vec<String> = (0..100).map(|i| format!("s{i}")).collect();
        let s = make_split(&ids, 3).unwrap();
        assert_eq!(
            (s.count(Split::Train), s.count(Split::Validation), s.count(Split::Test)),
            (70, 15, 15)
        );
        let ids: Vec<String> = (0..101).map(|i| format!("s{i}")).collect();
        let s = make_split(&ids, 3).unwrap();
        assert_eq!(
            (s.count(Split::Train), s.count(Split::Validation), s.count(Split::Test)),
            (71, 15, 15)
        );
        let mut rev = ids.clone();
        rev.reverse();
        assert_eq!(make_split(&rev, 3).unwrap(), s);
        assert!(make_split(&ids[..9], 3).is_err());
    }
}
