//! Declarative stage runner.
//!
//! A pipeline file is TOML. Relative paths resolve against the directory
//! that holds the file.
//!
//! ```toml
//! out_dir = "out"            # required
//! task = "ihm"               # required: ihm | los
//! stages = ["generate-synth", "redact", "score", "evaluate"]   # required
//! seed = 13                  # run r uses seed + r
//! runs = 3
//! registry = "mimic_iv"      # builtin name or TSV path
//! dataset_id = "synthetic"   # column label in the report
//!
//! [generate]                 # generator settings, see synthgen::GeneratorConfig
//! n_samples = 1000
//! intensity_ratio = 2.0
//!
//! [build]                    # CSV ingest, used by build-dataset
//! labs = "labs.csv"
//! notes = "notes.csv"
//! stays = "stays.csv"
//! note_rules = "eicu"        # optional: eICU note rows
//! time_unit = "minutes"      # hours | minutes
//! cohort = "eicu"            # mimic_iv | eicu, defaults to `registry`
//!
//! [serialize]
//! max_note_chars = 2000      # optional truncation of note text
//!
//! [pending]
//! cutoff_hours = 24.0
//! countermeasure = "drop"    # drop | show-presence
//!
//! [sft]
//! allow_show_presence = false
//!
//! [score]
//! scorer = "count-baseline"  # count-baseline | endpoint
//! view = "redacted"          # full | redacted | pending
//! split = "test"
//! [score.endpoint]           # see inference::EndpointConfig
//! base_url = "http://127.0.0.1:30000"
//!
//! [evaluate]
//! method = "count-baseline"  # report row label
//! ```
//!
//! Stages: `generate-synth`, `build-dataset`, `serialize`, `redact`,
//! `pending`, `export-sft`, `score`, `evaluate`, `stats`. They run in the
//! listed order. Every stage except `evaluate` runs once per run and writes
//! under `out_dir/run{r}/`; `evaluate` aggregates all runs into `out_dir`.
//! Each stage also writes `manifests/<stage>.json` with its seed, parameters
//! and the SHA-256 of every file it read or wrote.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::dataset::{self, Split, SplitAssignment};
use crate::error::{Error, Result};
use crate::inference::{self, EndpointConfig, ScoreRecord};
use crate::ingest::{self, CohortRules, IngestInputs, TimeUnit};
use crate::metrics::{self, AggregateReport, RunResult};
use crate::model::{flatten_with, FlatObservation, FormatPolicy, MitsSample};
use crate::prompting::{self, ExportOptions, PromptBundle, SftStage, TemplateId, TemplateVariant};
use crate::registry::ChannelRegistry;
use crate::synthgen::{self, GeneratorConfig};
use crate::task::{Task, TaskConfig};
use crate::transforms::{apply_value_pending, pending_statistics, redact_values, Countermeasure, PendingPolicy};
use crate::util;
use crate::xml::{render, RenderMode, SerializedMits};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    GenerateSynth,
    BuildDataset,
    Serialize,
    Redact,
    Pending,
    ExportSft,
    Score,
    Evaluate,
    Stats,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::GenerateSynth,
        Stage::BuildDataset,
        Stage::Serialize,
        Stage::Redact,
        Stage::Pending,
        Stage::ExportSft,
        Stage::Score,
        Stage::Evaluate,
        Stage::Stats,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::GenerateSynth => "generate-synth",
            Stage::BuildDataset => "build-dataset",
            Stage::Serialize => "serialize",
            Stage::Redact => "redact",
            Stage::Pending => "pending",
            Stage::ExportSft => "export-sft",
            Stage::Score => "score",
            Stage::Evaluate => "evaluate",
            Stage::Stats => "stats",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

/// Observation view fed to prompts and scorers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum View {
    Full,
    Redacted,
    Pending(PendingPolicy),
}

impl View {
    pub fn transform(&self, flat: &[FlatObservation]) -> Vec<FlatObservation> {
        match self {
            View::Full => flat.to_vec(),
            View::Redacted => redact_values(flat),
            View::Pending(policy) => apply_value_pending(flat, policy),
        }
    }

    pub fn render_mode(&self) -> RenderMode {
        match self {
            View::Full => RenderMode::FullTriplet,
            View::Redacted => RenderMode::RedactedPair,
            View::Pending(p) => match p.countermeasure {
                Countermeasure::DropObservation => RenderMode::FullTriplet,
                Countermeasure::ShowPresence => RenderMode::MixedByPendingFlag,
            },
        }
    }

    pub fn name(&self) -> String {
        match self {
            View::Full => "full".into(),
            View::Redacted => "redacted".into(),
            View::Pending(p) => format!("pending_{}", p.countermeasure.to_string().replace('-', "_")),
        }
    }

    /// Flattens, transforms and renders one sample.
    pub fn serialize(&self, sample: &MitsSample, registry: &ChannelRegistry, policy: &FormatPolicy) -> Result<SerializedMits> {
        let flat = flatten_with(sample, registry, policy)?;
        render(&self.transform(&flat), self.render_mode())
    }

    /// Prompt for one sample under this view.
    pub fn prompt(
        &self,
        sample: &MitsSample,
        registry: &ChannelRegistry,
        policy: &FormatPolicy,
        task: &TaskConfig,
    ) -> Result<PromptBundle> {
        let ser = self.serialize(sample, registry, policy)?;
        let id = TemplateId::new(task.task, TemplateVariant::for_mode(ser.mode));
        prompting::build_prompt(&sample.sample_id, &ser, task, id)
    }
}

/// One rendered sample in a view file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub sample_id: String,
    pub label: usize,
    pub mode: RenderMode,
    pub text: String,
}

pub fn view_jsonl(
    samples: &[&MitsSample],
    registry: &ChannelRegistry,
    policy: &FormatPolicy,
    view: &View,
) -> Result<String> {
    let mut out = String::new();
    for s in samples {
        let ser = view.serialize(s, registry, policy)?;
        let rec = ViewRecord {
            sample_id: s.sample_id.clone(),
            label: s.label,
            mode: ser.mode,
            text: ser.text,
        };
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scorer {
    #[default]
    CountBaseline,
    Endpoint,
}

impl fmt::Display for Scorer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scorer::CountBaseline => "count-baseline",
            Scorer::Endpoint => "endpoint",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewName {
    Full,
    #[default]
    Redacted,
    Pending,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildSection {
    pub labs: PathBuf,
    pub notes: PathBuf,
    pub stays: PathBuf,
    #[serde(default)]
    pub note_rules: Option<String>,
    #[serde(default)]
    pub time_unit: TimeUnit,
    #[serde(default)]
    pub cohort: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SerializeSection {
    pub max_note_chars: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PendingSection {
    pub cutoff_hours: f64,
    pub countermeasure: String,
}

impl Default for PendingSection {
    fn default() -> Self {
        PendingSection {
            cutoff_hours: 24.0,
            countermeasure: "drop".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SftSection {
    pub allow_show_presence: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreSection {
    pub scorer: Scorer,
    pub view: ViewName,
    pub split: Split,
    pub endpoint: EndpointConfig,
}

impl Default for ScoreSection {
    fn default() -> Self {
        ScoreSection {
            scorer: Scorer::CountBaseline,
            view: ViewName::Redacted,
            split: Split::Test,
            endpoint: EndpointConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub method: Option<String>,
}

fn default_runs() -> usize {
    1
}

fn default_registry() -> String {
    "mimic_iv".into()
}

fn default_dataset_id() -> String {
    "synthetic".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub out_dir: PathBuf,
    pub task: Task,
    pub stages: Vec<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_registry")]
    pub registry: String,
    #[serde(default = "default_dataset_id")]
    pub dataset_id: String,
    #[serde(default)]
    pub generate: GeneratorConfig,
    #[serde(default)]
    pub build: Option<BuildSection>,
    #[serde(default)]
    pub serialize: SerializeSection,
    #[serde(default)]
    pub pending: PendingSection,
    #[serde(default)]
    pub sft: SftSection,
    #[serde(default)]
    pub score: ScoreSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Parsed stage list; the first unknown name is reported.
    pub fn stage_list(&self) -> Result<Vec<Stage>> {
        if self.stages.is_empty() {
            return Err(Error::Config("`stages` is empty".into()));
        }
        self.stages.iter().map(|s| s.parse()).collect()
    }

    pub fn pending_policy(&self) -> Result<PendingPolicy> {
        PendingPolicy::new(self.pending.cutoff_hours, self.pending.countermeasure.parse()?)
    }

    pub fn view(&self) -> Result<View> {
        Ok(match self.score.view {
            ViewName::Full => View::Full,
            ViewName::Redacted => View::Redacted,
            ViewName::Pending => View::Pending(self.pending_policy()?),
        })
    }

    pub fn method_name(&self) -> Result<String> {
        Ok(match &self.evaluate.method {
            Some(m) => m.clone(),
            None => format!("{}/{}", self.score.scorer, self.view()?.name()),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let stages = self.stage_list()?;
        if self.runs == 0 {
            return Err(Error::Config("`runs` must be at least 1".into()));
        }
        if stages.contains(&Stage::BuildDataset) && self.build.is_none() {
            return Err(Error::Config("stage build-dataset needs a [build] section".into()));
        }
        self.pending_policy()?;
        if self.score.scorer == Scorer::Endpoint {
            self.score.endpoint.validate(&TaskConfig::for_task(self.task))?;
        }
        Ok(())
    }
}

/// Record of one stage execution. Paths are relative to `out_dir`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub run: Option<usize>,
    pub seed: u64,
    pub params: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

/// What a pipeline produced.
#[derive(Clone, Debug)]
pub struct PipelineSummary {
    pub out_dir: PathBuf,
    pub stages: Vec<Stage>,
    pub manifests: Vec<StageManifest>,
    pub report: Option<AggregateReport>,
}

struct Ctx<'a> {
    config: &'a PipelineConfig,
    base_dir: &'a Path,
    out_dir: PathBuf,
    registry: ChannelRegistry,
    task: TaskConfig,
    format: FormatPolicy,
}

struct StageIo {
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    params: serde_json::Value,
}

impl StageIo {
    fn new(params: serde_json::Value) -> Self {
        StageIo {
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            params,
        }
    }
}

impl Ctx<'_> {
    fn run_dir(&self, run: usize) -> PathBuf {
        self.out_dir.join(format!("run{run}"))
    }

    fn seed(&self, run: usize) -> u64 {
        self.config.seed.wrapping_add(run as u64)
    }

    fn rel(&self, path: &Path) -> String {
        path.strip_prefix(&self.out_dir)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/")
    }

    fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    fn write(&self, io: &mut StageIo, path: &Path, body: &[u8]) -> Result<()> {
        util::write_file(path, body)?;
        io.outputs.insert(self.rel(path), util::sha256_hex(body));
        Ok(())
    }

    fn read(&self, io: &mut StageIo, path: &Path) -> Result<String> {
        let body = util::read_to_string(path)?;
        io.inputs.insert(self.rel(path), util::sha256_hex(body.as_bytes()));
        Ok(body)
    }

    fn read_dataset(&self, io: &mut StageIo, run: usize) -> Result<Vec<MitsSample>> {
        dataset::from_jsonl(&self.read(io, &self.run_dir(run).join("dataset.jsonl"))?)
    }

    fn read_split(&self, io: &mut StageIo, run: usize) -> Result<SplitAssignment> {
        Ok(serde_json::from_str(&self.read(io, &self.run_dir(run).join("split.json"))?)?)
    }

    fn write_dataset(&self, io: &mut StageIo, run: usize, samples: &[MitsSample], seed: u64) -> Result<()> {
        let dir = self.run_dir(run);
        self.write(io, &dir.join("dataset.jsonl"), dataset::to_jsonl(samples)?.as_bytes())?;
        let ids: Vec<&str> = samples.iter().map(|s| s.sample_id.as_str()).collect();
        let split = ingest::make_split(&ids, seed)?;
        self.write(io, &dir.join("split.json"), split.to_json()?.as_bytes())
    }

    fn params<T: Serialize>(value: &T) -> serde_json::Value {
        serde_json::to_value(value).unwrap_or(serde_json::Value::Null)
    }

    fn run_stage(&self, stage: Stage, run: usize) -> Result<StageIo> {
        let cfg = self.config;
        let dir = self.run_dir(run);
        match stage {
            Stage::GenerateSynth => {
                let gen = GeneratorConfig {
                    seed: self.seed(run),
                    ..cfg.generate.clone()
                };
                let mut io = StageIo::new(Self::params(&gen));
                let samples = synthgen::generate_dataset(&gen, &self.registry)?;
                self.write_dataset(&mut io, run, &samples, self.seed(run))?;
                Ok(io)
            }
            Stage::BuildDataset => {
                let build = cfg
                    .build
                    .as_ref()
                    .ok_or_else(|| Error::Config("missing [build] section".into()))?;
                let cohort_name = build.cohort.clone().unwrap_or_else(|| cfg.registry.clone());
                let rules = CohortRules::for_dataset(&cohort_name, cfg.task)?;
                let mut io = StageIo::new(serde_json::json!({"build": build, "cohort": rules}));
                let note_rules = build.note_rules.as_ref().map(|r| {
                    if r == "eicu" {
                        r.clone()
                    } else {
                        self.resolve(Path::new(r)).to_string_lossy().into_owned()
                    }
                });
                let inputs = IngestInputs {
                    labs: self.resolve(&build.labs),
                    notes: self.resolve(&build.notes),
                    stays: self.resolve(&build.stays),
                    note_rules,
                };
                for p in [&inputs.labs, &inputs.notes, &inputs.stays] {
                    let bytes = std::fs::read(p).map_err(|e| Error::io(p.clone(), e))?;
                    let name = p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
                    io.inputs.insert(name, util::sha256_hex(&bytes));
                }
                let (samples, report) = ingest::build_dataset(&inputs, &self.registry, &rules, build.time_unit)?;
                info!("build-dataset: kept {} of {} stays", report.cohort.kept, report.cohort.candidates);
                self.write_dataset(&mut io, run, &samples, self.seed(run))?;
                let mut rep = serde_json::to_string_pretty(&report)?;
                rep.push('\n');
                self.write(&mut io, &dir.join("ingest_report.json"), rep.as_bytes())?;
                Ok(io)
            }
            Stage::Serialize | Stage::Redact | Stage::Pending => {
                let view = match stage {
                    Stage::Serialize => View::Full,
                    Stage::Redact => View::Redacted,
                    _ => View::Pending(cfg.pending_policy()?),
                };
                let mut io = StageIo::new(serde_json::json!({
                    "view": view.name(),
                    "serialize": cfg.serialize,
                    "pending": cfg.pending,
                }));
                let data = self.read_dataset(&mut io, run)?;
                let all: Vec<&MitsSample> = data.iter().collect();
                let body = view_jsonl(&all, &self.registry, &self.format, &view)?;
                self.write(&mut io, &dir.join(format!("views/{}.jsonl", view.name())), body.as_bytes())?;
                if let View::Pending(policy) = view {
                    let stats = pending_statistics(&data, &policy);
                    self.write(&mut io, &dir.join("pending_stats.csv"), stats.to_csv().as_bytes())?;
                }
                Ok(io)
            }
            Stage::ExportSft => {
                let opts = ExportOptions {
                    allow_show_presence: cfg.sft.allow_show_presence,
                };
                let mut io = StageIo::new(Self::params(&cfg.sft));
                let data = self.read_dataset(&mut io, run)?;
                let split = self.read_split(&mut io, run)?;
                for (sft_stage, view) in [(SftStage::Stage1Redacted, View::Redacted), (SftStage::Stage2Full, View::Full)] {
                    for part in [Split::Train, Split::Validation] {
                        let bundles = split
                            .select(&data, part)
                            .into_iter()
                            .map(|s| {
                                let b = view.prompt(s, &self.registry, &self.format, &self.task)?;
                                prompting::build_sft_record(b, s.label, &self.task)
                            })
                            .collect::<Result<Vec<_>>>()?;
                        let path = dir.join(format!("sft/{}.{part}.jsonl", sft_stage.as_str()));
                        prompting::export_sft_file(&bundles, &path, sft_stage, opts)?;
                        for p in [path.clone(), prompting::manifest_path(&path)] {
                            let bytes = std::fs::read(&p).map_err(|e| Error::io(p.clone(), e))?;
                            io.outputs.insert(self.rel(&p), util::sha256_hex(&bytes));
                        }
                    }
                }
                Ok(io)
            }
            Stage::Score => {
                let view = cfg.view()?;
                let mut io = StageIo::new(serde_json::json!({
                    "scorer": cfg.score.scorer,
                    "view": view.name(),
                    "split": cfg.score.split,
                    "endpoint": if cfg.score.scorer == Scorer::Endpoint {
                        Self::params(&cfg.score.endpoint)
                    } else {
                        serde_json::Value::Null
                    },
                }));
                let data = self.read_dataset(&mut io, run)?;
                let split = self.read_split(&mut io, run)?;
                let selected = split.select(&data, cfg.score.split);
                let records = score_samples(&selected, &view, cfg.score.scorer, &cfg.score.endpoint, self)?;
                let n_err = records.iter().filter(|r| r.is_error()).count();
                if n_err > 0 {
                    warn!("run {run}: {n_err} of {} samples failed to score", records.len());
                }
                self.write(&mut io, &dir.join("scores.jsonl"), inference::write_scores(&records)?.as_bytes())?;
                Ok(io)
            }
            Stage::Stats => {
                let mut io = StageIo::new(Self::params(&cfg.pending));
                let data = self.read_dataset(&mut io, run)?;
                self.write(
                    &mut io,
                    &dir.join("count_histogram.csv"),
                    synthgen::count_histogram_csv(&data).as_bytes(),
                )?;
                let stats = pending_statistics(&data, &cfg.pending_policy()?);
                self.write(&mut io, &dir.join("pending_stats.csv"), stats.to_csv().as_bytes())?;
                Ok(io)
            }
            Stage::Evaluate => unreachable!("evaluate runs once over all runs"),
        }
    }

    fn evaluate(&self) -> Result<(StageIo, AggregateReport)> {
        let method = self.config.method_name()?;
        let mut io = StageIo::new(serde_json::json!({
            "method": method,
            "dataset_id": self.config.dataset_id,
            "runs": self.config.runs,
        }));
        let mut runs = Vec::new();
        for run in 0..self.config.runs {
            let data = self.read_dataset(&mut io, run)?;
            let scores = inference::read_scores(&self.read(&mut io, &self.run_dir(run).join("scores.jsonl"))?)?;
            runs.push(evaluate_scores(
                &data,
                &scores,
                &self.task,
                &method,
                &self.config.dataset_id,
                run,
            )?);
        }
        let report = metrics::aggregate_runs(&runs, &[])?;
        self.write(&mut io, &self.out_dir.join("runs.csv"), metrics::runs_to_csv(&runs)?.as_bytes())?;
        self.write(&mut io, &self.out_dir.join("report.csv"), report.to_csv().as_bytes())?;
        self.write(&mut io, &self.out_dir.join("report.txt"), report.to_text().as_bytes())?;
        Ok((io, report))
    }

    fn write_manifest(&self, stage: Stage, run: Option<usize>, io: StageIo) -> Result<StageManifest> {
        let manifest = StageManifest {
            stage: stage.to_string(),
            run,
            seed: run.map_or(self.config.seed, |r| self.seed(r)),
            params: io.params,
            inputs: io.inputs,
            outputs: io.outputs,
        };
        let dir = match run {
            Some(r) => self.run_dir(r),
            None => self.out_dir.clone(),
        };
        let mut body = serde_json::to_string_pretty(&manifest)?;
        body.push('\n');
        util::write_file(&dir.join(format!("manifests/{stage}.json")), body.as_bytes())?;
        Ok(manifest)
    }
}

/// Scores samples under `view`. The count baseline needs no endpoint.
pub fn score_samples(
    samples: &[&MitsSample],
    view: &View,
    scorer: Scorer,
    endpoint: &EndpointConfig,
    ctx_like: &impl ScoringContext,
) -> Result<Vec<ScoreRecord>> {
    let (registry, format, task) = (ctx_like.registry(), ctx_like.format(), ctx_like.task());
    let mut records = match scorer {
        Scorer::CountBaseline => samples
            .iter()
            .map(|s| {
                let flat = flatten_with(s, registry, format)?;
                Ok(ScoreRecord::scored(&s.sample_id, synthgen::count_baseline_flat(&view.transform(&flat))))
            })
            .collect::<Result<Vec<_>>>()?,
        Scorer::Endpoint => {
            endpoint.validate(task)?;
            let bundles = samples
                .iter()
                .map(|s| view.prompt(s, registry, format, task))
                .collect::<Result<Vec<_>>>()?;
            inference::score_batch(&bundles, endpoint, task)
        }
    };
    records.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    Ok(records)
}

/// Access to the shared objects that scoring needs.
pub trait ScoringContext {
    fn registry(&self) -> &ChannelRegistry;
    fn format(&self) -> &FormatPolicy;
    fn task(&self) -> &TaskConfig;
}

impl ScoringContext for Ctx<'_> {
    fn registry(&self) -> &ChannelRegistry {
        &self.registry
    }
    fn format(&self) -> &FormatPolicy {
        &self.format
    }
    fn task(&self) -> &TaskConfig {
        &self.task
    }
}

/// Plain bundle of the scoring inputs for callers outside a pipeline.
pub struct Scoring {
    pub registry: ChannelRegistry,
    pub format: FormatPolicy,
    pub task: TaskConfig,
}

impl ScoringContext for Scoring {
    fn registry(&self) -> &ChannelRegistry {
        &self.registry
    }
    fn format(&self) -> &FormatPolicy {
        &self.format
    }
    fn task(&self) -> &TaskConfig {
        &self.task
    }
}

/// Joins score records with dataset labels and computes AU-ROC and AP.
/// Error records are skipped; a scored id missing from the dataset is an
/// error.
pub fn evaluate_scores(
    data: &[MitsSample],
    scores: &[ScoreRecord],
    task: &TaskConfig,
    method: &str,
    dataset_id: &str,
    run: usize,
) -> Result<RunResult> {
    let labels: BTreeMap<&str, usize> = data.iter().map(|s| (s.sample_id.as_str(), s.label)).collect();
    let mut xs = Vec::with_capacity(scores.len());
    let mut ys = Vec::with_capacity(scores.len());
    let mut skipped = 0;
    for rec in scores {
        let label = labels
            .get(rec.sample_id.as_str())
            .ok_or_else(|| Error::MetricInput(format!("scored sample `{}` is not in the dataset", rec.sample_id)))?;
        match rec.score() {
            Some(s) => {
                xs.push(s);
                ys.push(task.is_positive(*label));
            }
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        warn!("run {run}: {skipped} error records excluded from metrics");
    }
    RunResult::compute(method, dataset_id, run, &xs, &ys)
}

/// Loads `path` and runs it; relative paths resolve against its directory.
pub fn run_pipeline_file(path: &Path) -> Result<PipelineSummary> {
    let config = PipelineConfig::from_toml(&util::read_to_string(path)?)?;
    let base = path.parent().unwrap_or(Path::new("."));
    run_pipeline(&config, base)
}

pub fn run_pipeline(config: &PipelineConfig, base_dir: &Path) -> Result<PipelineSummary> {
    config.validate()?;
    let stages = config.stage_list()?;
    let registry = if ChannelRegistry::builtin(&config.registry).is_some() {
        ChannelRegistry::load(&config.registry)?
    } else {
        ChannelRegistry::from_path(&base_dir.join(&config.registry))?
    };
    let out_dir = if config.out_dir.is_absolute() {
        config.out_dir.clone()
    } else {
        base_dir.join(&config.out_dir)
    };
    let ctx = Ctx {
        config,
        base_dir,
        out_dir: out_dir.clone(),
        registry,
        task: TaskConfig::for_task(config.task),
        format: FormatPolicy {
            max_note_chars: config.serialize.max_note_chars,
        },
    };
    let mut manifests = Vec::new();
    let mut report = None;
    for &stage in &stages {
        let wrap = |e: Error| Error::Stage {
            stage: stage.to_string(),
            source: Box::new(e),
        };
        info!("stage {stage}");
        if stage == Stage::Evaluate {
            let (io, rep) = ctx.evaluate().map_err(wrap)?;
            manifests.push(ctx.write_manifest(stage, None, io).map_err(wrap)?);
            report = Some(rep);
        } else {
            for run in 0..config.runs {
                let io = ctx.run_stage(stage, run).map_err(wrap)?;
                manifests.push(ctx.write_manifest(stage, Some(run), io).map_err(wrap)?);
            }
        }
    }
    Ok(PipelineSummary {
        out_dir,
        stages,
        manifests,
        report,
    })
}
