use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use mitskit_core::dataset::{self, Split, SplitAssignment};
use mitskit_core::inference::{self, EndpointConfig, ScoreRecord};
use mitskit_core::ingest::{self, CohortRules, IngestInputs, TimeUnit};
use mitskit_core::metrics::{self, RunResult};
use mitskit_core::pipeline::{self, evaluate_scores, score_samples, view_jsonl, Scorer, Scoring, View};
use mitskit_core::prompting::{self, ExportOptions, SftStage};
use mitskit_core::synthgen::{self, GeneratorConfig};
use mitskit_core::transforms::{pending_statistics, Countermeasure, PendingPolicy};
use mitskit_core::{parse, ChannelRegistry, Error, FormatPolicy, MitsSample, Task, TaskConfig};

#[derive(Parser)]
#[command(name = "mitskit", version, about = "Serialize, transform, score and evaluate multimodal irregular time series")]
struct Cli {
    /// Log verbosity (error, warn, info, debug, trace). RUST_LOG overrides it.
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a dataset from lab, note and stay CSV exports.
    BuildDataset(BuildArgs),
    /// Generate a synthetic cohort with informative sampling.
    GenerateSynth(GenerateArgs),
    /// Render every sample of a dataset under one view.
    Serialize(SerializeArgs),
    /// Parse a serialized block back into observations (JSON).
    Parse(ParseArgs),
    /// Score and evaluate the value-redacted view.
    #[command(visible_alias = "redact-eval")]
    Redact(EvalArgs),
    /// Score and evaluate a value-pending view and write the pending-rate table.
    #[command(visible_alias = "pending-eval")]
    Pending(PendingEvalArgs),
    /// Write SFT JSONL and its manifest for one training stage.
    ExportSft(ExportArgs),
    /// Score samples and write one record per sample.
    Score(ScoreArgs),
    /// Compute metrics from scores, or aggregate run tables into a report.
    Evaluate(EvaluateArgs),
    /// Per-label count histograms and pending statistics.
    Stats(StatsArgs),
    /// Run a declarative pipeline file.
    Run(RunArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value = "ihm")]
    task: Task,
    /// Builtin registry name (mimic_iv, eicu) or TSV path.
    #[arg(long, default_value = "mimic_iv")]
    registry: String,
    /// Truncate note text to this many characters.
    #[arg(long)]
    max_note_chars: Option<usize>,
}

impl Common {
    fn registry(&self) -> Result<ChannelRegistry, Error> {
        ChannelRegistry::load(&self.registry)
    }

    fn scoring(&self) -> Result<Scoring, Error> {
        Ok(Scoring {
            registry: self.registry()?,
            format: FormatPolicy {
                max_note_chars: self.max_note_chars,
            },
            task: TaskConfig::for_task(self.task),
        })
    }
}

#[derive(Args)]
struct Selection {
    #[arg(long)]
    dataset: PathBuf,
    /// Split file; without it every sample is used.
    #[arg(long)]
    split_file: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: Split,
}

impl Selection {
    fn load(&self) -> Result<Vec<MitsSample>, Error> {
        let data = dataset::read_dataset(&self.dataset)?;
        let Some(path) = &self.split_file else {
            return Ok(data);
        };
        let split = SplitAssignment::read(path)?;
        let ids: std::collections::BTreeSet<&str> = split.ids(self.split).collect();
        Ok(data.into_iter().filter(|s| ids.contains(s.sample_id.as_str())).collect())
    }
}

#[derive(Args)]
struct EndpointArgs {
    /// Score with the count baseline or an OpenAI-compatible endpoint.
    #[arg(long, value_enum, default_value = "count-baseline")]
    scorer: ScorerArg,
    #[arg(long, default_value = "http://127.0.0.1:30000")]
    endpoint: String,
    #[arg(long, default_value = "default")]
    model: String,
    #[arg(long, default_value_t = 8)]
    concurrency: usize,
    #[arg(long, default_value_t = 20)]
    top_logprobs: usize,
    #[arg(long, default_value_t = 60.0)]
    timeout_secs: f64,
    #[arg(long, default_value_t = 3)]
    max_retries: u32,
}

impl EndpointArgs {
    fn config(&self) -> EndpointConfig {
        EndpointConfig {
            base_url: self.endpoint.clone(),
            model: self.model.clone(),
            concurrency: self.concurrency,
            top_logprobs: self.top_logprobs,
            timeout_secs: self.timeout_secs,
            max_retries: self.max_retries,
            ..EndpointConfig::default()
        }
    }

    fn scorer(&self) -> Scorer {
        match self.scorer {
            ScorerArg::CountBaseline => Scorer::CountBaseline,
            ScorerArg::Endpoint => Scorer::Endpoint,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScorerArg {
    CountBaseline,
    Endpoint,
}

#[derive(Clone, Copy, ValueEnum)]
enum ViewArg {
    Full,
    Redacted,
    Pending,
}

#[derive(Args)]
struct PendingArgs {
    #[arg(long, default_value = "drop")]
    countermeasure: Countermeasure,
    #[arg(long, default_value_t = 24.0)]
    cutoff_hours: f64,
}

impl PendingArgs {
    fn policy(&self) -> Result<PendingPolicy, Error> {
        PendingPolicy::new(self.cutoff_hours, self.countermeasure)
    }
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    labs: PathBuf,
    #[arg(long)]
    notes: PathBuf,
    #[arg(long)]
    stays: PathBuf,
    /// Note reconstruction rules for row-per-field notes: `eicu` or a TOML path.
    #[arg(long)]
    rules: Option<String>,
    /// Cohort preset: mimic_iv or eicu. Defaults to the registry name.
    #[arg(long)]
    cohort: Option<String>,
    #[arg(long, default_value = "hours")]
    time_unit: TimeUnit,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset JSONL; split.json and ingest_report.json go next to it.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct GenerateArgs {
    /// Generator TOML; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    intensity_ratio: Option<f64>,
    #[arg(long)]
    positive_rate: Option<f64>,
    /// Channel preset: mimic_iv or eicu.
    #[arg(long)]
    preset: Option<String>,
    /// Output dataset JSONL; split.json is written next to it.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SerializeArgs {
    #[command(flatten)]
    select: Selection,
    #[arg(long, value_enum, default_value = "full")]
    view: ViewArg,
    #[command(flatten)]
    pending: PendingArgs,
    /// Output JSONL; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ParseArgs {
    /// UTF-8 file holding one serialized block.
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "mimic_iv")]
    registry: String,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    select: Selection,
    #[command(flatten)]
    endpoint: EndpointArgs,
    /// Directory for scores.jsonl and metrics.json.
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct PendingEvalArgs {
    #[command(flatten)]
    eval: EvalArgs,
    #[command(flatten)]
    pending: PendingArgs,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    select: Selection,
    /// stage1-redacted or stage2-full.
    #[arg(long)]
    stage: SftStage,
    /// Export stage-2 prompts in the show-presence view instead of full.
    #[arg(long)]
    allow_show_presence: bool,
    #[command(flatten)]
    pending: PendingArgs,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    select: Selection,
    #[arg(long, value_enum, default_value = "redacted")]
    view: ViewArg,
    #[command(flatten)]
    pending: PendingArgs,
    #[command(flatten)]
    endpoint: EndpointArgs,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Dataset providing labels for --scores.
    #[arg(long, requires = "scores")]
    dataset: Option<PathBuf>,
    #[arg(long, requires = "dataset")]
    scores: Option<PathBuf>,
    #[arg(long, default_value = "method")]
    method: String,
    #[arg(long, default_value = "dataset")]
    dataset_id: String,
    #[arg(long, default_value_t = 0)]
    run: usize,
    /// Append the computed run to this CSV.
    #[arg(long)]
    append: Option<PathBuf>,
    /// Run tables to aggregate into a report.
    #[arg(long = "runs", conflicts_with_all = ["dataset", "scores"])]
    runs: Vec<PathBuf>,
    /// Method order for the report; defaults to first appearance.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    /// Directory for report.csv and report.txt.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, default_value = "ihm")]
    task: Task,
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    select: Selection,
    #[command(flatten)]
    pending: PendingArgs,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
}

enum Failure {
    Usage(String),
    Stage(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Stage(e)
    }
}

type CliResult = Result<(), Failure>;

fn write_out(path: &Path, body: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.to_path_buf(), e))?;
    }
    fs::write(path, body).map_err(|e| Error::io(path.to_path_buf(), e))
}

fn emit(out: Option<&Path>, body: &str) -> Result<(), Error> {
    match out {
        Some(p) => write_out(p, body),
        None => {
            stdout(body);
            Ok(())
        }
    }
}

/// Writes to stdout; a closed pipe ends output quietly.
fn stdout(body: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(body.as_bytes()).and_then(|_| out.flush());
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new("")).join(name)
}

fn write_dataset_with_split(out: &Path, samples: &[MitsSample], seed: u64) -> Result<(), Error> {
    write_out(out, &dataset::to_jsonl(samples)?)?;
    let ids: Vec<&str> = samples.iter().map(|s| s.sample_id.as_str()).collect();
    if ids.len() >= 10 {
        write_out(&sibling(out, "split.json"), &ingest::make_split(&ids, seed)?.to_json()?)?;
    } else {
        warn!("only {} samples; no split written", ids.len());
    }
    Ok(())
}

fn view_of(view: ViewArg, pending: &PendingArgs) -> Result<View, Error> {
    Ok(match view {
        ViewArg::Full => View::Full,
        ViewArg::Redacted => View::Redacted,
        ViewArg::Pending => View::Pending(pending.policy()?),
    })
}

fn build_dataset(args: BuildArgs) -> CliResult {
    let registry = args.common.registry()?;
    let cohort = args.cohort.clone().unwrap_or_else(|| args.common.registry.clone());
    let rules = CohortRules::for_dataset(&cohort, args.common.task)?;
    let inputs = IngestInputs {
        labs: args.labs,
        notes: args.notes,
        stays: args.stays,
        note_rules: args.rules,
    };
    let (samples, report) = ingest::build_dataset(&inputs, &registry, &rules, args.time_unit)?;
    info!("kept {} of {} stays", report.cohort.kept, report.cohort.candidates);
    write_dataset_with_split(&args.out, &samples, args.seed)?;
    let mut rep = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    rep.push('\n');
    write_out(&sibling(&args.out, "ingest_report.json"), &rep)?;
    Ok(())
}

fn generate_synth(args: GenerateArgs) -> CliResult {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p.clone(), e))?;
            toml::from_str::<GeneratorConfig>(&text).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?
        }
        None => GeneratorConfig::default(),
    };
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.n_samples {
        cfg.n_samples = v;
    }
    if let Some(v) = args.intensity_ratio {
        cfg.intensity_ratio = v;
    }
    if let Some(v) = args.positive_rate {
        cfg.positive_rate = v;
    }
    if let Some(v) = args.preset {
        cfg.preset = v;
    }
    let samples = synthgen::generate_dataset(&cfg, &args.common.registry()?)?;
    info!("generated {} samples (seed {}, r = {})", samples.len(), cfg.seed, cfg.intensity_ratio);
    write_dataset_with_split(&args.out, &samples, cfg.seed)?;
    Ok(())
}

fn serialize(args: SerializeArgs) -> CliResult {
    let ctx = args.common.scoring()?;
    let data = args.select.load()?;
    let refs: Vec<&MitsSample> = data.iter().collect();
    let view = view_of(args.view, &args.pending)?;
    emit(args.out.as_deref(), &view_jsonl(&refs, &ctx.registry, &ctx.format, &view)?)?;
    Ok(())
}

fn parse_cmd(args: ParseArgs) -> CliResult {
    let registry = ChannelRegistry::load(&args.registry)?;
    let text = fs::read_to_string(&args.input).map_err(|e| Error::io(args.input.clone(), e))?;
    let flat = parse(&text, &registry)?;
    let mut body = serde_json::to_string_pretty(&flat).map_err(Error::from)?;
    body.push('\n');
    emit(args.out.as_deref(), &body)?;
    Ok(())
}

fn score_and_evaluate(args: &EvalArgs, view: View) -> Result<RunResult, Error> {
    let ctx = args.common.scoring()?;
    let data = args.select.load()?;
    let refs: Vec<&MitsSample> = data.iter().collect();
    let records = score_samples(&refs, &view, args.endpoint.scorer(), &args.endpoint.config(), &ctx)?;
    write_out(&args.out_dir.join("scores.jsonl"), &inference::write_scores(&records)?)?;
    let method = format!("{}/{}", args.endpoint.scorer(), view.name());
    let result = evaluate_scores(&data, &records, &ctx.task, &method, "dataset", 0)?;
    let mut body = serde_json::to_string_pretty(&result)?;
    body.push('\n');
    write_out(&args.out_dir.join("metrics.json"), &body)?;
    stdout(&format!(
        "{method}: AU-ROC {:.4}, AP {:.4} ({} samples)\n",
        result.auroc, result.ap, result.n_samples
    ));
    Ok(result)
}

fn redact_eval(args: EvalArgs) -> CliResult {
    score_and_evaluate(&args, View::Redacted)?;
    Ok(())
}

fn pending_eval(args: PendingEvalArgs) -> CliResult {
    let policy = args.pending.policy()?;
    let data = args.eval.select.load()?;
    write_out(&args.eval.out_dir.join("pending_stats.csv"), &pending_statistics(&data, &policy).to_csv())?;
    score_and_evaluate(&args.eval, View::Pending(policy))?;
    Ok(())
}

fn export_sft(args: ExportArgs) -> CliResult {
    let ctx = args.common.scoring()?;
    let view = match (args.stage, args.allow_show_presence) {
        (SftStage::Stage1Redacted, false) => View::Redacted,
        (SftStage::Stage2Full, false) => View::Full,
        (SftStage::Stage2Full, true) => View::Pending(PendingPolicy::new(
            args.pending.cutoff_hours,
            Countermeasure::ShowPresence,
        )?),
        (SftStage::Stage1Redacted, true) => {
            return Err(Failure::Usage("--allow-show-presence applies to stage2-full only".into()))
        }
    };
    let data = args.select.load()?;
    let bundles = data
        .iter()
        .map(|s| {
            let b = view.prompt(s, &ctx.registry, &ctx.format, &ctx.task)?;
            prompting::build_sft_record(b, s.label, &ctx.task)
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let opts = ExportOptions {
        allow_show_presence: args.allow_show_presence,
    };
    let manifest = prompting::export_sft_file(&bundles, &args.out, args.stage, opts)?;
    info!("wrote {} records to {}", manifest.n_records, args.out.display());
    Ok(())
}

fn score(args: ScoreArgs) -> CliResult {
    let ctx = args.common.scoring()?;
    let data = args.select.load()?;
    let refs: Vec<&MitsSample> = data.iter().collect();
    let view = view_of(args.view, &args.pending)?;
    let records: Vec<ScoreRecord> =
        score_samples(&refs, &view, args.endpoint.scorer(), &args.endpoint.config(), &ctx)?;
    let n_err = records.iter().filter(|r| r.is_error()).count();
    if n_err > 0 {
        warn!("{n_err} of {} samples failed to score", records.len());
    }
    write_out(&args.out, &inference::write_scores(&records)?)?;
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> CliResult {
    if let (Some(data_path), Some(scores_path)) = (&args.dataset, &args.scores) {
        let data = dataset::read_dataset(data_path)?;
        let text = fs::read_to_string(scores_path).map_err(|e| Error::io(scores_path.clone(), e))?;
        let records = inference::read_scores(&text)?;
        let task = TaskConfig::for_task(args.task);
        let result = evaluate_scores(&data, &records, &task, &args.method, &args.dataset_id, args.run)?;
        if let Some(path) = &args.append {
            let mut runs = match fs::read_to_string(path) {
                Ok(text) => metrics::runs_from_csv(&text)?,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
                Err(e) => return Err(Error::io(path.clone(), e).into()),
            };
            runs.push(result.clone());
            write_out(path, &metrics::runs_to_csv(&runs)?)?;
        }
        stdout(&metrics::runs_to_csv(&[result])?);
        return Ok(());
    }
    if args.runs.is_empty() {
        return Err(Failure::Usage("evaluate needs --dataset with --scores, or one or more --runs".into()));
    }
    let mut runs = Vec::new();
    for path in &args.runs {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.clone(), e))?;
        runs.extend(metrics::runs_from_csv(&text)?);
    }
    let report = metrics::aggregate_runs(&runs, &args.methods)?;
    match &args.out_dir {
        Some(dir) => {
            write_out(&dir.join("report.csv"), &report.to_csv())?;
            write_out(&dir.join("report.txt"), &report.to_text())?;
        }
        None => stdout(&report.to_text()),
    }
    Ok(())
}

fn stats(args: StatsArgs) -> CliResult {
    let data = args.select.load()?;
    write_out(&args.out_dir.join("count_histogram.csv"), &synthgen::count_histogram_csv(&data))?;
    write_out(
        &args.out_dir.join("pending_stats.csv"),
        &pending_statistics(&data, &args.pending.policy()?).to_csv(),
    )?;
    info!("stats for {} samples written to {}", data.len(), args.out_dir.display());
    Ok(())
}

fn run(args: RunArgs) -> CliResult {
    let summary = pipeline::run_pipeline_file(&args.config)?;
    info!(
        "ran {} stage(s) into {}",
        summary.stages.len(),
        summary.out_dir.display()
    );
    if let Some(report) = summary.report {
        stdout(&report.to_text());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(&cli.log_level))
        .target(env_logger::Target::Stderr)
        .format_timestamp(None)
        .init();
    let outcome = match cli.command {
        Command::BuildDataset(a) => build_dataset(a),
        Command::GenerateSynth(a) => generate_synth(a),
        Command::Serialize(a) => serialize(a),
        Command::Parse(a) => parse_cmd(a),
        Command::Redact(a) => redact_eval(a),
        Command::Pending(a) => pending_eval(a),
        Command::ExportSft(a) => export_sft(a),
        Command::Score(a) => score(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Stats(a) => stats(a),
        Command::Run(a) => run(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Stage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
