//! Prompt templates, prompt/target construction and SFT export.
//!
//! Templates live under `assets/templates/` as plain UTF-8 files. Each user
//! template contains the three-line block
//!
//! ```text
//! [OBSERVATIONS]
//! ...
//! [/OBSERVATIONS]
//! ```
//!
//! and the serialized observations replace the `...` line.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::{Task, TaskConfig};
use crate::util;
use crate::xml::{RenderMode, SerializedMits};

const SYSTEM: &str = include_str!("../assets/templates/system.txt");
const IHM_FULL: &str = include_str!("../assets/templates/ihm_full.user.txt");
const IHM_REDACTED: &str = include_str!("../assets/templates/ihm_redacted.user.txt");
const IHM_SHOW_PRESENCE: &str = include_str!("../assets/templates/ihm_show_presence.user.txt");
const LOS_FULL: &str = include_str!("../assets/templates/los_full.user.txt");
const LOS_REDACTED: &str = include_str!("../assets/templates/los_redacted.user.txt");
const LOS_SHOW_PRESENCE: &str = include_str!("../assets/templates/los_show_presence.user.txt");

const BLOCK_OPEN: &str = "[OBSERVATIONS]\n";
const PLACEHOLDER: &str = "...";
const BLOCK_CLOSE: &str = "\n[/OBSERVATIONS]";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateVariant {
    Full,
    Redacted,
    ShowPresence,
}

impl TemplateVariant {
    pub fn for_mode(mode: RenderMode) -> Self {
        match mode {
            RenderMode::FullTriplet => TemplateVariant::Full,
            RenderMode::RedactedPair => TemplateVariant::Redacted,
            RenderMode::MixedByPendingFlag => TemplateVariant::ShowPresence,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateVariant::Full => "full",
            TemplateVariant::Redacted => "redacted",
            TemplateVariant::ShowPresence => "show_presence",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TemplateId {
    pub task: Task,
    pub variant: TemplateVariant,
}

impl TemplateId {
    pub fn new(task: Task, variant: TemplateVariant) -> Self {
        TemplateId { task, variant }
    }

    pub fn all() -> [TemplateId; 6] {
        let v = [
            TemplateVariant::Full,
            TemplateVariant::Redacted,
            TemplateVariant::ShowPresence,
        ];
        [
            TemplateId::new(Task::Ihm, v[0]),
            TemplateId::new(Task::Ihm, v[1]),
            TemplateId::new(Task::Ihm, v[2]),
            TemplateId::new(Task::Los, v[0]),
            TemplateId::new(Task::Los, v[1]),
            TemplateId::new(Task::Los, v[2]),
        ]
    }

    /// Asset stem, e.g. `ihm_show_presence`.
    pub fn name(&self) -> String {
        format!("{}_{}", self.task, self.variant.as_str())
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for TemplateId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TemplateId::all()
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown template `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub system_text: String,
    pub user_prefix: String,
    pub user_suffix: String,
    /// sha256 over `system || 0x00 || user template`.
    pub checksum: String,
}

impl PromptTemplate {
    pub fn builtin(id: TemplateId) -> Self {
        let user = match (id.task, id.variant) {
            (Task::Ihm, TemplateVariant::Full) => IHM_FULL,
            (Task::Ihm, TemplateVariant::Redacted) => IHM_REDACTED,
            (Task::Ihm, TemplateVariant::ShowPresence) => IHM_SHOW_PRESENCE,
            (Task::Los, TemplateVariant::Full) => LOS_FULL,
            (Task::Los, TemplateVariant::Redacted) => LOS_REDACTED,
            (Task::Los, TemplateVariant::ShowPresence) => LOS_SHOW_PRESENCE,
        };
        Self::from_parts(id, SYSTEM, user).expect("bundled templates are well formed")
    }

    pub fn from_parts(id: TemplateId, system: &str, user: &str) -> Result<Self> {
        let system = normalize_newlines(system);
        let user = normalize_newlines(user);
        let marker = format!("{BLOCK_OPEN}{PLACEHOLDER}{BLOCK_CLOSE}");
        let mut hits = user.match_indices(&marker);
        let (pos, _) = hits
            .next()
            .ok_or_else(|| Error::Template(id.name(), "observation block marker not found".into()))?;
        if hits.next().is_some() {
            return Err(Error::Template(id.name(), "observation block marker appears twice".into()));
        }
        let split_at = pos + BLOCK_OPEN.len();
        let mut hasher_input = system.clone().into_bytes();
        hasher_input.push(0);
        hasher_input.extend_from_slice(user.as_bytes());
        Ok(PromptTemplate {
            id,
            user_prefix: user[..split_at].to_string(),
            user_suffix: user[split_at + PLACEHOLDER.len()..].to_string(),
            system_text: system,
            checksum: util::sha256_hex(&hasher_input),
        })
    }

    /// The template text with `...` in place of the observations.
    pub fn user_template(&self) -> String {
        format!("{}{}{}", self.user_prefix, PLACEHOLDER, self.user_suffix)
    }

    pub fn fill(&self, block: &str) -> String {
        let block = normalize_newlines(block);
        let mut out = String::with_capacity(self.user_prefix.len() + block.len() + self.user_suffix.len());
        out.push_str(&self.user_prefix);
        out.push_str(&block);
        out.push_str(&self.user_suffix);
        out
    }
}

fn normalize_newlines(s: &str) -> String {
    s.replace("\r\n", "\n")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub sample_id: String,
    pub template_id: TemplateId,
    pub system: String,
    pub user: String,
    pub target: Option<String>,
}

pub fn build_prompt(
    sample_id: &str,
    serialized: &SerializedMits,
    task: &TaskConfig,
    template_id: TemplateId,
) -> Result<PromptBundle> {
    if template_id.task != task.task {
        return Err(Error::TemplateMismatch {
            template: template_id.name(),
            mode: format!("{} task", task.task),
        });
    }
    if TemplateVariant::for_mode(serialized.mode) != template_id.variant {
        return Err(Error::TemplateMismatch {
            template: template_id.name(),
            mode: serialized.mode.to_string(),
        });
    }
    let template = PromptTemplate::builtin(template_id);
    Ok(PromptBundle {
        sample_id: sample_id.to_string(),
        template_id,
        system: template.system_text.clone(),
        user: template.fill(&serialized.text),
        target: None,
    })
}

/// `<answer> L </answer>` for class letter L.
pub fn target_for(label: usize, task: &TaskConfig) -> Result<String> {
    Ok(format!("<answer> {} </answer>", task.letter(label)?))
}

pub fn build_sft_record(mut bundle: PromptBundle, label: usize, task: &TaskConfig) -> Result<PromptBundle> {
    bundle.target = Some(target_for(label, task)?);
    Ok(bundle)
}

/// Class index encoded in a target string, if it is well formed.
pub fn parse_target(target: &str, task: &TaskConfig) -> Option<usize> {
    let inner = target.strip_prefix("<answer> ")?.strip_suffix(" </answer>")?;
    let mut chars = inner.chars();
    let letter = chars.next()?;
    if chars.next().is_some() {
        return None;
    }
    task.class_of_letter(letter)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SftStage {
    Stage1Redacted,
    Stage2Full,
}

impl SftStage {
    pub fn as_str(self) -> &'static str {
        match self {
            SftStage::Stage1Redacted => "stage1_redacted",
            SftStage::Stage2Full => "stage2_full",
        }
    }

    pub fn render_mode(self) -> RenderMode {
        match self {
            SftStage::Stage1Redacted => RenderMode::RedactedPair,
            SftStage::Stage2Full => RenderMode::FullTriplet,
        }
    }
}

impl FromStr for SftStage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stage1" | "stage1_redacted" | "stage1-redacted" => Ok(SftStage::Stage1Redacted),
            "stage2" | "stage2_full" | "stage2-full" => Ok(SftStage::Stage2Full),
            other => Err(Error::Config(format!("unknown SFT stage `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportOptions {
    /// Accept show-presence prompts in a stage-2 export. Off by default:
    /// mixed pair/triplet blocks are an evaluation-time view.
    #[serde(default)]
    pub allow_show_presence: bool,
}

/// One line of the SFT JSONL file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub system: String,
    pub user: String,
    pub target: String,
    pub sample_id: String,
}

/// Fine-tuning settings carried for the downstream trainer. Not used here.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerHints {
    pub lora_rank: u32,
    pub lora_alpha: u32,
    pub lora_dropout: f64,
    pub learning_rate: f64,
}

impl Default for TrainerHints {
    fn default() -> Self {
        TrainerHints {
            lora_rank: 16,
            lora_alpha: 16,
            lora_dropout: 0.05,
            learning_rate: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SftManifest {
    pub stage: SftStage,
    pub n_records: usize,
    pub records_file: String,
    pub records_sha256: String,
    pub template_checksums: BTreeMap<String, String>,
    pub trainer_hints: TrainerHints,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".manifest.json");
    PathBuf::from(os)
}

fn stage_accepts(stage: SftStage, variant: TemplateVariant, opts: ExportOptions) -> bool {
    match (stage, variant) {
        (SftStage::Stage1Redacted, TemplateVariant::Redacted) => true,
        (SftStage::Stage2Full, TemplateVariant::Full) => true,
        (SftStage::Stage2Full, TemplateVariant::ShowPresence) => opts.allow_show_presence,
        _ => false,
    }
}

/// Serializes bundles to JSONL without touching the filesystem.
pub fn sft_jsonl(bundles: &[PromptBundle], stage: SftStage, opts: ExportOptions) -> Result<String> {
    let mut out = String::new();
    for b in bundles {
        if !stage_accepts(stage, b.template_id.variant, opts) {
            return Err(Error::Export(format!(
                "sample `{}` uses template {} which does not belong to {}",
                b.sample_id,
                b.template_id,
                stage.as_str()
            )));
        }
        let target = b
            .target
            .clone()
            .ok_or_else(|| Error::Export(format!("sample `{}` has no target", b.sample_id)))?;
        let rec = SftRecord {
            system: b.system.clone(),
            user: b.user.clone(),
            target,
            sample_id: b.sample_id.clone(),
        };
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    Ok(out)
}

/// Writes `path` (JSONL) and `path.manifest.json`.
pub fn export_sft_file(
    bundles: &[PromptBundle],
    path: &Path,
    stage: SftStage,
    opts: ExportOptions,
) -> Result<SftManifest> {
    let body = sft_jsonl(bundles, stage, opts)?;
    let mut template_checksums = BTreeMap::new();
    for b in bundles {
        template_checksums
            .entry(b.template_id.name())
            .or_insert_with(|| PromptTemplate::builtin(b.template_id).checksum);
    }
    let manifest = SftManifest {
        stage,
        n_records: bundles.len(),
        records_file: path
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default(),
        records_sha256: util::sha256_hex(body.as_bytes()),
        template_checksums,
        trainer_hints: TrainerHints::default(),
    };
    util::write_file(path, body.as_bytes())?;
    let mut manifest_json = serde_json::to_string_pretty(&manifest)?;
    manifest_json.push('\n');
    util::write_file(&manifest_path(path), manifest_json.as_bytes())?;
    Ok(manifest)
}

pub fn read_sft_file(path: &Path) -> Result<Vec<SftRecord>> {
    util::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::xml::SerializedMits;

    fn block(mode: RenderMode) -> SerializedMits {
        SerializedMits {
            text: "<time> 0.88 hours </time> <channel> Glucose (mg/dL) </channel>".into(),
            mode,
            line_count: 1,
        }
    }

    #[test]
    fn all_templates_split_cleanly() {
        for id in TemplateId::all() {
            let t = PromptTemplate::builtin(id);
            assert!(t.user_prefix.ends_with("[OBSERVATIONS]\n"));
            assert!(t.user_suffix.starts_with("\n[/OBSERVATIONS]\n\n"));
            assert_eq!(t.checksum.len(), 64);
            assert_eq!(id.name().parse::<TemplateId>().unwrap(), id);
        }
    }

    #[test]
    fn ihm_full_ends_with_instruction() {
        let b = build_prompt(
            "s",
            &block(RenderMode::FullTriplet),
            &TaskConfig::ihm(),
            TemplateId::new(Task::Ihm, TemplateVariant::Full),
        )
        .unwrap();
        assert!(b.user.ends_with("Follow the output format exactly. Start directly with <answer>."));
        assert!(b.system.starts_with("You are a critical care physician"));
    }

    #[test]
    fn los_redacted_has_class_definition() {
        let b = build_prompt(
            "s",
            &block(RenderMode::RedactedPair),
            &TaskConfig::los(),
            TemplateId::new(Task::Los, TemplateVariant::Redacted),
        )
        .unwrap();
        let def = b.user.find("CLASS DEFINITION:").unwrap();
        assert!(b.user[def..].contains("ICU stay >= 96 hours or death."));
    }

    #[test]
    fn mode_mismatch_is_rejected() {
        let err = build_prompt(
            "s",
            &block(RenderMode::RedactedPair),
            &TaskConfig::ihm(),
            TemplateId::new(Task::Ihm, TemplateVariant::Full),
        );
        assert!(matches!(err, Err(Error::TemplateMismatch { .. })));
    }

    #[test]
    fn targets() {
        let ihm = TaskConfig::ihm();
        assert_eq!(target_for(1, &ihm).unwrap(), "<answer> B </answer>");
        assert_eq!(target_for(0, &ihm).unwrap(), "<answer> A </answer>");
        let los = TaskConfig::los();
        assert_eq!(target_for(los.positive_class, &los).unwrap(), "<answer> B </answer>");
        assert!(target_for(2, &ihm).is_err());
        assert_eq!(parse_target("<answer> B </answer>", &ihm), Some(1));
        assert_eq!(parse_target("<answer> C </answer>", &ihm), None);
        assert_eq!(parse_target("<answer>B</answer>", &ihm), None);
    }

    #[test]
    fn rejects_missing_marker() {
        let id = TemplateId::new(Task::Ihm, TemplateVariant::Full);
        assert!(PromptTemplate::from_parts(id, "sys", "no block here").is_err());
    }

    #[test]
    fn crlf_is_normalized() {
        let id = TemplateId::new(Task::Ihm, TemplateVariant::Full);
        let t = PromptTemplate::from_parts(id, "sys", "a\r\n[OBSERVATIONS]\r\n...\r\n[/OBSERVATIONS]\r\nz")
            .unwrap();
        assert_eq!(t.fill("x\r\ny"), "a\n[OBSERVATIONS]\nx\ny\n[/OBSERVATIONS]\nz");
    }
}
