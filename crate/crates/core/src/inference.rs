//! Class scores from token logprobs served by an OpenAI-compatible
//! chat-completions endpoint.
//!
//! The model is asked to answer with `<answer> L </answer>`. The scores are
//! read at the first generated position after the `<answer>` open tag:
//! for every class letter we take the best logprob among the top-k tokens
//! whose trimmed text equals the letter, then apply a softmax across classes.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::error::{Error, Result};
use crate::prompting::PromptBundle;
use crate::task::TaskConfig;

const ANSWER_OPEN: &str = "<answer>";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    /// Server root such as `http://127.0.0.1:30000`. A URL that already ends
    /// in `/chat/completions` is used as is.
    pub base_url: String,
    pub model: String,
    pub timeout_secs: f64,
    /// Maximum number of requests in flight.
    pub concurrency: usize,
    pub top_logprobs: usize,
    pub max_tokens: usize,
    pub temperature: f64,
    /// Retries after the first failed attempt, for transport errors only.
    pub max_retries: u32,
    /// Backoff before retry `i` is `retry_backoff_ms * 2^i`, capped at 5 s.
    pub retry_backoff_ms: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "http://127.0.0.1:30000".into(),
            model: "default".into(),
            timeout_secs: 60.0,
            concurrency: 8,
            top_logprobs: 20,
            max_tokens: 8,
            temperature: 0.0,
            max_retries: 3,
            retry_backoff_ms: 250,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self, task: &TaskConfig) -> Result<()> {
        if self.top_logprobs < task.num_classes() {
            return Err(Error::Config(format!(
                "top_logprobs ({}) must be at least the number of classes ({})",
                self.top_logprobs,
                task.num_classes()
            )));
        }
        if self.concurrency == 0 {
            return Err(Error::Config("concurrency must be at least 1".into()));
        }
        if !(self.timeout_secs > 0.0) {
            return Err(Error::Config("timeout_secs must be positive".into()));
        }
        Ok(())
    }

    pub fn completions_url(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else if base.ends_with("/v1") {
            format!("{base}/chat/completions")
        } else {
            format!("{base}/v1/chat/completions")
        }
    }

    pub fn request_body(&self, bundle: &PromptBundle) -> serde_json::Value {
        json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": bundle.system},
                {"role": "user", "content": bundle.user},
            ],
            "max_tokens": self.max_tokens,
            "temperature": self.temperature,
            "logprobs": true,
            "top_logprobs": self.top_logprobs,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

impl TokenLogprob {
    pub fn new(token: impl Into<String>, logprob: f64) -> Self {
        TokenLogprob {
            token: token.into(),
            logprob,
        }
    }
}

/// One generated position: the sampled token plus its top-k alternatives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedToken {
    pub token: String,
    pub logprob: f64,
    #[serde(default)]
    pub top_logprobs: Vec<TokenLogprob>,
}

impl GeneratedToken {
    fn candidates(&self) -> Vec<TokenLogprob> {
        let mut c = self.top_logprobs.clone();
        if !c.iter().any(|t| t.token == self.token) {
            c.push(TokenLogprob::new(self.token.clone(), self.logprob));
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    /// Probability per class, in class-index order.
    pub probs: Vec<f64>,
    /// Sum of the matched letters' probabilities before renormalization.
    pub captured_mass: f64,
    pub fallback_used: bool,
    pub raw_position_index: usize,
    /// False when no class letter appeared at any position; probs are uniform.
    #[serde(default = "default_true")]
    pub letter_found: bool,
}

fn default_true() -> bool {
    true
}

impl ClassScores {
    pub fn uniform(k: usize) -> Self {
        ClassScores {
            probs: vec![1.0 / k as f64; k],
            captured_mass: 0.0,
            fallback_used: true,
            raw_position_index: 0,
            letter_found: false,
        }
    }

    pub fn argmax(&self) -> usize {
        self.probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("no class letter among the candidate tokens")]
pub struct NoClassLetter;

/// Softmax over per-class letter logprobs at one position.
///
/// Letters missing from the candidates get `min observed logprob - 10` and
/// set `fallback_used`.
pub fn extract_class_scores(
    position_logprobs: &[TokenLogprob],
    task: &TaskConfig,
) -> std::result::Result<ClassScores, NoClassLetter> {
    let letters = task.letters();
    let mut matched: Vec<Option<f64>> = vec![None; letters.len()];
    let mut min_observed = f64::INFINITY;
    for cand in position_logprobs {
        if cand.logprob.is_finite() {
            min_observed = min_observed.min(cand.logprob);
        }
        let trimmed = cand.token.trim();
        let mut chars = trimmed.chars();
        let (Some(c), None) = (chars.next(), chars.next()) else {
            continue;
        };
        if let Some(k) = letters.iter().position(|&l| l == c) {
            if cand.logprob.is_nan() {
                continue;
            }
            matched[k] = Some(matched[k].map_or(cand.logprob, |m: f64| m.max(cand.logprob)));
        }
    }
    if matched.iter().all(Option::is_none) {
        return Err(NoClassLetter);
    }
    let floor = min_observed - 10.0;
    let fallback_used = matched.iter().any(Option::is_none);
    let logits: Vec<f64> = matched.iter().map(|m| m.unwrap_or(floor)).collect();
    let captured_mass = matched.iter().flatten().map(|lp| lp.exp()).sum();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(ClassScores {
        probs: exps.iter().map(|e| e / z).collect(),
        captured_mass,
        fallback_used,
        raw_position_index: 0,
        letter_found: true,
    })
}

/// Index of the first generated token carrying text after `<answer>`.
/// Returns `(index, fallback)`; without an answer tag the first position is
/// used and `fallback` is true.
pub fn locate_answer_position(tokens: &[GeneratedToken]) -> (usize, bool) {
    let text: String = tokens.iter().map(|t| t.token.as_str()).collect();
    if let Some(pos) = text.find(ANSWER_OPEN) {
        let tag_end = pos + ANSWER_OPEN.len();
        let mut start = 0;
        for (i, tok) in tokens.iter().enumerate() {
            let end = start + tok.token.len();
            if end > tag_end {
                let tail = &tok.token[tag_end.saturating_sub(start)..];
                if !tail.trim().is_empty() {
                    return (i, false);
                }
            }
            start = end;
        }
    }
    (0, true)
}

/// Scores a full generation. Never fails: when no position carries a class
/// letter the result is uniform with `letter_found = false`.
pub fn scores_from_generation(tokens: &[GeneratedToken], task: &TaskConfig) -> ClassScores {
    if tokens.is_empty() {
        return ClassScores::uniform(task.num_classes());
    }
    let (pos, fallback) = locate_answer_position(tokens);
    if let Ok(mut s) = extract_class_scores(&tokens[pos].candidates(), task) {
        s.raw_position_index = pos;
        s.fallback_used |= fallback;
        return s;
    }
    for (i, tok) in tokens.iter().enumerate() {
        if let Ok(mut s) = extract_class_scores(&tok.candidates(), task) {
            s.raw_position_index = i;
            s.fallback_used = true;
            return s;
        }
    }
    log::warn!("no class letter at any generated position; scoring as uniform");
    ClassScores::uniform(task.num_classes())
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    logprobs: Option<ChoiceLogprobs>,
}

#[derive(Debug, Deserialize)]
struct ChoiceLogprobs {
    content: Option<Vec<GeneratedToken>>,
}

/// Extracts the per-position logprobs from a chat-completions response body.
pub fn parse_chat_logprobs(body: &serde_json::Value) -> std::result::Result<Vec<GeneratedToken>, String> {
    let resp: ChatResponse =
        serde_json::from_value(body.clone()).map_err(|e| format!("unexpected response shape: {e}"))?;
    let choice = resp.choices.into_iter().next().ok_or("response has no choices")?;
    let content = choice
        .logprobs
        .and_then(|l| l.content)
        .ok_or("response carries no logprobs")?;
    if content.is_empty() {
        return Err("response logprobs are empty".into());
    }
    Ok(content)
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum ScoreError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("malformed response: {0}")]
    Malformed(String),
}

impl ScoreError {
    pub fn attempts(&self) -> u32 {
        match self {
            ScoreError::Transport { attempts, .. } => *attempts,
            ScoreError::Malformed(_) => 1,
        }
    }
}

/// Blocking chat-completions client.
pub struct ChatClient {
    agent: ureq::Agent,
    config: EndpointConfig,
    url: String,
}

impl ChatClient {
    pub fn new(config: EndpointConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .build()
            .into();
        let url = config.completions_url();
        ChatClient { agent, config, url }
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    fn post_once(&self, body: &serde_json::Value) -> std::result::Result<serde_json::Value, Attempt> {
        let mut resp = self.agent.post(&self.url).send_json(body).map_err(classify)?;
        resp.body_mut()
            .read_json::<serde_json::Value>()
            .map_err(classify)
    }

    pub fn score_sample(
        &self,
        bundle: &PromptBundle,
        task: &TaskConfig,
    ) -> std::result::Result<ClassScores, ScoreError> {
        let body = self.config.request_body(bundle);
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.post_once(&body) {
                Ok(json) => {
                    let tokens = parse_chat_logprobs(&json).map_err(ScoreError::Malformed)?;
                    return Ok(scores_from_generation(&tokens, task));
                }
                Err(Attempt::Fatal(msg)) => return Err(ScoreError::Malformed(msg)),
                Err(Attempt::Retryable(msg)) => {
                    if attempts > self.config.max_retries {
                        return Err(ScoreError::Transport {
                            attempts,
                            message: msg,
                        });
                    }
                    let backoff = self
                        .config
                        .retry_backoff_ms
                        .saturating_mul(1 << (attempts - 1).min(16))
                        .min(5_000);
                    log::debug!("{}: attempt {attempts} failed ({msg}); retrying", bundle.sample_id);
                    std::thread::sleep(Duration::from_millis(backoff));
                }
            }
        }
    }
}

enum Attempt {
    Retryable(String),
    Fatal(String),
}

fn classify(err: ureq::Error) -> Attempt {
    match err {
        ureq::Error::StatusCode(code) if code == 429 || code >= 500 => {
            Attempt::Retryable(format!("HTTP {code}"))
        }
        ureq::Error::StatusCode(code) => Attempt::Fatal(format!("HTTP {code}")),
        ureq::Error::Json(e) => Attempt::Fatal(format!("invalid JSON body: {e}")),
        other => Attempt::Retryable(other.to_string()),
    }
}

/// Convenience wrapper for a single prompt.
pub fn score_sample(
    bundle: &PromptBundle,
    config: &EndpointConfig,
    task: &TaskConfig,
) -> std::result::Result<ClassScores, ScoreError> {
    ChatClient::new(config.clone()).score_sample(bundle, task)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub sample_id: String,
    #[serde(flatten)]
    pub outcome: ScoreOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ScoreOutcome {
    Ok {
        /// Score of the positive class; the ranking input for metrics.
        score: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        class_scores: Option<ClassScores>,
    },
    Error {
        error: String,
        attempts: u32,
    },
}

impl ScoreRecord {
    pub fn scored(sample_id: impl Into<String>, score: f64) -> Self {
        ScoreRecord {
            sample_id: sample_id.into(),
            outcome: ScoreOutcome::Ok {
                score,
                class_scores: None,
            },
        }
    }

    pub fn from_class_scores(sample_id: impl Into<String>, scores: ClassScores, task: &TaskConfig) -> Self {
        ScoreRecord {
            sample_id: sample_id.into(),
            outcome: ScoreOutcome::Ok {
                score: scores.probs[task.positive_class],
                class_scores: Some(scores),
            },
        }
    }

    pub fn failed(sample_id: impl Into<String>, err: &ScoreError) -> Self {
        ScoreRecord {
            sample_id: sample_id.into(),
            outcome: ScoreOutcome::Error {
                error: err.to_string(),
                attempts: err.attempts(),
            },
        }
    }

    pub fn score(&self) -> Option<f64> {
        match &self.outcome {
            ScoreOutcome::Ok { score, .. } => Some(*score),
            ScoreOutcome::Error { .. } => None,
        }
    }

    pub fn is_error(&self) -> bool {
        matches!(self.outcome, ScoreOutcome::Error { .. })
    }
}

/// Scores every bundle with up to `config.concurrency` requests in flight.
/// Returns exactly one record per bundle, sorted by sample id; failures
/// become error records instead of aborting the batch.
pub fn score_batch(bundles: &[PromptBundle], config: &EndpointConfig, task: &TaskConfig) -> Vec<ScoreRecord> {
    let client = ChatClient::new(config.clone());
    let next = AtomicUsize::new(0);
    let out = Mutex::new(Vec::with_capacity(bundles.len()));
    let workers = config.concurrency.max(1).min(bundles.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(bundle) = bundles.get(i) else { break };
                let rec = match client.score_sample(bundle, task) {
                    Ok(s) => ScoreRecord::from_class_scores(&bundle.sample_id, s, task),
                    Err(e) => {
                        log::warn!("{}: {e}", bundle.sample_id);
                        ScoreRecord::failed(&bundle.sample_id, &e)
                    }
                };
                out.lock().expect("score store poisoned").push(rec);
            });
        }
    });
    let mut records = out.into_inner().expect("score store poisoned");
    records.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    records
}

pub fn write_scores(records: &[ScoreRecord]) -> Result<String> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn read_scores(text: &str) -> Result<Vec<ScoreRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
