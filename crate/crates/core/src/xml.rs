//! Text serialization of flattened observations.
//!
//! Each observation is one record:
//!
//! ```text
//! <time> 0.88 hours </time> <channel> Glucose (mg/dL) </channel> <value> 170.00 </value>
//! ```
//!
//! Pairs drop the trailing ` <value> ... </value>` part. Records are joined
//! by a single `\n` with no trailing newline. Note text is written verbatim
//! and may span physical lines; the parser reads everything up to the next
//! ` </value>`. No XML escaping is applied.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::model::FlatObservation;
use crate::registry::ChannelRegistry;

const TIME_OPEN: &str = "<time> ";
const TIME_CLOSE: &str = " hours </time>";
const CHANNEL_OPEN: &str = " <channel> ";
const CHANNEL_CLOSE: &str = " </channel>";
const VALUE_OPEN: &str = " <value> ";
const VALUE_CLOSE: &str = " </value>";
const FORBIDDEN: &str = "</value>";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderMode {
    /// Every observation as a time/channel/value triplet.
    FullTriplet,
    /// Every observation as a time/channel pair.
    RedactedPair,
    /// Pending observations as pairs, the rest as triplets.
    MixedByPendingFlag,
}

impl RenderMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RenderMode::FullTriplet => "full_triplet",
            RenderMode::RedactedPair => "redacted_pair",
            RenderMode::MixedByPendingFlag => "mixed_by_pending_flag",
        }
    }
}

impl fmt::Display for RenderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RenderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" | "full_triplet" | "full-triplet" => Ok(RenderMode::FullTriplet),
            "redacted" | "redacted_pair" | "redacted-pair" => Ok(RenderMode::RedactedPair),
            "mixed" | "mixed_by_pending_flag" | "show-presence" | "show_presence" => {
                Ok(RenderMode::MixedByPendingFlag)
            }
            other => Err(Error::Config(format!("unknown render mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SerializedMits {
    pub text: String,
    pub mode: RenderMode,
    /// Number of observations, not physical lines.
    pub line_count: usize,
}

pub fn render(flat: &[FlatObservation], mode: RenderMode) -> Result<SerializedMits> {
    let mut text = String::new();
    for (index, obs) in flat.iter().enumerate() {
        if index > 0 {
            text.push('\n');
        }
        text.push_str(TIME_OPEN);
        text.push_str(&obs.time_text());
        text.push_str(TIME_CLOSE);
        text.push_str(CHANNEL_OPEN);
        text.push_str(&obs.display_name);
        text.push_str(CHANNEL_CLOSE);

        let triplet = match mode {
            RenderMode::FullTriplet => true,
            RenderMode::RedactedPair => false,
            RenderMode::MixedByPendingFlag => !obs.pending,
        };
        if triplet {
            let value = obs.value.as_deref().ok_or(Error::MissingValue {
                index,
                mode: mode.as_str(),
            })?;
            if value.contains(FORBIDDEN) {
                return Err(Error::ForbiddenValueTag { index });
            }
            text.push_str(VALUE_OPEN);
            text.push_str(value);
            text.push_str(VALUE_CLOSE);
        }
    }
    Ok(SerializedMits {
        text,
        mode,
        line_count: flat.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("line {line}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub kind: ParseErrorKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("expected `{0}`")]
    Expected(&'static str),
    #[error("missing closing `{0}` tag")]
    MissingClosingTag(&'static str),
    #[error("time `{0}` is not a non-negative number")]
    BadTime(String),
    #[error("unknown channel `{0}`")]
    UnknownChannel(String),
    #[error("unexpected text after observation")]
    TrailingText,
}

struct Cursor<'a> {
    rest: &'a str,
    line: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, kind: ParseErrorKind) -> ParseError {
        ParseError {
            line: self.line,
            kind,
        }
    }

    fn expect(&mut self, token: &'static str) -> Result<(), ParseError> {
        match self.rest.strip_prefix(token) {
            Some(r) => {
                self.rest = r;
                Ok(())
            }
            None => Err(self.err(ParseErrorKind::Expected(token.trim()))),
        }
    }

    /// Content up to `close` on the current physical line.
    fn until_on_line(&mut self, close: &'static str, tag: &'static str) -> Result<&'a str, ParseError> {
        let eol = self.rest.find('\n').unwrap_or(self.rest.len());
        match self.rest[..eol].find(close) {
            Some(pos) => {
                let content = &self.rest[..pos];
                self.rest = &self.rest[pos + close.len()..];
                Ok(content)
            }
            None => Err(self.err(ParseErrorKind::MissingClosingTag(tag))),
        }
    }

    /// Content up to `close`, possibly spanning lines.
    fn until(&mut self, close: &'static str, tag: &'static str) -> Result<&'a str, ParseError> {
        match self.rest.find(close) {
            Some(pos) => {
                let content = &self.rest[..pos];
                self.line += content.matches('\n').count();
                self.rest = &self.rest[pos + close.len()..];
                Ok(content)
            }
            None => Err(self.err(ParseErrorKind::MissingClosingTag(tag))),
        }
    }
}

/// Parses rendered text back into flat observations. Pair records come back
/// with `value: None`; `pending` is always false and `storetime` is unknown.
pub fn parse(text: &str, registry: &ChannelRegistry) -> Result<Vec<FlatObservation>> {
    let mut out = Vec::new();
    if text.is_empty() {
        return Ok(out);
    }
    let mut cur = Cursor { rest: text, line: 1 };
    loop {
        let line = cur.line;
        cur.expect(TIME_OPEN)?;
        let time_text = cur.until_on_line(TIME_CLOSE, "</time>")?;
        let charttime = time_text
            .parse::<f64>()
            .ok()
            .filter(|t| t.is_finite() && *t >= 0.0)
            .ok_or_else(|| cur.err(ParseErrorKind::BadTime(time_text.to_string())))?;
        cur.expect(CHANNEL_OPEN)?;
        let name = cur.until_on_line(CHANNEL_CLOSE, "</channel>")?;
        let spec = registry.by_display_name(name).ok_or_else(|| ParseError {
            line,
            kind: ParseErrorKind::UnknownChannel(name.to_string()),
        })?;
        let value = if cur.rest.starts_with(VALUE_OPEN) {
            cur.expect(VALUE_OPEN)?;
            Some(cur.until(VALUE_CLOSE, "</value>")?.to_string())
        } else {
            None
        };
        out.push(FlatObservation {
            charttime,
            channel: spec.id.clone(),
            display_name: spec.display_name.clone(),
            modality: spec.modality,
            tie_rank: spec.tie_rank,
            value,
            storetime: None,
            pending: false,
        });

        if cur.rest.is_empty() {
            break;
        }
        match cur.rest.strip_prefix('\n') {
            Some(r) => {
                cur.rest = r;
                cur.line += 1;
                // Tolerate one trailing newline.
                if cur.rest.is_empty() {
                    break;
                }
            }
            None => return Err(cur.err(ParseErrorKind::TrailingText).into()),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{flatten, MitsSample, Observation};

    const SNIPPET_FULL: &str = "<time> 0.88 hours </time> <channel> Glucose (mg/dL) </channel> <value> 170.00 </value>\n<time> 3.80 hours </time> <channel> Anion Gap (mEq/L) </channel> <value> 11.00 </value>\n<time> 4.00 hours </time> <channel> Radiology Note </channel> <value> Portable chest... </value>";

    fn reg() -> ChannelRegistry {
        ChannelRegistry::mimic_iv()
    }

    fn snippet() -> Vec<FlatObservation> {
        let s = MitsSample::new(
            "s",
            0,
            vec![
                Observation::numeric(0.88, "glucose", 170.0),
                Observation::numeric(3.80, "anion_gap", 11.0),
                Observation::text(4.0, "radiology_note", "Portable chest..."),
            ],
        );
        flatten(&s, &reg()).unwrap()
    }

    #[test]
    fn renders_triplet_line() {
        let out = render(&snippet()[..1], RenderMode::FullTriplet).unwrap();
        assert_eq!(
            out.text,
            "<time> 0.88 hours </time> <channel> Glucose (mg/dL) </channel> <value> 170.00 </value>"
        );
        assert_eq!(out.line_count, 1);
    }

    #[test]
    fn renders_pair_line() {
        let out = render(&snippet()[..1], RenderMode::RedactedPair).unwrap();
        assert_eq!(out.text, "<time> 0.88 hours </time> <channel> Glucose (mg/dL) </channel>");
    }

    #[test]
    fn renders_full_snippet() {
        assert_eq!(render(&snippet(), RenderMode::FullTriplet).unwrap().text, SNIPPET_FULL);
    }

    #[test]
    fn rejects_closing_value_tag_in_note() {
        let mut flat = snippet();
        flat[2].value = Some("see </value> here".into());
        assert!(matches!(
            render(&flat, RenderMode::FullTriplet),
            Err(Error::ForbiddenValueTag { index: 2 })
        ));
        // Pairs never show the value.
        assert!(render(&flat, RenderMode::RedactedPair).is_ok());
    }

    #[test]
    fn full_mode_needs_values() {
        let mut flat = snippet();
        flat[0].value = None;
        assert!(matches!(
            render(&flat, RenderMode::FullTriplet),
            Err(Error::MissingValue { index: 0, .. })
        ));
    }

    #[test]
    fn parses_snippet() {
        let flat = parse(SNIPPET_FULL, &reg()).unwrap();
        let times: Vec<_> = flat.iter().map(|f| f.charttime).collect();
        assert_eq!(times, [0.88, 3.80, 4.00]);
        assert_eq!(flat[2].value.as_deref(), Some("Portable chest..."));
        assert_eq!(flat[1].channel, "anion_gap");
    }

    #[test]
    fn parses_empty() {
        assert!(parse("", &reg()).unwrap().is_empty());
    }

    #[test]
    fn missing_channel_close_reports_line() {
        let text = "<time> 0.88 hours </time> <channel> Glucose (mg/dL) </channel>\n<time> 1.00 hours </time> <channel> Glucose (mg/dL)";
        let err = parse(text, &reg()).unwrap_err();
        match err {
            Error::Parse(ParseError { line, kind }) => {
                assert_eq!(line, 2);
                assert_eq!(kind, ParseErrorKind::MissingClosingTag("</channel>"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn bad_time_and_unknown_channel() {
        let err = parse("<time> soon hours </time> <channel> Glucose (mg/dL) </channel>", &reg())
            .unwrap_err();
        assert!(err.to_string().contains("line 1"));
        let err = parse("<time> 1.00 hours </time> <channel> Lactate </channel>", &reg()).unwrap_err();
        assert!(matches!(
            err,
            Error::Parse(ParseError {
                kind: ParseErrorKind::UnknownChannel(_),
                ..
            })
        ));
    }

    #[test]
    fn multiline_note_keeps_line_numbers() {
        let text = "<time> 1.00 hours </time> <channel> Radiology Note </channel> <value> a\nb\nc </value>\n<time> 2.00 hours </time> <channel> Glucose (mg/dL)";
        let err = parse(text, &reg()).unwrap_err();
        assert!(err.to_string().starts_with("line 4"), "{err}");
        let ok = parse(&text[..text.rfind('\n').unwrap()], &reg()).unwrap();
        assert_eq!(ok[0].value.as_deref(), Some("a\nb\nc"));
    }
}
