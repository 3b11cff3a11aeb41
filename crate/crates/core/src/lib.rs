//! Toolkit for classifying multimodal irregular time series (MITS) with
//! language models.
//!
//! The data path runs from typed observations ([`model`]) through a
//! deterministic time-ordered XML-style serialization ([`xml`]), optional
//! value redaction and value-pending views ([`transforms`]), prompt and SFT
//! record construction ([`prompting`]), logprob-based class scoring against
//! an OpenAI-compatible endpoint ([`inference`]) and ranking metrics
//! ([`metrics`]). [`synthgen`] produces synthetic cohorts with informative
//! sampling and [`ingest`] builds cohorts from EHR-style CSV exports.
//! [`pipeline`] strings the stages together from a declarative config.

pub mod dataset;
pub mod error;
pub mod inference;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod prompting;
pub mod registry;
pub mod synthgen;
pub mod task;
pub mod transforms;
pub mod xml;

mod util;

pub use error::{Error, Result};
pub use model::{
    flatten, flatten_with, sampling_stats, validate_sample, FlatObservation, FormatPolicy,
    MitsSample, Observation, SamplingStats, TimeWindow, Value, Violation,
};
pub use registry::{ChannelRegistry, ChannelSpec, Modality};
pub use task::{Task, TaskConfig};
pub use xml::{parse, render, RenderMode, SerializedMits};
