//! Toy transformer models for fault-injection studies.
//!
//! [`build_model`] fills a configuration's weights from a seeded generator,
//! [`lower`] turns greedy decoding into an ISA program with every instruction
//! tagged by operator and layer, [`reference_forward`] computes the same
//! arithmetic directly, and [`golden_run`] executes the program fault-free
//! to produce the trace that campaigns compare against.

pub mod config;
pub mod error;
pub mod golden;
pub mod lower;
pub mod reference;
pub mod weights;

pub use config::{preset, MlpKind, ModelConfig, NormKind, PRESET_NAMES};
pub use error::{ForgeError, Result};
pub use golden::{golden_run, GoldenSidecar, GoldenTrace};
pub use lower::lower;
pub use reference::{reference_forward, reference_forward_uncached, ReferenceOutput};
pub use weights::{build_model, ModelWeights};
