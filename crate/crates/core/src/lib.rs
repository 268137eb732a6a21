//! Attribute-level steering for token-by-token generation.
//!
//! A prompt is split into a base task plus typed attributes
//! ([`prompt::Attribute`]). Categorical and numeric attributes are applied by
//! substituting text into the base; binary and continuous attributes are
//! applied at decode time as weighted log-probability deltas between a
//! context that carries the attribute's directive and one that does not.
//!
//! The pieces:
//!
//! - [`backend`]: next-token log-probabilities for many contexts at once, with
//!   incremental caches and exact forward-pass accounting.
//! - [`prompt`]: the attribute model and the three context renderings the
//!   decoder needs.
//! - [`modularizer`]: turns a raw prompt into a [`prompt::MalleablePrompt`]
//!   with a rule engine, or with a remote instruction-following extractor.
//! - [`decoder`]: lockstep multi-context decoding under a
//!   [`prompt::SteeringConfig`].
//! - [`attribution`]: leave-one-out probability ratios recombined from the
//!   decoder's stored traces, merged into display spans.
//! - [`graph`]: the version graph of generations keyed by widget set.
//! - [`service`]: HTTP front door and the line-delimited event stream.
//! - [`sweep`]: lambda sweeps over one continuous attribute.

pub mod attribution;
pub mod backend;
pub mod decoder;
pub mod error;
pub mod graph;
pub mod modularizer;
pub mod prompt;
pub mod service;
pub mod sweep;
pub mod tokenizer;

pub use error::{Error, Result};
