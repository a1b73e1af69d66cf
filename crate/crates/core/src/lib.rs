//! Knowledge tracing workbench.
//!
//! Bayesian knowledge tracing, a recurrent tracer and an attentive tracer with
//! Rasch-style embeddings, built on a small reverse-mode tensor engine, plus
//! the data pipeline, training harness, evaluation protocol and a synthetic
//! student generator used as ground truth.

pub mod akt;
pub mod bkt;
pub mod checkpoint;
pub mod data;
pub mod dkt;
pub mod error;
pub mod evaluation;
pub mod gradsuite;
pub mod model;
pub mod nn;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{KtError, Result};
