//! Data-free knowledge amalgamation at desk scale.
//!
//! Several frozen teacher classifiers, each an expert on its own subset of
//! labels, are distilled into one compact student over the union of their
//! label sets without touching the teachers' training data:
//!
//! * [`generator`] steers an unconditional language model with each teacher's
//!   class probabilities to synthesize labeled pseudo-data;
//! * [`ood`] fits class-conditional and background Gaussians on held-out
//!   pseudo-data and scores how in-domain an input is for each teacher;
//! * [`amalgam`] fuses confidence-enriched teacher block features with a
//!   one-layer selective transformer and defines the training losses;
//! * [`pipeline`] wires everything together, including baselines and
//!   ablations.
//!
//! All model math runs on the small reverse-mode autodiff stack in [`tensor`].

pub mod amalgam;
pub mod corpus;
pub mod error;
pub mod generator;
pub mod metrics;
pub mod models;
pub mod ood;
pub mod pipeline;
pub mod tensor;

pub use error::{Error, Result};
