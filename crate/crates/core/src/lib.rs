//! Zero-shot learning benchmark library.
//!
//! A dataset is a frozen feature matrix, per-image labels, a class-embedding
//! table, and a split into train / validation / test-unseen classes plus a
//! held-out set of seen-class image indices. Methods train on seen-class
//! images only and are scored either on unseen classes alone (ZSL) or on the
//! union of seen and unseen classes (generalized ZSL).
//!
//! All trained methods expose the same [`method::TrainedMethod`] interface:
//! a compatibility score per candidate class and an argmax predictor with a
//! smallest-id tie rule. Training is deterministic given the config seed.

pub mod dap;
pub mod datamodel;
pub mod error;
pub mod eval;
pub mod hybrid;
pub mod io;
pub mod linalg;
pub mod linear;
mod logistic;
pub mod method;
pub mod nonlinear;
pub mod ranking;
pub mod sgd;
pub mod splitgen;

pub use datamodel::{
    CandidateSet, ClassEmbeddingTable, ClassId, DatasetBundle, FeatureMatrix, LabelVector,
    NormalizeMode, SplitSpec,
};
pub use error::{Error, Result};
pub use method::TrainedMethod;
