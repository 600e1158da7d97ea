//! Image-to-radiology-graph generation.
//!
//! The crate covers the whole pipeline: a [`graph`] data model with a JSON
//! interchange format, a small reverse-mode [`autodiff`] engine, the
//! encoder/decoder [`model`] with its prior-knowledge relation path,
//! set-prediction [`train`]ing, RadGraph-style [`eval`]uation, rule-based
//! [`downstream`] reports and labels, and a procedural [`synth`] corpus.

pub mod autodiff;
pub mod checkpoint;
pub mod dataset;
pub mod downstream;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod image;
pub mod loss;
pub mod matcher;
pub mod model;
pub mod nn;
pub mod optim;
pub mod synth;
pub mod tensor;
pub mod train;
