//! Glacial lake outburst flood early warning: three forecasting and
//! detection networks on a small reverse-mode autodiff engine, synthetic
//! data generators, late fusion into a daily risk score, and evaluation.

pub mod datagen;
pub mod checkpoint;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod harness;
pub mod graph;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod riskflow;
pub mod tempflow;
pub mod terraflow;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use tensor::Tensor;
