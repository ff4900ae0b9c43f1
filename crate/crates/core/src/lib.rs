//! Cached LSTM (CLSTM) networks for long-document classification.
//!
//! The memory of a CLSTM cell is split into `K` groups whose forgetting
//! rates are squashed into disjoint sub-intervals of (0, 1): group 1 forgets
//! slowest and carries the document representation, group `K` acts as a
//! fast cache. The crate bundles a small reverse-mode autodiff engine, the
//! RNN/LSTM/CIFG/CLSTM cells, uni- and bidirectional encoders, Adagrad
//! training, data ingestion and the evaluation harnesses.

pub mod autodiff;
pub mod cells;
pub mod commands;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod model_io;
pub mod par;
pub mod reference;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;
