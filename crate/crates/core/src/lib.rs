//! Detects anomalous events in BGP update traffic.
//!
//! The pipeline: parse MRT update dumps into per-update records, count 46
//! per-minute traffic features, expand each feature into five channels via
//! STL decomposition, cut the series into normalized sliding windows, and
//! classify each window with a dual-view graph-attention + LSTM model.

pub mod augment;
pub mod error;
pub mod features;
pub mod ingest;
pub mod model;
pub mod pipeline;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
