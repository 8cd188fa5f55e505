//! Decoding 3-D hand kinematics from pre-movement multichannel EEG.
//!
//! The crate is organized along the processing chain:
//!
//! * [`signal`]: FIR filter bank, re-referencing, resampling, normalization.
//! * [`dataset`]: recordings, interchange format, lag-window features, splits,
//!   synthetic subjects.
//! * [`pipeline`]: leakage-free preprocessing fitted on training trials.
//! * [`nn`]: the small set of differentiable layers the neural decoders use.
//! * [`decoders`]: closed-form mLR, the MLP and CNN-LSTM decoders, training.
//! * [`eval`]: Pearson correlation, sweep reports, trajectory export.
//! * [`experiment`]: end-to-end fit and evaluation runs.

pub mod dataset;
pub mod decoders;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod nn;
pub mod pipeline;
pub mod signal;

pub use error::{Error, Result};
