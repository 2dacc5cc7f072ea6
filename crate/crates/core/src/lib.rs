//! Flight-log anomaly detection with LSTM autoencoders and rule checks.

pub mod detect;
pub mod evaluation;
pub mod explain;
pub mod features;
pub mod logdata;
pub mod logparser;
pub mod neural;
pub mod pipeline;
pub mod rng;
pub mod synth;
