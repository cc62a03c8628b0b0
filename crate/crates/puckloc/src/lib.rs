//! Rink-plane puck localization from short broadcast-style video clips.
//!
//! The library covers the full desk-scale pipeline: rink/heatmap geometry,
//! Gaussian target encoding and argmax decoding, event and clip ingest with
//! frame sampling, a synthetic broadcast-clip generator with exact ground
//! truth, a factorized spatiotemporal convolutional network with explicit
//! backward passes, MSE heatmap training with Adam, and a tolerance-curve /
//! zone-accuracy evaluation suite.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod heatmap;
pub mod model;
pub mod nn;
pub mod rink;
pub mod seed;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
