//! Quantized network coding for sensor-network data gathering.
//!
//! Correlated sparse messages are mixed by a random real-field network code
//! with per-edge quantization, then recovered at the gateway by grid-based
//! belief propagation, l1 minimization, or exact MMSE enumeration. A
//! store-and-forward routing baseline and an experiment harness complete the
//! toolkit.

pub mod error;
pub mod grid;
pub mod message;
pub mod network;
pub mod seed;
pub mod encoder;
pub mod measurement;
pub mod whitening;
pub mod decoders;
pub mod forwarding;
pub mod harness;

pub use error::{QncError, Result};
