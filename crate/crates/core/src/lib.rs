//! Scene-text visual question answering with multimodal grid features and
//! cell pointers.
//!
//! OCR tokens are rasterized onto the spatial grid of a convolutional feature
//! map, fused with the visual channels, attended conditioned on an LSTM
//! question encoding, and decoded by pointing at the most probable cell.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod nn;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
pub mod data;
pub mod grid;
pub mod question;
pub mod metrics;
pub mod model;
pub mod synth;
