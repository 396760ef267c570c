//! Video frame interpolation by adaptive convolution.
//!
//! A fully convolutional network looks at two co-centred receptive-field
//! patches and predicts one `k x 2k` kernel per output pixel. Convolving the
//! kernel with the two `k x k` input patches yields the interpolated colour.

pub mod error;
pub mod frame;
pub mod net;
pub mod synth;
pub mod data;
pub mod train;
pub mod infer;
pub mod inspect;
pub mod metrics;
pub mod tensor;

pub use error::{Error, Result};

/// Batch-normalisation mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Infer,
}
