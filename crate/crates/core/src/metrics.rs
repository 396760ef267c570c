//! Image-quality metrics on frames with values in `[0, 1]`.

use crate::error::Result;
use crate::frame::Frame;

/// Reported for identical frames.
pub const PSNR_CAP: f64 = 99.0;

fn squared_error(a: &Frame, b: &Frame) -> Result<f64> {
    a.same_dims(b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// `10 log10(1 / MSE)` over all channels, capped at [`PSNR_CAP`].
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    let mse = squared_error(a, b)?;
    Ok(if mse == 0.0 { PSNR_CAP } else { (10.0 * (1.0 / mse).log10()).min(PSNR_CAP) })
}

/// Root-mean-square difference on the 0-255 scale.
pub fn interpolation_error(predicted: &Frame, truth: &Frame) -> Result<f64> {
    Ok(255.0 * squared_error(predicted, truth)?.sqrt())
}
