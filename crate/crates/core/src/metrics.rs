//! Scalar quality measures reported by runs and tests.

use crate::error::{Error, Result};
use crate::phantom::LabelImage;
use crate::slads::distortion;

/// Fraction of pixels whose labels differ: D(a, b) / N^2.
pub fn total_distortion(a: &LabelImage, b: &LabelImage) -> Result<f64> {
    let d = distortion(a, b)?;
    Ok(d as f64 / (a.n() * a.n()) as f64)
}

/// Fraction of positions where `predicted` disagrees with `actual`.
pub fn misclassification_rate(predicted: &[u8], actual: &[u8]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::input(format!(
            "prediction/actual length mismatch: {} vs {}",
            predicted.len(),
            actual.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::input("cannot score an empty label sequence"));
    }
    let wrong = predicted.iter().zip(actual).filter(|(p, a)| p != a).count();
    Ok(wrong as f64 / predicted.len() as f64)
}
