//! Alignment and summary statistics.

use amod_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Cosine similarity between a desired distribution and per-station
/// outbound demand. Zero when either vector is all zero.
pub fn cosine_alignment(a: &[f64], d_out: &[f64]) -> Result<f64> {
    if a.len() != d_out.len() {
        return Err(Error::Dimension(format!(
            "alignment of {} actions against {} demands",
            a.len(),
            d_out.len()
        )));
    }
    let dot: f64 = a.iter().zip(d_out).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nd = d_out.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nd == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na * nd)).clamp(-1.0, 1.0))
}

/// Mean and sample standard deviation (n - 1); the deviation is 0 below two samples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: impl IntoIterator<Item = f64>) -> Self {
        let xs: Vec<f64> = xs.into_iter().collect();
        if xs.is_empty() {
            return MeanStd::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        MeanStd { mean, std }
    }
}
