//! Band power and differential-entropy features.

use serde::{Deserialize, Serialize};

use super::filter::bandpass_channel;
use super::{EegError, EegWindow};

/// Frequency bands in (name, low Hz, high Hz) order.
pub const BANDS: [(&str, f64, f64); 5] = [
    ("delta", 1.0, 4.0),
    ("theta", 4.0, 8.0),
    ("alpha", 8.0, 14.0),
    ("beta", 14.0, 31.0),
    ("gamma", 31.0, 50.0),
];

/// Variance floor applied before taking the entropy log.
pub const POWER_FLOOR: f64 = 1e-12;

/// Flat per-window feature vector.
///
/// Layout: for each channel, for each band in [`BANDS`] order, the pair
/// (band power, differential entropy). Length is `channels * 5 * 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub layout: String,
    /// Bands whose variance hit [`POWER_FLOOR`] before the entropy log.
    pub clamped_bands: usize,
}

/// Canonical layout descriptor for a channel count.
pub fn feature_layout(channels: usize) -> String {
    format!("bands-v1:{channels}ch:delta,theta,alpha,beta,gamma:pow,de")
}

/// Differential entropy of a Gaussian with the given variance:
/// `0.5 * ln(2 * pi * e * variance)`, with the variance floored at
/// [`POWER_FLOOR`].
pub fn differential_entropy(variance: f64) -> f64 {
    let v = variance.max(POWER_FLOOR);
    0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * v).ln()
}

fn variance(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// Per-channel band powers and differential entropies.
///
/// Requires at least one second of samples and a rate above 100 Hz so the
/// gamma band stays under Nyquist.
pub fn band_features(window: &EegWindow) -> Result<FeatureVector, EegError> {
    let fs = window.sample_rate;
    let needed = fs.ceil() as usize;
    if window.samples() < needed {
        return Err(EegError::WindowTooShort {
            needed,
            available: window.samples(),
        });
    }
    let mut values = Vec::with_capacity(window.channels() * BANDS.len() * 2);
    let mut clamped_bands = 0usize;
    for c in 0..window.channels() {
        let channel: Vec<f64> = window.channel(c).iter().cloned().collect();
        for &(_, low, high) in &BANDS {
            let filtered = bandpass_channel(&channel, low, high, fs)?;
            let power = variance(&filtered);
            if power < POWER_FLOOR {
                clamped_bands += 1;
            }
            values.push(power);
            values.push(differential_entropy(power));
        }
    }
    if clamped_bands > 0 {
        log::debug!("band_features: {clamped_bands} band(s) clamped to the power floor");
    }
    Ok(FeatureVector {
        values,
        layout: feature_layout(window.channels()),
        clamped_bands,
    })
}
