//! EEG processing: band-pass filtering, STFT-based electrode-frequency
//! distribution maps, band power / differential-entropy features,
//! change-point segmentation, and a linear emotion classifier.

mod changepoint;
mod classifier;
mod features;
mod filter;
mod stft;

pub use changepoint::{auto_penalty, detect_change_points, ChangePointSet, Penalty};
pub use classifier::{
    classify_window, evaluate_classifier, loss_and_gradient, predict_probs, train_classifier,
    Evaluation, LinearModel, TrainOptions, TrainReport,
};
pub use features::{
    band_features, differential_entropy, feature_layout, FeatureVector, BANDS, POWER_FLOOR,
};
pub use filter::bandpass_filter;
pub use stft::{efdm, stft, EfdMap, Spectrogram};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default acquisition rate in Hz.
pub const DEFAULT_SAMPLE_RATE: f64 = 200.0;

#[derive(Debug, Error)]
pub enum EegError {
    #[error("invalid band edges: need 0 < {low} < {high} < {nyquist} (Nyquist)")]
    InvalidBand { low: f64, high: f64, nyquist: f64 },
    #[error("window of {available} samples too short: need >= {needed}")]
    WindowTooShort { needed: usize, available: usize },
    #[error("hop must be >= 1")]
    ZeroHop,
    #[error("series too short: need >= {needed} samples, got {got}")]
    SeriesTooShort { needed: usize, got: usize },
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("invalid probabilities: {0}")]
    InvalidProbs(String),
    #[error("feature layout mismatch: model has {model:?}, input is {input:?}")]
    LayoutMismatch { model: String, input: String },
    #[error("training set invalid: {0}")]
    InvalidTrainingSet(String),
    #[error("model file error: {0}")]
    ModelFile(String),
}

/// Emotion classes in fixed order (negative, neutral, positive).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionClass {
    Negative,
    Neutral,
    Positive,
}

impl EmotionClass {
    pub const ALL: [EmotionClass; 3] = [
        EmotionClass::Negative,
        EmotionClass::Neutral,
        EmotionClass::Positive,
    ];

    pub fn index(self) -> usize {
        match self {
            EmotionClass::Negative => 0,
            EmotionClass::Neutral => 1,
            EmotionClass::Positive => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Signed class value used in training labels (-1, 0, 1).
    pub fn value(self) -> i8 {
        match self {
            EmotionClass::Negative => -1,
            EmotionClass::Neutral => 0,
            EmotionClass::Positive => 1,
        }
    }

    pub fn from_value(v: i8) -> Option<Self> {
        match v {
            -1 => Some(EmotionClass::Negative),
            0 => Some(EmotionClass::Neutral),
            1 => Some(EmotionClass::Positive),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EmotionClass::Negative => "negative",
            EmotionClass::Neutral => "neutral",
            EmotionClass::Positive => "positive",
        }
    }
}

impl std::fmt::Display for EmotionClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A channels x samples block of EEG at a fixed rate.
#[derive(Debug, Clone, PartialEq)]
pub struct EegWindow {
    pub start_time: f64,
    pub sample_rate: f64,
    /// Channel-major data: row per channel.
    pub data: Array2<f64>,
}

impl EegWindow {
    pub fn new(start_time: f64, sample_rate: f64, data: Array2<f64>) -> Result<Self, EegError> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(EegError::InvalidWindow(format!(
                "sample_rate {sample_rate} must be positive"
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(EegError::InvalidWindow("data contains NaN or inf".into()));
        }
        Ok(Self {
            start_time,
            sample_rate,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn duration(&self) -> f64 {
        self.samples() as f64 / self.sample_rate
    }

    pub fn channel(&self, i: usize) -> ndarray::ArrayView1<'_, f64> {
        self.data.row(i)
    }
}

/// Timestamped class probabilities with the derived scalar valence
/// (p_positive - p_negative).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionSample {
    pub timestamp: f64,
    /// Probabilities over (negative, neutral, positive).
    pub probs: [f64; 3],
    pub valence: f64,
}

impl EmotionSample {
    pub fn from_probs(timestamp: f64, probs: [f64; 3]) -> Result<Self, EegError> {
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(EegError::InvalidProbs(format!("{probs:?}")));
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(EegError::InvalidProbs(format!("sum {sum} != 1")));
        }
        Ok(Self {
            timestamp,
            probs,
            valence: probs[2] - probs[0],
        })
    }

    pub fn dominant(&self) -> EmotionClass {
        let mut best = 0;
        for i in 1..3 {
            if self.probs[i] > self.probs[best] {
                best = i;
            }
        }
        EmotionClass::from_index(best).expect("index < 3")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn emotion_sample_valence_follows_probs() {
        let s = EmotionSample::from_probs(1.0, [0.2, 0.3, 0.5]).unwrap();
        assert!((s.valence - 0.3).abs() < 1e-12);
        assert_eq!(s.dominant(), EmotionClass::Positive);

        let uniform = EmotionSample::from_probs(0.0, [1.0 / 3.0; 3]).unwrap();
        assert!(uniform.valence.abs() < 1e-12);
    }

    #[test]
    fn emotion_sample_rejects_bad_probs() {
        assert!(EmotionSample::from_probs(0.0, [0.5, 0.5, 0.5]).is_err());
        assert!(EmotionSample::from_probs(0.0, [-0.1, 0.6, 0.5]).is_err());
    }

    #[test]
    fn window_rejects_nan() {
        let data = array![[0.0, f64::NAN]];
        assert!(EegWindow::new(0.0, 200.0, data).is_err());
    }

    #[test]
    fn class_value_round_trip() {
        for c in EmotionClass::ALL {
            assert_eq!(EmotionClass::from_value(c.value()), Some(c));
            assert_eq!(EmotionClass::from_index(c.index()), Some(c));
        }
    }
}
