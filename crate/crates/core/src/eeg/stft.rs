//! Short-time Fourier transform and electrode-frequency distribution maps.

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;

use super::{EegError, EegWindow};

/// Magnitude spectrogram: one row per frame, one column per frequency bin.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    /// Bin center frequencies in Hz, `freqs[k] = k * fs / window_len`.
    pub freqs: Vec<f64>,
    /// Frame center times in seconds relative to the series start.
    pub frame_times: Vec<f64>,
    /// frames x bins magnitudes, non-negative.
    pub magnitudes: Array2<f64>,
}

/// Per-channel time-averaged STFT magnitudes: channels x bins.
#[derive(Debug, Clone, PartialEq)]
pub struct EfdMap {
    pub freqs: Vec<f64>,
    pub values: Array2<f64>,
}

fn hann(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|i| {
            0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / (len - 1) as f64).cos())
        })
        .collect()
}

/// Hann-windowed magnitude STFT of one channel.
///
/// Frames start at multiples of `hop`; trailing samples that do not fill a
/// whole window are dropped. Bin count is `window_len / 2 + 1`.
pub fn stft(
    samples: &[f64],
    sample_rate: f64,
    window_len: usize,
    hop: usize,
) -> Result<Spectrogram, EegError> {
    if window_len == 0 || window_len > samples.len() {
        return Err(EegError::WindowTooShort {
            needed: window_len,
            available: samples.len(),
        });
    }
    if hop == 0 {
        return Err(EegError::ZeroHop);
    }
    let bins = window_len / 2 + 1;
    let frames = (samples.len() - window_len) / hop + 1;
    let window = hann(window_len);

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(window_len);
    let mut buffer = vec![Complex64::new(0.0, 0.0); window_len];

    let mut magnitudes = Array2::zeros((frames, bins));
    let mut frame_times = Vec::with_capacity(frames);
    for frame in 0..frames {
        let start = frame * hop;
        for i in 0..window_len {
            buffer[i] = Complex64::new(samples[start + i] * window[i], 0.0);
        }
        fft.process(&mut buffer);
        for k in 0..bins {
            magnitudes[(frame, k)] = buffer[k].norm();
        }
        frame_times.push((start as f64 + window_len as f64 / 2.0) / sample_rate);
    }

    let freqs = (0..bins)
        .map(|k| k as f64 * sample_rate / window_len as f64)
        .collect();
    Ok(Spectrogram {
        freqs,
        frame_times,
        magnitudes,
    })
}

/// Electrode-frequency distribution map: mean STFT magnitude per channel
/// and bin.
pub fn efdm(window: &EegWindow, window_len: usize, hop: usize) -> Result<EfdMap, EegError> {
    let channels = window.channels();
    let bins = window_len / 2 + 1;
    let mut values = Array2::zeros((channels, bins));
    let mut freqs = Vec::new();
    for c in 0..channels {
        let channel: Vec<f64> = window.channel(c).iter().cloned().collect();
        let spec = stft(&channel, window.sample_rate, window_len, hop)?;
        let frames = spec.magnitudes.nrows() as f64;
        for k in 0..bins {
            values[(c, k)] = spec.magnitudes.column(k).sum() / frames;
        }
        if c == 0 {
            freqs = spec.freqs;
        }
    }
    Ok(EfdMap { freqs, values })
}
