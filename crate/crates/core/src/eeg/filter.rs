//! Zero-phase Butterworth band-pass filtering.
//!
//! The filter is a 4th-order Butterworth band-pass (2nd-order analog lowpass
//! prototype mapped through the band-pass transform and the bilinear
//! transform), applied forward-backward as a cascade of two biquad sections
//! with odd-reflection edge padding and steady-state initial conditions, so
//! pass-band components come through without phase shift.

use num_complex::Complex64;

use super::{EegError, EegWindow};

/// One second-order section, direct form II transposed.
#[derive(Debug, Clone, Copy)]
struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
}

impl Biquad {
    /// Steady-state filter state for a constant input of `x0`.
    fn step_state(&self, x0: f64) -> (f64, f64) {
        let k = (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2);
        ((k - self.b0) * x0, (self.b2 - self.a2 * k) * x0)
    }

    fn run(&self, input: &[f64], output: &mut Vec<f64>, init: (f64, f64)) {
        output.clear();
        output.reserve(input.len());
        let (mut z1, mut z2) = init;
        for &x in input {
            let y = self.b0 * x + z1;
            z1 = self.b1 * x - self.a1 * y + z2;
            z2 = self.b2 * x - self.a2 * y;
            output.push(y);
        }
    }

    fn magnitude_at(&self, omega: f64) -> f64 {
        let z1 = Complex64::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        let num = Complex64::new(self.b0, 0.0) + z1 * self.b1 + z2 * self.b2;
        let den = Complex64::new(1.0, 0.0) + z1 * self.a1 + z2 * self.a2;
        (num / den).norm()
    }
}

/// Design the two biquad sections plus the digital center frequency (rad).
fn design_bandpass(low: f64, high: f64, fs: f64) -> Result<(Vec<Biquad>, f64), EegError> {
    let nyquist = fs / 2.0;
    if !(low > 0.0 && low < high && high < nyquist) {
        return Err(EegError::InvalidBand { low, high, nyquist });
    }

    // Bilinear pre-warp.
    let c = 2.0 * fs;
    let warped_low = c * (std::f64::consts::PI * low / fs).tan();
    let warped_high = c * (std::f64::consts::PI * high / fs).tan();
    let center = (warped_low * warped_high).sqrt();
    let bandwidth = warped_high - warped_low;

    // 2nd-order Butterworth lowpass prototype pole (upper half plane);
    // the conjugate is implied.
    let proto = Complex64::from_polar(1.0, 3.0 * std::f64::consts::FRAC_PI_4);

    // Band-pass transform doubles the order: each prototype pole p yields
    // the two roots of s^2 - (bw * p) s + center^2 = 0.
    let bp = proto * bandwidth;
    let disc = (bp * bp - 4.0 * center * center).sqrt();
    let analog_poles = [(bp + disc) / 2.0, (bp - disc) / 2.0];

    // Bilinear transform; each analog pole and its conjugate form one biquad
    // with zeros at z = +1 and z = -1 (from s = 0 and s = inf).
    let omega_center = 2.0 * (center / c).atan();
    let sections = analog_poles
        .iter()
        .map(|&s| {
            let zp = (c + s) / (c - s);
            let mut section = Biquad {
                b0: 1.0,
                b1: 0.0,
                b2: -1.0,
                a1: -2.0 * zp.re,
                a2: zp.norm_sqr(),
            };
            let gain = section.magnitude_at(omega_center);
            section.b0 /= gain;
            section.b2 /= gain;
            section
        })
        .collect();
    Ok((sections, omega_center))
}

/// Forward-backward cascade filtering with odd-reflection padding.
fn sosfiltfilt(sections: &[Biquad], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    // Matches the usual 3 * (2 * n_sections + 1) choice, capped for short inputs.
    let padlen = (3 * (2 * sections.len() + 1)).min(n - 1);

    let mut ext = Vec::with_capacity(n + 2 * padlen);
    for i in 0..padlen {
        ext.push(2.0 * x[0] - x[padlen - i]);
    }
    ext.extend_from_slice(x);
    for i in 0..padlen {
        ext.push(2.0 * x[n - 1] - x[n - 2 - i]);
    }

    let mut tmp = Vec::new();
    let mut pass = |data: &mut Vec<f64>| {
        for s in sections {
            let init = s.step_state(data[0]);
            s.run(data, &mut tmp, init);
            std::mem::swap(data, &mut tmp);
        }
    };
    pass(&mut ext);
    ext.reverse();
    pass(&mut ext);
    ext.reverse();

    ext[padlen..padlen + n].to_vec()
}

/// Zero-phase band-pass over every channel of a window.
pub fn bandpass_filter(window: &EegWindow, low: f64, high: f64) -> Result<EegWindow, EegError> {
    let (sections, _) = design_bandpass(low, high, window.sample_rate)?;
    let mut out = window.data.clone();
    for mut row in out.rows_mut() {
        let channel: Vec<f64> = row.iter().cloned().collect();
        let filtered = sosfiltfilt(&sections, &channel);
        for (dst, src) in row.iter_mut().zip(filtered) {
            *dst = src;
        }
    }
    EegWindow::new(window.start_time, window.sample_rate, out)
}

/// Band-pass a bare channel; used by the band-feature extractor.
pub(super) fn bandpass_channel(
    samples: &[f64],
    low: f64,
    high: f64,
    fs: f64,
) -> Result<Vec<f64>, EegError> {
    let (sections, _) = design_bandpass(low, high, fs)?;
    Ok(sosfiltfilt(&sections, samples))
}
