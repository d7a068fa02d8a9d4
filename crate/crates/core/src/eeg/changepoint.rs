//! Exact penalized change-point detection (PELT) with a Gaussian mean-shift
//! cost.

use serde::{Deserialize, Serialize};

use super::EegError;

/// Detected change points: each index is the first sample of a new segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangePointSet {
    /// Strictly increasing, in `1..series_len`.
    pub indices: Vec<usize>,
    /// Penalty actually used.
    pub penalty: f64,
}

/// Penalty selection for [`detect_change_points`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Penalty {
    /// `2 * sigma^2 * ln(n)` with sigma estimated from the MAD of first
    /// differences; floored at 1e-8 so noiseless series stay minimal.
    Auto,
    Manual(f64),
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Robust noise-adapted penalty `2 * sigma^2 * ln(n)`.
pub fn auto_penalty(series: &[f64]) -> f64 {
    let n = series.len();
    let diffs: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();
    if diffs.is_empty() {
        return 1e-8;
    }
    let m = median(&mut diffs.clone());
    let mut deviations: Vec<f64> = diffs.iter().map(|d| (d - m).abs()).collect();
    let mad = median(&mut deviations);
    let sigma = mad / (std::f64::consts::SQRT_2 * 0.6745);
    (2.0 * sigma * sigma * (n as f64).ln()).max(1e-8)
}

/// Prefix-sum segment cost: within-segment sum of squared deviations from
/// the segment mean over `[a, b)`.
struct SegmentCost {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl SegmentCost {
    fn new(series: &[f64]) -> Self {
        let mut sum = Vec::with_capacity(series.len() + 1);
        let mut sum_sq = Vec::with_capacity(series.len() + 1);
        sum.push(0.0);
        sum_sq.push(0.0);
        for &x in series {
            sum.push(sum.last().unwrap() + x);
            sum_sq.push(sum_sq.last().unwrap() + x * x);
        }
        Self { sum, sum_sq }
    }

    fn cost(&self, a: usize, b: usize) -> f64 {
        let len = (b - a) as f64;
        let s = self.sum[b] - self.sum[a];
        let s2 = self.sum_sq[b] - self.sum_sq[a];
        s2 - s * s / len
    }
}

/// Exact optimum of `sum of segment costs + penalty * (#segments - 1)` via
/// PELT. Pruning uses constant 0, valid because splitting a segment never
/// increases its squared-deviation cost.
pub fn detect_change_points(series: &[f64], penalty: Penalty) -> Result<ChangePointSet, EegError> {
    let n = series.len();
    if n < 2 {
        return Err(EegError::SeriesTooShort { needed: 2, got: n });
    }
    let beta = match penalty {
        Penalty::Auto => auto_penalty(series),
        Penalty::Manual(b) => b,
    };
    let cost = SegmentCost::new(series);

    // best[t]: optimal penalized cost of series[..t]; prev[t]: last split.
    let mut best = vec![0.0f64; n + 1];
    let mut prev = vec![0usize; n + 1];
    best[0] = -beta;
    let mut candidates: Vec<usize> = vec![0];

    for t in 1..=n {
        let mut min_cost = f64::INFINITY;
        let mut argmin = 0usize;
        for &tau in &candidates {
            let c = best[tau] + cost.cost(tau, t) + beta;
            if c < min_cost {
                min_cost = c;
                argmin = tau;
            }
        }
        best[t] = min_cost;
        prev[t] = argmin;
        candidates.retain(|&tau| best[tau] + cost.cost(tau, t) <= best[t]);
        candidates.push(t);
    }

    let mut indices = Vec::new();
    let mut t = n;
    while t > 0 {
        let p = prev[t];
        if p > 0 {
            indices.push(p);
        }
        t = p;
    }
    indices.reverse();
    Ok(ChangePointSet {
        indices,
        penalty: beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Independent O(n^2) optimal-partition oracle, no pruning.
    fn dp_oracle(series: &[f64], beta: f64) -> Vec<usize> {
        let n = series.len();
        let mut sum = vec![0.0; n + 1];
        let mut sum_sq = vec![0.0; n + 1];
        for i in 0..n {
            sum[i + 1] = sum[i] + series[i];
            sum_sq[i + 1] = sum_sq[i] + series[i] * series[i];
        }
        let cost = |a: usize, b: usize| {
            let len = (b - a) as f64;
            let s = sum[b] - sum[a];
            sum_sq[b] - sum_sq[a] - s * s / len
        };
        let mut best = vec![0.0f64; n + 1];
        let mut prev = vec![0usize; n + 1];
        best[0] = -beta;
        for t in 1..=n {
            let mut min_cost = f64::INFINITY;
            let mut argmin = 0usize;
            for tau in 0..t {
                let c = best[tau] + cost(tau, t) + beta;
                if c < min_cost {
                    min_cost = c;
                    argmin = tau;
                }
            }
            best[t] = min_cost;
            prev[t] = argmin;
        }
        let mut out = Vec::new();
        let mut t = n;
        while t > 0 {
            let p = prev[t];
            if p > 0 {
                out.push(p);
            }
            t = p;
        }
        out.reverse();
        out
    }

    #[test]
    fn constant_series_no_change_points() {
        let series = vec![2.5; 40];
        for beta in [0.1, 1.0, 100.0] {
            let cps = detect_change_points(&series, Penalty::Manual(beta)).unwrap();
            assert!(cps.indices.is_empty(), "beta {beta}: {:?}", cps.indices);
        }
    }

    #[test]
    fn noiseless_step_found_exactly() {
        let mut series = vec![0.0; 50];
        series.extend(vec![10.0; 50]);
        let cps = detect_change_points(&series, Penalty::Manual(1.0)).unwrap();
        assert_eq!(cps.indices, vec![50]);
        // Auto penalty handles the noiseless case via its floor.
        let auto = detect_change_points(&series, Penalty::Auto).unwrap();
        assert_eq!(auto.indices, vec![50]);
    }

    #[test]
    fn matches_dp_oracle_on_random_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..100 {
            let n = rng.gen_range(2..=50);
            let segments = rng.gen_range(1..=4usize);
            let mut series = Vec::with_capacity(n);
            let mut level: f64 = rng.gen_range(-5.0..5.0);
            for i in 0..n {
                if segments > 1 && i > 0 && rng.gen_bool((segments as f64 / n as f64).min(1.0)) {
                    level = rng.gen_range(-5.0..5.0);
                }
                series.push(level + rng.gen_range(-0.5..0.5));
            }
            let beta = rng.gen_range(0.05..5.0);
            let ours = detect_change_points(&series, Penalty::Manual(beta)).unwrap();
            let oracle = dp_oracle(&series, beta);
            assert_eq!(ours.indices, oracle, "trial {trial}, n={n}, beta={beta}");
        }
    }

    #[test]
    fn higher_penalty_never_adds_segments() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let series: Vec<f64> = (0..200)
            .map(|i| if i < 80 { 0.0 } else { 3.0 } + rng.gen_range(-0.3..0.3))
            .collect();
        let loose = detect_change_points(&series, Penalty::Manual(0.5)).unwrap();
        let strict = detect_change_points(&series, Penalty::Manual(50.0)).unwrap();
        assert!(strict.indices.len() <= loose.indices.len());
    }

    #[test]
    fn too_short_series_rejected() {
        assert!(detect_change_points(&[], Penalty::Auto).is_err());
        assert!(detect_change_points(&[1.0], Penalty::Auto).is_err());
    }

    #[test]
    fn indices_strictly_increasing_and_in_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let series: Vec<f64> = (0..300).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cps = detect_change_points(&series, Penalty::Auto).unwrap();
        for w in cps.indices.windows(2) {
            assert!(w[0] < w[1]);
        }
        for &i in &cps.indices {
            assert!(i >= 1 && i < series.len());
        }
    }
}
