//! Position estimation from range (ToA) and range-difference (TDoA)
//! measurements: a closed-form three-anchor solve, damped Gauss-Newton
//! least squares, a seeded particle-filter tracker, and the GDOP anchor
//! geometry metric.
//!
//! All solvers are pure functions of their inputs. 2D mode works in the
//! xy-plane (anchor z ignored) and pins the estimate z to the carried-tag
//! height.

use nalgebra::{DMatrix, DVector, Vector2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{AnchorSet, Dimension};
use crate::Vec3;

/// Height above the floor assumed for a hand-carried tag in 2D mode.
pub const DEFAULT_TAG_HEIGHT: f64 = 1.2;

/// Residual-norm sentinel marking a particle-filter step whose likelihoods
/// all underflowed.
pub const DEGENERATE_RESIDUAL: f64 = 1e9;

#[derive(Debug, Error)]
pub enum LocateError {
    #[error("need >={need} anchors for {context}, got {got}")]
    InsufficientAnchors {
        need: usize,
        got: usize,
        context: &'static str,
    },
    #[error("anchor count {anchors} does not match measurement count {measurements}")]
    CountMismatch { anchors: usize, measurements: usize },
    #[error("degenerate anchor geometry")]
    DegenerateGeometry,
    #[error("query point coincides with anchor {index}")]
    PointAtAnchor { index: usize },
    #[error("invalid measurement: {0}")]
    InvalidMeasurement(String),
    #[error("unknown anchor id {0:?}")]
    UnknownAnchor(String),
    #[error("empty particle set")]
    EmptyParticleSet,
}

/// One tag-to-anchor distance observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeMeasurement {
    pub tag_id: String,
    pub anchor_id: String,
    /// Seconds, monotone per stream.
    pub timestamp: f64,
    /// Meters, >= 0.
    pub distance: f64,
    /// Measurement noise scale in meters, > 0.
    pub sigma: f64,
}

impl RangeMeasurement {
    pub fn validate(&self) -> Result<(), LocateError> {
        if !(self.distance >= 0.0 && self.distance.is_finite()) {
            return Err(LocateError::InvalidMeasurement(format!(
                "distance {} must be >= 0",
                self.distance
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(LocateError::InvalidMeasurement(format!(
                "sigma {} must be > 0",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// How an estimate was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    ClosedForm,
    GaussNewton,
    Tdoa,
    ParticleFilter,
}

/// A solved position with fit diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionEstimate {
    pub timestamp: f64,
    pub position: Vec3,
    /// Weighted RMS range residual in meters (weights 1/sigma^2).
    pub residual_norm: f64,
    pub iterations: usize,
    pub method: SolveMethod,
}

/// Tuning for the iterative solvers.
#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Terminate when the accepted step norm drops below this.
    pub step_tolerance: f64,
    /// Diagonal damping added when the normal matrix is singular.
    pub damping: f64,
    /// Step halvings allowed before giving up on a descent step.
    pub max_halvings: usize,
    /// Drop measurements whose post-fit residual exceeds this many sigma,
    /// then re-solve once. `None` disables gating.
    pub gate_sigma: Option<f64>,
    /// Estimate z in 2D mode.
    pub tag_height: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            step_tolerance: 1e-9,
            damping: 1e-8,
            max_halvings: 20,
            gate_sigma: Some(5.0),
            tag_height: DEFAULT_TAG_HEIGHT,
        }
    }
}

fn planar(p: &Vec3) -> Vector2<f64> {
    Vector2::new(p.x, p.y)
}

/// Closed-form trilateration from exactly three non-collinear 2D anchors.
///
/// Subtracting the first circle equation from the other two linearizes the
/// system; the 2x2 solve is exact, so inconsistent distances still yield the
/// least-squares point of those two linear equations.
pub fn trilaterate_closed_form(
    anchors: &[Vector2<f64>; 3],
    distances: &[f64; 3],
) -> Result<Vector2<f64>, LocateError> {
    for d in distances {
        if !(*d >= 0.0 && d.is_finite()) {
            return Err(LocateError::InvalidMeasurement(format!(
                "distance {d} must be >= 0"
            )));
        }
    }
    let a0 = anchors[0];
    let mut m = nalgebra::Matrix2::<f64>::zeros();
    let mut rhs = Vector2::<f64>::zeros();
    for i in 0..2 {
        let ai = anchors[i + 1];
        let row = 2.0 * (ai - a0);
        m.set_row(i, &row.transpose());
        rhs[i] = (distances[0] * distances[0] - distances[i + 1] * distances[i + 1])
            + (ai.norm_squared() - a0.norm_squared());
    }
    let det = m.determinant();
    if det.abs() < 1e-12 {
        return Err(LocateError::DegenerateGeometry);
    }
    Ok(m.try_inverse().ok_or(LocateError::DegenerateGeometry)? * rhs)
}

/// Internal: residuals and Jacobian rows for the ToA cost
/// sum_i ((|p - a_i| - d_i) / sigma_i)^2.
struct ToaProblem<'a> {
    anchors: &'a [Vec3],
    distances: &'a [f64],
    sigmas: &'a [f64],
    dim: Dimension,
}

/// Internal: TDoA cost with residuals r_i = (|p-a_i| - |p-a_0|) - dd_i.
struct TdoaProblem<'a> {
    anchors: &'a [Vec3],
    range_diffs: &'a [f64],
    dim: Dimension,
}

trait LeastSquares {
    /// Number of residual rows.
    fn rows(&self) -> usize;
    fn dim(&self) -> Dimension;
    /// Fill `residuals` and `jacobian` (rows x axes) at point `p`.
    fn eval(&self, p: &Vec3, residuals: &mut DVector<f64>, jacobian: &mut DMatrix<f64>);

    fn cost(&self, p: &Vec3, scratch: &mut DVector<f64>, jac: &mut DMatrix<f64>) -> f64 {
        self.eval(p, scratch, jac);
        scratch.norm_squared()
    }
}

fn dist_in(dim: Dimension, p: &Vec3, a: &Vec3) -> f64 {
    match dim {
        Dimension::Two => (planar(p) - planar(a)).norm(),
        Dimension::Three => (p - a).norm(),
    }
}

/// Unit direction from anchor toward the point, confined to the solve plane
/// in 2D mode. Distances below 1e-15 are floored to keep the row finite.
fn unit_row(dim: Dimension, p: &Vec3, a: &Vec3) -> Vec3 {
    let floor = 1e-15;
    match dim {
        Dimension::Two => {
            let d = planar(p) - planar(a);
            let n = d.norm().max(floor);
            Vec3::new(d.x / n, d.y / n, 0.0)
        }
        Dimension::Three => {
            let d = p - a;
            let n = d.norm().max(floor);
            d / n
        }
    }
}

impl LeastSquares for ToaProblem<'_> {
    fn rows(&self) -> usize {
        self.anchors.len()
    }

    fn dim(&self) -> Dimension {
        self.dim
    }

    fn eval(&self, p: &Vec3, residuals: &mut DVector<f64>, jacobian: &mut DMatrix<f64>) {
        let axes = self.dim.axes();
        for (i, a) in self.anchors.iter().enumerate() {
            let d = dist_in(self.dim, p, a);
            residuals[i] = (d - self.distances[i]) / self.sigmas[i];
            let u = unit_row(self.dim, p, a);
            for axis in 0..axes {
                jacobian[(i, axis)] = u[axis] / self.sigmas[i];
            }
        }
    }
}

impl LeastSquares for TdoaProblem<'_> {
    fn rows(&self) -> usize {
        self.anchors.len() - 1
    }

    fn dim(&self) -> Dimension {
        self.dim
    }

    fn eval(&self, p: &Vec3, residuals: &mut DVector<f64>, jacobian: &mut DMatrix<f64>) {
        let axes = self.dim.axes();
        let d0 = dist_in(self.dim, p, &self.anchors[0]);
        let u0 = unit_row(self.dim, p, &self.anchors[0]);
        for i in 1..self.anchors.len() {
            let di = dist_in(self.dim, p, &self.anchors[i]);
            residuals[i - 1] = (di - d0) - self.range_diffs[i - 1];
            let ui = unit_row(self.dim, p, &self.anchors[i]);
            for axis in 0..axes {
                jacobian[(i - 1, axis)] = ui[axis] - u0[axis];
            }
        }
    }
}

/// Damped Gauss-Newton with monotone step halving. Returns the solution
/// point, final cost, and accepted iteration count.
fn gauss_newton(
    problem: &dyn LeastSquares,
    start: Vec3,
    opts: &SolverOptions,
) -> Result<(Vec3, f64, usize), LocateError> {
    let axes = problem.dim().axes();
    let rows = problem.rows();
    let mut residuals = DVector::zeros(rows);
    let mut jacobian = DMatrix::zeros(rows, axes);
    let mut scratch_r = DVector::zeros(rows);
    let mut scratch_j = DMatrix::zeros(rows, axes);

    let mut p = start;
    if let Dimension::Two = problem.dim() {
        p.z = opts.tag_height;
    }
    let mut cost = problem.cost(&p, &mut residuals, &mut jacobian);
    let mut iterations = 0usize;

    for _ in 0..opts.max_iterations {
        problem.eval(&p, &mut residuals, &mut jacobian);
        let jt = jacobian.transpose();
        let normal = &jt * &jacobian;
        let rhs = &jt * &residuals;
        let delta = match solve_normal(&normal, &rhs, opts.damping)? {
            Some(d) => d,
            None => return Err(LocateError::DegenerateGeometry),
        };

        // Step halving: shrink until the cost stops increasing.
        let mut scale = 1.0f64;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let mut candidate = p;
            for axis in 0..axes {
                candidate[axis] -= scale * delta[axis];
            }
            let c = problem.cost(&candidate, &mut scratch_r, &mut scratch_j);
            if c <= cost {
                accepted = Some((candidate, c, scale));
                break;
            }
            scale *= 0.5;
        }
        let Some((next, next_cost, scale)) = accepted else {
            // No descent direction left; the current point is the minimum
            // at working precision.
            break;
        };
        debug_assert!(next_cost <= cost, "accepted step increased the cost");
        p = next;
        cost = next_cost;
        iterations += 1;
        if (scale * delta.norm()) < opts.step_tolerance {
            break;
        }
    }
    Ok((p, cost, iterations))
}

/// Solve the (possibly damped) normal equations. Returns `Ok(None)` when the
/// system stays singular even after damping.
fn solve_normal(
    normal: &DMatrix<f64>,
    rhs: &DVector<f64>,
    damping: f64,
) -> Result<Option<DVector<f64>>, LocateError> {
    if let Some(chol) = normal.clone().cholesky() {
        return Ok(Some(chol.solve(rhs)));
    }
    let mut damped = normal.clone();
    for i in 0..damped.nrows() {
        damped[(i, i)] += damping;
    }
    Ok(damped.cholesky().map(|c| c.solve(rhs)))
}

fn checked_centroid(anchors: &[Vec3]) -> Vec3 {
    anchors.iter().sum::<Vec3>() / anchors.len() as f64
}

/// Linearized least-squares initializer for range solves: subtracting the
/// first circle/sphere equation from the rest leaves a linear system in the
/// position. Exact on consistent distances, close under noise, and immune
/// to the local minima that trap descent from an uninformed start. Falls
/// back to the anchor centroid when the system is degenerate.
fn linear_init(anchors: &[Vec3], distances: &[f64], dim: Dimension) -> Vec3 {
    let axes = dim.axes();
    let rows = anchors.len() - 1;
    let mut a = DMatrix::zeros(rows, axes);
    let mut b = DVector::zeros(rows);
    let norm_sq = |p: &Vec3| -> f64 { (0..axes).map(|k| p[k] * p[k]).sum() };
    for i in 1..anchors.len() {
        for axis in 0..axes {
            a[(i - 1, axis)] = 2.0 * (anchors[i][axis] - anchors[0][axis]);
        }
        b[i - 1] = (distances[0] * distances[0] - distances[i] * distances[i])
            + (norm_sq(&anchors[i]) - norm_sq(&anchors[0]));
    }
    let at = a.transpose();
    let normal = &at * &a;
    let rhs = &at * &b;
    match normal.cholesky() {
        Some(chol) => {
            let sol = chol.solve(&rhs);
            let mut p = Vec3::zeros();
            for axis in 0..axes {
                p[axis] = sol[axis];
            }
            if p.iter().all(|v| v.is_finite()) {
                p
            } else {
                checked_centroid(anchors)
            }
        }
        None => checked_centroid(anchors),
    }
}

/// Weighted RMS range residual in meters at `p`:
/// sqrt(sum w_i (|p-a_i| - d_i)^2 / sum w_i) with w_i = 1/sigma_i^2.
fn weighted_rms(dim: Dimension, p: &Vec3, anchors: &[Vec3], distances: &[f64], sigmas: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..anchors.len() {
        let w = 1.0 / (sigmas[i] * sigmas[i]);
        let r = dist_in(dim, p, &anchors[i]) - distances[i];
        num += w * r * r;
        den += w;
    }
    (num / den).sqrt()
}

/// Nonlinear weighted least-squares position from >=3 (2D) or >=4 (3D)
/// ranges. The returned estimate carries timestamp 0; the caller stamps it.
pub fn multilaterate(
    anchors: &[Vec3],
    distances: &[f64],
    sigmas: &[f64],
    dim: Dimension,
    initial_guess: Option<Vec3>,
    opts: &SolverOptions,
) -> Result<PositionEstimate, LocateError> {
    let need = dim.axes() + 1;
    if anchors.len() < need {
        return Err(LocateError::InsufficientAnchors {
            need,
            got: anchors.len(),
            context: "multilateration",
        });
    }
    if distances.len() != anchors.len() || sigmas.len() != anchors.len() {
        return Err(LocateError::CountMismatch {
            anchors: anchors.len(),
            measurements: distances.len().min(sigmas.len()),
        });
    }
    for (d, s) in distances.iter().zip(sigmas) {
        if !(*d >= 0.0 && d.is_finite()) || !(*s > 0.0 && s.is_finite()) {
            return Err(LocateError::InvalidMeasurement(format!(
                "distance {d}, sigma {s}"
            )));
        }
    }

    let run = |anchors: &[Vec3], distances: &[f64], sigmas: &[f64]| {
        let problem = ToaProblem {
            anchors,
            distances,
            sigmas,
            dim,
        };
        let start = initial_guess.unwrap_or_else(|| linear_init(anchors, distances, dim));
        gauss_newton(&problem, start, opts)
    };

    let (mut p, _, mut iterations) = run(anchors, distances, sigmas)?;

    // One round of residual gating: drop ranges that disagree with the first
    // fix by more than gate_sigma standard deviations, then re-solve.
    if let Some(gate) = opts.gate_sigma {
        let keep: Vec<usize> = (0..anchors.len())
            .filter(|&i| {
                (dist_in(dim, &p, &anchors[i]) - distances[i]).abs() <= gate * sigmas[i]
            })
            .collect();
        if keep.len() < anchors.len() && keep.len() >= need {
            let ga: Vec<Vec3> = keep.iter().map(|&i| anchors[i]).collect();
            let gd: Vec<f64> = keep.iter().map(|&i| distances[i]).collect();
            let gs: Vec<f64> = keep.iter().map(|&i| sigmas[i]).collect();
            let (p2, _, it2) = run(&ga, &gd, &gs)?;
            p = p2;
            iterations += it2;
            let residual_norm = weighted_rms(dim, &p, &ga, &gd, &gs);
            return Ok(PositionEstimate {
                timestamp: 0.0,
                position: finalize(dim, p, opts),
                residual_norm,
                iterations,
                method: SolveMethod::GaussNewton,
            });
        }
    }

    let residual_norm = weighted_rms(dim, &p, anchors, distances, sigmas);
    Ok(PositionEstimate {
        timestamp: 0.0,
        position: finalize(dim, p, opts),
        residual_norm,
        iterations,
        method: SolveMethod::GaussNewton,
    })
}

fn finalize(dim: Dimension, mut p: Vec3, opts: &SolverOptions) -> Vec3 {
    if let Dimension::Two = dim {
        p.z = opts.tag_height;
    }
    p
}

/// Linearized TDoA initializer: expanding the range-difference equations
/// around the unknown reference range r0 gives a system linear in
/// (position, r0). Exact on consistent differences; falls back to the
/// centroid when degenerate.
fn tdoa_linear_init(anchors: &[Vec3], range_diffs: &[f64], dim: Dimension) -> Vec3 {
    let axes = dim.axes();
    let rows = anchors.len() - 1;
    if rows < axes + 1 {
        return checked_centroid(anchors);
    }
    let mut a = DMatrix::zeros(rows, axes + 1);
    let mut b = DVector::zeros(rows);
    let norm_sq = |p: &Vec3| -> f64 { (0..axes).map(|k| p[k] * p[k]).sum() };
    for i in 1..anchors.len() {
        let dd = range_diffs[i - 1];
        for axis in 0..axes {
            a[(i - 1, axis)] = 2.0 * (anchors[i][axis] - anchors[0][axis]);
        }
        a[(i - 1, axes)] = 2.0 * dd;
        b[i - 1] = norm_sq(&anchors[i]) - norm_sq(&anchors[0]) - dd * dd;
    }
    let at = a.transpose();
    let normal = &at * &a;
    let rhs = &at * &b;
    match normal.cholesky() {
        Some(chol) => {
            let sol = chol.solve(&rhs);
            let mut p = Vec3::zeros();
            for axis in 0..axes {
                p[axis] = sol[axis];
            }
            if p.iter().all(|v| v.is_finite()) {
                p
            } else {
                checked_centroid(anchors)
            }
        }
        None => checked_centroid(anchors),
    }
}

/// Hyperbolic (TDoA) solve. `range_diffs[i]` is the range to anchor `i+1`
/// minus the range to anchor 0, in meters.
pub fn tdoa_solve(
    anchors: &[Vec3],
    range_diffs: &[f64],
    dim: Dimension,
    initial_guess: Option<Vec3>,
    opts: &SolverOptions,
) -> Result<PositionEstimate, LocateError> {
    let need = dim.axes() + 2;
    if anchors.len() < need {
        return Err(LocateError::InsufficientAnchors {
            need,
            got: anchors.len(),
            context: "TDoA",
        });
    }
    if range_diffs.len() != anchors.len() - 1 {
        return Err(LocateError::CountMismatch {
            anchors: anchors.len(),
            measurements: range_diffs.len() + 1,
        });
    }
    let problem = TdoaProblem {
        anchors,
        range_diffs,
        dim,
    };
    let start = initial_guess.unwrap_or_else(|| tdoa_linear_init(anchors, range_diffs, dim));
    let (p, cost, iterations) = gauss_newton(&problem, start, opts)?;
    let residual_norm = (cost / problem.rows() as f64).sqrt();
    Ok(PositionEstimate {
        timestamp: 0.0,
        position: finalize(dim, p, opts),
        residual_norm,
        iterations,
        method: SolveMethod::Tdoa,
    })
}

/// Geometric dilution of precision at `point`:
/// sqrt(trace((J^T J)^-1)) where row i of J is the unit vector from anchor i
/// to the point.
pub fn gdop(anchors: &AnchorSet, point: &Vec3, dim: Dimension) -> Result<f64, LocateError> {
    let axes = dim.axes();
    let positions = anchors.positions();
    if positions.len() < axes + 1 {
        return Err(LocateError::InsufficientAnchors {
            need: axes + 1,
            got: positions.len(),
            context: "GDOP",
        });
    }
    let mut jacobian = DMatrix::zeros(positions.len(), axes);
    for (i, a) in positions.iter().enumerate() {
        if dist_in(dim, point, a) < 1e-12 {
            return Err(LocateError::PointAtAnchor { index: i });
        }
        let u = unit_row(dim, point, a);
        for axis in 0..axes {
            jacobian[(i, axis)] = u[axis];
        }
    }
    let normal = jacobian.transpose() * &jacobian;
    let inv = normal
        .try_inverse()
        .ok_or(LocateError::DegenerateGeometry)?;
    let trace: f64 = (0..axes).map(|i| inv[(i, i)]).sum();
    if !trace.is_finite() || trace <= 0.0 {
        return Err(LocateError::DegenerateGeometry);
    }
    Ok(trace.sqrt())
}

// ---------------------------------------------------------------------------
// Particle filter
// ---------------------------------------------------------------------------

/// One weighted position hypothesis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub position: Vec3,
    pub weight: f64,
}

/// Weighted particle cloud with its own seeded generator, owned by a single
/// tracker task. Behavior is bit-reproducible for a fixed seed and call
/// sequence.
#[derive(Debug, Clone)]
pub struct ParticleSet {
    particles: Vec<Particle>,
    rng: ChaCha8Rng,
    seed: u64,
}

/// Tuning for [`particle_filter_step`].
#[derive(Debug, Clone)]
pub struct ParticleFilterOptions {
    /// Random-walk process noise in m/s; prediction std is `q * dt`.
    pub process_noise: f64,
    /// Resample when the effective sample size falls below this fraction of N.
    pub resample_fraction: f64,
    pub dim: Dimension,
    pub tag_height: f64,
}

impl Default for ParticleFilterOptions {
    fn default() -> Self {
        Self {
            process_noise: 0.5,
            resample_fraction: 0.5,
            dim: Dimension::Two,
            tag_height: DEFAULT_TAG_HEIGHT,
        }
    }
}

impl ParticleSet {
    /// Uniform cloud over `bounds` (z pinned to `tag_height` in 2D mode).
    pub fn uniform(
        count: usize,
        bounds: &crate::scene::Aabb,
        opts: &ParticleFilterOptions,
        seed: u64,
    ) -> Result<Self, LocateError> {
        if count == 0 {
            return Err(LocateError::EmptyParticleSet);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = 1.0 / count as f64;
        let particles = (0..count)
            .map(|_| {
                let x = rng.gen_range(bounds.min.x..bounds.max.x);
                let y = rng.gen_range(bounds.min.y..bounds.max.y);
                let z = match opts.dim {
                    Dimension::Two => opts.tag_height,
                    Dimension::Three => rng.gen_range(bounds.min.z..bounds.max.z),
                };
                Particle {
                    position: Vec3::new(x, y, z),
                    weight: w,
                }
            })
            .collect();
        Ok(Self {
            particles,
            rng,
            seed,
        })
    }

    /// Cloud concentrated at one point, weights uniform.
    pub fn at_point(count: usize, point: Vec3, seed: u64) -> Result<Self, LocateError> {
        if count == 0 {
            return Err(LocateError::EmptyParticleSet);
        }
        let w = 1.0 / count as f64;
        Ok(Self {
            particles: vec![
                Particle {
                    position: point,
                    weight: w
                };
                count
            ],
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
        })
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn weighted_mean(&self) -> Vec3 {
        self.particles
            .iter()
            .map(|p| p.position * p.weight)
            .sum::<Vec3>()
    }

    fn effective_sample_size(&self) -> f64 {
        let sum_sq: f64 = self.particles.iter().map(|p| p.weight * p.weight).sum();
        if sum_sq > 0.0 {
            1.0 / sum_sq
        } else {
            0.0
        }
    }
}

/// One predict/weight/resample cycle. Returns the weighted-mean estimate.
///
/// When every likelihood underflows to zero the weights reset to uniform and
/// the estimate is flagged with `residual_norm` = [`DEGENERATE_RESIDUAL`].
pub fn particle_filter_step(
    state: &mut ParticleSet,
    measurements: &[RangeMeasurement],
    anchors: &AnchorSet,
    dt: f64,
    opts: &ParticleFilterOptions,
) -> Result<PositionEstimate, LocateError> {
    if state.particles.is_empty() {
        return Err(LocateError::EmptyParticleSet);
    }
    if !(dt >= 0.0) {
        return Err(LocateError::InvalidMeasurement(format!(
            "dt {dt} must be >= 0"
        )));
    }
    for m in measurements {
        m.validate()?;
        if anchors.position_of(&m.anchor_id).is_none() {
            return Err(LocateError::UnknownAnchor(m.anchor_id.clone()));
        }
    }

    // Predict: Gaussian random walk with std q*dt (skipped when dt == 0).
    let std = opts.process_noise * dt;
    if std > 0.0 {
        let walk = Normal::new(0.0, std).expect("std > 0");
        for particle in &mut state.particles {
            particle.position.x += walk.sample(&mut state.rng);
            particle.position.y += walk.sample(&mut state.rng);
            if let Dimension::Three = opts.dim {
                particle.position.z += walk.sample(&mut state.rng);
            }
        }
    }

    // Weight by the Gaussian range likelihood of each measurement. Log-space
    // with a per-particle max shift keeps well-separated clouds from
    // underflowing all at once.
    let mut log_like = vec![0.0f64; state.particles.len()];
    for m in measurements {
        let anchor = anchors.position_of(&m.anchor_id).expect("checked above");
        for (particle, ll) in state.particles.iter().zip(log_like.iter_mut()) {
            let predicted = dist_in(opts.dim, &particle.position, &anchor);
            let z = (predicted - m.distance) / m.sigma;
            *ll += -0.5 * z * z;
        }
    }
    let max_ll = log_like.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut degenerate = false;
    if !max_ll.is_finite() {
        degenerate = true;
    } else {
        let mut total = 0.0;
        for (particle, ll) in state.particles.iter_mut().zip(&log_like) {
            particle.weight *= (ll - max_ll).exp();
            total += particle.weight;
        }
        if total > 0.0 {
            for particle in &mut state.particles {
                particle.weight /= total;
            }
        } else {
            degenerate = true;
        }
    }
    if degenerate {
        let w = 1.0 / state.particles.len() as f64;
        for particle in &mut state.particles {
            particle.weight = w;
        }
    }

    // Systematic resampling when the effective sample size collapses.
    let n = state.particles.len();
    if !degenerate && state.effective_sample_size() < opts.resample_fraction * n as f64 {
        systematic_resample(state);
    }

    let mean = state.weighted_mean();
    let residual_norm = if degenerate {
        DEGENERATE_RESIDUAL
    } else if measurements.is_empty() {
        0.0
    } else {
        let a: Vec<Vec3> = measurements
            .iter()
            .map(|m| anchors.position_of(&m.anchor_id).expect("checked above"))
            .collect();
        let d: Vec<f64> = measurements.iter().map(|m| m.distance).collect();
        let s: Vec<f64> = measurements.iter().map(|m| m.sigma).collect();
        weighted_rms(opts.dim, &mean, &a, &d, &s)
    };
    let timestamp = measurements.first().map(|m| m.timestamp).unwrap_or(0.0);
    Ok(PositionEstimate {
        timestamp,
        position: mean,
        residual_norm,
        iterations: 0,
        method: SolveMethod::ParticleFilter,
    })
}

/// Low-variance systematic resampling; weights reset to uniform.
fn systematic_resample(state: &mut ParticleSet) {
    let n = state.particles.len();
    let start: f64 = state.rng.gen_range(0.0..1.0) / n as f64;
    let mut cumulative = 0.0;
    let mut source = 0usize;
    let mut resampled = Vec::with_capacity(n);
    let w = 1.0 / n as f64;
    for k in 0..n {
        let target = start + k as f64 * w;
        while source < n - 1 && cumulative + state.particles[source].weight < target {
            cumulative += state.particles[source].weight;
            source += 1;
        }
        resampled.push(Particle {
            position: state.particles[source].position,
            weight: w,
        });
    }
    state.particles = resampled;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Anchor;
    use approx::assert_abs_diff_eq;

    fn anchor_set(points: &[Vec3]) -> AnchorSet {
        AnchorSet::new(
            points
                .iter()
                .enumerate()
                .map(|(i, p)| Anchor {
                    id: format!("A{i}"),
                    position: *p,
                })
                .collect(),
        )
        .unwrap()
    }

    // ---- trilaterate_closed_form ----------------------------------------

    #[test]
    fn closed_form_recovers_known_point() {
        let anchors = [
            Vector2::new(0.0, 0.0),
            Vector2::new(4.0, 0.0),
            Vector2::new(0.0, 4.0),
        ];
        let d = [2.0f64.sqrt(), 10.0f64.sqrt(), 10.0f64.sqrt()];
        let p = trilaterate_closed_form(&anchors, &d).unwrap();
        assert_abs_diff_eq!(p.x, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(p.y, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn closed_form_point_at_anchor() {
        let anchors = [
            Vector2::new(0.0, 0.0),
            Vector2::new(4.0, 0.0),
            Vector2::new(0.0, 4.0),
        ];
        let p = trilaterate_closed_form(&anchors, &[0.0, 4.0, 4.0]).unwrap();
        assert_abs_diff_eq!(p.norm(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn closed_form_collinear_errors() {
        let anchors = [
            Vector2::new(0.0, 0.0),
            Vector2::new(1.0, 0.0),
            Vector2::new(2.0, 0.0),
        ];
        assert!(matches!(
            trilaterate_closed_form(&anchors, &[1.0, 1.0, 1.0]),
            Err(LocateError::DegenerateGeometry)
        ));
    }

    // ---- multilaterate ----------------------------------------------------

    #[test]
    fn multilaterate_3d_exact() {
        let anchors = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(5.0, 0.0, 0.0),
            Vec3::new(0.0, 5.0, 0.0),
            Vec3::new(0.0, 0.0, 3.0),
        ];
        let truth = Vec3::new(2.0, 3.0, 1.0);
        let d: Vec<f64> = anchors.iter().map(|a| (truth - a).norm()).collect();
        let s = vec![0.05; 4];
        let est = multilaterate(
            &anchors,
            &d,
            &s,
            Dimension::Three,
            Some(Vec3::zeros()),
            &SolverOptions::default(),
        )
        .unwrap();
        assert!((est.position - truth).norm() < 1e-6, "{:?}", est.position);
        assert!(est.residual_norm < 1e-6);
        assert_eq!(est.method, SolveMethod::GaussNewton);
    }

    #[test]
    fn multilaterate_needs_four_anchors_in_3d() {
        let anchors = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(5.0, 0.0, 0.0),
            Vec3::new(0.0, 5.0, 0.0),
        ];
        let err = multilaterate(
            &anchors,
            &[1.0, 1.0, 1.0],
            &[0.1, 0.1, 0.1],
            Dimension::Three,
            None,
            &SolverOptions::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains(">=4"), "{err}");
    }

    #[test]
    fn multilaterate_2d_pins_tag_height() {
        let anchors = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(8.0, 0.0, 0.0),
            Vec3::new(0.0, 8.0, 0.0),
            Vec3::new(8.0, 8.0, 0.0),
        ];
        let truth = Vector2::new(3.0, 2.0);
        let d: Vec<f64> = anchors
            .iter()
            .map(|a| (truth - planar(a)).norm())
            .collect();
        let s = vec![0.05; 4];
        let est = multilaterate(
            &anchors,
            &d,
            &s,
            Dimension::Two,
            None,
            &SolverOptions::default(),
        )
        .unwrap();
        assert!((planar(&est.position) - truth).norm() < 1e-6);
        assert_eq!(est.position.z, DEFAULT_TAG_HEIGHT);
    }

    #[test]
    fn multilaterate_gates_one_nlos_outlier() {
        let anchors = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(8.0, 0.0, 0.0),
            Vec3::new(0.0, 8.0, 0.0),
            Vec3::new(8.0, 8.0, 0.0),
            Vec3::new(4.0, 0.0, 0.0),
        ];
        let truth = Vector2::new(3.0, 3.0);
        let mut d: Vec<f64> = anchors
            .iter()
            .map(|a| (truth - planar(a)).norm())
            .collect();
        d[4] += 0.6; // positive NLOS bias on one range
        let s = vec![0.05; 5];
        let est = multilaterate(
            &anchors,
            &d,
            &s,
            Dimension::Two,
            None,
            &SolverOptions::default(),
        )
        .unwrap();
        // With the outlier gated out the remaining ranges are exact.
        assert!(
            (planar(&est.position) - truth).norm() < 1e-6,
            "gated solve should shrug off the outlier, got {:?}",
            est.position
        );
    }

    // ---- tdoa ---------------------------------------------------------

    #[test]
    fn tdoa_recovers_known_point() {
        let anchors = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(8.0, 0.0, 0.0),
            Vec3::new(0.0, 8.0, 0.0),
            Vec3::new(8.0, 8.0, 0.0),
        ];
        let truth = Vector2::new(2.0, 2.0);
        let dist: Vec<f64> = anchors
            .iter()
            .map(|a| (truth - planar(a)).norm())
            .collect();
        let diffs: Vec<f64> = (1..4).map(|i| dist[i] - dist[0]).collect();
        let est = tdoa_solve(
            &anchors,
            &diffs,
            Dimension::Two,
            None,
            &SolverOptions::default(),
        )
        .unwrap();
        assert!((planar(&est.position) - truth).norm() < 1e-6);
        assert_eq!(est.method, SolveMethod::Tdoa);
    }

    #[test]
    fn tdoa_needs_four_anchors_in_2d() {
        let anchors = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(8.0, 0.0, 0.0),
            Vec3::new(0.0, 8.0, 0.0),
        ];
        let err = tdoa_solve(
            &anchors,
            &[0.1, 0.2],
            Dimension::Two,
            None,
            &SolverOptions::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains(">=4"), "{err}");
    }

    // ---- gdop -----------------------------------------------------------

    #[test]
    fn gdop_unit_square_center_is_one() {
        let set = anchor_set(&[
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        ]);
        let g = gdop(&set, &Vec3::new(0.5, 0.5, 0.0), Dimension::Two).unwrap();
        assert_abs_diff_eq!(g, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn gdop_collinear_anchors() {
        let set = anchor_set(&[
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(2.0, 0.0, 0.0),
        ]);
        // Off the line: finite.
        let g = gdop(&set, &Vec3::new(1.0, 2.0, 0.0), Dimension::Two).unwrap();
        assert!(g.is_finite() && g > 0.0);
        // On the line: all unit vectors parallel, normal matrix singular.
        assert!(gdop(&set, &Vec3::new(5.0, 0.0, 0.0), Dimension::Two).is_err());
    }

    #[test]
    fn gdop_point_at_anchor_errors() {
        let set = anchor_set(&[
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        ]);
        assert!(matches!(
            gdop(&set, &Vec3::new(0.0, 0.0, 0.0), Dimension::Two),
            Err(LocateError::PointAtAnchor { index: 0 })
        ));
    }

    #[test]
    fn gdop_matches_dense_oracle() {
        // Independent route: build J explicitly, invert via adjugate.
        let anchors = [
            Vec3::new(0.3, 0.1, 0.0),
            Vec3::new(5.2, 0.4, 0.0),
            Vec3::new(4.8, 6.1, 0.0),
            Vec3::new(0.2, 5.7, 0.0),
        ];
        let p = Vec3::new(2.2, 3.3, 0.0);
        let set = anchor_set(&anchors);
        let g = gdop(&set, &p, Dimension::Two).unwrap();

        let mut m = [[0.0f64; 2]; 2];
        for a in &anchors {
            let dx = p.x - a.x;
            let dy = p.y - a.y;
            let n = (dx * dx + dy * dy).sqrt();
            let u = [dx / n, dy / n];
            for r in 0..2 {
                for c in 0..2 {
                    m[r][c] += u[r] * u[c];
                }
            }
        }
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let trace_inv = (m[1][1] + m[0][0]) / det;
        assert_abs_diff_eq!(g, trace_inv.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn gdop_rigid_invariance() {
        use nalgebra::Rotation3;
        let base = [
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(6.0, 0.5, 0.2),
            Vec3::new(5.5, 7.0, 2.8),
            Vec3::new(0.5, 6.5, 0.4),
            Vec3::new(3.0, 3.5, 2.9),
        ];
        let p = Vec3::new(2.0, 4.0, 1.3);
        let rot = Rotation3::from_euler_angles(0.2, 0.5, -0.9);
        let shift = Vec3::new(-4.0, 11.0, 2.0);
        let moved: Vec<Vec3> = base.iter().map(|a| rot * a + shift).collect();
        let g1 = gdop(&anchor_set(&base), &p, Dimension::Three).unwrap();
        let g2 = gdop(&anchor_set(&moved), &(rot * p + shift), Dimension::Three).unwrap();
        assert_abs_diff_eq!(g1, g2, epsilon = 1e-9);
    }

    // ---- particle filter --------------------------------------------------

    fn square_anchors() -> AnchorSet {
        anchor_set(&[
            Vec3::new(0.0, 0.0, 1.2),
            Vec3::new(8.0, 0.0, 1.2),
            Vec3::new(0.0, 8.0, 1.2),
            Vec3::new(8.0, 8.0, 1.2),
        ])
    }

    fn exact_measurements(anchors: &AnchorSet, truth: &Vec3, t: f64) -> Vec<RangeMeasurement> {
        anchors
            .anchors()
            .iter()
            .map(|a| RangeMeasurement {
                tag_id: "tag".into(),
                anchor_id: a.id.clone(),
                timestamp: t,
                distance: (planar(truth) - planar(&a.position)).norm(),
                sigma: 0.05,
            })
            .collect()
    }

    #[test]
    fn pf_concentrated_at_truth_stays_put() {
        let anchors = square_anchors();
        let truth = Vec3::new(3.0, 4.0, 1.2);
        let mut state = ParticleSet::at_point(100, truth, 7).unwrap();
        let opts = ParticleFilterOptions::default();
        let est =
            particle_filter_step(&mut state, &exact_measurements(&anchors, &truth, 0.0), &anchors, 0.0, &opts)
                .unwrap();
        assert!((est.position - truth).norm() < 1e-12);
        for p in state.particles() {
            assert_abs_diff_eq!(p.weight, 0.01, epsilon = 1e-12);
        }
    }

    #[test]
    fn pf_weights_sum_to_one() {
        let anchors = square_anchors();
        let bounds = crate::scene::Aabb::new(Vec3::new(0.0, 0.0, 0.0), Vec3::new(8.0, 8.0, 3.0));
        let opts = ParticleFilterOptions::default();
        let mut state = ParticleSet::uniform(500, &bounds, &opts, 42).unwrap();
        let truth = Vec3::new(5.0, 2.0, 1.2);
        for step in 0..5 {
            particle_filter_step(
                &mut state,
                &exact_measurements(&anchors, &truth, step as f64 * 0.1),
                &anchors,
                0.1,
                &opts,
            )
            .unwrap();
            let total: f64 = state.particles().iter().map(|p| p.weight).sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn pf_deterministic_per_seed() {
        let anchors = square_anchors();
        let bounds = crate::scene::Aabb::new(Vec3::new(0.0, 0.0, 0.0), Vec3::new(8.0, 8.0, 3.0));
        let opts = ParticleFilterOptions::default();
        let truth = Vec3::new(5.0, 2.0, 1.2);
        let run = || {
            let mut state = ParticleSet::uniform(300, &bounds, &opts, 99).unwrap();
            let mut last = None;
            for step in 0..20 {
                let est = particle_filter_step(
                    &mut state,
                    &exact_measurements(&anchors, &truth, step as f64 * 0.1),
                    &anchors,
                    0.1,
                    &opts,
                )
                .unwrap();
                last = Some(est);
            }
            last.unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.position, b.position, "same seed must be bit-identical");
        assert_eq!(a.residual_norm, b.residual_norm);
    }

    #[test]
    fn pf_underflow_resets_uniform_with_sentinel() {
        let anchors = square_anchors();
        // Particles light-years from the measurements: every likelihood is
        // exp(-huge) == 0 even after the max-shift when distances overflow the
        // exponent; force it with an absurd range and tiny sigma.
        let mut state = ParticleSet::at_point(50, Vec3::new(1.0e8, 1.0e8, 1.2), 3).unwrap();
        let measurements = vec![RangeMeasurement {
            tag_id: "tag".into(),
            anchor_id: "A0".into(),
            timestamp: 0.0,
            distance: f64::MAX.sqrt(),
            sigma: 1e-300,
            // infinite z-score -> -inf log likelihood for every particle
        }];
        let est = particle_filter_step(
            &mut state,
            &measurements,
            &anchors,
            0.0,
            &ParticleFilterOptions::default(),
        )
        .unwrap();
        assert_eq!(est.residual_norm, DEGENERATE_RESIDUAL);
        for p in state.particles() {
            assert_abs_diff_eq!(p.weight, 1.0 / 50.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn pf_unknown_anchor_errors() {
        let anchors = square_anchors();
        let mut state = ParticleSet::at_point(10, Vec3::new(1.0, 1.0, 1.2), 1).unwrap();
        let m = vec![RangeMeasurement {
            tag_id: "tag".into(),
            anchor_id: "nope".into(),
            timestamp: 0.0,
            distance: 1.0,
            sigma: 0.1,
        }];
        assert!(matches!(
            particle_filter_step(&mut state, &m, &anchors, 0.1, &ParticleFilterOptions::default()),
            Err(LocateError::UnknownAnchor(_))
        ));
    }

    // ---- shared solver properties -----------------------------------------

    #[test]
    fn solvers_equivariant_under_rigid_transform() {
        use nalgebra::Rotation3;
        let anchors = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(6.0, 0.0, 0.5),
            Vec3::new(0.0, 6.0, 2.5),
            Vec3::new(6.0, 6.0, 0.5),
            Vec3::new(3.0, 1.0, 2.9),
        ];
        let truth = Vec3::new(2.0, 3.0, 1.4);
        let d: Vec<f64> = anchors.iter().map(|a| (truth - a).norm()).collect();
        let s = vec![0.05; anchors.len()];
        let opts = SolverOptions::default();

        let rot = Rotation3::from_euler_angles(0.4, -0.2, 0.9);
        let shift = Vec3::new(7.0, -2.0, 3.0);
        let moved: Vec<Vec3> = anchors.iter().map(|a| rot * a + shift).collect();

        let base = multilaterate(&anchors, &d, &s, Dimension::Three, None, &opts).unwrap();
        let transformed = multilaterate(&moved, &d, &s, Dimension::Three, None, &opts).unwrap();
        let expected = rot * base.position + shift;
        assert!(
            (transformed.position - expected).norm() < 1e-6,
            "expected {expected:?}, got {:?}",
            transformed.position
        );
    }
}
