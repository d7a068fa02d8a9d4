//! Deterministic ground-truth generation: walker trajectories, noisy UWB
//! ranging, and synthetic multichannel EEG driven by a scheduled emotion
//! state. Everything is seeded, so sessions replay bit-identically.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::eeg::{EegWindow, EmotionClass};
use crate::locate::RangeMeasurement;
use crate::scene::{AnchorSet, FloorPlan, Scene};
use crate::stream::{encode_header, encode_packet, Packet, StreamHeader, StreamKind};
use crate::Vec3;

/// Tag id used for simulated range measurements.
pub const SIM_TAG_ID: &str = "tag";

/// Stream ids emitted by the session generator.
pub const RANGE_STREAM_ID: &str = "uwb";
pub const EEG_STREAM_ID: &str = "eeg";

/// Gaussian noise added to every synthetic EEG sample.
pub const EEG_NOISE_STD: f64 = 0.2;

/// Band carrier frequencies in Hz (theta, alpha, beta, gamma).
pub const CARRIER_HZ: [f64; 4] = [6.0, 10.0, 20.0, 40.0];

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("waypoint {index} outside floor bounds")]
    WaypointOutsideBounds { index: usize },
    #[error("segment {segment} (waypoint {segment} to {next}) intersects obstacle {obstacle}",
            next = segment + 1)]
    SegmentHitsObstacle { segment: usize, obstacle: usize },
    #[error("schedule must be contiguous: segment {index} starts at {start} but previous ends at {expected}")]
    ScheduleGap {
        index: usize,
        start: f64,
        expected: f64,
    },
    #[error("schedule segment {index} has start {start} >= end {end}")]
    BadSegment { index: usize, start: f64, end: f64 },
    #[error("schedule is empty")]
    EmptySchedule,
}

/// Sub-seed derivation: SHA-256 over the little-endian session seed followed
/// by the component name, truncated to the first 8 bytes (little-endian).
pub fn sub_seed(session_seed: u64, component: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(session_seed.to_le_bytes());
    hasher.update(component.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest >= 8 bytes"))
}

// ---------------------------------------------------------------------------
// Emotion schedule
// ---------------------------------------------------------------------------

/// One stimulus interval `[start, end)` in a fixed emotional state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSegment {
    pub start: f64,
    pub end: f64,
    pub state: EmotionClass,
}

/// Contiguous, non-overlapping emotion timeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ScheduleSegment>", into = "Vec<ScheduleSegment>")]
pub struct EmotionSchedule {
    segments: Vec<ScheduleSegment>,
}

impl TryFrom<Vec<ScheduleSegment>> for EmotionSchedule {
    type Error = SimError;

    fn try_from(segments: Vec<ScheduleSegment>) -> Result<Self, SimError> {
        EmotionSchedule::new(segments)
    }
}

impl From<EmotionSchedule> for Vec<ScheduleSegment> {
    fn from(s: EmotionSchedule) -> Self {
        s.segments
    }
}

impl EmotionSchedule {
    pub fn new(segments: Vec<ScheduleSegment>) -> Result<Self, SimError> {
        if segments.is_empty() {
            return Err(SimError::EmptySchedule);
        }
        for (index, seg) in segments.iter().enumerate() {
            if !(seg.start < seg.end) {
                return Err(SimError::BadSegment {
                    index,
                    start: seg.start,
                    end: seg.end,
                });
            }
            if index > 0 && seg.start != segments[index - 1].end {
                return Err(SimError::ScheduleGap {
                    index,
                    start: seg.start,
                    expected: segments[index - 1].end,
                });
            }
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[ScheduleSegment] {
        &self.segments
    }

    pub fn start(&self) -> f64 {
        self.segments[0].start
    }

    pub fn end(&self) -> f64 {
        self.segments.last().expect("non-empty").end
    }

    pub fn duration(&self) -> f64 {
        self.end() - self.start()
    }

    /// State at time `t`; the final segment is closed on the right.
    pub fn state_at(&self, t: f64) -> Option<EmotionClass> {
        for seg in &self.segments {
            if t >= seg.start && t < seg.end {
                return Some(seg.state);
            }
        }
        (t == self.end()).then(|| self.segments.last().expect("non-empty").state)
    }
}

// ---------------------------------------------------------------------------
// Trajectory
// ---------------------------------------------------------------------------

/// Timestamped positions along a walk.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<(f64, Vec3)>,
}

impl Trajectory {
    /// Piecewise-linear arc length of the sampled path.
    pub fn arc_length(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| (w[1].1 - w[0].1).norm())
            .sum()
    }
}

/// Constant-speed piecewise-linear path through `waypoints`.
struct WaypointPath {
    waypoints: Vec<Vec3>,
    cumulative: Vec<f64>,
    speed: f64,
}

impl WaypointPath {
    fn new(plan: &FloorPlan, waypoints: &[Vec3], speed: f64) -> Result<Self, SimError> {
        if waypoints.is_empty() {
            return Err(SimError::InvalidParam("no waypoints".into()));
        }
        if !(speed > 0.0) {
            return Err(SimError::InvalidParam(format!("speed {speed} must be > 0")));
        }
        for (index, w) in waypoints.iter().enumerate() {
            if !plan.bounds.contains(w) {
                return Err(SimError::WaypointOutsideBounds { index });
            }
        }
        for (segment, pair) in waypoints.windows(2).enumerate() {
            for (obstacle, bx) in plan.obstacles.iter().enumerate() {
                if bx.intersects_segment(&pair[0], &pair[1]) {
                    return Err(SimError::SegmentHitsObstacle { segment, obstacle });
                }
            }
        }
        let mut cumulative = vec![0.0];
        for pair in waypoints.windows(2) {
            cumulative.push(cumulative.last().unwrap() + (pair[1] - pair[0]).norm());
        }
        Ok(Self {
            waypoints: waypoints.to_vec(),
            cumulative,
            speed,
        })
    }

    fn travel_time(&self) -> f64 {
        self.cumulative.last().unwrap() / self.speed
    }

    /// Position at time `t`; the final waypoint holds after the path ends.
    fn position_at(&self, t: f64) -> Vec3 {
        let distance = (t.max(0.0) * self.speed).min(*self.cumulative.last().unwrap());
        let mut segment = 0;
        while segment + 1 < self.cumulative.len() - 1 && self.cumulative[segment + 1] < distance {
            segment += 1;
        }
        let seg_len = self.cumulative[segment + 1] - self.cumulative[segment];
        if seg_len <= 0.0 {
            return self.waypoints[segment];
        }
        let frac = (distance - self.cumulative[segment]) / seg_len;
        self.waypoints[segment] + (self.waypoints[segment + 1] - self.waypoints[segment]) * frac
    }
}

/// Sample a constant-speed walk through `waypoints` every `dt` seconds.
/// The final waypoint is held at the last sample when the travel time is
/// not a multiple of `dt`.
pub fn simulate_trajectory(
    plan: &FloorPlan,
    waypoints: &[Vec3],
    speed: f64,
    dt: f64,
) -> Result<Trajectory, SimError> {
    if !(dt > 0.0) {
        return Err(SimError::InvalidParam(format!("dt {dt} must be > 0")));
    }
    let path = WaypointPath::new(plan, waypoints, speed)?;
    let total = path.travel_time();
    // ceil with a guard against float slop on exact multiples
    let steps = ((total / dt) - 1e-9).ceil().max(0.0) as usize;
    let samples = (0..=steps)
        .map(|k| {
            let t = k as f64 * dt;
            (t, path.position_at(t))
        })
        .collect();
    Ok(Trajectory { samples })
}

// ---------------------------------------------------------------------------
// Ranging
// ---------------------------------------------------------------------------

/// Noisy tag-to-anchor ranges along a trajectory: true distance plus
/// Gaussian noise plus (with probability `p_nlos`) a positive exponential
/// bias, clamped at zero. Output order is sample-major, anchor-minor.
pub fn simulate_ranging(
    trajectory: &Trajectory,
    anchors: &AnchorSet,
    sigma: f64,
    p_nlos: f64,
    nlos_mean: f64,
    seed: u64,
) -> Result<Vec<RangeMeasurement>, SimError> {
    if !(sigma > 0.0) {
        return Err(SimError::InvalidParam(format!("sigma {sigma} must be > 0")));
    }
    if !(0.0..=1.0).contains(&p_nlos) {
        return Err(SimError::InvalidParam(format!(
            "p_nlos {p_nlos} must be in [0, 1]"
        )));
    }
    if p_nlos > 0.0 && !(nlos_mean > 0.0) {
        return Err(SimError::InvalidParam(format!(
            "nlos_mean {nlos_mean} must be > 0 when p_nlos > 0"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).expect("sigma > 0");
    let nlos = (p_nlos > 0.0).then(|| Exp::new(1.0 / nlos_mean).expect("nlos_mean > 0"));

    let mut out = Vec::with_capacity(trajectory.samples.len() * anchors.len());
    for &(t, position) in &trajectory.samples {
        for anchor in anchors.anchors() {
            let truth = (position - anchor.position).norm();
            let mut distance = truth + noise.sample(&mut rng);
            if let Some(exp) = &nlos {
                if rng.gen_bool(p_nlos) {
                    distance += exp.sample(&mut rng);
                }
            }
            out.push(RangeMeasurement {
                tag_id: SIM_TAG_ID.into(),
                anchor_id: anchor.id.clone(),
                timestamp: t,
                distance: distance.max(0.0),
                sigma,
            });
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Synthetic EEG
// ---------------------------------------------------------------------------

/// Per-state band carrier amplitudes (theta, alpha, beta, gamma).
pub fn state_amplitudes(state: EmotionClass) -> [f64; 4] {
    match state {
        EmotionClass::Negative => [2.0, 1.0, 0.5, 0.5],
        EmotionClass::Neutral => [1.0, 1.0, 1.0, 1.0],
        EmotionClass::Positive => [0.5, 1.0, 2.0, 1.5],
    }
}

/// Synthesize a continuous EEG stream across the schedule. Each channel sums
/// the four band carriers with state-dependent amplitudes and per-channel
/// phases derived from the seed, plus Gaussian noise. The state switches
/// exactly at segment boundaries.
pub fn simulate_eeg(
    schedule: &EmotionSchedule,
    sample_rate: f64,
    channels: usize,
    seed: u64,
) -> Result<EegWindow, SimError> {
    if !(sample_rate >= 100.0) {
        return Err(SimError::InvalidParam(format!(
            "sample_rate {sample_rate} must be >= 100"
        )));
    }
    if channels == 0 {
        return Err(SimError::InvalidParam("channels must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phases: Vec<[f64; 4]> = (0..channels)
        .map(|_| {
            let mut p = [0.0; 4];
            for slot in p.iter_mut() {
                *slot = rng.gen_range(0.0..std::f64::consts::TAU);
            }
            p
        })
        .collect();
    let noise = Normal::new(0.0, EEG_NOISE_STD).expect("positive std");

    let samples = (schedule.duration() * sample_rate).round() as usize;
    let start = schedule.start();
    let mut data = Array2::zeros((channels, samples));
    for i in 0..samples {
        let t = start + i as f64 / sample_rate;
        let state = schedule.state_at(t).expect("t within schedule");
        let amplitudes = state_amplitudes(state);
        for c in 0..channels {
            let mut x = 0.0;
            for b in 0..4 {
                x += amplitudes[b]
                    * (std::f64::consts::TAU * CARRIER_HZ[b] * t + phases[c][b]).sin();
            }
            data[(c, i)] = x + noise.sample(&mut rng);
        }
    }
    EegWindow::new(start, sample_rate, data)
        .map_err(|e| SimError::InvalidParam(format!("generated window invalid: {e}")))
}

// ---------------------------------------------------------------------------
// Whole-session NDJSON emission
// ---------------------------------------------------------------------------

/// Everything needed to synthesize one session's stream lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSpec {
    pub waypoints: Vec<Vec3>,
    /// Walking speed, m/s.
    pub speed: f64,
    /// Range packet rate, Hz.
    pub range_rate: f64,
    /// Range noise sigma, meters.
    pub sigma: f64,
    #[serde(default)]
    pub p_nlos: f64,
    #[serde(default = "default_nlos_mean")]
    pub nlos_mean: f64,
    pub schedule: EmotionSchedule,
    pub eeg_channels: usize,
    /// EEG sample rate, Hz.
    pub eeg_rate: f64,
    pub seed: u64,
}

fn default_nlos_mean() -> f64 {
    0.5
}

impl SessionSpec {
    /// The walker trajectory resampled over the whole schedule at the range
    /// rate, holding the final waypoint once the path ends. This is the
    /// ground truth that range packets are generated from.
    pub fn ground_truth_trajectory(&self, scene: &Scene) -> Result<Trajectory, SimError> {
        if !(self.range_rate > 0.0) {
            return Err(SimError::InvalidParam(format!(
                "range_rate {} must be > 0",
                self.range_rate
            )));
        }
        let path = WaypointPath::new(&scene.floorplan, &self.waypoints, self.speed)?;
        let dt = 1.0 / self.range_rate;
        let start = self.schedule.start();
        let steps = ((self.schedule.duration() / dt) - 1e-9).ceil().max(0.0) as usize;
        let samples = (0..=steps)
            .map(|k| {
                let t = start + k as f64 * dt;
                (t, path.position_at(t - start))
            })
            .collect();
        Ok(Trajectory { samples })
    }

    /// Emit the complete session as NDJSON lines: one header per stream,
    /// then packets interleaved by timestamp. Live and replay consumers see
    /// identical bytes.
    pub fn emit_lines(&self, scene: &Scene) -> Result<Vec<String>, SimError> {
        let trajectory = self.ground_truth_trajectory(scene)?;
        let ranges = simulate_ranging(
            &trajectory,
            &scene.anchors,
            self.sigma,
            self.p_nlos,
            self.nlos_mean,
            sub_seed(self.seed, "ranging"),
        )?;
        let eeg = simulate_eeg(
            &self.schedule,
            self.eeg_rate,
            self.eeg_channels,
            sub_seed(self.seed, "eeg"),
        )?;

        let n_anchors = scene.anchors.len();
        // (timestamp, stream rank, packet); rank keeps ties deterministic.
        let mut packets: Vec<(f64, u8, Packet)> = Vec::new();
        for (row, &(t, _)) in trajectory.samples.iter().enumerate() {
            let values = ranges[row * n_anchors..(row + 1) * n_anchors]
                .iter()
                .map(|m| m.distance)
                .collect();
            packets.push((
                t,
                0,
                Packet {
                    stream_id: RANGE_STREAM_ID.into(),
                    timestamp: t,
                    values,
                },
            ));
        }
        for i in 0..eeg.samples() {
            let t = eeg.start_time + i as f64 / eeg.sample_rate;
            let values = (0..eeg.channels()).map(|c| eeg.data[(c, i)]).collect();
            packets.push((
                t,
                1,
                Packet {
                    stream_id: EEG_STREAM_ID.into(),
                    timestamp: t,
                    values,
                },
            ));
        }
        packets.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .expect("finite timestamps")
                .then(a.1.cmp(&b.1))
        });

        let mut lines = Vec::with_capacity(packets.len() + 2);
        lines.push(encode_header(&StreamHeader {
            stream_id: RANGE_STREAM_ID.into(),
            kind: StreamKind::Range,
            channel_count: n_anchors,
            nominal_rate: self.range_rate,
        }));
        lines.push(encode_header(&StreamHeader {
            stream_id: EEG_STREAM_ID.into(),
            kind: StreamKind::Eeg,
            channel_count: self.eeg_channels,
            nominal_rate: self.eeg_rate,
        }));
        lines.extend(packets.into_iter().map(|(_, _, p)| encode_packet(&p)));
        Ok(lines)
    }
}

/// Labeled band features synthesized end to end: one long segment per class
/// through [`simulate_eeg`], sliced into non-overlapping one-second windows
/// and run through the band-feature extractor. Returned in class order
/// (negative, neutral, positive), `windows_per_class` rows each.
pub fn synthetic_feature_set(
    channels: usize,
    windows_per_class: usize,
    sample_rate: f64,
    seed: u64,
) -> Result<(Vec<crate::eeg::FeatureVector>, Vec<EmotionClass>), SimError> {
    if windows_per_class == 0 {
        return Err(SimError::InvalidParam("windows_per_class must be >= 1".into()));
    }
    let window_len = sample_rate.round() as usize;
    let mut features = Vec::with_capacity(3 * windows_per_class);
    let mut labels = Vec::with_capacity(3 * windows_per_class);
    for class in EmotionClass::ALL {
        let duration = windows_per_class as f64;
        let schedule = EmotionSchedule::new(vec![ScheduleSegment {
            start: 0.0,
            end: duration,
            state: class,
        }])?;
        let eeg = simulate_eeg(
            &schedule,
            sample_rate,
            channels,
            sub_seed(seed, class.name()),
        )?;
        for w in 0..windows_per_class {
            let from = w * window_len;
            let to = from + window_len;
            if to > eeg.samples() {
                break;
            }
            let window = EegWindow::new(
                w as f64,
                sample_rate,
                eeg.data.slice(ndarray::s![.., from..to]).to_owned(),
            )
            .map_err(|e| SimError::InvalidParam(e.to_string()))?;
            let fv = crate::eeg::band_features(&window)
                .map_err(|e| SimError::InvalidParam(e.to_string()))?;
            features.push(fv);
            labels.push(class);
        }
    }
    Ok((features, labels))
}
