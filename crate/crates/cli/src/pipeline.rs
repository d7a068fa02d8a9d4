//! Session engine: consumes stream lines (from a simulator, a replay file,
//! or live TCP), solves positions, classifies EEG windows, aligns the two,
//! accumulates the affect grid, and writes the session artifacts.
//!
//! Simulate mode feeds the exact lines it emits through the same consumer
//! the replay path uses, so simulate-then-replay is byte-identical.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use affectmap_core::affectmap::{export_csv, render_heatmap, AffectGrid, SliceSpec};
use affectmap_core::eeg::{
    classify_window, detect_change_points, ChangePointSet, EegWindow, EmotionSample, LinearModel,
    Penalty,
};
use affectmap_core::locate::{
    multilaterate, particle_filter_step, tdoa_solve, trilaterate_closed_form, ParticleFilterOptions,
    ParticleSet, PositionEstimate, RangeMeasurement, SolveMethod, SolverOptions,
};
use affectmap_core::report::{
    build_summary, llm_report, template_report, DropCounters, ReportRequest, SessionSummary,
    SummaryOptions,
};
use affectmap_core::scene::{Dimension, Scene};
use affectmap_core::sim::sub_seed;
use affectmap_core::stream::{
    align_streams, IngestEvent, Line, StreamKind, StreamRegistry,
};
use affectmap_core::Vec3;
use nalgebra::Vector2;

use crate::config::{CliError, Method, PipelineConfig, ReportMode};

/// Everything a session produces, before artifact writing.
#[derive(Debug)]
pub struct SessionOutcome {
    pub positions: Vec<PositionEstimate>,
    pub emotions: Vec<EmotionSample>,
    pub grid: AffectGrid,
    pub change_points: ChangePointSet,
    pub summary: SessionSummary,
    pub counters: DropCounters,
    pub aligned_count: usize,
    /// Range packets the solver could not turn into a fix.
    pub failed_fixes: usize,
}

/// Streaming EEG windower: buffers per-channel samples and yields
/// fixed-length windows every hop, rejecting windows that trip the
/// artifact threshold.
pub struct EegWindower {
    sample_rate: f64,
    window_len: usize,
    hop: usize,
    artifact_threshold: f64,
    channels: Vec<Vec<f64>>,
    timestamps: Vec<f64>,
    pub rejected_windows: usize,
}

impl EegWindower {
    pub fn new(
        channel_count: usize,
        sample_rate: f64,
        window_seconds: f64,
        hop_seconds: f64,
        artifact_threshold: f64,
    ) -> Result<Self, CliError> {
        if channel_count == 0 || !(sample_rate > 0.0) {
            return Err(CliError::Pipeline(format!(
                "bad EEG stream: {channel_count} channels at {sample_rate} Hz"
            )));
        }
        let window_len = (window_seconds * sample_rate).round() as usize;
        let hop = (hop_seconds * sample_rate).round() as usize;
        if window_len == 0 || hop == 0 {
            return Err(CliError::Pipeline(format!(
                "window {window_seconds} s / hop {hop_seconds} s too small at {sample_rate} Hz"
            )));
        }
        Ok(Self {
            sample_rate,
            window_len,
            hop,
            artifact_threshold,
            channels: vec![Vec::new(); channel_count],
            timestamps: Vec::new(),
            rejected_windows: 0,
        })
    }

    /// Feed one multichannel sample; returns a window when one completes.
    pub fn push(&mut self, timestamp: f64, values: &[f64]) -> Option<EegWindow> {
        for (buffer, &v) in self.channels.iter_mut().zip(values) {
            buffer.push(v);
        }
        self.timestamps.push(timestamp);
        if self.timestamps.len() < self.window_len {
            return None;
        }

        let start_time = self.timestamps[0];
        let mut data = ndarray::Array2::zeros((self.channels.len(), self.window_len));
        let mut clipped = false;
        for (c, buffer) in self.channels.iter().enumerate() {
            for i in 0..self.window_len {
                let v = buffer[i];
                if v.abs() > self.artifact_threshold {
                    clipped = true;
                }
                data[(c, i)] = v;
            }
        }
        for buffer in &mut self.channels {
            buffer.drain(..self.hop);
        }
        self.timestamps.drain(..self.hop);

        if clipped {
            self.rejected_windows += 1;
            return None;
        }
        match EegWindow::new(start_time, self.sample_rate, data) {
            Ok(w) => Some(w),
            Err(err) => {
                log::warn!("skipping invalid EEG window at {start_time}: {err}");
                self.rejected_windows += 1;
                None
            }
        }
    }
}

/// Per-packet position solving with whatever method the config picked.
struct RangeSolver {
    method: Method,
    mode: Dimension,
    sigma: f64,
    opts: SolverOptions,
    anchors: Vec<Vec3>,
    anchor_ids: Vec<String>,
    warm_start: Option<Vec3>,
    particles: Option<ParticleSet>,
    pf_opts: ParticleFilterOptions,
    last_pf_time: Option<f64>,
    anchor_set: affectmap_core::scene::AnchorSet,
}

impl RangeSolver {
    fn new(scene: &Scene, config: &PipelineConfig) -> Result<Self, CliError> {
        let positioning = &config.positioning;
        let pf_opts = ParticleFilterOptions {
            process_noise: positioning.process_noise,
            dim: positioning.mode,
            ..ParticleFilterOptions::default()
        };
        let particles = if positioning.method == Method::ParticleFilter {
            Some(
                ParticleSet::uniform(
                    positioning.particles,
                    &scene.floorplan.bounds,
                    &pf_opts,
                    sub_seed(config.seed, "particle_filter"),
                )
                .map_err(|e| CliError::Pipeline(e.to_string()))?,
            )
        } else {
            None
        };
        Ok(Self {
            method: positioning.method,
            mode: positioning.mode,
            sigma: positioning.sigma,
            opts: SolverOptions::default(),
            anchors: scene.anchors.positions(),
            anchor_ids: scene.anchors.ids(),
            warm_start: None,
            particles,
            pf_opts,
            last_pf_time: None,
            anchor_set: scene.anchors.clone(),
        })
    }

    fn solve(&mut self, timestamp: f64, distances: &[f64]) -> Result<PositionEstimate, String> {
        if distances.len() != self.anchors.len() {
            return Err(format!(
                "range packet carries {} values but the scene has {} anchors",
                distances.len(),
                self.anchors.len()
            ));
        }
        let sigmas = vec![self.sigma; distances.len()];
        let mut estimate = match self.method {
            Method::GaussNewton => multilaterate(
                &self.anchors,
                distances,
                &sigmas,
                self.mode,
                self.warm_start,
                &self.opts,
            )
            .map_err(|e| e.to_string())?,
            Method::Tdoa => {
                let diffs: Vec<f64> = distances[1..].iter().map(|d| d - distances[0]).collect();
                tdoa_solve(&self.anchors, &diffs, self.mode, self.warm_start, &self.opts)
                    .map_err(|e| e.to_string())?
            }
            Method::ClosedForm => {
                if self.anchors.len() < 3 {
                    return Err("closed form needs 3 anchors".into());
                }
                let a = [
                    Vector2::new(self.anchors[0].x, self.anchors[0].y),
                    Vector2::new(self.anchors[1].x, self.anchors[1].y),
                    Vector2::new(self.anchors[2].x, self.anchors[2].y),
                ];
                let d = [distances[0], distances[1], distances[2]];
                let p = trilaterate_closed_form(&a, &d).map_err(|e| e.to_string())?;
                PositionEstimate {
                    timestamp,
                    position: Vec3::new(p.x, p.y, self.opts.tag_height),
                    residual_norm: 0.0,
                    iterations: 0,
                    method: SolveMethod::ClosedForm,
                }
            }
            Method::ParticleFilter => {
                let state = self.particles.as_mut().expect("initialized in new");
                let dt = match self.last_pf_time {
                    Some(prev) => (timestamp - prev).max(0.0),
                    None => 0.0,
                };
                self.last_pf_time = Some(timestamp);
                let measurements: Vec<RangeMeasurement> = self
                    .anchor_ids
                    .iter()
                    .zip(distances)
                    .map(|(id, &d)| RangeMeasurement {
                        tag_id: "tag".into(),
                        anchor_id: id.clone(),
                        timestamp,
                        distance: d,
                        sigma: self.sigma,
                    })
                    .collect();
                particle_filter_step(state, &measurements, &self.anchor_set, dt, &self.pf_opts)
                    .map_err(|e| e.to_string())?
            }
        };
        estimate.timestamp = timestamp;
        self.warm_start = Some(estimate.position);
        Ok(estimate)
    }
}

/// Consume decoded stream lines into positions and emotions.
pub fn consume_lines<I>(
    lines: I,
    scene: &Scene,
    model: &LinearModel,
    config: &PipelineConfig,
) -> Result<SessionOutcome, CliError>
where
    I: IntoIterator<Item = Result<String, std::io::Error>>,
{
    let mut registry = StreamRegistry::new();
    let mut solver = RangeSolver::new(scene, config)?;
    let mut windower: Option<EegWindower> = None;
    let mut positions: Vec<PositionEstimate> = Vec::new();
    let mut emotions: Vec<EmotionSample> = Vec::new();
    let mut failed_fixes = 0usize;

    for line in lines {
        let line = line.map_err(|e| CliError::Pipeline(format!("read failed: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let decoded = registry
            .decode(&line)
            .map_err(|e| CliError::Pipeline(e.to_string()))?;
        match decoded {
            Line::Header(h) => {
                if h.kind == StreamKind::Eeg {
                    windower = Some(EegWindower::new(
                        h.channel_count,
                        h.nominal_rate,
                        config.eeg.window_seconds,
                        config.eeg.hop_seconds,
                        config.eeg.artifact_threshold,
                    )?);
                }
            }
            Line::Packet(p) => {
                let kind = registry
                    .header(&p.stream_id)
                    .map(|h| h.kind)
                    .expect("registry validated the packet");
                match kind {
                    StreamKind::Range => match solver.solve(p.timestamp, &p.values) {
                        Ok(est) => positions.push(est),
                        Err(err) => {
                            failed_fixes += 1;
                            log::warn!("fix at t={} failed: {err}", p.timestamp);
                        }
                    },
                    StreamKind::Eeg => {
                        let w = windower
                            .as_mut()
                            .expect("header precedes packets per registry");
                        if let Some(window) = w.push(p.timestamp, &p.values) {
                            let sample = classify_window(model, &window)
                                .map_err(|e| CliError::Pipeline(e.to_string()))?;
                            emotions.push(sample);
                        }
                    }
                    StreamKind::Position | StreamKind::Emotion => {
                        // Pre-solved streams are accepted as-is.
                        match kind {
                            StreamKind::Position if p.values.len() == 3 => {
                                positions.push(PositionEstimate {
                                    timestamp: p.timestamp,
                                    position: Vec3::new(p.values[0], p.values[1], p.values[2]),
                                    residual_norm: 0.0,
                                    iterations: 0,
                                    method: SolveMethod::GaussNewton,
                                });
                            }
                            StreamKind::Emotion if p.values.len() == 3 => {
                                let probs = [p.values[0], p.values[1], p.values[2]];
                                let sample = EmotionSample::from_probs(p.timestamp, probs)
                                    .map_err(|e| CliError::Pipeline(e.to_string()))?;
                                emotions.push(sample);
                            }
                            _ => {
                                return Err(CliError::Pipeline(format!(
                                    "stream {} carries {} values, expected 3",
                                    p.stream_id,
                                    p.values.len()
                                )))
                            }
                        }
                    }
                }
            }
        }
    }

    let rejected_windows = windower.map(|w| w.rejected_windows).unwrap_or(0);
    finish_session(scene, config, positions, emotions, rejected_windows, failed_fixes)
}

/// Valence sits in [-1, 1] and a confident classifier produces plateaus so
/// flat that the difference-based noise estimate collapses, splitting at
/// every wiggle. Floor the assumed within-state sigma at 0.15 so only
/// state-sized mean shifts count as episodes.
const VALENCE_SIGMA_FLOOR: f64 = 0.15;

fn valence_penalty(valences: &[f64]) -> f64 {
    let floor = 2.0 * VALENCE_SIGMA_FLOOR * VALENCE_SIGMA_FLOOR * (valences.len() as f64).ln();
    affectmap_core::eeg::auto_penalty(valences).max(floor)
}

/// Post-stream stage: change points, alignment, grid, summary.
fn finish_session(
    scene: &Scene,
    config: &PipelineConfig,
    positions: Vec<PositionEstimate>,
    emotions: Vec<EmotionSample>,
    rejected_windows: usize,
    failed_fixes: usize,
) -> Result<SessionOutcome, CliError> {
    let valences: Vec<f64> = emotions.iter().map(|e| e.valence).collect();
    let change_points = if valences.len() >= 2 {
        detect_change_points(&valences, Penalty::Manual(valence_penalty(&valences)))
            .map_err(|e| CliError::Pipeline(e.to_string()))?
    } else {
        ChangePointSet {
            indices: vec![],
            penalty: 0.0,
        }
    };

    let (aligned, alignment_dropped) =
        align_streams(&positions, &emotions, config.eeg.alignment_tolerance)
            .map_err(|e| CliError::Pipeline(e.to_string()))?;

    let mut scene_grid = scene.clone();
    if let Some(cell) = config.grid.cell_size {
        scene_grid.cell_size = cell;
    }
    let spec = scene_grid
        .grid()
        .map_err(|e| CliError::Pipeline(e.to_string()))?;
    let mut grid = AffectGrid::new(spec);
    let out_of_bounds = grid.accumulate(&aligned);

    let counters = DropCounters {
        alignment_dropped,
        out_of_bounds,
        rejected_windows,
    };
    let summary = build_summary(
        &grid,
        &emotions,
        &change_points,
        counters,
        &SummaryOptions::default(),
    );
    Ok(SessionOutcome {
        aligned_count: aligned.len(),
        positions,
        emotions,
        grid,
        change_points,
        summary,
        counters,
        failed_fixes,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Produce the report text per the report config.
fn make_report(summary: &SessionSummary, config: &PipelineConfig) -> Result<String, CliError> {
    match config.report.mode {
        ReportMode::Template => Ok(template_report(summary)),
        ReportMode::Llm => {
            let mut request = ReportRequest::from_env(&config.report.endpoint, &config.report.model)
                .map_err(|e| CliError::Pipeline(e.to_string()))?;
            request.max_retries = config.report.max_retries;
            request.fallback_to_template = config.report.fallback;
            request.timeout = std::time::Duration::from_secs_f64(config.report.timeout_seconds);
            let outcome =
                llm_report(summary, &request).map_err(|e| CliError::Pipeline(e.to_string()))?;
            if outcome.fell_back {
                log::warn!("LLM report fell back to the template after {} attempts", outcome.attempts);
            }
            Ok(outcome.text)
        }
    }
}

/// Run a whole configured session and write the four artifacts. Returns the
/// in-memory outcome for callers that want to inspect it.
pub fn run_pipeline(config: &PipelineConfig) -> Result<SessionOutcome, CliError> {
    let scene = Scene::load(&config.scene).map_err(|e| match e {
        affectmap_core::scene::SceneError::Io { path, source } => CliError::Io { path, source },
        other => CliError::Config(other.to_string()),
    })?;
    let model = LinearModel::load_json(&config.eeg.model)
        .map_err(|e| CliError::Config(format!("{}: {e}", config.eeg.model.display())))?;

    let outcome = if let Some(spec) = &config.simulate {
        let lines = spec
            .emit_lines(&scene)
            .map_err(|e| CliError::Pipeline(e.to_string()))?;
        if let Some(path) = &config.outputs.ndjson {
            let mut joined = lines.join("\n");
            joined.push('\n');
            write_file(path, joined.as_bytes())?;
        }
        consume_lines(lines.into_iter().map(Ok), &scene, &model, config)?
    } else if let Some(replay) = &config.replay {
        let file = std::fs::File::open(&replay.file).map_err(|e| CliError::io(&replay.file, e))?;
        let reader = BufReader::new(file);
        consume_lines(reader.lines(), &scene, &model, config)?
    } else if let Some(live) = &config.live {
        let listener = std::net::TcpListener::bind(("0.0.0.0", live.port))
            .map_err(|e| CliError::io(format!("port {}", live.port), e))?;
        let (tx, rx) = std::sync::mpsc::sync_channel(affectmap_core::stream::INGEST_QUEUE_DEPTH);
        affectmap_core::stream::serve_ingest(listener, tx);
        let mut collected: Vec<Result<String, std::io::Error>> = Vec::new();
        let mut finished = 0usize;
        // Collect raw lines so live and replay share the same consume path.
        while finished < live.connections {
            match rx.recv() {
                Ok(IngestEvent::Line(line)) => {
                    let raw = match &line {
                        Line::Header(h) => affectmap_core::stream::encode_header(h),
                        Line::Packet(p) => affectmap_core::stream::encode_packet(p),
                    };
                    collected.push(Ok(raw));
                }
                Ok(IngestEvent::Disconnected(_)) => finished += 1,
                Err(_) => break,
            }
        }
        consume_lines(collected, &scene, &model, config)?
    } else {
        return Err(CliError::Config("no input mode configured".into()));
    };

    // Artifacts.
    let slice = match config.heatmap.slice {
        Some(layer) => SliceSpec::Layer(layer),
        None => SliceSpec::Flatten,
    };
    let image = render_heatmap(&outcome.grid, slice, config.heatmap.channel, config.heatmap.scale_px)
        .map_err(|e| CliError::Pipeline(e.to_string()))?;
    write_file(&config.outputs.heatmap, &image.to_ppm())?;
    write_file(&config.outputs.csv, export_csv(&outcome.grid).as_bytes())?;
    let summary_json = serde_json::to_string_pretty(&outcome.summary)
        .map_err(|e| CliError::Pipeline(e.to_string()))?;
    write_file(&config.outputs.summary, summary_json.as_bytes())?;
    let report_text = make_report(&outcome.summary, config)?;
    write_file(&config.outputs.report, report_text.as_bytes())?;

    log::info!(
        "session complete: {} fixes ({} failed), {} emotion samples, {} aligned, {} cells visited",
        outcome.positions.len(),
        outcome.failed_fixes,
        outcome.emotions.len(),
        outcome.aligned_count,
        outcome.grid.visited_cells().len()
    );
    Ok(outcome)
}

/// Write stream lines to a file (used by the sim subcommand).
pub fn write_lines(path: &Path, lines: &[String]) -> Result<(), CliError> {
    let mut joined = lines.join("\n");
    joined.push('\n');
    write_file(path, joined.as_bytes())
}

/// Read and registry-validate every packet in an NDJSON stream file.
pub fn consume_lines_to_packets(
    path: &Path,
) -> Result<Vec<(StreamKind, affectmap_core::stream::Packet)>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut registry = StreamRegistry::new();
    let mut packets = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        match registry
            .decode(line)
            .map_err(|e| CliError::Pipeline(format!("{}: {e}", path.display())))?
        {
            Line::Header(_) => {}
            Line::Packet(p) => {
                let kind = registry
                    .header(&p.stream_id)
                    .map(|h| h.kind)
                    .expect("registry validated the packet");
                packets.push((kind, p));
            }
        }
    }
    Ok(packets)
}

/// Interpret a position-kind packet (`[x, y, z]`).
pub fn packet_to_position(
    (kind, p): (StreamKind, affectmap_core::stream::Packet),
) -> Option<PositionEstimate> {
    if kind != StreamKind::Position || p.values.len() != 3 {
        return None;
    }
    Some(PositionEstimate {
        timestamp: p.timestamp,
        position: Vec3::new(p.values[0], p.values[1], p.values[2]),
        residual_norm: 0.0,
        iterations: 0,
        method: SolveMethod::GaussNewton,
    })
}

/// Interpret an emotion-kind packet (`[p_neg, p_neu, p_pos]`).
pub fn packet_to_emotion(
    (kind, p): (StreamKind, affectmap_core::stream::Packet),
) -> Option<EmotionSample> {
    if kind != StreamKind::Emotion || p.values.len() != 3 {
        return None;
    }
    EmotionSample::from_probs(p.timestamp, [p.values[0], p.values[1], p.values[2]]).ok()
}

/// Solve every range packet of a stream file into position packets
/// (stream id "pos"), preceded by a position header.
pub fn locate_file(
    input: &Path,
    scene: &Scene,
    method: Method,
    mode: Dimension,
    sigma: f64,
    seed: u64,
) -> Result<Vec<String>, CliError> {
    let config_like = crate::config::PositioningConfig {
        method,
        mode,
        sigma,
        ..Default::default()
    };
    let fake_config = PipelineConfig {
        scene: input.to_path_buf(),
        simulate: None,
        replay: None,
        live: None,
        positioning: config_like,
        grid: Default::default(),
        eeg: crate::config::EegConfig {
            model: Default::default(),
            window_seconds: 1.0,
            hop_seconds: 0.5,
            artifact_threshold: 100.0,
            alignment_tolerance: 0.25,
        },
        outputs: crate::config::OutputsConfig {
            heatmap: Default::default(),
            csv: Default::default(),
            summary: Default::default(),
            report: Default::default(),
            ndjson: None,
        },
        heatmap: Default::default(),
        report: Default::default(),
        seed,
    };
    let mut solver = RangeSolver::new(scene, &fake_config)?;

    let mut out_packets = Vec::new();
    for (kind, packet) in consume_lines_to_packets(input)? {
        if kind != StreamKind::Range {
            continue;
        }
        match solver.solve(packet.timestamp, &packet.values) {
            Ok(est) => out_packets.push(affectmap_core::stream::Packet {
                stream_id: "pos".into(),
                timestamp: est.timestamp,
                values: vec![est.position.x, est.position.y, est.position.z],
            }),
            Err(err) => log::warn!("fix at t={} failed: {err}", packet.timestamp),
        }
    }
    let mut lines = vec![affectmap_core::stream::encode_header(
        &affectmap_core::stream::StreamHeader {
            stream_id: "pos".into(),
            kind: StreamKind::Position,
            channel_count: 3,
            nominal_rate: 0.0,
        },
    )];
    lines.extend(out_packets.iter().map(affectmap_core::stream::encode_packet));
    Ok(lines)
}

/// Classify every EEG window of a stream file into emotion packets
/// (stream id "emo"), preceded by an emotion header.
pub fn classify_file(
    input: &Path,
    model: &LinearModel,
    window_seconds: f64,
    hop_seconds: f64,
    artifact_threshold: f64,
) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(input).map_err(|e| CliError::io(input, e))?;
    let mut registry = StreamRegistry::new();
    let mut windower: Option<EegWindower> = None;
    let mut emotions = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        match registry
            .decode(line)
            .map_err(|e| CliError::Pipeline(format!("{}: {e}", input.display())))?
        {
            Line::Header(h) if h.kind == StreamKind::Eeg => {
                windower = Some(EegWindower::new(
                    h.channel_count,
                    h.nominal_rate,
                    window_seconds,
                    hop_seconds,
                    artifact_threshold,
                )?);
            }
            Line::Header(_) => {}
            Line::Packet(p) => {
                let kind = registry
                    .header(&p.stream_id)
                    .map(|h| h.kind)
                    .expect("registry validated the packet");
                if kind != StreamKind::Eeg {
                    continue;
                }
                let w = windower.as_mut().expect("header precedes packets");
                if let Some(window) = w.push(p.timestamp, &p.values) {
                    let sample = classify_window(model, &window)
                        .map_err(|e| CliError::Pipeline(e.to_string()))?;
                    emotions.push(sample);
                }
            }
        }
    }
    let mut lines = vec![affectmap_core::stream::encode_header(
        &affectmap_core::stream::StreamHeader {
            stream_id: "emo".into(),
            kind: StreamKind::Emotion,
            channel_count: 3,
            nominal_rate: 0.0,
        },
    )];
    lines.extend(emotions.iter().map(|e| {
        affectmap_core::stream::encode_packet(&affectmap_core::stream::Packet {
            stream_id: "emo".into(),
            timestamp: e.timestamp,
            values: e.probs.to_vec(),
        })
    }));
    Ok(lines)
}

/// Send stream lines to a TCP endpoint (live feed).
pub fn send_lines_tcp(addr: &str, lines: &[String]) -> Result<(), CliError> {
    let mut conn = std::net::TcpStream::connect(addr)
        .map_err(|e| CliError::io(format!("tcp {addr}"), e))?;
    for line in lines {
        conn.write_all(line.as_bytes())
            .and_then(|_| conn.write_all(b"\n"))
            .map_err(|e| CliError::io(format!("tcp {addr}"), e))?;
    }
    Ok(())
}
