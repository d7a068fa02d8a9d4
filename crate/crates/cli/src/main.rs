//! affectmap: simulate, ingest, localize, classify, map, and report indoor
//! user-sentiment sessions.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use affectmap_cli::config::{CliError, Method, Overrides, PipelineConfig};
use affectmap_cli::pipeline::{
    self, consume_lines_to_packets, run_pipeline, send_lines_tcp, write_lines,
};
use affectmap_cli::train::{read_feature_csv, write_feature_csv};
use affectmap_core::affectmap::{export_csv, render_heatmap, AffectGrid, HeatmapChannel, SliceSpec};
use affectmap_core::eeg::{
    detect_change_points, evaluate_classifier, train_classifier, ChangePointSet, LinearModel,
    Penalty, TrainOptions,
};
use affectmap_core::report::{
    build_summary, llm_report, template_report, DropCounters, ReportRequest, SessionSummary,
    SummaryOptions,
};
use affectmap_core::scene::Scene;
use affectmap_core::sim::{synthetic_feature_set, SessionSpec};
use affectmap_core::stream::align_streams;

#[derive(Parser)]
#[command(
    name = "affectmap",
    version,
    about = "Indoor user-sentiment pipeline: UWB localization + EEG emotion mapping"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a session and emit its stream lines to a file or TCP.
    Sim(SimArgs),
    /// Solve positions from a range-stream NDJSON file.
    Locate(LocateArgs),
    /// Train the emotion classifier from a feature CSV or synthetic data.
    Train(TrainArgs),
    /// Classify EEG stream windows into emotion samples.
    Classify(ClassifyArgs),
    /// Accumulate positions + emotions into the grid and render outputs.
    Map(MapArgs),
    /// Render a report from a session summary JSON.
    Report(ReportArgs),
    /// Run the whole pipeline from a config file.
    Run(RunArgs),
}

#[derive(Args)]
struct SimArgs {
    /// Scene JSON (bounds, anchors, cell size).
    #[arg(long)]
    scene: PathBuf,
    /// Session spec JSON (waypoints, schedule, rates, seed).
    #[arg(long)]
    session: PathBuf,
    /// Output NDJSON path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Stream to a TCP endpoint (host:port) instead of or besides a file.
    #[arg(long)]
    tcp: Option<String>,
    /// Override the session seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct LocateArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Input NDJSON stream file (range packets).
    #[arg(long)]
    input: PathBuf,
    /// Output NDJSON of position packets.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "gauss_newton")]
    method: Method,
    /// Range noise scale in meters.
    #[arg(long, default_value_t = 0.05)]
    sigma: f64,
    /// Solve in "2d" or "3d".
    #[arg(long, default_value = "2d")]
    mode: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Labeled feature CSV (see README for the schema).
    #[arg(long, conflicts_with = "synthetic")]
    features: Option<PathBuf>,
    /// Generate a synthetic training set instead of reading a CSV.
    #[arg(long)]
    synthetic: bool,
    #[arg(long, default_value_t = 8)]
    channels: usize,
    #[arg(long, default_value_t = 100)]
    windows_per_class: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// L2 regularization weight.
    #[arg(long, default_value_t = 0.05)]
    l2: f64,
    /// Where to write the model JSON.
    #[arg(long)]
    out: PathBuf,
    /// Also write the training set as CSV.
    #[arg(long)]
    emit_features: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    model: PathBuf,
    /// Input NDJSON stream file (EEG packets).
    #[arg(long)]
    input: PathBuf,
    /// Output NDJSON of emotion packets.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    window_seconds: f64,
    #[arg(long, default_value_t = 0.5)]
    hop_seconds: f64,
    #[arg(long, default_value_t = 100.0)]
    artifact_threshold: f64,
}

#[derive(Args)]
struct MapArgs {
    #[arg(long)]
    scene: PathBuf,
    /// NDJSON of position packets.
    #[arg(long)]
    positions: PathBuf,
    /// NDJSON of emotion packets.
    #[arg(long)]
    emotions: PathBuf,
    #[arg(long)]
    heatmap: PathBuf,
    #[arg(long)]
    csv: PathBuf,
    /// Optional summary JSON output.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Render one z-layer instead of flattening.
    #[arg(long)]
    slice: Option<usize>,
    /// "valence" or "occupancy".
    #[arg(long, default_value = "valence")]
    channel: String,
    /// Pixels per grid cell.
    #[arg(long, default_value_t = 16)]
    scale: usize,
    /// Override the scene's grid cell size.
    #[arg(long)]
    cell_size: Option<f64>,
    /// Alignment tolerance in seconds.
    #[arg(long, default_value_t = 0.25)]
    tolerance: f64,
}

#[derive(Args)]
struct ReportArgs {
    /// Session summary JSON (as written by `run` or `map --summary`).
    #[arg(long)]
    summary: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Call a chat-completion endpoint instead of the offline template.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, default_value = "gpt-4o-mini")]
    model: String,
    #[arg(long, default_value_t = 3)]
    max_retries: u32,
    /// Fall back to the template when the endpoint stays unavailable.
    #[arg(long)]
    fallback: bool,
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline config JSON.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    method: Option<Method>,
    /// Replace the configured input with a replay file.
    #[arg(long)]
    replay: Option<PathBuf>,
    #[arg(long)]
    heatmap: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Report text output path.
    #[arg(long)]
    report_out: Option<PathBuf>,
    #[arg(long)]
    cell_size: Option<f64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let kind = match err {
                CliError::Config(_) => "config",
                CliError::Io { .. } => "io",
                CliError::Pipeline(_) => "pipeline",
            };
            eprintln!("error[{kind}]: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Sim(args) => cmd_sim(args),
        Command::Locate(args) => cmd_locate(args),
        Command::Train(args) => cmd_train(args),
        Command::Classify(args) => cmd_classify(args),
        Command::Map(args) => cmd_map(args),
        Command::Report(args) => cmd_report(args),
        Command::Run(args) => cmd_run(args),
    }
}

fn load_scene(path: &PathBuf) -> Result<Scene, CliError> {
    Scene::load(path).map_err(|e| match e {
        affectmap_core::scene::SceneError::Io { path, source } => CliError::Io { path, source },
        other => CliError::Config(other.to_string()),
    })
}

fn cmd_sim(args: SimArgs) -> Result<(), CliError> {
    let scene = load_scene(&args.scene)?;
    let text =
        std::fs::read_to_string(&args.session).map_err(|e| CliError::io(&args.session, e))?;
    let mut spec: SessionSpec = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.session.display())))?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let lines = spec
        .emit_lines(&scene)
        .map_err(|e| CliError::Pipeline(e.to_string()))?;
    if args.out.is_none() && args.tcp.is_none() {
        return Err(CliError::Config("sim needs --out and/or --tcp".into()));
    }
    if let Some(out) = &args.out {
        write_lines(out, &lines)?;
        log::info!("wrote {} stream lines to {}", lines.len(), out.display());
    }
    if let Some(addr) = &args.tcp {
        send_lines_tcp(addr, &lines)?;
        log::info!("streamed {} lines to {addr}", lines.len());
    }
    Ok(())
}

fn cmd_locate(args: LocateArgs) -> Result<(), CliError> {
    let scene = load_scene(&args.scene)?;
    let dimension = match args.mode.as_str() {
        "2d" => affectmap_core::scene::Dimension::Two,
        "3d" => affectmap_core::scene::Dimension::Three,
        other => {
            return Err(CliError::Config(format!(
                "mode must be 2d or 3d, got {other}"
            )))
        }
    };
    let lines = pipeline::locate_file(
        &args.input,
        &scene,
        args.method,
        dimension,
        args.sigma,
        args.seed,
    )?;
    write_lines(&args.out, &lines)?;
    log::info!(
        "wrote {} position lines to {}",
        lines.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let (features, labels) = if args.synthetic {
        let set = synthetic_feature_set(
            args.channels,
            args.windows_per_class,
            affectmap_core::eeg::DEFAULT_SAMPLE_RATE,
            args.seed,
        )
            .map_err(|e| CliError::Pipeline(e.to_string()))?;
        log::info!(
            "synthesized {} windows ({} per class, {} channels)",
            set.0.len(),
            args.windows_per_class,
            args.channels
        );
        set
    } else {
        let path = args.features.ok_or_else(|| {
            CliError::Config("train needs --features <csv> or --synthetic".into())
        })?;
        read_feature_csv(&path)?
    };
    if let Some(csv_path) = &args.emit_features {
        write_feature_csv(csv_path, &features, &labels)?;
        log::info!("wrote training CSV to {}", csv_path.display());
    }
    let opts = TrainOptions {
        l2: args.l2,
        ..TrainOptions::default()
    };
    let (model, train_report) =
        train_classifier(&features, &labels, &opts).map_err(|e| CliError::Pipeline(e.to_string()))?;
    let eval = evaluate_classifier(&model, &features, &labels)
        .map_err(|e| CliError::Pipeline(e.to_string()))?;
    model
        .save_json(&args.out)
        .map_err(|e| CliError::Pipeline(e.to_string()))?;
    log::info!(
        "trained in {} iterations (loss {:.4}); training accuracy {:.1}%; model at {}",
        train_report.iterations,
        train_report.final_loss,
        eval.accuracy * 100.0,
        args.out.display()
    );
    Ok(())
}

fn cmd_classify(args: ClassifyArgs) -> Result<(), CliError> {
    let model = LinearModel::load_json(&args.model)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.model.display())))?;
    let lines = pipeline::classify_file(
        &args.input,
        &model,
        args.window_seconds,
        args.hop_seconds,
        args.artifact_threshold,
    )?;
    write_lines(&args.out, &lines)?;
    log::info!(
        "wrote {} emotion lines to {}",
        lines.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_map(args: MapArgs) -> Result<(), CliError> {
    let mut scene = load_scene(&args.scene)?;
    if let Some(cell) = args.cell_size {
        scene.cell_size = cell;
    }
    let positions: Vec<_> = consume_lines_to_packets(&args.positions)?
        .into_iter()
        .filter_map(pipeline::packet_to_position)
        .collect();
    let emotions: Vec<_> = consume_lines_to_packets(&args.emotions)?
        .into_iter()
        .filter_map(pipeline::packet_to_emotion)
        .collect();
    let (aligned, alignment_dropped) = align_streams(&positions, &emotions, args.tolerance)
        .map_err(|e| CliError::Pipeline(e.to_string()))?;

    let spec = scene.grid().map_err(|e| CliError::Config(e.to_string()))?;
    let mut grid = AffectGrid::new(spec);
    let out_of_bounds = grid.accumulate(&aligned);

    let channel = match args.channel.as_str() {
        "valence" => HeatmapChannel::Valence,
        "occupancy" => HeatmapChannel::Occupancy,
        other => {
            return Err(CliError::Config(format!(
                "channel must be valence or occupancy, got {other}"
            )))
        }
    };
    let slice = match args.slice {
        Some(layer) => SliceSpec::Layer(layer),
        None => SliceSpec::Flatten,
    };
    let image = render_heatmap(&grid, slice, channel, args.scale)
        .map_err(|e| CliError::Pipeline(e.to_string()))?;
    std::fs::write(&args.heatmap, image.to_ppm()).map_err(|e| CliError::io(&args.heatmap, e))?;
    std::fs::write(&args.csv, export_csv(&grid)).map_err(|e| CliError::io(&args.csv, e))?;

    if let Some(summary_path) = &args.summary {
        let valences: Vec<f64> = emotions.iter().map(|e| e.valence).collect();
        let change_points = if valences.len() >= 2 {
            detect_change_points(&valences, Penalty::Auto)
                .map_err(|e| CliError::Pipeline(e.to_string()))?
        } else {
            ChangePointSet {
                indices: vec![],
                penalty: 0.0,
            }
        };
        let summary = build_summary(
            &grid,
            &emotions,
            &change_points,
            DropCounters {
                alignment_dropped,
                out_of_bounds,
                rejected_windows: 0,
            },
            &SummaryOptions::default(),
        );
        let json =
            serde_json::to_string_pretty(&summary).map_err(|e| CliError::Pipeline(e.to_string()))?;
        std::fs::write(summary_path, json).map_err(|e| CliError::io(summary_path, e))?;
    }
    log::info!(
        "mapped {} aligned samples ({alignment_dropped} dropped, {out_of_bounds} out of bounds)",
        aligned.len()
    );
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    let text =
        std::fs::read_to_string(&args.summary).map_err(|e| CliError::io(&args.summary, e))?;
    let summary: SessionSummary = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.summary.display())))?;
    let report_text = match &args.endpoint {
        None => template_report(&summary),
        Some(endpoint) => {
            let mut request = ReportRequest::from_env(endpoint, &args.model)
                .map_err(|e| CliError::Pipeline(e.to_string()))?;
            request.max_retries = args.max_retries;
            request.fallback_to_template = args.fallback;
            let outcome =
                llm_report(&summary, &request).map_err(|e| CliError::Pipeline(e.to_string()))?;
            outcome.text
        }
    };
    std::fs::write(&args.out, report_text).map_err(|e| CliError::io(&args.out, e))?;
    log::info!("report written to {}", args.out.display());
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let overrides = Overrides {
        seed: args.seed,
        method: args.method,
        replay: args.replay,
        heatmap: args.heatmap,
        csv: args.csv,
        summary: args.summary,
        report: args.report_out,
        cell_size: args.cell_size,
    };
    let config = PipelineConfig::load(&args.config, &overrides)?;
    run_pipeline(&config).map(|_| ())
}
