//! Pipeline configuration: one JSON file plus flag overrides (flags win).
//!
//! Exactly one input mode must be configured: `simulate`, `replay`, or
//! `live`. Relative paths resolve against the config file's directory.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use affectmap_core::affectmap::HeatmapChannel;
use affectmap_core::scene::Dimension;
use affectmap_core::sim::SessionSpec;

/// Process exit codes for `run` and friends.
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_PIPELINE: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("pipeline error: {0}")]
    Pipeline(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io { .. } => EXIT_IO,
            CliError::Pipeline(_) => EXIT_PIPELINE,
        }
    }

    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct ReplayInput {
    pub file: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
pub struct LiveInput {
    pub port: u16,
    /// Connections expected before the session is considered complete.
    #[serde(default = "default_connections")]
    pub connections: usize,
}

fn default_connections() -> usize {
    1
}

/// Position solver selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    GaussNewton,
    Tdoa,
    ParticleFilter,
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "closed_form" => Ok(Method::ClosedForm),
            "gauss_newton" => Ok(Method::GaussNewton),
            "tdoa" => Ok(Method::Tdoa),
            "particle_filter" => Ok(Method::ParticleFilter),
            other => Err(format!(
                "unknown method {other:?} (closed_form|gauss_newton|tdoa|particle_filter)"
            )),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct PositioningConfig {
    pub method: Method,
    pub mode: Dimension,
    /// Range noise scale fed to the solvers, meters.
    pub sigma: f64,
    /// Particle count for the particle-filter method.
    pub particles: usize,
    /// Random-walk process noise, m/s.
    pub process_noise: f64,
}

impl Default for PositioningConfig {
    fn default() -> Self {
        Self {
            method: Method::GaussNewton,
            mode: Dimension::Two,
            sigma: 0.05,
            particles: 1000,
            process_noise: 0.5,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    /// Overrides the scene file's cell size.
    pub cell_size: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct EegConfig {
    /// Trained model JSON.
    pub model: PathBuf,
    #[serde(default = "default_window_seconds")]
    pub window_seconds: f64,
    #[serde(default = "default_hop_seconds")]
    pub hop_seconds: f64,
    /// Windows with any |sample| above this are rejected, not classified.
    #[serde(default = "default_artifact_threshold")]
    pub artifact_threshold: f64,
    /// Alignment tolerance between positions and emotions, seconds.
    #[serde(default = "default_alignment_tolerance")]
    pub alignment_tolerance: f64,
}

fn default_window_seconds() -> f64 {
    1.0
}

fn default_hop_seconds() -> f64 {
    0.5
}

fn default_artifact_threshold() -> f64 {
    100.0
}

fn default_alignment_tolerance() -> f64 {
    affectmap_core::stream::DEFAULT_ALIGNMENT_TOLERANCE
}

#[derive(Debug, Clone, Deserialize)]
pub struct OutputsConfig {
    pub heatmap: PathBuf,
    pub csv: PathBuf,
    pub summary: PathBuf,
    pub report: PathBuf,
    /// Simulate mode also writes its stream lines here for later replay.
    #[serde(default)]
    pub ndjson: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct HeatmapConfig {
    pub channel: HeatmapChannel,
    /// z-layer index, or flatten when absent.
    pub slice: Option<usize>,
    pub scale_px: usize,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        Self {
            channel: HeatmapChannel::Valence,
            slice: None,
            scale_px: 16,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Default, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ReportMode {
    #[default]
    Template,
    Llm,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct ReportConfig {
    pub mode: ReportMode,
    pub endpoint: String,
    pub model: String,
    pub max_retries: u32,
    pub fallback: bool,
    pub timeout_seconds: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            mode: ReportMode::Template,
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o-mini".into(),
            max_retries: 3,
            fallback: true,
            timeout_seconds: 30.0,
        }
    }
}

/// The whole pipeline configuration.
#[derive(Debug, Clone, Deserialize)]
pub struct PipelineConfig {
    pub scene: PathBuf,
    #[serde(default)]
    pub simulate: Option<SessionSpec>,
    #[serde(default)]
    pub replay: Option<ReplayInput>,
    #[serde(default)]
    pub live: Option<LiveInput>,
    #[serde(default)]
    pub positioning: PositioningConfig,
    #[serde(default)]
    pub grid: GridConfig,
    pub eeg: EegConfig,
    pub outputs: OutputsConfig,
    #[serde(default)]
    pub heatmap: HeatmapConfig,
    #[serde(default)]
    pub report: ReportConfig,
    #[serde(default)]
    pub seed: u64,
}

/// Flag overrides; every field beats the config file when present.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub method: Option<Method>,
    pub replay: Option<PathBuf>,
    pub heatmap: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub cell_size: Option<f64>,
}

impl PipelineConfig {
    /// Load, apply overrides, resolve paths, and validate.
    pub fn load(path: impl AsRef<Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));

        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        if let Some(method) = overrides.method {
            config.positioning.method = method;
        }
        if let Some(replay) = &overrides.replay {
            config.replay = Some(ReplayInput {
                file: replay.clone(),
            });
        }
        if let Some(p) = &overrides.heatmap {
            config.outputs.heatmap = p.clone();
        }
        if let Some(p) = &overrides.csv {
            config.outputs.csv = p.clone();
        }
        if let Some(p) = &overrides.summary {
            config.outputs.summary = p.clone();
        }
        if let Some(p) = &overrides.report {
            config.outputs.report = p.clone();
        }
        if let Some(c) = overrides.cell_size {
            config.grid.cell_size = Some(c);
        }

        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        resolve(&mut self.scene);
        resolve(&mut self.eeg.model);
        resolve(&mut self.outputs.heatmap);
        resolve(&mut self.outputs.csv);
        resolve(&mut self.outputs.summary);
        resolve(&mut self.outputs.report);
        if let Some(p) = &mut self.outputs.ndjson {
            if p.is_relative() {
                *p = base.join(&p);
            }
        }
        if let Some(r) = &mut self.replay {
            resolve(&mut r.file);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let mut modes = Vec::new();
        if self.simulate.is_some() {
            modes.push("simulate");
        }
        if self.replay.is_some() {
            modes.push("replay");
        }
        if self.live.is_some() {
            modes.push("live");
        }
        match modes.len() {
            0 => {
                return Err(CliError::Config(
                    "no input mode: configure exactly one of simulate, replay, live".into(),
                ))
            }
            1 => {}
            _ => {
                return Err(CliError::Config(format!(
                    "conflicting input modes: {} are configured, want exactly one",
                    modes.join(" and ")
                )))
            }
        }
        if let Some(cell) = self.grid.cell_size {
            if !(cell > 0.0) {
                return Err(CliError::Config(format!(
                    "grid.cell_size must be positive, got {cell}"
                )));
            }
        }
        if !(self.eeg.window_seconds > 0.0)
            || !(self.eeg.hop_seconds > 0.0)
            || self.eeg.hop_seconds > self.eeg.window_seconds
        {
            return Err(CliError::Config(format!(
                "eeg window/hop invalid: window {} s, hop {} s",
                self.eeg.window_seconds, self.eeg.hop_seconds
            )));
        }
        if !(self.eeg.alignment_tolerance > 0.0) {
            return Err(CliError::Config(
                "eeg.alignment_tolerance must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn minimal_config(extra_modes: &str) -> String {
        format!(
            r#"{{
  "scene": "scene.json",
  "simulate": {{
    "waypoints": [[1,1,1.2],[5,1,1.2]],
    "speed": 1.0, "range_rate": 10.0, "sigma": 0.05,
    "schedule": [{{"start":0.0,"end":5.0,"state":"neutral"}}],
    "eeg_channels": 4, "eeg_rate": 200.0, "seed": 1
  }}{extra_modes},
  "eeg": {{ "model": "model.json" }},
  "outputs": {{ "heatmap": "h.ppm", "csv": "g.csv", "summary": "s.json", "report": "r.txt" }}
}}"#
        )
    }

    fn write_config(text: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(text.as_bytes()).unwrap();
        (dir, path)
    }

    #[test]
    fn loads_and_resolves_relative_paths() {
        let (dir, path) = write_config(&minimal_config(""));
        let config = PipelineConfig::load(&path, &Overrides::default()).unwrap();
        assert_eq!(config.scene, dir.path().join("scene.json"));
        assert_eq!(config.outputs.heatmap, dir.path().join("h.ppm"));
        assert_eq!(config.positioning.method, Method::GaussNewton);
        assert_eq!(config.eeg.window_seconds, 1.0);
    }

    #[test]
    fn two_modes_rejected_with_names() {
        let (_dir, path) =
            write_config(&minimal_config(r#", "replay": {"file": "lines.ndjson"}"#));
        let err = PipelineConfig::load(&path, &Overrides::default()).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_CONFIG);
        let message = err.to_string();
        assert!(message.contains("simulate") && message.contains("replay"), "{message}");
    }

    #[test]
    fn override_flags_win() {
        let (_dir, path) = write_config(&minimal_config(""));
        let overrides = Overrides {
            seed: Some(99),
            method: Some(Method::ParticleFilter),
            cell_size: Some(0.25),
            ..Default::default()
        };
        let config = PipelineConfig::load(&path, &overrides).unwrap();
        assert_eq!(config.seed, 99);
        assert_eq!(config.positioning.method, Method::ParticleFilter);
        assert_eq!(config.grid.cell_size, Some(0.25));
    }

    #[test]
    fn flag_added_mode_can_conflict() {
        let (_dir, path) = write_config(&minimal_config(""));
        let overrides = Overrides {
            replay: Some(PathBuf::from("other.ndjson")),
            ..Default::default()
        };
        let err = PipelineConfig::load(&path, &overrides).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_CONFIG);
    }

    #[test]
    fn missing_config_is_io_error() {
        let err =
            PipelineConfig::load("/nonexistent/config.json", &Overrides::default()).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_IO);
    }
}
