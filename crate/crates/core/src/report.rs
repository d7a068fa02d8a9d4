//! Session summaries and narrative reports: a deterministic offline
//! template plus a chat-completion HTTP client with retry and fallback.
//!
//! All numbers in a report are computed locally; the LLM only narrates the
//! serialized [`SessionSummary`].

use std::fmt::Write as _;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affectmap::AffectGrid;
use crate::eeg::{ChangePointSet, EmotionClass, EmotionSample};

/// Environment variable holding the chat-completion API key.
pub const API_KEY_ENV: &str = "AFFECTMAP_API_KEY";

const SYSTEM_PROMPT: &str = "You are an analyst for indoor user-experience studies. \
The user message is a JSON summary of one session: localization plus EEG-derived \
emotional valence accumulated over a spatial grid. Write a concise narrative report \
covering overall sentiment, the most positive and negative locations, emotional \
episodes, and data-quality caveats. Use only the numbers provided.";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("missing API key: set {API_KEY_ENV}")]
    MissingApiKey,
    #[error("request failed: {0}")]
    Transport(String),
    #[error("HTTP {status} after {attempts} attempt(s): {body}")]
    HttpStatus {
        status: u16,
        attempts: u32,
        body: String,
    },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("summary serialization failed: {0}")]
    Serialize(String),
}

// ---------------------------------------------------------------------------
// Summary
// ---------------------------------------------------------------------------

/// One notable grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStat {
    pub index: [usize; 3],
    pub mean_valence: f64,
    pub visits: u64,
    pub dwell_seconds: f64,
}

/// One detected emotional episode boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeNote {
    pub time: f64,
    pub before: EmotionClass,
    pub after: EmotionClass,
}

/// Samples discarded along the pipeline.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropCounters {
    pub alignment_dropped: usize,
    pub out_of_bounds: usize,
    pub rejected_windows: usize,
}

/// Aggregated session analytics: everything a report is built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    /// Emotion-sample time span in seconds.
    pub duration: f64,
    /// Emotion sample count.
    pub samples: usize,
    pub mean_valence: f64,
    /// Extreme cells sorted by |mean valence| descending.
    pub top_positive: Vec<CellStat>,
    pub top_negative: Vec<CellStat>,
    pub change_points: Vec<ChangeNote>,
    pub drops: DropCounters,
}

impl SessionSummary {
    pub fn empty() -> Self {
        Self {
            duration: 0.0,
            samples: 0,
            mean_valence: 0.0,
            top_positive: Vec::new(),
            top_negative: Vec::new(),
            change_points: Vec::new(),
            drops: DropCounters::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SummaryOptions {
    /// Extreme cells listed per polarity.
    pub top_k: usize,
    /// Minimum visits before a cell can be listed.
    pub min_visits: u64,
}

impl Default for SummaryOptions {
    fn default() -> Self {
        Self {
            top_k: 3,
            min_visits: 5,
        }
    }
}

/// Dominant class of a run of emotion samples, by mean probability.
fn dominant_state(samples: &[EmotionSample]) -> EmotionClass {
    let mut sums = [0.0f64; 3];
    for s in samples {
        for (acc, p) in sums.iter_mut().zip(&s.probs) {
            *acc += p;
        }
    }
    let mut best = 0;
    for i in 1..3 {
        if sums[i] > sums[best] {
            best = i;
        }
    }
    EmotionClass::from_index(best).expect("index < 3")
}

/// Aggregate a session into a [`SessionSummary`]. An empty session yields a
/// zeroed summary.
pub fn build_summary(
    grid: &AffectGrid,
    emotions: &[EmotionSample],
    change_points: &ChangePointSet,
    drops: DropCounters,
    opts: &SummaryOptions,
) -> SessionSummary {
    let mut summary = SessionSummary::empty();
    summary.drops = drops;
    summary.samples = emotions.len();
    if let (Some(first), Some(last)) = (emotions.first(), emotions.last()) {
        summary.duration = last.timestamp - first.timestamp;
    }
    if !emotions.is_empty() {
        summary.mean_valence =
            emotions.iter().map(|e| e.valence).sum::<f64>() / emotions.len() as f64;
    }

    let mut eligible: Vec<CellStat> = grid
        .visited_cells()
        .into_iter()
        .filter(|(_, cell)| cell.visits >= opts.min_visits)
        .map(|(index, cell)| CellStat {
            index,
            mean_valence: cell.mean_valence(),
            visits: cell.visits,
            dwell_seconds: cell.dwell_seconds,
        })
        .collect();
    eligible.sort_by(|a, b| {
        b.mean_valence
            .abs()
            .partial_cmp(&a.mean_valence.abs())
            .expect("finite valence")
            .then(a.index.cmp(&b.index))
    });
    summary.top_positive = eligible
        .iter()
        .filter(|c| c.mean_valence > 0.0)
        .take(opts.top_k)
        .cloned()
        .collect();
    summary.top_negative = eligible
        .iter()
        .filter(|c| c.mean_valence < 0.0)
        .take(opts.top_k)
        .cloned()
        .collect();

    // States on each side of a change point come from the adjacent
    // segments, bounded by the neighboring change points.
    let mut boundaries = vec![0usize];
    boundaries.extend(
        change_points
            .indices
            .iter()
            .copied()
            .filter(|&i| i > 0 && i < emotions.len()),
    );
    boundaries.push(emotions.len());
    for w in 1..boundaries.len() - 1 {
        let (prev, cp, next) = (boundaries[w - 1], boundaries[w], boundaries[w + 1]);
        summary.change_points.push(ChangeNote {
            time: emotions[cp].timestamp,
            before: dominant_state(&emotions[prev..cp]),
            after: dominant_state(&emotions[cp..next]),
        });
    }
    summary
}

// ---------------------------------------------------------------------------
// Template report
// ---------------------------------------------------------------------------

fn push_cells(out: &mut String, heading: &str, cells: &[CellStat]) {
    if cells.is_empty() {
        return;
    }
    out.push_str(heading);
    out.push('\n');
    for c in cells {
        writeln!(
            out,
            "  - cell ({}, {}, {}): mean valence {:+.2} over {} visits ({:.1} s dwell)",
            c.index[0], c.index[1], c.index[2], c.mean_valence, c.visits, c.dwell_seconds
        )
        .expect("writing to String cannot fail");
    }
}

/// Deterministic offline report. Identical summaries produce identical
/// bytes.
pub fn template_report(summary: &SessionSummary) -> String {
    let mut out = String::new();
    out.push_str("Session sentiment report\n");
    out.push_str("========================\n\n");

    if summary.samples == 0 {
        out.push_str("No samples were recorded.\n");
    } else {
        writeln!(
            out,
            "Over {:.1} s, {} emotion samples were collected with a mean valence of {:+.2}.",
            summary.duration, summary.samples, summary.mean_valence
        )
        .expect("writing to String cannot fail");
        out.push('\n');
        push_cells(&mut out, "Most positive locations:", &summary.top_positive);
        push_cells(&mut out, "Most negative locations:", &summary.top_negative);
        if summary.top_positive.is_empty() && summary.top_negative.is_empty() {
            out.push_str("No cell crossed the visit threshold for spatial highlights.\n");
        }
        out.push('\n');
        if summary.change_points.is_empty() {
            out.push_str("The emotional state was stable for the whole session.\n");
        } else {
            out.push_str("Emotional episodes:\n");
            for cp in &summary.change_points {
                writeln!(out, "  - at {:.1} s: {} -> {}", cp.time, cp.before, cp.after)
                    .expect("writing to String cannot fail");
            }
        }
    }
    out.push('\n');
    writeln!(
        out,
        "Data quality: {} emotion samples dropped in alignment, {} positions out of bounds, {} EEG windows rejected.",
        summary.drops.alignment_dropped, summary.drops.out_of_bounds, summary.drops.rejected_windows
    )
    .expect("writing to String cannot fail");
    out
}

// ---------------------------------------------------------------------------
// LLM report
// ---------------------------------------------------------------------------

/// API key wrapper that stays out of logs and serialized output.
#[derive(Clone)]
pub struct ApiKey(String);

impl ApiKey {
    pub fn new(key: impl Into<String>) -> Self {
        Self(key.into())
    }

    pub fn from_env() -> Result<Self, ReportError> {
        match std::env::var(API_KEY_ENV) {
            Ok(v) if !v.is_empty() => Ok(Self(v)),
            _ => Err(ReportError::MissingApiKey),
        }
    }

    fn bearer(&self) -> String {
        format!("Bearer {}", self.0)
    }
}

impl std::fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("ApiKey(****)")
    }
}

/// Where and how to call the chat-completion endpoint.
#[derive(Debug, Clone)]
pub struct ReportRequest {
    pub endpoint: String,
    pub model_name: String,
    pub api_key: ApiKey,
    pub timeout: Duration,
    pub max_retries: u32,
    /// First retry delay; doubles per retry. Default 1 s.
    pub backoff_base: Duration,
    /// Fall back to [`template_report`] when retries exhaust.
    pub fallback_to_template: bool,
}

impl ReportRequest {
    pub fn new(endpoint: impl Into<String>, model_name: impl Into<String>, api_key: ApiKey) -> Self {
        Self {
            endpoint: endpoint.into(),
            model_name: model_name.into(),
            api_key,
            timeout: Duration::from_secs(30),
            max_retries: 3,
            backoff_base: Duration::from_secs(1),
            fallback_to_template: false,
        }
    }

    /// Build a request reading the key from [`API_KEY_ENV`].
    pub fn from_env(
        endpoint: impl Into<String>,
        model_name: impl Into<String>,
    ) -> Result<Self, ReportError> {
        Ok(Self::new(endpoint, model_name, ApiKey::from_env()?))
    }
}

/// Outcome of [`llm_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct LlmReport {
    pub text: String,
    /// HTTP requests issued (1 + retries).
    pub attempts: u32,
    /// True when the template fallback produced the text.
    pub fell_back: bool,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequestBody<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    content: String,
}

/// POST the summary to a chat-completion endpoint and return the first
/// message content. Retries HTTP 429 and 5xx with exponential backoff; when
/// retries exhaust and fallback is enabled, returns the template report
/// instead of failing.
pub fn llm_report(summary: &SessionSummary, req: &ReportRequest) -> Result<LlmReport, ReportError> {
    let summary_json =
        serde_json::to_string_pretty(summary).map_err(|e| ReportError::Serialize(e.to_string()))?;
    let body = ChatRequestBody {
        model: &req.model_name,
        messages: vec![
            ChatMessage {
                role: "system",
                content: SYSTEM_PROMPT,
            },
            ChatMessage {
                role: "user",
                content: &summary_json,
            },
        ],
    };
    let client = reqwest::blocking::Client::builder()
        .timeout(req.timeout)
        .build()
        .map_err(|e| ReportError::Transport(e.to_string()))?;

    let mut attempts = 0u32;
    let mut last_status = 0u16;
    let mut last_body = String::new();
    while attempts <= req.max_retries {
        attempts += 1;
        let response = client
            .post(&req.endpoint)
            .header("Authorization", req.api_key.bearer())
            .json(&body)
            .send()
            .map_err(|e| ReportError::Transport(e.to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| ReportError::Transport(e.to_string()))?;
        if status.is_success() {
            let parsed: ChatResponse = serde_json::from_str(&text)
                .map_err(|e| ReportError::MalformedResponse(e.to_string()))?;
            let content = parsed
                .choices
                .first()
                .map(|c| c.message.content.clone())
                .ok_or_else(|| ReportError::MalformedResponse("empty choices".into()))?;
            return Ok(LlmReport {
                text: content,
                attempts,
                fell_back: false,
            });
        }
        let retryable = status.as_u16() == 429 || status.is_server_error();
        last_status = status.as_u16();
        last_body = text;
        if !retryable || attempts > req.max_retries {
            break;
        }
        let delay = req.backoff_base * 2u32.pow(attempts - 1);
        log::warn!(
            "report endpoint returned {last_status}; retry {attempts}/{} in {delay:?}",
            req.max_retries
        );
        std::thread::sleep(delay);
    }

    if req.fallback_to_template {
        log::warn!("report endpoint unavailable after {attempts} attempt(s); using template");
        return Ok(LlmReport {
            text: template_report(summary),
            attempts,
            fell_back: true,
        });
    }
    Err(ReportError::HttpStatus {
        status: last_status,
        attempts,
        body: last_body,
    })
}
