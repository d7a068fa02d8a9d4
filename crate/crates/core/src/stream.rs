//! Stream transport and time model: NDJSON packet encoding, clock-offset
//! estimation, timestamp dejitter, and cross-stream alignment of position
//! and emotion samples.
//!
//! Wire format is newline-delimited JSON. Each connection (or replay file)
//! starts with one header line per stream:
//!
//! ```text
//! {"hdr":{"s":"uwb","k":"range","c":4,"r":10.0}}
//! ```
//!
//! followed by packet lines:
//!
//! ```text
//! {"s":"uwb","t":0.1,"v":[3.2,4.1,5.0,2.9]}
//! ```
//!
//! Timestamps are float seconds on the sender's clock; [`ClockModel`]
//! offsets map them onto the host clock before alignment.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc::SyncSender;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eeg::EmotionSample;
use crate::locate::PositionEstimate;
use crate::Vec3;

/// Default pairing tolerance between a position and an emotion sample, in
/// seconds (a quarter of the one-second emotion window).
pub const DEFAULT_ALIGNMENT_TOLERANCE: f64 = 0.25;

/// Bounded queue depth between connection readers and the merger task.
pub const INGEST_QUEUE_DEPTH: usize = 1024;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("malformed line: {0}")]
    Malformed(String),
    #[error("unknown stream id {0:?}")]
    UnknownStream(String),
    #[error("duplicate stream id {0:?}")]
    DuplicateStream(String),
    #[error("arity mismatch on stream {stream:?}: header says {expected} channels, packet has {got}")]
    ArityMismatch {
        stream: String,
        expected: usize,
        got: usize,
    },
    #[error("negative round trip: exchange violates t3 >= t0 and t2 >= t1")]
    NegativeRoundTrip,
    #[error("need at least 2 timestamps to dejitter, got {0}")]
    TooFewTimestamps(usize),
    #[error("{which} input not sorted by timestamp at index {index}")]
    Unsorted { which: &'static str, index: usize },
    #[error("alignment tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("invalid header: {0}")]
    BadHeader(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Payload type of a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamKind {
    Range,
    Eeg,
    Position,
    Emotion,
}

/// Declares one stream: id, payload kind, channel count, nominal rate
/// (Hz, 0 for irregular).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamHeader {
    #[serde(rename = "s")]
    pub stream_id: String,
    #[serde(rename = "k")]
    pub kind: StreamKind,
    #[serde(rename = "c")]
    pub channel_count: usize,
    #[serde(rename = "r")]
    pub nominal_rate: f64,
}

impl StreamHeader {
    pub fn validate(&self) -> Result<(), StreamError> {
        if self.channel_count < 1 {
            return Err(StreamError::BadHeader(format!(
                "stream {:?}: channel_count must be >= 1",
                self.stream_id
            )));
        }
        if !(self.nominal_rate >= 0.0) {
            return Err(StreamError::BadHeader(format!(
                "stream {:?}: nominal_rate must be >= 0",
                self.stream_id
            )));
        }
        Ok(())
    }
}

/// One timestamped multi-channel sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    #[serde(rename = "s")]
    pub stream_id: String,
    #[serde(rename = "t")]
    pub timestamp: f64,
    #[serde(rename = "v")]
    pub values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    hdr: StreamHeader,
}

/// A decoded wire line.
#[derive(Debug, Clone, PartialEq)]
pub enum Line {
    Header(StreamHeader),
    Packet(Packet),
}

/// Encode a packet as one NDJSON line (no trailing newline).
pub fn encode_packet(packet: &Packet) -> String {
    serde_json::to_string(packet).expect("packet serialization cannot fail")
}

/// Encode a stream header as one NDJSON line (no trailing newline).
pub fn encode_header(header: &StreamHeader) -> String {
    serde_json::to_string(&HeaderLine {
        hdr: header.clone(),
    })
    .expect("header serialization cannot fail")
}

/// Decode a single wire line into a header or a packet. Arity is not
/// checked here; use [`StreamRegistry::decode`] for registry-aware decoding.
pub fn decode_line(line: &str) -> Result<Line, StreamError> {
    let trimmed = line.trim();
    if trimmed.contains("\"hdr\"") {
        let parsed: HeaderLine =
            serde_json::from_str(trimmed).map_err(|e| StreamError::Malformed(e.to_string()))?;
        parsed.hdr.validate()?;
        return Ok(Line::Header(parsed.hdr));
    }
    let packet: Packet =
        serde_json::from_str(trimmed).map_err(|e| StreamError::Malformed(e.to_string()))?;
    Ok(Line::Packet(packet))
}

/// Decode a packet line without a registry.
pub fn decode_packet(line: &str) -> Result<Packet, StreamError> {
    match decode_line(line)? {
        Line::Packet(p) => Ok(p),
        Line::Header(h) => Err(StreamError::Malformed(format!(
            "expected packet, got header for {:?}",
            h.stream_id
        ))),
    }
}

/// Tracks declared streams and validates packets against their headers.
#[derive(Debug, Default, Clone)]
pub struct StreamRegistry {
    headers: BTreeMap<String, StreamHeader>,
}

impl StreamRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, header: StreamHeader) -> Result<(), StreamError> {
        header.validate()?;
        if self.headers.contains_key(&header.stream_id) {
            return Err(StreamError::DuplicateStream(header.stream_id));
        }
        self.headers.insert(header.stream_id.clone(), header);
        Ok(())
    }

    pub fn header(&self, stream_id: &str) -> Option<&StreamHeader> {
        self.headers.get(stream_id)
    }

    pub fn headers(&self) -> impl Iterator<Item = &StreamHeader> {
        self.headers.values()
    }

    /// Decode a line, registering headers and checking packet stream ids and
    /// value arity against what was declared.
    pub fn decode(&mut self, line: &str) -> Result<Line, StreamError> {
        let decoded = decode_line(line)?;
        match &decoded {
            Line::Header(h) => self.register(h.clone())?,
            Line::Packet(p) => {
                let header = self
                    .headers
                    .get(&p.stream_id)
                    .ok_or_else(|| StreamError::UnknownStream(p.stream_id.clone()))?;
                if p.values.len() != header.channel_count {
                    return Err(StreamError::ArityMismatch {
                        stream: p.stream_id.clone(),
                        expected: header.channel_count,
                        got: p.values.len(),
                    });
                }
            }
        }
        Ok(decoded)
    }
}

// ---------------------------------------------------------------------------
// Clock model
// ---------------------------------------------------------------------------

/// Offset between a sender clock and the host clock, from one
/// four-timestamp exchange.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockModel {
    /// Sender clock minus host clock, seconds.
    pub offset: f64,
    /// Network round trip excluding remote processing, seconds.
    pub round_trip: f64,
    /// Host time of the exchange.
    pub measured_at: f64,
}

impl ClockModel {
    /// Map a sender timestamp onto the host clock.
    pub fn to_host(&self, sender_time: f64) -> f64 {
        sender_time - self.offset
    }
}

/// Offset from a four-timestamp exchange: host sends at `t0`, sender
/// receives at `t1` and replies at `t2` (sender clock), host receives at
/// `t3`. The estimate is exact for symmetric path delays and otherwise off
/// by at most `round_trip / 2`.
pub fn estimate_clock_offset(t0: f64, t1: f64, t2: f64, t3: f64) -> Result<ClockModel, StreamError> {
    let round_trip = (t3 - t0) - (t2 - t1);
    if t3 < t0 || t2 < t1 || round_trip < 0.0 {
        return Err(StreamError::NegativeRoundTrip);
    }
    Ok(ClockModel {
        offset: ((t1 - t0) + (t2 - t3)) / 2.0,
        round_trip,
        measured_at: t3,
    })
}

// ---------------------------------------------------------------------------
// Dejitter
// ---------------------------------------------------------------------------

/// Replace noisy timestamps with their least-squares affine fit over the
/// sample index, the post-processing used for regular-rate streams.
/// `nominal_rate` gates the precondition; the fit itself is unconstrained.
pub fn dejitter_timestamps(timestamps: &[f64], nominal_rate: f64) -> Result<Vec<f64>, StreamError> {
    if timestamps.len() < 2 {
        return Err(StreamError::TooFewTimestamps(timestamps.len()));
    }
    if !(nominal_rate > 0.0) {
        return Err(StreamError::BadHeader(format!(
            "nominal_rate must be > 0 to dejitter, got {nominal_rate}"
        )));
    }
    let n = timestamps.len() as f64;
    let mean_i = (n - 1.0) / 2.0;
    let mean_t = timestamps.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var = 0.0;
    for (i, &t) in timestamps.iter().enumerate() {
        let di = i as f64 - mean_i;
        cov += di * (t - mean_t);
        var += di * di;
    }
    let slope = cov / var;
    let intercept = mean_t - slope * mean_i;
    Ok((0..timestamps.len())
        .map(|i| intercept + slope * i as f64)
        .collect())
}

// ---------------------------------------------------------------------------
// Alignment
// ---------------------------------------------------------------------------

/// A position paired with the emotion sample nearest in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedSample {
    /// Host-clock time of the pair (the emotion timestamp).
    pub timestamp: f64,
    pub position: Vec3,
    pub emotion: EmotionSample,
}

fn check_sorted<T>(items: &[T], key: impl Fn(&T) -> f64, which: &'static str) -> Result<(), StreamError> {
    for (index, pair) in items.windows(2).enumerate() {
        if key(&pair[1]) < key(&pair[0]) {
            return Err(StreamError::Unsorted {
                which,
                index: index + 1,
            });
        }
    }
    Ok(())
}

/// Pair each emotion sample with its nearest-in-time position in one
/// O(n + m) pass. Pairs farther apart than `tolerance` are dropped and
/// counted. Ties break toward the earlier position.
pub fn align_streams(
    positions: &[PositionEstimate],
    emotions: &[EmotionSample],
    tolerance: f64,
) -> Result<(Vec<AlignedSample>, usize), StreamError> {
    if !(tolerance > 0.0) {
        return Err(StreamError::BadTolerance(tolerance));
    }
    check_sorted(positions, |p| p.timestamp, "positions")?;
    check_sorted(emotions, |e| e.timestamp, "emotions")?;

    let mut aligned = Vec::new();
    let mut dropped = 0usize;
    let mut cursor = 0usize;
    for emotion in emotions {
        if positions.is_empty() {
            dropped += 1;
            continue;
        }
        while cursor + 1 < positions.len() && positions[cursor + 1].timestamp < emotion.timestamp {
            cursor += 1;
        }
        // Best candidate is `cursor` or its successor; ties keep the earlier.
        let mut best = cursor;
        if cursor + 1 < positions.len() {
            let earlier = (emotion.timestamp - positions[cursor].timestamp).abs();
            let later = (positions[cursor + 1].timestamp - emotion.timestamp).abs();
            if later < earlier {
                best = cursor + 1;
            }
        }
        let gap = (positions[best].timestamp - emotion.timestamp).abs();
        if gap > tolerance {
            dropped += 1;
        } else {
            aligned.push(AlignedSample {
                timestamp: emotion.timestamp,
                position: positions[best].position,
                emotion: emotion.clone(),
            });
        }
    }
    Ok((aligned, dropped))
}

// ---------------------------------------------------------------------------
// TCP ingest
// ---------------------------------------------------------------------------

/// Events delivered from connection readers to the merger task.
#[derive(Debug, Clone, PartialEq)]
pub enum IngestEvent {
    Line(Line),
    /// A connection closed; carries the number of lines it delivered.
    Disconnected(usize),
}

/// Accept connections on `listener` and feed decoded lines into `tx` until
/// the sender side is dropped. One reader thread per connection; the bounded
/// channel applies backpressure by blocking readers.
///
/// Each connection keeps its own registry, so every connection must declare
/// its stream headers before sending packets.
pub fn serve_ingest(listener: TcpListener, tx: SyncSender<IngestEvent>) {
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { break };
            let tx = tx.clone();
            std::thread::spawn(move || {
                if let Err(err) = read_connection(stream, &tx) {
                    log::warn!("ingest connection ended with error: {err}");
                }
            });
        }
    });
}

fn read_connection(stream: TcpStream, tx: &SyncSender<IngestEvent>) -> Result<(), StreamError> {
    let reader = BufReader::new(stream);
    let mut registry = StreamRegistry::new();
    let mut delivered = 0usize;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let decoded = registry.decode(&line)?;
        delivered += 1;
        if tx.send(IngestEvent::Line(decoded)).is_err() {
            return Ok(()); // merger went away
        }
    }
    let _ = tx.send(IngestEvent::Disconnected(delivered));
    Ok(())
}
