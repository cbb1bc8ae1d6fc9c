//! File formats for emitted data. Every format is a plain-text CSV or JSON
//! document rendered through these builders so that identical inputs give
//! byte-identical files.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::analysis::PeakSeries;
use crate::control::DriveWaveform;
use crate::detection::{Channel, DetectionEvent, Histogram};
use crate::optics::PhotonRecord;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn parse_err(line: usize, message: impl Into<String>) -> IoError {
    IoError::Parse {
        line,
        message: message.into(),
    }
}

/// `bin_start_ps,count` rows.
pub fn histogram_csv(h: &Histogram) -> String {
    let mut s = String::with_capacity(16 * h.counts.len() + 24);
    s.push_str("bin_start_ps,count\n");
    for (i, &c) in h.counts.iter().enumerate() {
        let _ = writeln!(s, "{},{}", h.bin_start(i), c);
    }
    s
}

/// JSON header accompanying a histogram CSV.
#[derive(Debug, Serialize)]
pub struct HistogramMeta {
    pub bin_width_ps: f64,
    pub n_triggers: u64,
    pub t0_ps: f64,
}

pub fn histogram_meta_json(h: &Histogram) -> Result<String, IoError> {
    let meta = HistogramMeta {
        bin_width_ps: h.bin_width_ps,
        n_triggers: h.n_triggers,
        t0_ps: h.t0_ps,
    };
    Ok(pretty_json(&meta)?)
}

/// `channel,time_ps` rows.
pub fn events_csv(events: &[DetectionEvent]) -> String {
    let mut s = String::with_capacity(16 * events.len() + 16);
    s.push_str("channel,time_ps\n");
    for ev in events {
        let _ = writeln!(s, "{},{}", ev.channel.as_str(), ev.time_ps);
    }
    s
}

pub fn parse_events_csv(text: &str) -> Result<Vec<DetectionEvent>, IoError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "channel,time_ps" => {}
        _ => return Err(parse_err(1, "expected header 'channel,time_ps'")),
    }
    let mut events = Vec::new();
    for (idx, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (ch, t) = line
            .split_once(',')
            .ok_or_else(|| parse_err(idx + 1, "expected 'channel,time_ps'"))?;
        let channel: Channel = ch
            .trim()
            .parse()
            .map_err(|e: String| parse_err(idx + 1, e))?;
        let time_ps: f64 = t
            .trim()
            .parse()
            .map_err(|e| parse_err(idx + 1, format!("bad time: {e}")))?;
        events.push(DetectionEvent { channel, time_ps });
    }
    Ok(events)
}

/// `pulse_index,exit_time_ps,round_trips,path_tag` rows.
pub fn records_csv(records: &[PhotonRecord]) -> String {
    let mut s = String::with_capacity(24 * records.len() + 48);
    s.push_str("pulse_index,exit_time_ps,round_trips,path_tag\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.origin_pulse_index,
            r.exit_time_ps,
            r.round_trips_completed,
            r.path_tag.as_str()
        );
    }
    s
}

/// `time_ps,volts` rows.
pub fn waveform_csv(w: &DriveWaveform) -> String {
    let mut s = String::with_capacity(16 * w.samples.len() + 16);
    s.push_str("time_ps,volts\n");
    for &(t, v) in &w.samples {
        let _ = writeln!(s, "{t},{v}");
    }
    s
}

/// `k,raw_counts,normalized_amplitude` rows.
pub fn peak_series_csv(series: &PeakSeries) -> String {
    let mut s = String::with_capacity(24 * series.entries.len() + 40);
    s.push_str("k,raw_counts,normalized_amplitude\n");
    for e in &series.entries {
        let _ = writeln!(s, "{},{},{}", e.k, e.raw_counts, e.normalized_amplitude);
    }
    s
}

pub fn parse_peak_series_csv(
    text: &str,
    mode: crate::analysis::NormalizationMode,
) -> Result<PeakSeries, IoError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "k,raw_counts,normalized_amplitude" => {}
        _ => {
            return Err(parse_err(
                1,
                "expected header 'k,raw_counts,normalized_amplitude'",
            ))
        }
    }
    let mut entries = Vec::new();
    for (idx, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let mut field = |name: &str| {
            parts
                .next()
                .ok_or_else(|| parse_err(idx + 1, format!("missing {name}")))
        };
        let k: u32 = field("k")?
            .trim()
            .parse()
            .map_err(|e| parse_err(idx + 1, format!("bad k: {e}")))?;
        let raw_counts: f64 = field("raw_counts")?
            .trim()
            .parse()
            .map_err(|e| parse_err(idx + 1, format!("bad raw_counts: {e}")))?;
        let normalized_amplitude: f64 = field("normalized_amplitude")?
            .trim()
            .parse()
            .map_err(|e| parse_err(idx + 1, format!("bad normalized_amplitude: {e}")))?;
        entries.push(crate::analysis::PeakEntry {
            k,
            raw_counts,
            normalized_amplitude,
        });
    }
    Ok(PeakSeries {
        entries,
        normalization_mode: mode,
    })
}

/// JSON with a trailing newline, stable field order from the type.
pub fn pretty_json<T: Serialize>(value: &T) -> Result<String, serde_json::Error> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Analysis result wrapper carrying the resolved configuration and master
/// seed, so every emitted result is self-describing.
#[derive(Debug, Serialize)]
pub struct WithProvenance<T: Serialize> {
    pub result: T,
    pub provenance: Provenance,
}

#[derive(Debug, Serialize)]
pub struct Provenance {
    pub tool_version: String,
    pub master_seed: u64,
    pub config: serde_json::Value,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
}

impl Provenance {
    pub fn new(cfg: &crate::config::ExperimentConfig) -> Result<Self, IoError> {
        Ok(Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed: cfg.master_seed,
            config: serde_json::to_value(cfg)?,
            notes: Vec::new(),
        })
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }
}

pub fn write_file(path: &std::path::Path, contents: &str) -> Result<(), IoError> {
    std::fs::write(path, contents).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_file(path: &std::path::Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}
