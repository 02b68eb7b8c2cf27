//! Metric series, smoothing, CSV/SVG output, run records and replay.

mod cli;
mod svg;

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cli::{cli_main, run_config, ProviderSet};
pub use svg::render_svg;

use crate::engine::{score_round, EngineSettings, RoundResult, ScenarioSpec, ScoreSet};
use crate::participant::ParticipantState;
use crate::provider::JournalEntry;

pub const DEFAULT_WINDOW: usize = 5;
pub const RECORD_FILE: &str = "run_record.json";
pub const CSV_FILE: &str = "metrics.csv";
pub const SVG_FILE: &str = "metrics.svg";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("run record: {0}")]
    Record(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("report has no completed rounds")]
    Empty,
    #[error("smoothing window must be at least 1")]
    InvalidWindow,
    #[error("unknown series `{name}`; available: {}", available.join(", "))]
    UnknownSeries { name: String, available: Vec<String> },
    #[error("series `{name}` has {len} values for {rounds} rounds")]
    Ragged { name: String, len: usize, rounds: usize },
    #[error("replay diverged: {}", .0.join("; "))]
    Diverged(Vec<String>),
}

impl ReportError {
    pub fn code(&self) -> &'static str {
        match self {
            ReportError::Io { .. } => "E_IO",
            ReportError::Record(_) => "E_RECORD",
            ReportError::Csv(_) => "E_CSV",
            ReportError::Empty | ReportError::Ragged { .. } => "E_REPORT",
            ReportError::InvalidWindow => "E_USAGE",
            ReportError::UnknownSeries { .. } => "E_SERIES",
            ReportError::Diverged(_) => "E_REPLAY",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub name: String,
    pub values: Vec<f64>,
}

impl MetricSeries {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self { name: name.into(), values }
    }
}

/// Everything a run produced, in one self-describing document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub spec: ScenarioSpec,
    pub settings: EngineSettings,
    pub seed: u64,
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub round_results: Vec<RoundResult>,
    pub series: Vec<MetricSeries>,
    pub final_states: Vec<ParticipantState>,
    pub journal: Vec<JournalEntry>,
}

impl RunReport {
    pub fn series_named(&self, name: &str) -> Option<&MetricSeries> {
        self.series.iter().find(|s| s.name == name)
    }

    pub fn series_names(&self) -> Vec<String> {
        self.series.iter().map(|s| s.name.clone()).collect()
    }

    pub fn rounds(&self) -> Vec<u32> {
        self.round_results.iter().map(|r| r.round_index).collect()
    }

    pub fn to_json(&self) -> Result<String, ReportError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), ReportError> {
        std::fs::write(path, self.to_json()?).map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self, ReportError> {
        Self::from_json(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }
}

/// Builds one series per plotted quantity from the per-round scores.
/// Series order is fixed per scenario kind; agent accuracies follow id order.
pub fn derive_series(spec: &ScenarioSpec, results: &[RoundResult]) -> Vec<MetricSeries> {
    use crate::engine::ScenarioKind::*;
    let pick = |name: &str, f: &dyn Fn(&ScoreSet) -> Option<f64>| {
        MetricSeries::new(name, results.iter().map(|r| f(&r.scores).unwrap_or(f64::NAN)).collect())
    };
    match spec.kind {
        GuessNumber => {
            let mut out = vec![pick("turns_survived", &|s| match s {
                ScoreSet::GuessNumber { turns_survived, .. } => Some(f64::from(*turns_survived)),
                _ => None,
            })];
            for agent in spec.numbers().keys() {
                out.push(pick(&format!("accuracy_{agent}"), &|s| match s {
                    ScoreSet::GuessNumber { accuracy_per_agent, .. } => accuracy_per_agent.get(agent).copied(),
                    _ => None,
                }));
            }
            out
        }
        PetTrading => vec![
            pick("turns_survived", &|s| match s {
                ScoreSet::PetTrading { turns_survived, .. } => Some(f64::from(*turns_survived)),
                _ => None,
            }),
            pick("success_count", &|s| match s {
                ScoreSet::PetTrading { success_count, .. } => Some(f64::from(*success_count)),
                _ => None,
            }),
        ],
        ForumDiscussion => vec![
            pick("attempts", &|s| match s {
                ScoreSet::Forum { attempts, .. } => Some(f64::from(*attempts)),
                _ => None,
            }),
            pick("expressed_count", &|s| match s {
                ScoreSet::Forum { expressed_count, .. } => Some(f64::from(*expressed_count)),
                _ => None,
            }),
        ],
    }
}

/// Trailing mean over up to `window` values, truncated at the series start.
pub fn moving_average(s: &MetricSeries, window: usize) -> Result<MetricSeries, ReportError> {
    if window == 0 {
        return Err(ReportError::InvalidWindow);
    }
    let values = (0..s.values.len())
        .map(|i| {
            let slice = &s.values[(i + 1).saturating_sub(window)..=i];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect();
    Ok(MetricSeries::new(format!("{}_sma{window}", s.name), values))
}

fn check_shape(rounds: &[u32], series: &[MetricSeries]) -> Result<(), ReportError> {
    if rounds.is_empty() {
        return Err(ReportError::Empty);
    }
    for s in series {
        if s.values.len() != rounds.len() {
            return Err(ReportError::Ragged { name: s.name.clone(), len: s.values.len(), rounds: rounds.len() });
        }
    }
    Ok(())
}

pub fn format_value(v: f64) -> String {
    format!("{v:.6}")
}

/// CSV text: `round,<names…>` then one row per round, six decimals, LF.
pub fn csv_string(rounds: &[u32], series: &[MetricSeries]) -> Result<String, ReportError> {
    check_shape(rounds, series)?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let mut header = vec!["round".to_string()];
    header.extend(series.iter().map(|s| s.name.clone()));
    w.write_record(&header)?;
    for (i, round) in rounds.iter().enumerate() {
        let mut row = vec![round.to_string()];
        row.extend(series.iter().map(|s| format_value(s.values[i])));
        w.write_record(&row)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| ReportError::Io { path: "<csv buffer>".into(), source: std::io::Error::other(e.to_string()) })?;
    Ok(String::from_utf8(bytes).expect("csv output is built from UTF-8 strings"))
}

/// Parses CSV written by [`csv_string`] back into round indices and series.
pub fn parse_csv(text: &str) -> Result<(Vec<u32>, Vec<MetricSeries>), ReportError> {
    let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers = r.headers()?.clone();
    let mut series: Vec<MetricSeries> = headers.iter().skip(1).map(|h| MetricSeries::new(h, Vec::new())).collect();
    let mut rounds = Vec::new();
    for row in r.records() {
        let row = row?;
        let bad = |field: &str| {
            ReportError::Csv(csv::Error::from(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("unparsable cell `{field}`"),
            )))
        };
        let first = row.get(0).unwrap_or_default();
        rounds.push(first.parse().map_err(|_| bad(first))?);
        for (s, cell) in series.iter_mut().zip(row.iter().skip(1)) {
            s.values.push(cell.parse().map_err(|_| bad(cell))?);
        }
    }
    Ok((rounds, series))
}

pub fn emit_csv(report: &RunReport, path: &Path) -> Result<(), ReportError> {
    write_file(path, &csv_string(&report.rounds(), &report.series)?)
}

/// Plots the named series (all of them when `names` is empty).
pub fn emit_plot(report: &RunReport, names: &[String], path: &Path) -> Result<(), ReportError> {
    let chosen = select_series(&report.series, names)?;
    write_file(path, &render_svg(&report.rounds(), &chosen)?)
}

pub fn select_series(all: &[MetricSeries], names: &[String]) -> Result<Vec<MetricSeries>, ReportError> {
    if names.is_empty() {
        return Ok(all.to_vec());
    }
    names
        .iter()
        .map(|n| {
            all.iter().find(|s| s.name == *n).cloned().ok_or_else(|| ReportError::UnknownSeries {
                name: n.clone(),
                available: all.iter().map(|s| s.name.clone()).collect(),
            })
        })
        .collect()
}

fn write_file(path: &Path, contents: &str) -> Result<(), ReportError> {
    let mut f = std::fs::File::create(path).map_err(io_err(path))?;
    f.write_all(contents.as_bytes()).map_err(io_err(path))
}

/// Writes the record, CSV and SVG into `dir`.
pub fn emit_all(report: &RunReport, dir: &Path) -> Result<(), ReportError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    report.write(&dir.join(RECORD_FILE))?;
    if report.round_results.is_empty() {
        return Ok(());
    }
    emit_csv(report, &dir.join(CSV_FILE))?;
    emit_plot(report, &[], &dir.join(SVG_FILE))
}

/// Recomputes every round's score from its transcript and interviews, then
/// the series from those scores, and compares both with what is stored.
pub fn replay_check(report: &RunReport) -> Result<(), ReportError> {
    let mut diffs = Vec::new();
    let spec = &report.spec;
    let n = spec.participants.len().max(1);
    let mut recomputed = Vec::with_capacity(report.round_results.len());
    for r in &report.round_results {
        let messages = r.transcript.len();
        let (turns, attempts) = if spec.kind.is_halt_mode() {
            let spoken = (messages / n) as u32;
            (if r.halted { spoken.saturating_sub(1) } else { spoken }, 0)
        } else {
            (0, messages as u32)
        };
        if r.halted != !r.violations.is_empty() && spec.kind.is_halt_mode() {
            diffs.push(format!("round {}: halted flag disagrees with violations", r.round_index));
        }
        match score_round(spec, r.halted, turns, attempts, &r.interviews) {
            Ok(scores) if scores == r.scores => {}
            Ok(scores) => {
                diffs.push(format!("round {}: stored {:?}, recomputed {:?}", r.round_index, r.scores, scores))
            }
            Err(e) => diffs.push(format!("round {}: {e}", r.round_index)),
        }
        let mut fresh = r.clone();
        if let Ok(scores) = score_round(spec, r.halted, turns, attempts, &r.interviews) {
            fresh.scores = scores;
        }
        recomputed.push(fresh);
    }
    let series = derive_series(spec, &recomputed);
    if series.len() != report.series.len() {
        diffs.push(format!("stored {} series, recomputed {}", report.series.len(), series.len()));
    }
    for (stored, fresh) in report.series.iter().zip(&series) {
        if stored.name != fresh.name {
            diffs.push(format!("series `{}` stored where `{}` expected", stored.name, fresh.name));
        } else if !same_values(&stored.values, &fresh.values) {
            let mut msg = format!("series `{}` differs", stored.name);
            if let Some(i) = stored.values.iter().zip(&fresh.values).position(|(a, b)| a.to_bits() != b.to_bits()) {
                let _ = write!(msg, " at round {i}: stored {}, recomputed {}", stored.values[i], fresh.values[i]);
            }
            diffs.push(msg);
        }
    }
    if diffs.is_empty() {
        Ok(())
    } else {
        Err(ReportError::Diverged(diffs))
    }
}

fn same_values(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}
