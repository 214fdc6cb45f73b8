//! Run results, the stability statistic and result files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("stability needs at least 2 accuracy samples, got {0}")]
    TooShort(usize),
    #[error("stability gain is undefined for a baseline std of 0")]
    ZeroBaseline,
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

/// Test accuracy of the server model after `epoch` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochAccuracy {
    pub epoch: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub accuracy_series: Vec<EpochAccuracy>,
    pub stability: f64,
    pub peak_accuracy: f64,
    pub final_accuracy: f64,
    pub total_updates: u64,
    pub simulated_time: f64,
    pub trace_path: Option<PathBuf>,
    pub config_echo: ExperimentConfig,
}

impl RunResult {
    pub fn from_series(
        accuracy_series: Vec<EpochAccuracy>,
        total_updates: u64,
        simulated_time: f64,
        config_echo: ExperimentConfig,
    ) -> Result<Self, MetricsError> {
        let values = accuracies(&accuracy_series);
        Ok(Self {
            stability: stability(&values)?,
            peak_accuracy: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            final_accuracy: *values.last().expect("series has at least two entries"),
            accuracy_series,
            total_updates,
            simulated_time,
            trace_path: None,
            config_echo,
        })
    }

    /// Mean accuracy over the last `n` epochs (all of them if fewer).
    pub fn tail_mean(&self, n: usize) -> f64 {
        let tail = &self.accuracy_series[self.accuracy_series.len().saturating_sub(n)..];
        tail.iter().map(|e| e.accuracy).sum::<f64>() / tail.len() as f64
    }
}

pub fn accuracies(series: &[EpochAccuracy]) -> Vec<f64> {
    series.iter().map(|e| e.accuracy).collect()
}

/// Population standard deviation of the whole series.
pub fn stability(series: &[f64]) -> Result<f64, MetricsError> {
    if series.len() < 2 {
        return Err(MetricsError::TooShort(series.len()));
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Ok(var.sqrt())
}

/// Accuracy difference in percentage points.
pub fn improvement(peak_a: f64, peak_b: f64) -> f64 {
    (peak_a - peak_b) * 100.0
}

/// Relative reduction of the std, as a fraction (0.2 means 20% more stable).
pub fn stability_gain(std_a: f64, std_b: f64) -> Result<f64, MetricsError> {
    if std_b == 0.0 {
        return Err(MetricsError::ZeroBaseline);
    }
    Ok((std_b - std_a) / std_b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

fn write(path: &Path, contents: &str) -> Result<(), MetricsError> {
    fs::write(path, contents).map_err(|source| MetricsError::Io { path: path.to_owned(), source })
}

fn read(path: &Path) -> Result<String, MetricsError> {
    fs::read_to_string(path).map_err(|source| MetricsError::Io { path: path.to_owned(), source })
}

/// `<dir>/<stem>_summary.csv` next to a CSV result file.
pub fn summary_path(csv_path: &Path) -> PathBuf {
    let stem = csv_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    csv_path.with_file_name(format!("{stem}_summary.csv"))
}

/// Writes the result. CSV output also writes a `key,value` summary file
/// (see [`summary_path`]).
pub fn emit(result: &RunResult, format: Format, sink: &Path) -> Result<(), MetricsError> {
    match format {
        Format::Json => {
            let text = serde_json::to_string_pretty(result).expect("result serializes");
            write(sink, &(text + "\n"))
        }
        Format::Csv => {
            let mut csv = String::from("epoch,accuracy\n");
            for e in &result.accuracy_series {
                csv.push_str(&format!("{},{}\n", e.epoch, e.accuracy));
            }
            write(sink, &csv)?;
            let summary = format!(
                "key,value\npolicy,{}\nK,{}\npeak_accuracy,{}\nfinal_accuracy,{}\nstability,{}\ntotal_updates,{}\nsimulated_time,{}\n",
                result.config_echo.policy,
                result.config_echo.k,
                result.peak_accuracy,
                result.final_accuracy,
                result.stability,
                result.total_updates,
                result.simulated_time,
            );
            write(&summary_path(sink), &summary)
        }
    }
}

pub fn read_json(path: &Path) -> Result<RunResult, MetricsError> {
    serde_json::from_str(&read(path)?).map_err(|e| MetricsError::Format { path: path.to_owned(), message: e.to_string() })
}

/// Reads back the `epoch,accuracy` rows written by [`emit`].
pub fn read_series_csv(path: &Path) -> Result<Vec<EpochAccuracy>, MetricsError> {
    let text = read(path)?;
    let bad = |message: String| MetricsError::Format { path: path.to_owned(), message };
    let mut lines = text.lines();
    if lines.next() != Some("epoch,accuracy") {
        return Err(bad("missing `epoch,accuracy` header".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let (e, a) = line.split_once(',').ok_or_else(|| bad(format!("line {}: expected two fields", i + 2)))?;
            Ok(EpochAccuracy {
                epoch: e.parse().map_err(|_| bad(format!("line {}: bad epoch `{e}`", i + 2)))?,
                accuracy: a.parse().map_err(|_| bad(format!("line {}: bad accuracy `{a}`", i + 2)))?,
            })
        })
        .collect()
}
