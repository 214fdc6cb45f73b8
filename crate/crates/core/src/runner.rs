//! Single runs and sweeps that write result directories.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, Policy};
use crate::metrics::{emit, improvement, stability_gain, Format, MetricsError, RunResult};
use crate::sim::{run_experiment, write_trace_csv, SimError};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{failed} of {total} sweep cells failed: {details}")]
    Sweep { failed: usize, total: usize, details: String },
}

impl RunnerError {
    /// The configuration error behind this failure, if that is what it is.
    pub fn config_error(&self) -> Option<&ConfigError> {
        match self {
            RunnerError::Sim(SimError::Config(e)) => Some(e),
            _ => None,
        }
    }
}

impl From<ConfigError> for RunnerError {
    fn from(e: ConfigError) -> Self {
        RunnerError::Sim(SimError::Config(e))
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> RunnerError + '_ {
    move |source| RunnerError::Io { path: path.to_owned(), source }
}

pub const RESULT_CSV: &str = "result.csv";
pub const RESULT_JSON: &str = "result.json";
pub const TRACE_CSV: &str = "trace.csv";
pub const COMPARISON_CSV: &str = "comparison.csv";

/// Runs `config` and writes `result.csv`, `result_summary.csv`, `result.json`
/// and `trace.csv` into its `output_dir`.
pub fn run(config: &ExperimentConfig) -> Result<RunResult, RunnerError> {
    let out = run_experiment(config)?;
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(io(dir))?;
    let trace_path = dir.join(TRACE_CSV);
    write_trace_csv(&out.trace, &trace_path).map_err(io(&trace_path))?;
    let mut result = out.result;
    result.trace_path = Some(trace_path);
    emit(&result, Format::Csv, &dir.join(RESULT_CSV))?;
    emit(&result, Format::Json, &dir.join(RESULT_JSON))?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Vary {
    Policy(Vec<Policy>),
    K(Vec<usize>),
    NoniidFraction(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub name: String,
    pub config: ExperimentConfig,
}

/// One config per value, each writing to `<output_dir>/<cell name>`.
pub fn sweep_cells(base: &ExperimentConfig, vary: &Vary) -> Vec<Cell> {
    let cell = |name: String, edit: &dyn Fn(&mut ExperimentConfig)| {
        let mut config = base.clone();
        edit(&mut config);
        config.output_dir = base.output_dir.join(&name);
        Cell { name, config }
    };
    match vary {
        Vary::Policy(ps) => ps
            .iter()
            .map(|&p| {
                cell(p.slug(), &|c| {
                    c.policy = p;
                    if p.is_svrg() != base.policy.is_svrg() {
                        c.epochs = None;
                        if !p.is_svrg() {
                            c.outer_loops = None;
                            c.inner_loops = None;
                        }
                    }
                })
            })
            .collect(),
        Vary::K(ks) => ks.iter().map(|&k| cell(format!("k{k}"), &|c| c.k = k)).collect(),
        Vary::NoniidFraction(xs) => {
            xs.iter().map(|&x| cell(format!("noniid-{x}"), &|c| c.noniid_fraction = x)).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub cell: String,
    pub result: RunResult,
    /// Peak-accuracy difference to the baseline, in percentage points.
    pub improvement: f64,
    /// Relative std reduction against the baseline; `None` if the baseline std is 0.
    pub stability_gain: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub rows: Vec<ComparisonRow>,
    pub baseline: String,
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out =
        String::from("cell,policy,K,noniid_fraction,peak_accuracy,final_accuracy,stability,improvement,stability_gain\n");
    for r in rows {
        let c = &r.result.config_echo;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.cell,
            c.policy,
            c.k,
            c.noniid_fraction,
            r.result.peak_accuracy,
            r.result.final_accuracy,
            r.result.stability,
            r.improvement,
            r.stability_gain.map(|g| g.to_string()).unwrap_or_default()
        );
    }
    out
}

/// Runs every cell (in parallel), then writes `comparison.csv` against the
/// baseline cell (`baseline` by name, otherwise the first cell). Finished
/// cells keep their files even when others fail.
pub fn sweep(base: &ExperimentConfig, vary: &Vary, baseline: Option<&str>) -> Result<SweepOutcome, RunnerError> {
    let cells = sweep_cells(base, vary);
    let mut configs = Vec::with_capacity(cells.len());
    for cell in &cells {
        let mut c = cell.config.clone();
        c.normalize()?;
        configs.push(c);
    }
    let baseline = match baseline {
        Some(name) => {
            if !cells.iter().any(|c| c.name == name) {
                let names: Vec<&str> = cells.iter().map(|c| c.name.as_str()).collect();
                return Err(ConfigError::invalid("baseline", format!("`{name}` is not one of {names:?}")).into());
            }
            name.to_owned()
        }
        None => cells.first().map(|c| c.name.clone()).ok_or_else(|| ConfigError::invalid("vary", "no values to sweep"))?,
    };
    let outcomes: Vec<Result<RunResult, RunnerError>> = configs.par_iter().map(run).collect();

    let mut done = Vec::new();
    let mut failures = Vec::new();
    for (cell, outcome) in cells.iter().zip(outcomes) {
        match outcome {
            Ok(r) => done.push((cell.name.clone(), r)),
            Err(e) => failures.push(format!("{}: {e}", cell.name)),
        }
    }
    let base_result = done.iter().find(|(n, _)| *n == baseline).map(|(_, r)| r.clone());
    let rows: Vec<ComparisonRow> = done
        .into_iter()
        .map(|(cell, result)| {
            let (improvement, stability_gain) = match &base_result {
                Some(b) => (
                    improvement(result.peak_accuracy, b.peak_accuracy),
                    stability_gain(result.stability, b.stability).ok(),
                ),
                None => (f64::NAN, None),
            };
            ComparisonRow { cell, result, improvement, stability_gain }
        })
        .collect();
    fs::create_dir_all(&base.output_dir).map_err(io(&base.output_dir))?;
    let path = base.output_dir.join(COMPARISON_CSV);
    fs::write(&path, comparison_csv(&rows)).map_err(io(&path))?;
    if !failures.is_empty() {
        return Err(RunnerError::Sweep { failed: failures.len(), total: cells.len(), details: failures.join("; ") });
    }
    Ok(SweepOutcome { rows, baseline })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DatasetConfig;
    use crate::data::SyntheticSpec;

    fn small(dir: &Path) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(Policy::Gsgm, 4);
        c.dataset = DatasetConfig::Synthetic(SyntheticSpec {
            num_classes: 4,
            per_class: 30,
            test_per_class: 10,
            input_dim: 4,
            separation: 3.0,
        });
        c.hyperparams.batch_size = 10;
        c.epochs = Some(3);
        c.output_dir = dir.to_owned();
        c
    }

    #[test]
    fn run_writes_all_files() {
        let dir = tempfile::tempdir().unwrap();
        let r = run(&small(dir.path())).unwrap();
        for f in [RESULT_CSV, "result_summary.csv", RESULT_JSON, TRACE_CSV] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        assert_eq!(r.trace_path, Some(dir.path().join(TRACE_CSV)));
        assert_eq!(crate::metrics::read_json(&dir.path().join(RESULT_JSON)).unwrap(), r);
    }

    #[test]
    fn cell_names() {
        let base = small(Path::new("out"));
        let names = |v: Vary| sweep_cells(&base, &v).into_iter().map(|c| c.name).collect::<Vec<_>>();
        assert_eq!(names(Vary::K(vec![10, 20, 30])), vec!["k10", "k20", "k30"]);
        assert_eq!(names(Vary::NoniidFraction(vec![0.25, 0.5])), vec!["noniid-0.25", "noniid-0.5"]);
        let ps = ["gsgm", "async", "ssp:1"].map(|s| s.parse().unwrap()).to_vec();
        let cells = sweep_cells(&base, &Vary::Policy(ps));
        assert_eq!(cells.iter().map(|c| c.name.as_str()).collect::<Vec<_>>(), vec!["gsgm", "async", "ssp-1"]);
        assert_eq!(cells[2].config.output_dir, Path::new("out").join("ssp-1"));
    }

    #[test]
    fn sweep_matches_individual_runs_and_keeps_partial_results() {
        let dir = tempfile::tempdir().unwrap();
        let base = small(dir.path());
        let out = sweep(&base, &Vary::K(vec![2, 4]), None).unwrap();
        assert_eq!(out.baseline, "k2");
        assert_eq!(out.rows[0].improvement, 0.0);
        let mut single = base.clone();
        single.k = 4;
        single.output_dir = dir.path().join("k4");
        let alone = run_experiment(&single).unwrap().result;
        assert_eq!(out.rows[1].result.accuracy_series, alone.accuracy_series);

        // with 40 IDX images, 8 learners get shards smaller than a batch
        let failing = tempfile::tempdir().unwrap();
        let images: Vec<Vec<u8>> = (0..40u8).map(|i| vec![i * 6, 255 - i * 6, (i % 4) * 60, 7]).collect();
        let labels: Vec<u8> = (0..40u8).map(|i| i % 4).collect();
        let p = |f: &str| failing.path().join(f);
        fs::write(p("img"), crate::data::encode_idx_images(2, 2, &images)).unwrap();
        fs::write(p("lab"), crate::data::encode_idx_labels(&labels)).unwrap();
        let mut base = small(failing.path());
        base.dataset =
            DatasetConfig::Idx { train_images: p("img"), train_labels: p("lab"), test_images: p("img"), test_labels: p("lab") };
        let e = sweep(&base, &Vary::K(vec![2, 8]), None).unwrap_err();
        assert!(matches!(e, RunnerError::Sweep { failed: 1, total: 2, .. }), "{e}");
        assert!(p("k2").join(RESULT_JSON).is_file());
        let table = fs::read_to_string(p(COMPARISON_CSV)).unwrap();
        assert_eq!(table.lines().count(), 2);
    }
}
