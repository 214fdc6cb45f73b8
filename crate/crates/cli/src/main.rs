use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gsgm::config::{parse_config_value, ConfigError, ExperimentConfig, Policy};
use gsgm::runner::{self, RunnerError, Vary};
use serde_json::{json, Map, Value};

/// Simulates asynchronous parameter-server training on non-IID data.
///
/// A config is a JSON document; every key except `policy` and `K` has a
/// default (run `gsgm validate --policy gsgm -K 10` to see them all). Flags
/// override values from the file.
#[derive(Parser)]
#[command(name = "gsgm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its result directory.
    Run(Common),
    /// Run one experiment per value of a varied field and write a comparison table.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `policy=gsgm,async,ssp:1`, `K=10,20,30` or `noniid_fraction=0.25,0.5,0.75`.
        #[arg(long)]
        vary: String,
        /// Cell to compare against (default: the first one).
        #[arg(long)]
        baseline: Option<String>,
    },
    /// Check a config and print it with all defaults filled in.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config file.
    config: Option<PathBuf>,
    /// gsgm, gsgm_svrg, async, async_lm, ssp:<t>, ssp_lm:<t>, asvrg or dvrg:<t>.
    #[arg(long)]
    policy: Option<String>,
    /// Number of learners.
    #[arg(short = 'K', long = "learners")]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Epochs for SGD policies [default: 100].
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    outer_loops: Option<usize>,
    #[arg(long)]
    inner_loops: Option<usize>,
    /// Label-sorted share of the data, in [0, 1] [default: 1].
    #[arg(long)]
    noniid_fraction: Option<f64>,
    /// Initial learning rate [default: 0.005]; runs without momentum use 10x.
    #[arg(long)]
    eta0: Option<f64>,
    /// Momentum coefficient [default: 0.9].
    #[arg(long)]
    alpha: Option<f64>,
    /// Mini-batch size [default: 100].
    #[arg(long)]
    batch_size: Option<usize>,
    /// softmax_regression or mlp1.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    /// Constant parameter delivery delay in simulated seconds [default: 0].
    #[arg(long)]
    latency: Option<f64>,
    /// Result directory [default: results].
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Directory that relative output directories are placed under.
    #[arg(long, env = "GSGM_OUTPUT_ROOT")]
    output_root: Option<PathBuf>,
}

fn set(obj: &mut Map<String, Value>, path: &[&str], value: Value) {
    let (last, parents) = path.split_last().expect("non-empty key path");
    let mut cur = obj;
    for p in parents {
        let entry = cur.entry(p.to_string()).or_insert_with(|| json!({}));
        if !entry.is_object() {
            *entry = json!({});
        }
        cur = entry.as_object_mut().expect("just made an object");
    }
    cur.insert(last.to_string(), value);
}

fn config_error(e: ConfigError) -> (ExitCode, String) {
    (ExitCode::from(2), format!("config error: {e}"))
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, ConfigError> {
        let mut value = match &self.config {
            Some(path) => {
                let text =
                    std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.clone(), source })?;
                serde_json::from_str(&text).map_err(|e| ConfigError::Parse { key: ".".into(), message: e.to_string() })?
            }
            None => json!({}),
        };
        let obj = value
            .as_object_mut()
            .ok_or_else(|| ConfigError::Parse { key: ".".into(), message: "config must be a JSON object".into() })?;
        let overrides: [(&[&str], Option<Value>); 13] = [
            (&["policy"], self.policy.clone().map(Value::from)),
            (&["K"], self.k.map(Value::from)),
            (&["seed"], self.seed.map(Value::from)),
            (&["epochs"], self.epochs.map(Value::from)),
            (&["outer_loops"], self.outer_loops.map(Value::from)),
            (&["inner_loops"], self.inner_loops.map(Value::from)),
            (&["noniid_fraction"], self.noniid_fraction.map(Value::from)),
            (&["hyperparams", "eta0"], self.eta0.map(Value::from)),
            (&["hyperparams", "alpha"], self.alpha.map(Value::from)),
            (&["hyperparams", "batch_size"], self.batch_size.map(Value::from)),
            (&["model", "kind"], self.model.clone().map(Value::from)),
            (&["model", "hidden_dim"], self.hidden_dim.map(Value::from)),
            (&["latency"], self.latency.map(Value::from)),
        ];
        for (path, v) in overrides {
            if let Some(v) = v {
                set(obj, path, v);
            }
        }
        if let Some(dir) = &self.output_dir {
            set(obj, &["output_dir"], Value::from(dir.to_string_lossy().into_owned()));
        }
        let mut config = parse_config_value(value)?;
        if let Some(root) = &self.output_root {
            if config.output_dir.is_relative() {
                config.output_dir = root.join(&config.output_dir);
            }
        }
        Ok(config)
    }
}

fn parse_vary(spec: &str) -> Result<Vary, ConfigError> {
    let bad = |reason: String| ConfigError::invalid("vary", reason);
    let (key, values) = spec.split_once('=').ok_or_else(|| bad(format!("expected <field>=<v1>,<v2>,..., got `{spec}`")))?;
    let items: Vec<&str> = values.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(bad("no values given".into()));
    }
    let all = |f: &dyn Fn(&str) -> Option<()>| items.iter().all(|s| f(s).is_some());
    match key {
        "policy" => items
            .iter()
            .map(|s| s.parse::<Policy>().map_err(|e| bad(e.to_string())))
            .collect::<Result<_, _>>()
            .map(Vary::Policy),
        "K" | "k" if all(&|s| s.parse::<usize>().ok().map(drop)) => {
            Ok(Vary::K(items.iter().map(|s| s.parse().expect("checked")).collect()))
        }
        "noniid_fraction" if all(&|s| s.parse::<f64>().ok().map(drop)) => {
            Ok(Vary::NoniidFraction(items.iter().map(|s| s.parse().expect("checked")).collect()))
        }
        "K" | "k" | "noniid_fraction" => Err(bad(format!("bad value list `{values}` for `{key}`"))),
        _ => Err(bad(format!("can only vary policy, K or noniid_fraction, not `{key}`"))),
    }
}

fn runner_error(e: RunnerError) -> (ExitCode, String) {
    match e.config_error() {
        Some(_) => (ExitCode::from(2), format!("config error: {e}")),
        None => (ExitCode::from(1), format!("run failed: {e}")),
    }
}

fn summary_line(label: &str, r: &gsgm::metrics::RunResult) -> String {
    format!(
        "{label}: peak {:.4}  final {:.4}  stability {:.4}  updates {}  time {:.1}",
        r.peak_accuracy, r.final_accuracy, r.stability, r.total_updates, r.simulated_time
    )
}

fn execute(cli: Cli) -> Result<(), (ExitCode, String)> {
    match cli.command {
        Command::Validate(common) => {
            let config = common.load().map_err(config_error)?;
            println!("{}", config.to_json());
        }
        Command::Run(common) => {
            let config = common.load().map_err(config_error)?;
            let r = runner::run(&config).map_err(runner_error)?;
            println!("{}", summary_line(&config.policy.to_string(), &r));
            println!("results in {}", display(&config.output_dir));
        }
        Command::Sweep { mut common, vary, baseline } => {
            let vary = parse_vary(&vary).map_err(config_error)?;
            // the varied field need not be set in the base config
            match &vary {
                Vary::Policy(p) if common.policy.is_none() => common.policy = Some(p[0].to_string()),
                Vary::K(k) if common.k.is_none() => common.k = Some(k[0]),
                _ => {}
            }
            let config = common.load().map_err(config_error)?;
            let out = runner::sweep(&config, &vary, baseline.as_deref()).map_err(runner_error)?;
            for row in &out.rows {
                let gain = row.stability_gain.map_or(String::from("n/a"), |g| format!("{:+.1}%", 100.0 * g));
                println!(
                    "{}  improvement {:+.2} pts  stability gain {gain}",
                    summary_line(&row.cell, &row.result),
                    row.improvement
                );
            }
            println!("baseline {}; table in {}", out.baseline, display(&config.output_dir.join(runner::COMPARISON_CSV)));
        }
    }
    Ok(())
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, message)) => {
            eprintln!("gsgm: {message}");
            code
        }
    }
}
