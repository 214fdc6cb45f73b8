//! Experiment configuration: a JSON document, validated and normalized.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::data::SyntheticSpec;
use crate::model::ModelKind;
use crate::optim::Hyperparams;
use crate::scheduler::{Averaging, Payload, Staleness};
use crate::sim::SpeedModel;

pub const DEFAULT_EPOCHS: usize = 100;
pub const DEFAULT_HIDDEN_DIM: usize = 32;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    /// Malformed JSON, unknown key, missing key or wrong type at `key`.
    #[error("config key `{key}`: {message}")]
    Parse { key: String, message: String },
    #[error("config key `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

impl ConfigError {
    pub fn invalid(key: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Invalid { key: key.into(), reason: reason.into() }
    }

    /// The offending key, when there is one.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::Io { .. } => None,
            ConfigError::Parse { key, .. } | ConfigError::Invalid { key, .. } => Some(key),
        }
    }
}

/// Server policy, written as `gsgm`, `ssp:1`, `dvrg:2`, `ssp:inf` and so on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    Gsgm,
    GsgmSvrg,
    Async,
    AsyncLm,
    Ssp(Staleness),
    SspLm(Staleness),
    Asvrg,
    Dvrg(Staleness),
}

impl Policy {
    pub fn is_svrg(self) -> bool {
        matches!(self, Policy::GsgmSvrg | Policy::Asvrg | Policy::Dvrg(_))
    }

    /// Global (GSGM) or learner-side momentum; everything else uses plain steps.
    pub fn uses_momentum(self) -> bool {
        matches!(self, Policy::Gsgm | Policy::GsgmSvrg | Policy::AsyncLm | Policy::SspLm(_))
    }

    pub fn is_local_momentum(self) -> bool {
        matches!(self, Policy::AsyncLm | Policy::SspLm(_))
    }

    pub fn payload(self) -> Payload {
        if self.is_local_momentum() {
            Payload::Velocity
        } else {
            Payload::Gradient
        }
    }

    /// A short name usable as a directory name.
    pub fn slug(self) -> String {
        self.to_string().replace(':', "-")
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Gsgm => f.write_str("gsgm"),
            Policy::GsgmSvrg => f.write_str("gsgm_svrg"),
            Policy::Async => f.write_str("async"),
            Policy::AsyncLm => f.write_str("async_lm"),
            Policy::Ssp(t) => write!(f, "ssp:{t}"),
            Policy::SspLm(t) => write!(f, "ssp_lm:{t}"),
            Policy::Asvrg => f.write_str("asvrg"),
            Policy::Dvrg(t) => write!(f, "dvrg:{t}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct PolicyParseError(String);

fn parse_threshold(name: &str, arg: Option<&str>) -> Result<Staleness, PolicyParseError> {
    match arg {
        None => Err(PolicyParseError(format!("`{name}` needs a threshold, e.g. `{name}:1`"))),
        Some("inf") => Ok(Staleness::Unbounded),
        Some(t) => t
            .parse()
            .map(Staleness::Bounded)
            .map_err(|_| PolicyParseError(format!("bad threshold `{t}` for `{name}`"))),
    }
}

impl FromStr for Policy {
    type Err = PolicyParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let plain = |p: Policy| match arg {
            None => Ok(p),
            Some(_) => Err(PolicyParseError(format!("`{name}` takes no threshold"))),
        };
        match name {
            "gsgm" => plain(Policy::Gsgm),
            "gsgm_svrg" => plain(Policy::GsgmSvrg),
            "async" => plain(Policy::Async),
            "async_lm" => plain(Policy::AsyncLm),
            "asvrg" => plain(Policy::Asvrg),
            "ssp" => parse_threshold(name, arg).map(Policy::Ssp),
            "ssp_lm" => parse_threshold(name, arg).map(Policy::SspLm),
            "dvrg" => parse_threshold(name, arg).map(Policy::Dvrg),
            _ => Err(PolicyParseError(format!(
                "unknown policy `{s}`; expected gsgm, gsgm_svrg, async, async_lm, ssp:<t>, ssp_lm:<t>, asvrg or dvrg:<t>"
            ))),
        }
    }
}

impl Serialize for Policy {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Policy {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic(SyntheticSpec),
    Idx { train_images: PathBuf, train_labels: PathBuf, test_images: PathBuf, test_labels: PathBuf },
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synthetic(SyntheticSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Hidden units for `mlp1`; must stay 0 for softmax regression.
    pub hidden_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { kind: ModelKind::SoftmaxRegression, hidden_dim: 0 }
    }
}

fn default_noniid() -> f64 {
    1.0
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    pub policy: Policy,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(default)]
    pub hyperparams: Hyperparams,
    /// 1 is the fully label-sorted split; smaller values shuffle part of the data.
    #[serde(default = "default_noniid")]
    pub noniid_fraction: f64,
    /// Total epochs; for SVRG policies this is `outer_loops * inner_loops`.
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub outer_loops: Option<usize>,
    #[serde(default)]
    pub inner_loops: Option<usize>,
    #[serde(default)]
    pub speed_model: SpeedModel,
    /// Constant one-way delay for parameters sent to a learner.
    #[serde(default)]
    pub latency: f64,
    #[serde(default)]
    pub averaging: Averaging,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// A config with every optional field at its default.
    pub fn new(policy: Policy, k: usize) -> Self {
        let mut c: Self = serde_json::from_value(serde_json::json!({ "policy": policy.to_string(), "K": k }))
            .expect("minimal config parses");
        if policy.is_svrg() {
            c.outer_loops = Some(20);
            c.inner_loops = Some(5);
        }
        c.normalize().expect("defaults are valid");
        c
    }

    pub fn total_epochs(&self) -> usize {
        self.epochs.unwrap_or(DEFAULT_EPOCHS)
    }

    /// Checks every range and fills derived defaults (`epochs`, mlp hidden width).
    pub fn normalize(&mut self) -> Result<(), ConfigError> {
        if self.k == 0 {
            return Err(ConfigError::invalid("K", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.noniid_fraction) {
            return Err(ConfigError::invalid(
                "noniid_fraction",
                format!("must lie in [0, 1], got {}", self.noniid_fraction),
            ));
        }
        self.hyperparams.check().map_err(|(f, r)| ConfigError::invalid(format!("hyperparams.{f}"), r))?;
        self.speed_model.check(self.k).map_err(|(f, r)| ConfigError::invalid(format!("speed_model.{f}"), r))?;
        if !(self.latency.is_finite() && self.latency >= 0.0) {
            return Err(ConfigError::invalid("latency", format!("must be finite and >= 0, got {}", self.latency)));
        }
        match self.model.kind {
            ModelKind::SoftmaxRegression if self.model.hidden_dim != 0 => {
                return Err(ConfigError::invalid("model.hidden_dim", "softmax_regression has no hidden layer"));
            }
            ModelKind::Mlp1 if self.model.hidden_dim == 0 => self.model.hidden_dim = DEFAULT_HIDDEN_DIM,
            _ => {}
        }
        if self.policy.is_svrg() {
            let outer = self.outer_loops.ok_or_else(|| ConfigError::invalid("outer_loops", "required for SVRG policies"))?;
            let inner = self.inner_loops.ok_or_else(|| ConfigError::invalid("inner_loops", "required for SVRG policies"))?;
            if outer == 0 {
                return Err(ConfigError::invalid("outer_loops", "must be at least 1"));
            }
            if inner == 0 {
                return Err(ConfigError::invalid("inner_loops", "must be at least 1"));
            }
            match self.epochs {
                Some(e) if e != outer * inner => {
                    return Err(ConfigError::invalid(
                        "epochs",
                        format!("must equal outer_loops * inner_loops = {} for SVRG policies", outer * inner),
                    ));
                }
                _ => self.epochs = Some(outer * inner),
            }
        } else {
            if self.outer_loops.is_some() {
                return Err(ConfigError::invalid("outer_loops", format!("only used by SVRG policies, not {}", self.policy)));
            }
            if self.inner_loops.is_some() {
                return Err(ConfigError::invalid("inner_loops", format!("only used by SVRG policies, not {}", self.policy)));
            }
            self.epochs.get_or_insert(DEFAULT_EPOCHS);
        }
        if self.total_epochs() < 2 {
            return Err(ConfigError::invalid("epochs", "need at least 2 epochs to measure stability"));
        }
        if let DatasetConfig::Synthetic(s) = &self.dataset {
            check_synthetic(s, self.k, self.hyperparams.batch_size)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn check_synthetic(s: &SyntheticSpec, k: usize, batch_size: usize) -> Result<(), ConfigError> {
    if s.num_classes < 2 {
        return Err(ConfigError::invalid("dataset.synthetic.num_classes", "must be at least 2"));
    }
    if s.per_class == 0 {
        return Err(ConfigError::invalid("dataset.synthetic.per_class", "must be positive"));
    }
    if s.test_per_class == 0 {
        return Err(ConfigError::invalid("dataset.synthetic.test_per_class", "must be positive"));
    }
    if s.input_dim == 0 {
        return Err(ConfigError::invalid("dataset.synthetic.input_dim", "must be positive"));
    }
    if !(s.separation.is_finite() && s.separation >= 0.0) {
        return Err(ConfigError::invalid("dataset.synthetic.separation", "must be finite and >= 0"));
    }
    let n = s.num_classes * s.per_class;
    if k > n {
        return Err(ConfigError::invalid("K", format!("{k} learners for only {n} examples")));
    }
    if batch_size > n / k {
        return Err(ConfigError::invalid(
            "hyperparams.batch_size",
            format!("{batch_size} exceeds the smallest shard ({} examples)", n / k),
        ));
    }
    Ok(())
}

/// Parses and normalizes a config from JSON text.
pub fn parse_config_str(json: &str) -> Result<ExperimentConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(json);
    let mut config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(path_error)?;
    config.normalize()?;
    Ok(config)
}

/// Parses and normalizes a config from an already-built JSON value.
pub fn parse_config_value(value: serde_json::Value) -> Result<ExperimentConfig, ConfigError> {
    let mut config: ExperimentConfig = serde_path_to_error::deserialize(value).map_err(path_error)?;
    config.normalize()?;
    Ok(config)
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
    parse_config_str(&text)
}

fn path_error<E: fmt::Display>(e: serde_path_to_error::Error<E>) -> ConfigError {
    let message = e.inner().to_string();
    let mut key = e.path().to_string();
    // missing keys are reported at the parent's path
    for marker in ["unknown field `", "missing field `", "unknown variant `"] {
        if let Some(rest) = message.strip_prefix(marker) {
            if let Some(name) = rest.split('`').next() {
                if key == "." {
                    key = name.to_owned();
                } else if !key.ends_with(name) {
                    key = format!("{key}.{name}");
                }
            }
        }
    }
    ConfigError::Parse { key, message }
}
