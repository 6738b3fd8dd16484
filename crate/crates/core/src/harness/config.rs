//! TOML experiment configuration with sections `task`, `optimizer`,
//! `schedule`, `metrics` and `run`. Unknown keys are rejected; every
//! default is materialized in the parsed value.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::{MetricConfig, Reference};
use crate::optim::{ScalingMode, ScheduleKind};
use crate::sharpness::SharpnessConfig;
use crate::tasks::{ModelKind, SyntheticKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    LeastSquares,
    LogisticBlobs,
    IsotropicQuadratic,
    Libsvm,
}

impl DatasetKind {
    pub fn synthetic(self) -> Option<SyntheticKind> {
        match self {
            DatasetKind::LeastSquares => Some(SyntheticKind::LeastSquares),
            DatasetKind::LogisticBlobs => Some(SyntheticKind::LogisticBlobs),
            DatasetKind::IsotropicQuadratic => Some(SyntheticKind::IsotropicQuadratic),
            DatasetKind::Libsvm => None,
        }
    }
}

/// `"full"` or a positive row count.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BatchSize {
    #[default]
    #[serde(with = "full_tag")]
    Full,
    Rows(usize),
}

mod full_tag {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("full")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let s = String::deserialize(d)?;
        if s == "full" {
            Ok(())
        } else {
            Err(D::Error::custom(format!(
                "expected \"full\" or an integer, got \"{s}\""
            )))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub model: ModelKind,
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub init_seed: u64,
    pub dataset: DatasetKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub data_seed: u64,
    #[serde(default)]
    pub batch_size: BatchSize,
    #[serde(default = "yes")]
    pub shuffle: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Gd,
    Sgdm,
    Adamw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub scaling: ScalingMode,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default)]
    pub kind: ScheduleKind,
    #[serde(default)]
    pub warmup_steps: u64,
    #[serde(default = "default_step_period")]
    pub step_period: u64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            kind: ScheduleKind::Constant,
            warmup_steps: 0,
            step_period: default_step_period(),
        }
    }
}

/// When full-dataset quantities (`F`, `∇F`, gradient deviation, ratio) are
/// evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FullEval {
    Off,
    /// At every cadence point.
    Cadence,
    /// At the last step of every epoch.
    #[default]
    EpochEnd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    #[serde(default = "default_ema_beta")]
    pub ema_beta: f64,
    #[serde(default = "one")]
    pub cadence: u64,
    #[serde(default = "yes")]
    pub epoch_reset: bool,
    #[serde(default)]
    pub reference: Reference,
    #[serde(default = "default_zero_disp")]
    pub zero_disp_epsilon: f64,
    #[serde(default)]
    pub full_eval: FullEval,
    /// Power-iteration sharpness every this many epochs, at epoch end; 0 = off.
    #[serde(default)]
    pub sharpness_every_epochs: u64,
    #[serde(default = "default_sharpness_iters")]
    pub sharpness_max_iters: usize,
    #[serde(default = "default_sharpness_tol")]
    pub sharpness_rel_tol: f64,
    #[serde(default)]
    pub sharpness_seed: u64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        toml::from_str("").expect("all metrics keys have defaults")
    }
}

impl MetricsConfig {
    pub fn metric_config(&self) -> MetricConfig {
        MetricConfig {
            ema_beta: self.ema_beta,
            cadence: self.cadence,
            epoch_reset: self.epoch_reset,
            reference: self.reference,
            zero_disp_epsilon: self.zero_disp_epsilon,
        }
    }

    pub fn sharpness_config(&self) -> SharpnessConfig {
        SharpnessConfig {
            max_iters: self.sharpness_max_iters,
            rel_tol: self.sharpness_rel_tol,
            seed: self.sharpness_seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_star_path: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskConfig,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    pub run: RunConfig,
}

fn yes() -> bool {
    true
}
fn one() -> u64 {
    1
}
fn default_momentum() -> f64 {
    0.9
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_step_period() -> u64 {
    30
}
fn default_ema_beta() -> f64 {
    0.99
}
fn default_zero_disp() -> f64 {
    1e-12
}
fn default_sharpness_iters() -> usize {
    SharpnessConfig::default().max_iters
}
fn default_sharpness_tol() -> f64 {
    SharpnessConfig::default().rel_tol
}
fn default_name() -> String {
    "run".into()
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Pulls the first backtick-quoted token out of a serde message, which is
/// where serde names the offending key.
fn key_from_message(msg: &str) -> Option<String> {
    let start = msg.find('`')? + 1;
    let len = msg[start..].find('`')?;
    Some(msg[start..start + len].to_string())
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let msg = e.message().to_string();
        let key = key_from_message(&msg).unwrap_or_else(|| "<document>".into());
        Error::config(key, msg)
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Serializes a config so that `parse_config(&emit_config(c)) == c`.
pub fn emit_config(cfg: &ExperimentConfig) -> String {
    toml::to_string(cfg).expect("config is always representable in TOML")
}

fn check(cond: bool, key: &str, message: impl Into<String>) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::config(key, message))
    }
}

fn finite_nonneg(v: f64) -> bool {
    v.is_finite() && v >= 0.0
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let t = &self.task;
        match t.dataset {
            DatasetKind::Libsvm => {
                let path = t
                    .path
                    .as_ref()
                    .ok_or_else(|| Error::config("task.path", "required for dataset = \"libsvm\""))?;
                check(
                    path.is_file(),
                    "task.path",
                    format!("file {} does not exist", path.display()),
                )?;
                check(t.n.is_none(), "task.n", "not allowed for libsvm datasets")?;
                check(t.dim.is_none(), "task.dim", "not allowed for libsvm datasets")?;
            }
            _ => {
                check(t.path.is_none(), "task.path", "only allowed for libsvm datasets")?;
                let n =
                    t.n.ok_or_else(|| Error::config("task.n", "required for synthetic datasets"))?;
                let d = t
                    .dim
                    .ok_or_else(|| Error::config("task.dim", "required for synthetic datasets"))?;
                check(n >= 1, "task.n", "must be >= 1")?;
                check(d >= 1, "task.dim", "must be >= 1")?;
                if let BatchSize::Rows(b) = t.batch_size {
                    check(b <= n, "task.batch_size", format!("must be <= n = {n}"))?;
                }
                if t.dataset == DatasetKind::IsotropicQuadratic {
                    check(n == d, "task.n", "isotropic_quadratic needs n == dim")?;
                }
            }
        }
        check(finite_nonneg(t.noise), "task.noise", "must be a finite value >= 0")?;
        if let BatchSize::Rows(b) = t.batch_size {
            check(b >= 1, "task.batch_size", "must be >= 1")?;
        }
        match t.model {
            ModelKind::MlpTanh => {
                check(
                    !t.hidden.is_empty(),
                    "task.hidden",
                    "mlp_tanh needs at least one hidden layer",
                )?;
                check(t.hidden.iter().all(|&h| h >= 1), "task.hidden", "widths must be >= 1")?;
            }
            _ => check(t.hidden.is_empty(), "task.hidden", "only allowed for mlp_tanh")?,
        }
        let real_labels = matches!(t.dataset, DatasetKind::LeastSquares | DatasetKind::IsotropicQuadratic);
        check(
            real_labels == (t.model == ModelKind::SquaredLinear),
            "task.model",
            "squared_linear needs a regression dataset; classifiers need class labels",
        )?;

        let o = &self.optimizer;
        check(
            o.learning_rate.is_finite() && o.learning_rate > 0.0,
            "optimizer.learning_rate",
            "must be > 0",
        )?;
        check(
            (0.0..1.0).contains(&o.momentum),
            "optimizer.momentum",
            "must be in [0, 1)",
        )?;
        check((0.0..1.0).contains(&o.beta1), "optimizer.beta1", "must be in [0, 1)")?;
        check((0.0..1.0).contains(&o.beta2), "optimizer.beta2", "must be in [0, 1)")?;
        check(o.eps.is_finite() && o.eps > 0.0, "optimizer.eps", "must be > 0")?;
        check(finite_nonneg(o.weight_decay), "optimizer.weight_decay", "must be >= 0")?;

        check(self.schedule.step_period >= 1, "schedule.step_period", "must be >= 1")?;

        let m = &self.metrics;
        self.metrics.metric_config().validate()?;
        check(
            m.sharpness_max_iters >= 1,
            "metrics.sharpness_max_iters",
            "must be >= 1",
        )?;
        check(
            m.sharpness_rel_tol.is_finite() && m.sharpness_rel_tol > 0.0,
            "metrics.sharpness_rel_tol",
            "must be > 0",
        )?;

        let r = &self.run;
        check(
            r.steps.is_some() != r.epochs.is_some(),
            "run.steps",
            "exactly one of run.steps and run.epochs is required",
        )?;
        if let Some(p) = &r.x_star_path {
            check(
                p.is_file(),
                "run.x_star_path",
                format!("file {} does not exist", p.display()),
            )?;
        }
        check(!r.name.is_empty(), "run.name", "must not be empty")?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical emitted document.
    pub fn digest(&self) -> String {
        hex(&Sha256::digest(emit_config(self).as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[task]
model = "squared_linear"
dataset = "least_squares"
n = 50
dim = 3

[optimizer]
kind = "gd"
learning_rate = 0.1

[run]
steps = 100
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.metrics.ema_beta, 0.99);
        assert_eq!(cfg.metrics.cadence, 1);
        assert!(cfg.metrics.epoch_reset);
        assert_eq!(cfg.metrics.reference, Reference::PrevIterate);
        assert_eq!(cfg.task.batch_size, BatchSize::Full);
        assert_eq!(cfg.optimizer.scaling, ScalingMode::None);
        assert_eq!(cfg.schedule.kind, ScheduleKind::Constant);
        assert_eq!(cfg.run.output_dir, PathBuf::from("out"));
    }

    #[test]
    fn typo_is_named() {
        let text = MINIMAL.replace("learning_rate", "learning_rte");
        let err = parse_config(&text).unwrap_err();
        match err {
            Error::Config { key, .. } => assert_eq!(key, "learning_rte"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_key_is_named() {
        let text = MINIMAL.replace("learning_rate = 0.1", "");
        let err = parse_config(&text).unwrap_err();
        assert!(
            matches!(err, Error::Config { ref key, .. } if key == "learning_rate"),
            "{err}"
        );
    }

    #[test]
    fn out_of_range_values_are_named() {
        let cases = [
            (
                MINIMAL.replace("[run]", "[metrics]\nema_beta = 1.0\n[run]"),
                "metrics.ema_beta",
            ),
            (
                MINIMAL.replace("[run]", "[metrics]\ncadence = 0\n[run]"),
                "metrics.cadence",
            ),
            (
                MINIMAL.replace("learning_rate = 0.1", "learning_rate = -1.0"),
                "optimizer.learning_rate",
            ),
            (MINIMAL.replace("steps = 100", "steps = 10\nepochs = 2"), "run.steps"),
            (MINIMAL.replace("n = 50", "n = 50\nbatch_size = 51"), "task.batch_size"),
            (MINIMAL.replace("dim = 3", "dim = 3\nhidden = [4]"), "task.hidden"),
            (
                MINIMAL.replace("[run]", "[run]\nx_star_path = \"/nonexistent/x.ckpt\""),
                "run.x_star_path",
            ),
            (
                MINIMAL.replace(
                    "dataset = \"least_squares\"\nn = 50\ndim = 3",
                    "dataset = \"libsvm\"\npath = \"/nonexistent.svm\"",
                ),
                "task.path",
            ),
        ];
        for (text, want) in cases {
            match parse_config(&text) {
                Err(Error::Config { key, .. }) => assert_eq!(key, want),
                other => panic!("{want}: {other:?}"),
            }
        }
    }

    #[test]
    fn batch_size_forms() {
        let cfg = parse_config(&MINIMAL.replace("n = 50", "n = 50\nbatch_size = 8")).unwrap();
        assert_eq!(cfg.task.batch_size, BatchSize::Rows(8));
        let cfg = parse_config(&MINIMAL.replace("n = 50", "n = 50\nbatch_size = \"full\"")).unwrap();
        assert_eq!(cfg.task.batch_size, BatchSize::Full);
        assert!(parse_config(&MINIMAL.replace("n = 50", "n = 50\nbatch_size = \"half\"")).is_err());
    }

    #[test]
    fn emit_parse_fixed_point() {
        let full = MINIMAL.replace(
            "[run]",
            "[metrics]\nsharpness_every_epochs = 2\nfull_eval = \"cadence\"\n[run]\nname = \"x\"",
        );
        for text in [MINIMAL.to_string(), full] {
            let cfg = parse_config(&text).unwrap();
            let again = parse_config(&emit_config(&cfg)).unwrap();
            assert_eq!(again, cfg);
            assert_eq!(emit_config(&again), emit_config(&cfg));
        }
    }
}
