//! Sweep configuration: JSON schema, built-in presets and validation.

use std::path::{Path, PathBuf};

use aprox_core::models::{BatchStrategy, ModelKind};
use aprox_core::{NoiseSpec, ProblemKind};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown preset `{0}` (known: {known})", known = PRESETS.join(", "))]
    UnknownPreset(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Names accepted by [`preset`].
pub const PRESETS: [&str; 6] = [
    "paper-linreg",
    "paper-absreg",
    "paper-logistic",
    "desk-linreg",
    "desk-absreg",
    "desk-logistic",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Linear model of the batch average.
    Sgm,
    /// Exact prox of the batch average.
    Prox,
    /// Truncated model of the batch average (same update as `pma`).
    Truncated,
    /// Average of single-sample truncated steps.
    Pia,
    /// Polyak-truncated step on the batch average.
    Pma,
    /// Average of truncated models.
    Pam,
}

impl Method {
    pub fn strategy(self) -> BatchStrategy {
        match self {
            Method::Sgm => BatchStrategy::ModelOfAverage(ModelKind::Linear),
            Method::Prox => BatchStrategy::ModelOfAverage(ModelKind::FullProx),
            Method::Truncated => BatchStrategy::ModelOfAverage(ModelKind::Truncated),
            Method::Pia => BatchStrategy::IterateAverage(ModelKind::Truncated),
            Method::Pma => BatchStrategy::TruncatedAverage,
            Method::Pam => BatchStrategy::AverageOfTruncated,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Sgm => "sgm",
            Method::Prox => "prox",
            Method::Truncated => "truncated",
            Method::Pia => "pia",
            Method::Pma => "pma",
            Method::Pam => "pam",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Method::Sgm, Method::Prox, Method::Truncated, Method::Pia, Method::Pma, Method::Pam]
            .into_iter()
            .find(|m| m.label() == s)
    }

    /// The five methods compared in the profiles.
    pub fn standard() -> [Method; 5] {
        [Method::Sgm, Method::Prox, Method::Pia, Method::Pma, Method::Pam]
    }
}

/// How the grid value `α₀` turns into a stepsize sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    /// `α_k = α₀ k^{−β}`.
    Poly { beta: f64 },
    /// `α_k = 1/(L + η₀ k^{power})` with `η₀ = 1/α₀` and `L` from the data.
    Smoothness { power: f64 },
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec::Poly { beta: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub method: Method,
    #[serde(default)]
    pub accelerated: bool,
    #[serde(default)]
    pub schedule: ScheduleSpec,
}

impl MethodSpec {
    pub fn new(method: Method, accelerated: bool) -> Self {
        Self {
            method,
            accelerated,
            schedule: ScheduleSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub n_samples: usize,
    pub dim: usize,
    #[serde(default)]
    pub noise: NoiseSpec,
}

impl ProblemSpec {
    /// Column value identifying the problem in result tables.
    pub fn label(&self) -> String {
        format!("{}-{}x{}", self.kind.label(), self.n_samples, self.dim)
    }

    fn has_smoothness(&self) -> bool {
        match self.kind {
            ProblemKind::LinReg | ProblemKind::Logistic => true,
            ProblemKind::PowerReg { gamma } | ProblemKind::TwoPoint { gamma, .. } => gamma == 1.0,
            ProblemKind::AbsReg | ProblemKind::HalfspaceIntersection => false,
        }
    }

    fn has_full_prox(&self) -> bool {
        match self.kind {
            ProblemKind::PowerReg { gamma } | ProblemKind::TwoPoint { gamma, .. } => gamma == 0.0 || gamma == 1.0,
            _ => true,
        }
    }
}

fn default_conds() -> Vec<Option<f64>> {
    vec![None]
}

fn default_alpha0() -> Vec<f64> {
    (-4..=5).map(|i| 10f64.powf(i as f64 / 2.0)).collect()
}

fn default_batch_sizes() -> Vec<usize> {
    vec![1, 4, 8, 16, 32, 64]
}

fn default_seeds() -> usize {
    30
}

fn default_epsilon() -> f64 {
    1e-2
}

fn default_max_samples() -> usize {
    100_000
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_name() -> String {
    "custom".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub problems: Vec<ProblemSpec>,
    /// Condition numbers imposed on `A`; `null` keeps the raw design.
    #[serde(default = "default_conds")]
    pub conds: Vec<Option<f64>>,
    pub methods: Vec<MethodSpec>,
    #[serde(default = "default_alpha0")]
    pub alpha0: Vec<f64>,
    #[serde(default = "default_batch_sizes")]
    pub batch_sizes: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Target gap relative to the gap at the start point.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Sample budget per run; a run with batch size `m` gets `⌈K/m⌉` steps.
    #[serde(default = "default_max_samples")]
    pub max_samples: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Worker threads; all cores when absent.
    #[serde(default)]
    pub jobs: Option<usize>,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.problems.is_empty() {
            return bad("`problems` is empty".into());
        }
        if self.methods.is_empty() {
            return bad("`methods` is empty".into());
        }
        if self.alpha0.is_empty() {
            return bad("`alpha0` is empty".into());
        }
        if let Some(a) = self.alpha0.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
            return bad(format!("`alpha0` entries must be positive and finite, got {a}"));
        }
        if self.batch_sizes.is_empty() || self.batch_sizes.contains(&0) {
            return bad("`batch_sizes` must be non-empty with entries >= 1".into());
        }
        if self.conds.is_empty() {
            return bad("`conds` is empty".into());
        }
        if let Some(c) = self.conds.iter().flatten().find(|c| !(**c >= 1.0 && c.is_finite())) {
            return bad(format!("condition numbers must be finite and >= 1, got {c}"));
        }
        if self.seeds == 0 {
            return bad("`seeds` must be at least 1".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("`epsilon` must lie in (0, 1), got {}", self.epsilon));
        }
        if self.max_samples == 0 {
            return bad("`max_samples` must be at least 1".into());
        }
        if self.jobs == Some(0) {
            return bad("`jobs` must be at least 1".into());
        }
        for spec in &self.methods {
            match spec.schedule {
                ScheduleSpec::Poly { beta } if !(0.0..=1.0).contains(&beta) => {
                    return bad(format!("{}: beta must lie in [0, 1], got {beta}", spec.method.label()));
                }
                ScheduleSpec::Smoothness { power } if power != 0.0 && power != 0.5 => {
                    return bad(format!("{}: smoothness power must be 0 or 0.5, got {power}", spec.method.label()));
                }
                _ => {}
            }
        }
        for p in &self.problems {
            if p.n_samples == 0 || p.dim == 0 {
                return bad(format!("{}: sizes must be at least 1", p.label()));
            }
            if matches!(p.kind, ProblemKind::TwoPoint { .. }) && self.conds.iter().any(Option::is_some) {
                return bad("the two-point problem has no design to condition".into());
            }
            for spec in &self.methods {
                if matches!(spec.schedule, ScheduleSpec::Smoothness { .. }) && !p.has_smoothness() {
                    return bad(format!(
                        "smoothness-adaptive schedule for {} on {}: the loss has no smoothness constant",
                        spec.method.label(),
                        p.kind.label()
                    ));
                }
                if spec.method == Method::Prox && !p.has_full_prox() {
                    return bad(format!("full prox is not available on {}", p.kind.label()));
                }
            }
        }
        Ok(())
    }

    /// Keeps only methods with the given acceleration flag, or forces it on
    /// all of them when none match.
    pub fn restrict_accelerated(&mut self, accelerated: bool) {
        if self.methods.iter().any(|m| m.accelerated == accelerated) {
            self.methods.retain(|m| m.accelerated == accelerated);
        } else {
            for m in &mut self.methods {
                m.accelerated = accelerated;
            }
        }
    }
}

fn parse_error(e: serde_json::Error) -> ConfigError {
    ConfigError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

/// Parses and validates a JSON config.
pub fn parse_config(text: &str) -> Result<SweepConfig, ConfigError> {
    let cfg: SweepConfig = serde_json::from_str(text).map_err(parse_error)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<SweepConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

fn all_methods() -> Vec<MethodSpec> {
    [false, true]
        .into_iter()
        .flat_map(|acc| Method::standard().map(|m| MethodSpec::new(m, acc)))
        .collect()
}

/// Built-in experiment grids. `paper-*` use the published sizes and grids;
/// `desk-*` shrink the data and grids to run in minutes.
pub fn preset(name: &str) -> Result<SweepConfig, ConfigError> {
    let (kind, noise, desk) = match name {
        "paper-linreg" => (ProblemKind::LinReg, NoiseSpec::GaussianResidual { sigma: 0.5 }, false),
        "paper-absreg" => (ProblemKind::AbsReg, NoiseSpec::LaplaceResidual { sigma: 0.5 }, false),
        "paper-logistic" => (ProblemKind::Logistic, NoiseSpec::LabelFlip { p: 0.01 }, false),
        "desk-linreg" => (ProblemKind::LinReg, NoiseSpec::GaussianResidual { sigma: 0.5 }, true),
        "desk-absreg" => (ProblemKind::AbsReg, NoiseSpec::None, true),
        "desk-logistic" => (ProblemKind::Logistic, NoiseSpec::LabelFlip { p: 0.01 }, true),
        other => return Err(ConfigError::UnknownPreset(other.into())),
    };
    let (n_samples, dim) = if desk { (200, 20) } else { (1000, 40) };
    let cfg = SweepConfig {
        name: name.into(),
        problems: vec![ProblemSpec {
            kind,
            n_samples,
            dim,
            noise,
        }],
        conds: if desk { vec![None] } else { vec![Some(1.0), Some(10.0), Some(100.0)] },
        methods: all_methods(),
        alpha0: default_alpha0(),
        batch_sizes: if desk { vec![1, 4, 8, 16] } else { default_batch_sizes() },
        seeds: if desk { 5 } else { default_seeds() },
        master_seed: 0,
        epsilon: default_epsilon(),
        max_samples: if desk { 20_000 } else { default_max_samples() },
        out: default_out(),
        jobs: None,
    };
    cfg.validate()?;
    Ok(cfg)
}
