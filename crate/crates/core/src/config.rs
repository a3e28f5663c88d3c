//! Simulation configuration: a flat `key = value` text format with dotted
//! section names, plus command-line overrides that use the same keys.
//!
//! ```text
//! # comments start with '#'
//! task.kind = least_squares
//! clients = 8
//! strategy = fedpidavg
//! selection.full_participation_period = 5
//! ```

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{CostDrop, PidCoefficients, PidConfig, Strategy, StrategyKind};
use crate::selection::SelectionMode;

pub const DEFAULT_SEED: u64 = 2022;

/// A rejected configuration, naming the offending key.
#[derive(Debug, Clone, Error, PartialEq)]
#[error("config error at `{field}`: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    LeastSquares,
    Logistic,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::LeastSquares => "least_squares",
            TaskKind::Logistic => "logistic",
        }
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "least_squares" => Ok(TaskKind::LeastSquares),
            "logistic" => Ok(TaskKind::Logistic),
            other => Err(format!("unknown task kind `{other}` (expected least_squares or logistic)")),
        }
    }
}

/// Synthetic stand-in for a real local learning task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub kind: TaskKind,
    pub dim: usize,
    /// Distance of each client's feature mean from the origin.
    pub client_shift: f64,
    pub noise_sigma: f64,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        Self { kind: TaskKind::LeastSquares, dim: 5, client_shift: 1.0, noise_sigma: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub task: SyntheticTask,
    pub clients: usize,
    /// Mean of the Poisson distribution client sizes are drawn from.
    pub lambda: f64,
    pub strategy: StrategyKind,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// FedCostWAvg's size/cost mixing parameter.
    pub cw_alpha: f64,
    pub window: usize,
    /// FedPIDAvg cost-drop reading: `|c_prev - c_curr|` when true, the
    /// signed difference when false.
    pub k_abs: bool,
    pub selection_mode: SelectionMode,
    pub full_participation_period: u64,
    pub rounds: u64,
    pub epochs: u32,
    pub lr: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Early-stopping window in rounds; 0 disables early stopping.
    pub patience: u64,
    pub tol: f64,
    /// Record measured wall time per round. Off by default so output files
    /// stay byte-identical across runs.
    pub wall_clock: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            task: SyntheticTask::default(),
            clients: 8,
            lambda: 20.0,
            strategy: StrategyKind::Fedpidavg,
            alpha: 0.45,
            beta: 0.45,
            gamma: 0.1,
            cw_alpha: 0.5,
            window: 6,
            k_abs: true,
            selection_mode: SelectionMode::PoissonDropout,
            full_participation_period: 5,
            rounds: 50,
            epochs: 1,
            lr: 0.1,
            seed: DEFAULT_SEED,
            out_dir: PathBuf::from("runs/default"),
            patience: 10,
            tol: 1e-6,
            wall_clock: false,
        }
    }
}

pub const KEYS: &[&str] = &[
    "task.kind",
    "task.dim",
    "task.client_shift",
    "task.noise_sigma",
    "clients",
    "lambda",
    "strategy",
    "alpha",
    "beta",
    "gamma",
    "cw_alpha",
    "window",
    "k_abs",
    "selection.mode",
    "selection.full_participation_period",
    "rounds",
    "epochs",
    "lr",
    "seed",
    "out_dir",
    "early_stop.patience",
    "early_stop.tol",
    "metrics.wall_clock",
];

fn parse_value<T: FromStr>(key: &str, raw: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    raw.parse::<T>().map_err(|e| ConfigError::new(key, format!("cannot parse `{raw}`: {e}")))
}

impl SimulationConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<(), ConfigError> {
        let raw = raw.trim();
        match key {
            "task.kind" => self.task.kind = parse_value(key, raw)?,
            "task.dim" => self.task.dim = parse_value(key, raw)?,
            "task.client_shift" => self.task.client_shift = parse_value(key, raw)?,
            "task.noise_sigma" => self.task.noise_sigma = parse_value(key, raw)?,
            "clients" => self.clients = parse_value(key, raw)?,
            "lambda" => self.lambda = parse_value(key, raw)?,
            "strategy" => self.strategy = parse_value(key, raw)?,
            "alpha" => self.alpha = parse_value(key, raw)?,
            "beta" => self.beta = parse_value(key, raw)?,
            "gamma" => self.gamma = parse_value(key, raw)?,
            "cw_alpha" => self.cw_alpha = parse_value(key, raw)?,
            "window" => self.window = parse_value(key, raw)?,
            "k_abs" => self.k_abs = parse_value(key, raw)?,
            "selection.mode" => self.selection_mode = parse_value(key, raw)?,
            "selection.full_participation_period" => self.full_participation_period = parse_value(key, raw)?,
            "rounds" => self.rounds = parse_value(key, raw)?,
            "epochs" => self.epochs = parse_value(key, raw)?,
            "lr" => self.lr = parse_value(key, raw)?,
            "seed" => self.seed = parse_value(key, raw)?,
            "out_dir" => self.out_dir = PathBuf::from(raw),
            "early_stop.patience" => self.patience = parse_value(key, raw)?,
            "early_stop.tol" => self.tol = parse_value(key, raw)?,
            "metrics.wall_clock" => self.wall_clock = parse_value(key, raw)?,
            other => return Err(ConfigError::new(other, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn finite(field: &str, v: f64) -> Result<(), ConfigError> {
            if v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::new(field, format!("must be finite, got {v}")))
            }
        }

        if self.task.dim == 0 {
            return Err(ConfigError::new("task.dim", "must be at least 1"));
        }
        finite("task.client_shift", self.task.client_shift)?;
        if self.task.client_shift < 0.0 {
            return Err(ConfigError::new("task.client_shift", "must be non-negative"));
        }
        finite("task.noise_sigma", self.task.noise_sigma)?;
        if self.task.noise_sigma < 0.0 {
            return Err(ConfigError::new("task.noise_sigma", "must be non-negative"));
        }
        if self.clients == 0 {
            return Err(ConfigError::new("clients", "must be at least 1"));
        }
        finite("lambda", self.lambda)?;
        if self.lambda <= 0.0 {
            return Err(ConfigError::new("lambda", format!("must be positive, got {}", self.lambda)));
        }
        if self.full_participation_period == 0 {
            return Err(ConfigError::new("selection.full_participation_period", "must be at least 1"));
        }
        finite("lr", self.lr)?;
        if self.lr <= 0.0 {
            return Err(ConfigError::new("lr", format!("must be positive, got {}", self.lr)));
        }
        finite("early_stop.tol", self.tol)?;
        if self.tol < 0.0 {
            return Err(ConfigError::new("early_stop.tol", "must be non-negative"));
        }
        self.strategy_for(self.strategy).map(|_| ())
    }

    /// Builds the configured strategy of the given kind, validating the
    /// parameters that kind uses.
    pub fn strategy_for(&self, kind: StrategyKind) -> Result<Strategy, ConfigError> {
        match kind {
            StrategyKind::Fedavg => Ok(Strategy::FedAvg),
            StrategyKind::Fedcostwavg => {
                if !(0.0..=1.0).contains(&self.cw_alpha) {
                    return Err(ConfigError::new("cw_alpha", format!("must lie in [0, 1], got {}", self.cw_alpha)));
                }
                Ok(Strategy::FedCostWAvg { alpha: self.cw_alpha })
            }
            StrategyKind::Fedpidavg => {
                for (field, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(ConfigError::new(field, format!("must lie in [0, 1], got {v}")));
                    }
                }
                let coeffs = PidCoefficients::new(self.alpha, self.beta, self.gamma).map_err(|_| {
                    ConfigError::new(
                        "alpha+beta+gamma",
                        format!(
                            "alpha + beta + gamma must equal 1, got {} + {} + {} = {}",
                            self.alpha,
                            self.beta,
                            self.gamma,
                            self.alpha + self.beta + self.gamma
                        ),
                    )
                })?;
                if self.window == 0 {
                    return Err(ConfigError::new("window", "must be at least 1"));
                }
                let cost_drop = if self.k_abs { CostDrop::Magnitude } else { CostDrop::Signed };
                Ok(Strategy::FedPidAvg(PidConfig { coeffs, window: self.window, cost_drop }))
            }
        }
    }

    pub fn strategy(&self) -> Result<Strategy, ConfigError> {
        self.strategy_for(self.strategy)
    }

    /// Renders the config in the same text format `parse_config` reads.
    pub fn to_text(&self) -> String {
        let fmt_f = |v: f64| format!("{v:?}");
        let pairs: [(&str, String); 23] = [
            ("task.kind", self.task.kind.as_str().into()),
            ("task.dim", self.task.dim.to_string()),
            ("task.client_shift", fmt_f(self.task.client_shift)),
            ("task.noise_sigma", fmt_f(self.task.noise_sigma)),
            ("clients", self.clients.to_string()),
            ("lambda", fmt_f(self.lambda)),
            ("strategy", self.strategy.as_str().into()),
            ("alpha", fmt_f(self.alpha)),
            ("beta", fmt_f(self.beta)),
            ("gamma", fmt_f(self.gamma)),
            ("cw_alpha", fmt_f(self.cw_alpha)),
            ("window", self.window.to_string()),
            ("k_abs", self.k_abs.to_string()),
            ("selection.mode", self.selection_mode.as_str().into()),
            ("selection.full_participation_period", self.full_participation_period.to_string()),
            ("rounds", self.rounds.to_string()),
            ("epochs", self.epochs.to_string()),
            ("lr", fmt_f(self.lr)),
            ("seed", self.seed.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("early_stop.patience", self.patience.to_string()),
            ("early_stop.tol", fmt_f(self.tol)),
            ("metrics.wall_clock", self.wall_clock.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

/// Parses `key = value` lines into `(key, value)` pairs.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            ConfigError::new(format!("line {}", lineno + 1), format!("expected `key = value`, got `{line}`"))
        })?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

/// Loads defaults, then the optional file, then the overrides in order, and
/// validates the result.
///
/// With `require_seed`, a config that never sets `seed` is rejected.
pub fn parse_config(
    file: Option<&Path>,
    overrides: &[(String, String)],
    require_seed: bool,
) -> Result<SimulationConfig, ConfigError> {
    let mut config = SimulationConfig::default();
    let mut seed_set = false;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("config", format!("cannot read {}: {e}", path.display())))?;
        for (key, value) in parse_pairs(&text)? {
            seed_set |= key == "seed";
            config.set(&key, &value)?;
        }
    }
    for (key, value) in overrides {
        seed_set |= key == "seed";
        config.set(key, value)?;
    }
    if require_seed && !seed_set {
        return Err(ConfigError::new("seed", "an explicit seed is required (pass --seed)"));
    }
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_are_valid() {
        let c = parse_config(None, &[], false).unwrap();
        assert_eq!((c.alpha, c.beta, c.gamma), (0.45, 0.45, 0.1));
        assert_eq!(c.cw_alpha, 0.5);
        assert_eq!(c.window, 6);
        assert_eq!(c.strategy, StrategyKind::Fedpidavg);
        assert!(matches!(c.strategy().unwrap(), Strategy::FedPidAvg(p) if p.coeffs == PidCoefficients::default()));
    }

    #[test]
    fn coefficient_sum_violation_names_field() {
        let err = parse_config(None, &kv(&[("alpha", "0.5"), ("beta", "0.5"), ("gamma", "0.5")]), false).unwrap_err();
        assert_eq!(err.field, "alpha+beta+gamma");
        assert!(err.message.contains("must equal 1"), "{}", err.message);
    }

    #[test]
    fn coefficient_sum_ignored_for_other_strategies() {
        let c = parse_config(None, &kv(&[("strategy", "fedavg"), ("alpha", "0.9")]), false).unwrap();
        assert_eq!(c.strategy().unwrap(), Strategy::FedAvg);
        assert!(c.strategy_for(StrategyKind::Fedpidavg).is_err());
    }

    #[test]
    fn rejects_bad_values() {
        let err = parse_config(None, &kv(&[("lambda", "-3")]), false).unwrap_err();
        assert_eq!(err.field, "lambda");
        let err = parse_config(None, &kv(&[("strategy", "fedcostwavg"), ("cw_alpha", "1.5")]), false).unwrap_err();
        assert_eq!(err.field, "cw_alpha");
        let err = parse_config(None, &kv(&[("clients", "0")]), false).unwrap_err();
        assert_eq!(err.field, "clients");
        let err = parse_config(None, &kv(&[("clients", "many")]), false).unwrap_err();
        assert_eq!(err.field, "clients");
        let err = parse_config(None, &kv(&[("nonsense", "1")]), false).unwrap_err();
        assert_eq!(err.field, "nonsense");
        let err = parse_config(None, &kv(&[("selection.full_participation_period", "0")]), false).unwrap_err();
        assert_eq!(err.field, "selection.full_participation_period");
        let err = parse_config(None, &kv(&[("window", "0")]), false).unwrap_err();
        assert_eq!(err.field, "window");
        let err = parse_config(None, &kv(&[("lr", "NaN")]), false).unwrap_err();
        assert_eq!(err.field, "lr");
    }

    #[test]
    fn file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(
            &path,
            "# test\ntask.kind = logistic\nclients = 3  # trailing\n\nseed = 9\nselection.mode = all\n",
        )
        .unwrap();
        let c = parse_config(Some(&path), &kv(&[("clients", "4")]), true).unwrap();
        assert_eq!(c.task.kind, TaskKind::Logistic);
        assert_eq!(c.clients, 4);
        assert_eq!(c.seed, 9);
        assert_eq!(c.selection_mode, SelectionMode::All);
    }

    #[test]
    fn seed_can_be_required() {
        let err = parse_config(None, &[], true).unwrap_err();
        assert_eq!(err.field, "seed");
        assert!(parse_config(None, &kv(&[("seed", "1")]), true).is_ok());
    }

    #[test]
    fn malformed_line() {
        let err = parse_pairs("clients 3").unwrap_err();
        assert_eq!(err.field, "line 1");
    }

    #[test]
    fn text_round_trip() {
        let mut c = SimulationConfig::default();
        c.task.noise_sigma = 0.1 + 0.2;
        c.k_abs = false;
        c.out_dir = PathBuf::from("out/x");
        let mut back = SimulationConfig::default();
        for (k, v) in parse_pairs(&c.to_text()).unwrap() {
            back.set(&k, &v).unwrap();
        }
        assert_eq!(back, c);
        assert_eq!(parse_pairs(&c.to_text()).unwrap().len(), KEYS.len());
    }
}
