//! The `run`, `compare` and `verify` commands.
//!
//! Each command returns a typed result; `main` maps errors onto exit codes
//! (0 success, 1 runtime failure, 2 configuration error).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{
    AggregationError, ClientRoundInput, CostDrop, Fallback, PidCoefficients, PidConfig, Strategy, StrategyKind,
    DEFAULT_WINDOW,
};
use crate::config::{ConfigError, SimulationConfig};
use crate::metrics::{self, comm_cost_summary, format_float, MetricsError, RoundRecord};
use crate::params::{self, ParameterVector, ParamsError};
use crate::sim::{self, SimError};

pub const EXIT_OK: u8 = 0;
pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;

pub const CONFIG_FILE: &str = "config.txt";
pub const COMPARE_FILE: &str = "compare.csv";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("fixture {path}: {message}")]
    Fixture { path: PathBuf, message: String },
    #[error("{failed} of {total} fixtures failed")]
    VerifyFailed { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Sim(SimError::InvalidConfig(_)) => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub rounds: usize,
    pub final_global_cost: Option<f64>,
    pub mean_participation_fraction: Option<f64>,
    pub final_model: ParameterVector,
}

fn summarize(records: &[RoundRecord], final_model: ParameterVector) -> RunSummary {
    RunSummary {
        rounds: records.len(),
        final_global_cost: records.last().map(|r| r.global_cost),
        mean_participation_fraction: comm_cost_summary(records).ok(),
        final_model,
    }
}

fn write_outputs(dir: &Path, config: &SimulationConfig, run: &sim::SimulationRun) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    metrics::write_records(&run.records, dir)?;
    params::checkpoint_write(&run.state.global_model, dir.join(metrics::FINAL_MODEL_FILE))?;
    fs::write(dir.join(CONFIG_FILE), config.to_text())?;
    Ok(())
}

/// Runs one simulation and writes `records.jsonl`, `summary.csv`,
/// `final_model.fpv` and the effective `config.txt` into `config.out_dir`.
pub fn cmd_run(config: &SimulationConfig) -> Result<RunSummary, CliError> {
    config.validate()?;
    let run = sim::run_simulation(config)?;
    write_outputs(&config.out_dir, config, &run)?;
    Ok(summarize(&run.records, run.state.global_model))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub strategy: StrategyKind,
    pub summary: RunSummary,
    pub fallback_rounds: usize,
}

/// Runs every strategy on one shared federation. Each strategy's outputs go
/// to `out_dir/<strategy>/`, the side-by-side table to `out_dir/compare.csv`.
pub fn cmd_compare(config: &SimulationConfig, strategies: &[StrategyKind]) -> Result<Vec<CompareRow>, CliError> {
    config.validate()?;
    let built: Vec<(StrategyKind, Strategy)> =
        strategies.iter().map(|&kind| config.strategy_for(kind).map(|s| (kind, s))).collect::<Result<_, _>>()?;
    let federation = sim::generate_federation(config)?;

    let mut rows = Vec::with_capacity(built.len());
    for (kind, strategy) in built {
        let run = sim::run_federation(federation.clone(), config, strategy)?;
        let per_strategy = SimulationConfig { strategy: kind, ..config.clone() };
        write_outputs(&config.out_dir.join(kind.as_str()), &per_strategy, &run)?;
        let fallback_rounds = run.records.iter().filter(|r| r.fallback_applied != Fallback::None).count();
        rows.push(CompareRow {
            strategy: kind,
            summary: summarize(&run.records, run.state.global_model),
            fallback_rounds,
        });
    }

    let mut w = csv::Writer::from_path(config.out_dir.join(COMPARE_FILE)).map_err(MetricsError::from)?;
    w.write_record(["strategy", "rounds", "final_global_cost", "mean_participation_fraction", "fallback_rounds"])
        .map_err(MetricsError::from)?;
    for row in &rows {
        w.write_record([
            row.strategy.as_str().to_string(),
            row.summary.rounds.to_string(),
            row.summary.final_global_cost.map(format_float).unwrap_or_default(),
            row.summary.mean_participation_fraction.map(format_float).unwrap_or_default(),
            row.fallback_rounds.to_string(),
        ])
        .map_err(MetricsError::from)?;
    }
    w.flush()?;
    Ok(rows)
}

pub fn format_compare_table(rows: &[CompareRow]) -> String {
    let mut out = format!(
        "{:<12} {:>6} {:>24} {:>12} {:>9}\n",
        "strategy", "rounds", "final_global_cost", "mean_part.", "fallback"
    );
    for row in rows {
        out.push_str(&format!(
            "{:<12} {:>6} {:>24} {:>12} {:>9}\n",
            row.strategy.as_str(),
            row.summary.rounds,
            row.summary.final_global_cost.map(format_float).unwrap_or_else(|| "-".into()),
            row.summary.mean_participation_fraction.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into()),
            row.fallback_rounds,
        ));
    }
    out
}

/// One aggregation case with its expected outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub name: String,
    pub strategy: StrategyKind,
    #[serde(default)]
    pub params: FixtureParams,
    pub clients: Vec<FixtureClient>,
    pub expected: FixtureExpected,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FixtureParams {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub cw_alpha: Option<f64>,
    pub window: Option<usize>,
    pub k_abs: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureClient {
    pub id: u64,
    pub size: u64,
    pub model: Vec<f64>,
    pub cost_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureExpected {
    pub weights: Vec<f64>,
    pub model: Vec<f64>,
    pub fallback: Fallback,
    #[serde(default = "default_fixture_tolerance")]
    pub tolerance: f64,
}

fn default_fixture_tolerance() -> f64 {
    1e-10
}

impl Fixture {
    pub fn strategy(&self) -> Result<Strategy, AggregationError> {
        let p = &self.params;
        Ok(match self.strategy {
            StrategyKind::Fedavg => Strategy::FedAvg,
            StrategyKind::Fedcostwavg => Strategy::FedCostWAvg { alpha: p.cw_alpha.unwrap_or(0.5) },
            StrategyKind::Fedpidavg => {
                let d = PidCoefficients::default();
                Strategy::FedPidAvg(PidConfig {
                    coeffs: PidCoefficients::new(
                        p.alpha.unwrap_or(d.alpha()),
                        p.beta.unwrap_or(d.beta()),
                        p.gamma.unwrap_or(d.gamma()),
                    )?,
                    window: p.window.unwrap_or(DEFAULT_WINDOW),
                    cost_drop: if p.k_abs.unwrap_or(true) { CostDrop::Magnitude } else { CostDrop::Signed },
                })
            }
        })
    }

    pub fn inputs(&self) -> Result<Vec<ClientRoundInput>, ParamsError> {
        self.clients
            .iter()
            .map(|c| {
                Ok(ClientRoundInput {
                    client_id: c.id,
                    size: c.size,
                    model: ParameterVector::new(c.model.clone())?,
                    cost_history: c.cost_history.clone(),
                })
            })
            .collect()
    }

    /// Replays the aggregation and returns a description of every mismatch.
    pub fn check(&self) -> Result<Vec<String>, AggregationError> {
        let (model, weights) = sim::aggregate_with_fallback(&self.strategy()?, &self.inputs()?)?;
        let tol = self.expected.tolerance;
        let mut problems = Vec::new();
        if weights.fallback_applied != self.expected.fallback {
            problems.push(format!(
                "fallback {} != expected {}",
                weights.fallback_applied.as_str(),
                self.expected.fallback.as_str()
            ));
        }
        let mut compare = |what: &str, got: &[f64], want: &[f64]| {
            if got.len() != want.len() {
                problems.push(format!("{what}: length {} != expected {}", got.len(), want.len()));
                return;
            }
            for (i, (g, w)) in got.iter().zip(want).enumerate() {
                if (g - w).abs() >= tol {
                    problems.push(format!("{what}[{i}] = {g:e}, expected {w:e}"));
                }
            }
        };
        compare("weights", &weights.weights, &self.expected.weights);
        compare("model", model.as_slice(), &self.expected.model);
        Ok(problems)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureOutcome {
    pub path: PathBuf,
    pub name: String,
    pub problems: Vec<String>,
}

/// Loads every `*.json` fixture in `dir` (sorted by file name) and checks it.
pub fn verify_fixtures(dir: &Path) -> Result<Vec<FixtureOutcome>, CliError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Fixture { path: dir.to_path_buf(), message: "no *.json fixtures found".into() });
    }
    let mut outcomes = Vec::with_capacity(paths.len());
    for path in paths {
        let text = fs::read_to_string(&path)?;
        let fixture: Fixture = serde_json::from_str(&text)
            .map_err(|e| CliError::Fixture { path: path.clone(), message: e.to_string() })?;
        let problems = fixture.check().unwrap_or_else(|e| vec![format!("aggregation failed: {e}")]);
        outcomes.push(FixtureOutcome { path, name: fixture.name, problems });
    }
    Ok(outcomes)
}

/// Verifies fixtures, printing one line per fixture to `out`.
pub fn cmd_verify(dir: &Path, out: &mut impl std::io::Write) -> Result<usize, CliError> {
    let outcomes = verify_fixtures(dir)?;
    let mut failed = 0;
    for o in &outcomes {
        if o.problems.is_empty() {
            writeln!(out, "PASS {}", o.name)?;
        } else {
            failed += 1;
            writeln!(out, "FAIL {}: {}", o.name, o.problems.join("; "))?;
        }
    }
    if failed > 0 {
        return Err(CliError::VerifyFailed { failed, total: outcomes.len() });
    }
    Ok(outcomes.len())
}
