//! Aggregation strategies: FedAvg, FedCostWAvg and FedPIDAvg.
//!
//! Every strategy produces one scalar weight per participating client and the
//! new global model is `Σ_j w_j · M_j`. The strategies differ only in how the
//! weights are built:
//!
//! * FedAvg: `w_j = s_j / S`.
//! * FedCostWAvg: `w_j = α s_j/S + (1-α) k_j/K` with the ratio
//!   `k_j = c_prev / c_curr`.
//! * FedPIDAvg: `w_j = α s_j/S + β k_j/K + γ m_j/I` with the difference
//!   `k_j = |c_prev - c_curr|` (the derivative term) and `m_j` the sum of the
//!   client's last `window` costs (the integral term). The signed difference
//!   `c_prev - c_curr` is available through [`CostDrop::Signed`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::{self, ParameterVector, ParamsError};

pub type ClientId = u64;

pub const DEFAULT_WINDOW: usize = 6;

/// Relative guard below which a normalizer is treated as zero.
const NORMALIZER_EPS: f64 = 1e-12;

const COEFF_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum AggregationError {
    #[error("no clients to aggregate")]
    EmptyInput,
    #[error("client {client_id} has {len} cost entries, need at least 2")]
    MissingHistory { client_id: ClientId, len: usize },
    #[error("client {client_id} has invalid cost {cost}")]
    InvalidCost { client_id: ClientId, cost: f64 },
    #[error("client {client_id} has size 0")]
    InvalidSize { client_id: ClientId },
    #[error("cost histories differ in length ({expected} vs {actual} for client {client_id})")]
    HistoryLengthMismatch { client_id: ClientId, expected: usize, actual: usize },
    #[error("invalid coefficients: {0}")]
    InvalidCoefficients(String),
    #[error("window must be at least 1")]
    InvalidWindow,
    #[error(transparent)]
    Params(#[from] ParamsError),
}

/// What one client contributes to a round's aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientRoundInput {
    pub client_id: ClientId,
    /// Number of training samples, `s_j`.
    pub size: u64,
    pub model: ParameterVector,
    /// Post-training local costs, oldest first; the last entry is this round's.
    pub cost_history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    None,
    MissingHistory,
    DegenerateNormalizer,
}

impl Fallback {
    pub fn as_str(self) -> &'static str {
        match self {
            Fallback::None => "none",
            Fallback::MissingHistory => "missing_history",
            Fallback::DegenerateNormalizer => "degenerate_normalizer",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationWeights {
    pub client_ids: Vec<ClientId>,
    pub weights: Vec<f64>,
    pub fallback_applied: Fallback,
}

impl AggregationWeights {
    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Mixing coefficients of the size, cost-drop and cost-sum terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidCoefficients {
    alpha: f64,
    beta: f64,
    gamma: f64,
}

impl PidCoefficients {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self, AggregationError> {
        for (name, v) in [("alpha", alpha), ("beta", beta), ("gamma", gamma)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(AggregationError::InvalidCoefficients(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        let sum = alpha + beta + gamma;
        if (sum - 1.0).abs() > COEFF_SUM_TOL {
            return Err(AggregationError::InvalidCoefficients(format!("alpha + beta + gamma must equal 1, got {sum}")));
        }
        Ok(Self { alpha, beta, gamma })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

impl Default for PidCoefficients {
    fn default() -> Self {
        Self { alpha: 0.45, beta: 0.45, gamma: 0.1 }
    }
}

/// How the cost-drop term `k_j` of FedPIDAvg is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostDrop {
    /// `c_prev - c_curr`; negative when the cost went up. The normalizer
    /// `K` can then pass through zero as training converges, which makes
    /// the weights unbounded.
    Signed,
    /// `|c_prev - c_curr|`.
    #[default]
    Magnitude,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidConfig {
    pub coeffs: PidCoefficients,
    pub window: usize,
    pub cost_drop: CostDrop,
}

impl Default for PidConfig {
    fn default() -> Self {
        Self { coeffs: PidCoefficients::default(), window: DEFAULT_WINDOW, cost_drop: CostDrop::Magnitude }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Fedavg,
    Fedcostwavg,
    Fedpidavg,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 3] = [StrategyKind::Fedavg, StrategyKind::Fedcostwavg, StrategyKind::Fedpidavg];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Fedavg => "fedavg",
            StrategyKind::Fedcostwavg => "fedcostwavg",
            StrategyKind::Fedpidavg => "fedpidavg",
        }
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fedavg" => Ok(StrategyKind::Fedavg),
            "fedcostwavg" => Ok(StrategyKind::Fedcostwavg),
            "fedpidavg" => Ok(StrategyKind::Fedpidavg),
            other => Err(format!("unknown strategy `{other}` (expected fedavg, fedcostwavg or fedpidavg)")),
        }
    }
}

/// A fully parameterized aggregation strategy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    FedAvg,
    FedCostWAvg { alpha: f64 },
    FedPidAvg(PidConfig),
}

impl Strategy {
    pub fn kind(&self) -> StrategyKind {
        match self {
            Strategy::FedAvg => StrategyKind::Fedavg,
            Strategy::FedCostWAvg { .. } => StrategyKind::Fedcostwavg,
            Strategy::FedPidAvg(_) => StrategyKind::Fedpidavg,
        }
    }

    pub fn weights(&self, inputs: &[ClientRoundInput]) -> Result<AggregationWeights, AggregationError> {
        match *self {
            Strategy::FedAvg => fedavg_weights(inputs),
            Strategy::FedCostWAvg { alpha } => fedcostwavg_weights(inputs, alpha),
            Strategy::FedPidAvg(cfg) => fedpidavg_weights(inputs, &cfg),
        }
    }
}

fn ids(inputs: &[ClientRoundInput]) -> Vec<ClientId> {
    inputs.iter().map(|c| c.client_id).collect()
}

/// `s_j / S` for every client.
fn size_shares(inputs: &[ClientRoundInput]) -> Result<Vec<f64>, AggregationError> {
    if inputs.is_empty() {
        return Err(AggregationError::EmptyInput);
    }
    if let Some(c) = inputs.iter().find(|c| c.size == 0) {
        return Err(AggregationError::InvalidSize { client_id: c.client_id });
    }
    let total: u64 = inputs.iter().map(|c| c.size).sum();
    let total = total as f64;
    Ok(inputs.iter().map(|c| c.size as f64 / total).collect())
}

/// Checks the preconditions shared by the history-based strategies and
/// returns the common history length.
fn validate_histories(inputs: &[ClientRoundInput]) -> Result<usize, AggregationError> {
    let first = inputs.first().ok_or(AggregationError::EmptyInput)?;
    let expected = first.cost_history.len();
    for c in inputs {
        if let Some(&cost) = c.cost_history.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(AggregationError::InvalidCost { client_id: c.client_id, cost });
        }
        if c.cost_history.len() < 2 {
            return Err(AggregationError::MissingHistory { client_id: c.client_id, len: c.cost_history.len() });
        }
        if c.cost_history.len() != expected {
            return Err(AggregationError::HistoryLengthMismatch {
                client_id: c.client_id,
                expected,
                actual: c.cost_history.len(),
            });
        }
    }
    Ok(expected)
}

fn last_two(history: &[f64]) -> (f64, f64) {
    (history[history.len() - 2], history[history.len() - 1])
}

pub fn fedavg_weights(inputs: &[ClientRoundInput]) -> Result<AggregationWeights, AggregationError> {
    Ok(AggregationWeights { client_ids: ids(inputs), weights: size_shares(inputs)?, fallback_applied: Fallback::None })
}

pub fn fedcostwavg_weights(inputs: &[ClientRoundInput], alpha: f64) -> Result<AggregationWeights, AggregationError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(AggregationError::InvalidCoefficients(format!("alpha = {alpha} is outside [0, 1]")));
    }
    let shares = size_shares(inputs)?;
    validate_histories(inputs)?;
    let ratios: Vec<f64> = inputs
        .iter()
        .map(|c| {
            let (prev, curr) = last_two(&c.cost_history);
            prev / curr
        })
        .collect();
    // every ratio is strictly positive, so K > 0
    let total: f64 = ratios.iter().sum();
    let weights = shares.iter().zip(&ratios).map(|(s, k)| alpha * s + (1.0 - alpha) * (k / total)).collect();
    Ok(AggregationWeights { client_ids: ids(inputs), weights, fallback_applied: Fallback::None })
}

pub fn fedpidavg_weights(inputs: &[ClientRoundInput], cfg: &PidConfig) -> Result<AggregationWeights, AggregationError> {
    if cfg.window == 0 {
        return Err(AggregationError::InvalidWindow);
    }
    let shares = size_shares(inputs)?;
    let len = validate_histories(inputs)?;
    let window = cfg.window.min(len);

    let mut drops = Vec::with_capacity(inputs.len());
    let mut integrals = Vec::with_capacity(inputs.len());
    let mut max_prev = 0.0f64;
    for c in inputs {
        let (prev, curr) = last_two(&c.cost_history);
        max_prev = max_prev.max(prev.abs());
        let k = match cfg.cost_drop {
            CostDrop::Signed => prev - curr,
            CostDrop::Magnitude => (prev - curr).abs(),
        };
        drops.push(k);
        integrals.push(c.cost_history[len - window..].iter().sum::<f64>());
    }
    let k_total: f64 = drops.iter().sum();
    let i_total: f64 = integrals.iter().sum();
    let max_integral = integrals.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let PidCoefficients { mut alpha, beta, gamma } = cfg.coeffs;
    let mut fallback = Fallback::None;
    let use_drop = k_total.abs() > NORMALIZER_EPS * max_prev;
    if !use_drop {
        alpha += beta;
        fallback = Fallback::DegenerateNormalizer;
    }
    let use_integral = i_total.abs() > NORMALIZER_EPS * max_integral;
    if !use_integral {
        alpha += gamma;
        fallback = Fallback::DegenerateNormalizer;
    }

    let weights = (0..inputs.len())
        .map(|j| {
            let mut w = alpha * shares[j];
            if use_drop {
                w += beta * (drops[j] / k_total);
            }
            if use_integral {
                w += gamma * (integrals[j] / i_total);
            }
            w
        })
        .collect();
    Ok(AggregationWeights { client_ids: ids(inputs), weights, fallback_applied: fallback })
}

/// Weights plus the new global model `Σ_j w_j · M_j`.
pub fn aggregate(
    strategy: &Strategy,
    inputs: &[ClientRoundInput],
) -> Result<(ParameterVector, AggregationWeights), AggregationError> {
    let weights = strategy.weights(inputs)?;
    let models: Vec<&ParameterVector> = inputs.iter().map(|c| &c.model).collect();
    let model = params::weighted_sum(&models, &weights.weights)?;
    Ok((model, weights))
}
