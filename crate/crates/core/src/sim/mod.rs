//! Synthetic federations and the federated training loop.
//!
//! Each round broadcasts the global model, trains it locally on every
//! selected client, collects the local models and costs, and aggregates them
//! into the next global model.

pub mod task;

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::aggregation::{self, AggregationError, ClientId, ClientRoundInput, Fallback, Strategy};
use crate::config::{ConfigError, SimulationConfig, TaskKind};
use crate::metrics::RoundRecord;
use crate::params::{ParameterVector, ParamsError};
use crate::selection::{self, SelectionError, SelectionMode, SelectionPolicy};

pub use task::{pooled_loss, LocalDataset, COST_FLOOR};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    InvalidConfig(#[from] ConfigError),
    #[error("client {client_id} diverged in local training at epoch {epoch}")]
    Divergence { client_id: ClientId, epoch: u32 },
    #[error("client {0} has an empty dataset")]
    EmptyDataset(ClientId),
    #[error("learning rate must be positive and finite, got {0}")]
    InvalidLearningRate(f64),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Params(#[from] ParamsError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientRecord {
    pub id: ClientId,
    pub size: u64,
    pub data: LocalDataset,
    /// One entry per completed round; skipped rounds repeat the last cost.
    pub cost_history: Vec<f64>,
    /// Parameters after this client's most recent local training.
    pub params: ParameterVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationState {
    pub global_model: ParameterVector,
    /// Ascending by id.
    pub clients: Vec<ClientRecord>,
    pub round_index: u64,
    pub rng_seed: u64,
}

impl FederationState {
    pub fn sizes(&self) -> BTreeMap<ClientId, u64> {
        self.clients.iter().map(|c| (c.id, c.size)).collect()
    }

    pub fn size_list(&self) -> Vec<u64> {
        self.clients.iter().map(|c| c.size).collect()
    }

    /// Cost of `model` over the union of all client datasets.
    pub fn pooled_cost(&self, model: &ParameterVector) -> f64 {
        pooled_loss(self.clients.iter().map(|c| &c.data), model.as_slice())
    }

    pub fn global_cost(&self) -> f64 {
        self.pooled_cost(&self.global_model)
    }
}

/// Everything a round needs besides the federation itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundPlan {
    pub strategy: Strategy,
    pub policy: SelectionPolicy,
    pub epochs: u32,
    pub lr: f64,
    pub wall_clock: bool,
}

fn client_rng(seed: u64, id: ClientId) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id + 1);
    rng
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Draws `n` client sizes from `Poisson(λ)`, redrawing zeros.
pub fn draw_sizes(rng: &mut impl Rng, n: usize, lambda: f64) -> Result<Vec<u64>, ConfigError> {
    let poisson = Poisson::new(lambda).map_err(|e| ConfigError::new("lambda", e.to_string()))?;
    Ok((0..n)
        .map(|_| loop {
            let x: f64 = poisson.sample(rng);
            if x >= 1.0 {
                break x as u64;
            }
        })
        .collect())
}

pub fn generate_federation(config: &SimulationConfig) -> Result<FederationState, SimError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let truth: Vec<f64> = (0..config.task.dim).map(|_| normal(&mut rng)).collect();
    let sizes = draw_sizes(&mut rng, config.clients, config.lambda)?;
    build_federation(config, &truth, &sizes)
}

/// Like [`generate_federation`] but with caller-chosen client sizes; the
/// client count is `sizes.len()`.
pub fn generate_federation_with_sizes(config: &SimulationConfig, sizes: &[u64]) -> Result<FederationState, SimError> {
    config.validate()?;
    if sizes.is_empty() {
        return Err(ConfigError::new("clients", "at least one client size is required").into());
    }
    if sizes.contains(&0) {
        return Err(ConfigError::new("clients", "client sizes must be positive").into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let truth: Vec<f64> = (0..config.task.dim).map(|_| normal(&mut rng)).collect();
    build_federation(config, &truth, sizes)
}

fn build_federation(config: &SimulationConfig, truth: &[f64], sizes: &[u64]) -> Result<FederationState, SimError> {
    let dim = config.task.dim;
    let init = ParameterVector::zeros(dim)?;
    let clients = sizes
        .iter()
        .enumerate()
        .map(|(j, &size)| {
            let id = j as ClientId;
            let data = client_dataset(config, truth, id, size);
            ClientRecord { id, size, data, cost_history: Vec::new(), params: init.clone() }
        })
        .collect();
    Ok(FederationState { global_model: init, clients, round_index: 0, rng_seed: config.seed })
}

/// Client `id`'s features are `N(μ_id, I)` with `|μ_id| = client_shift` in a
/// client-specific direction; targets follow the shared ground truth.
fn client_dataset(config: &SimulationConfig, truth: &[f64], id: ClientId, size: u64) -> LocalDataset {
    let task = &config.task;
    let dim = task.dim;
    let mut rng = client_rng(config.seed, id);
    let direction: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mean: Vec<f64> =
        if norm > 0.0 { direction.iter().map(|v| task.client_shift * v / norm).collect() } else { vec![0.0; dim] };

    let n = size as usize;
    let mut features = Vec::with_capacity(n * dim);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = mean.iter().map(|m| m + normal(&mut rng)).collect();
        let signal: f64 = row.iter().zip(truth).map(|(x, w)| x * w).sum();
        let noise = task.noise_sigma * normal(&mut rng);
        targets.push(match task.kind {
            TaskKind::LeastSquares => signal + noise,
            TaskKind::Logistic => {
                if signal + noise > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        });
        features.extend_from_slice(&row);
    }
    LocalDataset { kind: task.kind, dim, features, targets }
}

/// Full-batch gradient descent from `global_model` on the client's own data.
///
/// Returns the trained parameters and their local cost, floored at
/// [`COST_FLOOR`].
pub fn local_train(
    client: &ClientRecord,
    global_model: &ParameterVector,
    epochs: u32,
    lr: f64,
) -> Result<(ParameterVector, f64), SimError> {
    if client.data.is_empty() {
        return Err(SimError::EmptyDataset(client.id));
    }
    if !(lr.is_finite() && lr > 0.0) {
        return Err(SimError::InvalidLearningRate(lr));
    }
    let mut w = global_model.as_slice().to_vec();
    for epoch in 0..epochs {
        let grad = client.data.gradient(&w);
        for (wi, gi) in w.iter_mut().zip(&grad) {
            *wi -= lr * gi;
        }
        if !w.iter().all(|v| v.is_finite()) {
            return Err(SimError::Divergence { client_id: client.id, epoch });
        }
    }
    let cost = client.data.loss(&w);
    if !cost.is_finite() {
        return Err(SimError::Divergence { client_id: client.id, epoch: epochs });
    }
    Ok((ParameterVector::new(w)?, cost.max(COST_FLOOR)))
}

/// Aggregates with the configured strategy, falling back to FedAvg when some
/// participant does not yet have two cost entries.
pub fn aggregate_with_fallback(
    strategy: &Strategy,
    inputs: &[ClientRoundInput],
) -> Result<(ParameterVector, aggregation::AggregationWeights), AggregationError> {
    match aggregation::aggregate(strategy, inputs) {
        Err(AggregationError::MissingHistory { .. }) => {
            let (model, mut weights) = aggregation::aggregate(&Strategy::FedAvg, inputs)?;
            weights.fallback_applied = Fallback::MissingHistory;
            Ok((model, weights))
        }
        other => other,
    }
}

/// Runs one federated round and advances `state`. On error `state` is left
/// untouched.
pub fn run_round(state: &mut FederationState, plan: &RoundPlan) -> Result<RoundRecord, SimError> {
    let started = Instant::now();
    let round_index = state.round_index;
    let selection = selection::select_clients(&state.sizes(), &plan.policy, round_index)?;

    let selected: Vec<&ClientRecord> =
        state.clients.iter().filter(|c| selection.ids.binary_search(&c.id).is_ok()).collect();
    // Results come back in selection order whatever order the threads finish.
    let trained: Vec<(ParameterVector, f64)> = selected
        .par_iter()
        .map(|c| local_train(c, &state.global_model, plan.epochs, plan.lr))
        .collect::<Result<_, _>>()?;

    let mut histories: Vec<Vec<f64>> = state.clients.iter().map(|c| c.cost_history.clone()).collect();
    let mut carried_forward = Vec::new();
    let mut trained_by_id: BTreeMap<ClientId, &(ParameterVector, f64)> = BTreeMap::new();
    for (c, t) in selected.iter().zip(&trained) {
        trained_by_id.insert(c.id, t);
    }
    for (client, history) in state.clients.iter().zip(histories.iter_mut()) {
        match trained_by_id.get(&client.id) {
            Some((_, cost)) => history.push(*cost),
            None => {
                carried_forward.push(client.id);
                let carried = match history.last() {
                    Some(&last) => last,
                    // never trained yet: evaluate the broadcast model locally
                    None => client.data.loss(state.global_model.as_slice()).max(COST_FLOOR),
                };
                history.push(carried);
            }
        }
    }

    let inputs: Vec<ClientRoundInput> = state
        .clients
        .iter()
        .zip(&histories)
        .filter_map(|(c, h)| {
            trained_by_id.get(&c.id).map(|(model, _)| ClientRoundInput {
                client_id: c.id,
                size: c.size,
                model: model.clone(),
                cost_history: h.clone(),
            })
        })
        .collect();
    let (global_model, weights) = aggregate_with_fallback(&plan.strategy, &inputs)?;
    let global_cost = state.pooled_cost(&global_model);

    // commit
    for (client, history) in state.clients.iter_mut().zip(histories) {
        client.cost_history = history;
        if let Some((model, _)) = trained_by_id.get(&client.id) {
            client.params = model.clone();
        }
    }
    state.global_model = global_model;
    state.round_index += 1;

    let total = state.clients.len();
    Ok(RoundRecord {
        round_index,
        participation_fraction: selection.ids.len() as f64 / total as f64,
        selected_ids: selection.ids,
        total_clients: total,
        fallback_applied: weights.fallback_applied,
        weights,
        per_client_cost: state
            .clients
            .iter()
            .map(|c| (c.id, *c.cost_history.last().expect("history appended this round")))
            .collect(),
        carried_forward_ids: carried_forward,
        global_cost,
        selection_anomaly: selection.all_outliers,
        wall_ms: if plan.wall_clock { started.elapsed().as_millis() as u64 } else { 0 },
    })
}

pub fn selection_policy(config: &SimulationConfig, state: &FederationState) -> Result<SelectionPolicy, SimError> {
    Ok(match config.selection_mode {
        SelectionMode::All => SelectionPolicy::new(SelectionMode::All, config.full_participation_period, 1.0)?,
        SelectionMode::PoissonDropout => {
            SelectionPolicy::poisson_dropout(&state.size_list(), config.full_participation_period)?
        }
    })
}

/// True once the global cost has improved by less than `tol` (relative)
/// over the last `patience` rounds.
fn should_stop(records: &[RoundRecord], patience: u64, tol: f64) -> bool {
    let patience = patience as usize;
    if patience == 0 || records.len() <= patience {
        return false;
    }
    let now = records[records.len() - 1].global_cost;
    let then = records[records.len() - 1 - patience].global_cost;
    then - now < tol * then.abs()
}

#[derive(Debug, Clone)]
pub struct SimulationRun {
    pub records: Vec<RoundRecord>,
    pub state: FederationState,
}

/// Runs up to `config.rounds` rounds of `strategy` on an existing federation.
pub fn run_federation(
    mut state: FederationState,
    config: &SimulationConfig,
    strategy: Strategy,
) -> Result<SimulationRun, SimError> {
    let plan = RoundPlan {
        strategy,
        policy: selection_policy(config, &state)?,
        epochs: config.epochs,
        lr: config.lr,
        wall_clock: config.wall_clock,
    };
    let mut records = Vec::with_capacity(config.rounds as usize);
    for _ in 0..config.rounds {
        records.push(run_round(&mut state, &plan)?);
        if should_stop(&records, config.patience, config.tol) {
            break;
        }
    }
    Ok(SimulationRun { records, state })
}

/// Generates the federation described by `config` and runs it with the
/// configured strategy.
pub fn run_simulation(config: &SimulationConfig) -> Result<SimulationRun, SimError> {
    let strategy = config.strategy()?;
    let state = generate_federation(config)?;
    run_federation(state, config, strategy)
}
