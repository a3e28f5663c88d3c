//! Federated learning simulation with pluggable aggregation.
//!
//! * [`params`]: flat parameter vectors, weighted sums, binary checkpoints.
//! * [`aggregation`]: FedAvg, FedCostWAvg and FedPIDAvg weighting.
//! * [`selection`]: Poisson size model and outlier-dropout client selection.
//! * [`sim`]: synthetic non-IID federations and the round loop.
//! * [`metrics`]: per-round records, JSON-lines/CSV output, comm-cost summary.
//! * [`config`] and [`cli`]: configuration parsing and the `run`, `compare`
//!   and `verify` commands.

pub mod aggregation;
pub mod cli;
pub mod config;
pub mod metrics;
pub mod params;
pub mod selection;
pub mod sim;

pub use aggregation::{
    aggregate, AggregationError, AggregationWeights, ClientId, ClientRoundInput, CostDrop, Fallback, PidCoefficients,
    PidConfig, Strategy, StrategyKind,
};
pub use config::{parse_config, ConfigError, SimulationConfig, SyntheticTask, TaskKind};
pub use metrics::{comm_cost_summary, RoundRecord};
pub use params::{weighted_sum, ParameterVector, ParamsError};
pub use selection::{poisson_pmf, select_clients, SelectionMode, SelectionPolicy};
pub use sim::{run_simulation, FederationState, SimError};
