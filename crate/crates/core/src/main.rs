use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedpid::aggregation::StrategyKind;
use fedpid::cli::{self, CliError};
use fedpid::config::{self, ConfigError, SimulationConfig};

#[derive(Parser)]
#[command(name = "fedpid", version, about = "Federated learning simulator with PID-weighted aggregation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write its records.
    Run(ConfigArgs),
    /// Run several strategies on the same federation.
    Compare {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated strategies to compare.
        #[arg(long, value_delimiter = ',', default_value = "fedavg,fedcostwavg,fedpidavg")]
        strategies: Vec<String>,
    },
    /// Replay aggregation fixtures and check them against stored results.
    Verify {
        /// Directory of *.json fixtures.
        fixtures: PathBuf,
    },
}

/// Every flag maps onto one config key; values are parsed and validated by
/// the config layer so errors always name the key.
#[derive(Args)]
struct ConfigArgs {
    /// Config file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Set any config key, e.g. `--set task.dim=8`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Synthetic task: least_squares or logistic [task.kind].
    #[arg(long = "task")]
    task_kind: Option<String>,
    /// Model dimension [task.dim].
    #[arg(long)]
    dim: Option<String>,
    /// Non-IID strength: distance of client feature means from the origin [task.client_shift].
    #[arg(long)]
    client_shift: Option<String>,
    /// Label noise standard deviation [task.noise_sigma].
    #[arg(long)]
    noise_sigma: Option<String>,
    /// Number of clients [clients].
    #[arg(long)]
    clients: Option<String>,
    /// Poisson mean of client sizes [lambda].
    #[arg(long)]
    lambda: Option<String>,
    /// fedavg, fedcostwavg or fedpidavg [strategy].
    #[arg(long)]
    strategy: Option<String>,
    /// FedPIDAvg size weight [alpha].
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<String>,
    /// FedPIDAvg cost-drop weight [beta].
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<String>,
    /// FedPIDAvg integral weight [gamma].
    #[arg(long, allow_hyphen_values = true)]
    gamma: Option<String>,
    /// FedCostWAvg size weight [cw_alpha].
    #[arg(long, allow_hyphen_values = true)]
    cw_alpha: Option<String>,
    /// FedPIDAvg integral window in rounds [window].
    #[arg(long)]
    window: Option<String>,
    /// Use |c_prev - c_curr| for FedPIDAvg's cost-drop term (the default).
    #[arg(long, conflicts_with = "k_signed")]
    k_abs: bool,
    /// Use the signed c_prev - c_curr for FedPIDAvg's cost-drop term.
    #[arg(long)]
    k_signed: bool,
    /// all or poisson_dropout [selection.mode].
    #[arg(long)]
    selection_mode: Option<String>,
    /// Every P-th round includes outliers [selection.full_participation_period].
    #[arg(long)]
    full_participation_period: Option<String>,
    /// Maximum number of federated rounds [rounds].
    #[arg(long)]
    rounds: Option<String>,
    /// Local gradient steps per round [epochs].
    #[arg(long)]
    epochs: Option<String>,
    /// Local learning rate [lr].
    #[arg(long)]
    lr: Option<String>,
    /// RNG seed; required when CI is set [seed].
    #[arg(long)]
    seed: Option<String>,
    /// Output directory [out_dir].
    #[arg(long)]
    out_dir: Option<String>,
    /// Early-stopping window in rounds, 0 disables [early_stop.patience].
    #[arg(long)]
    patience: Option<String>,
    /// Relative improvement below which to stop [early_stop.tol].
    #[arg(long)]
    tol: Option<String>,
    /// Record measured wall time per round (makes output non-reproducible).
    #[arg(long)]
    wall_clock: bool,
}

impl ConfigArgs {
    fn overrides(&self) -> Result<Vec<(String, String)>, ConfigError> {
        let mut pairs = Vec::new();
        let flags: [(&str, &Option<String>); 21] = [
            ("task.kind", &self.task_kind),
            ("task.dim", &self.dim),
            ("task.client_shift", &self.client_shift),
            ("task.noise_sigma", &self.noise_sigma),
            ("clients", &self.clients),
            ("lambda", &self.lambda),
            ("strategy", &self.strategy),
            ("alpha", &self.alpha),
            ("beta", &self.beta),
            ("gamma", &self.gamma),
            ("cw_alpha", &self.cw_alpha),
            ("window", &self.window),
            ("selection.mode", &self.selection_mode),
            ("selection.full_participation_period", &self.full_participation_period),
            ("rounds", &self.rounds),
            ("epochs", &self.epochs),
            ("lr", &self.lr),
            ("seed", &self.seed),
            ("out_dir", &self.out_dir),
            ("early_stop.patience", &self.patience),
            ("early_stop.tol", &self.tol),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                pairs.push((key.to_string(), v.clone()));
            }
        }
        if self.k_abs {
            pairs.push(("k_abs".into(), "true".into()));
        }
        if self.k_signed {
            pairs.push(("k_abs".into(), "false".into()));
        }
        if self.wall_clock {
            pairs.push(("metrics.wall_clock".into(), "true".into()));
        }
        // `--set` is applied last so it can override any flag
        for raw in &self.set {
            let (k, v) = raw
                .split_once('=')
                .ok_or_else(|| ConfigError::new("--set", format!("expected KEY=VALUE, got `{raw}`")))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(pairs)
    }

    fn load(&self) -> Result<SimulationConfig, ConfigError> {
        let require_seed = std::env::var_os("CI").is_some();
        config::parse_config(self.config.as_deref(), &self.overrides()?, require_seed)
    }
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run(args) => {
            let config = args.load()?;
            let summary = cli::cmd_run(&config)?;
            println!("rounds: {}", summary.rounds);
            if let Some(cost) = summary.final_global_cost {
                println!("final global cost: {cost:.10e}");
            }
            if let Some(frac) = summary.mean_participation_fraction {
                println!("mean participation fraction: {frac:.6}");
            }
            println!("outputs written to {}", config.out_dir.display());
        }
        Command::Compare { config, strategies } => {
            let config = config.load()?;
            let kinds: Vec<StrategyKind> = strategies
                .iter()
                .map(|s| s.parse().map_err(|e: String| ConfigError::new("strategies", e)))
                .collect::<Result<_, _>>()?;
            let rows = cli::cmd_compare(&config, &kinds)?;
            print!("{}", cli::format_compare_table(&rows));
        }
        Command::Verify { fixtures } => {
            let n = cli::cmd_verify(&fixtures, &mut std::io::stdout())?;
            println!("{n} fixtures passed");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::from(cli::EXIT_OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
