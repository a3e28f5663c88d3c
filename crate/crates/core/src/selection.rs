//! Poisson model of client dataset sizes and outlier-dropout selection.
//!
//! Sizes are treated as draws from `Poisson(λ)` with `λ` estimated as the
//! sample mean. A client is an outlier when its size exceeds `2λ`. Outliers
//! sit out every round except each `full_participation_period`-th one.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::ClientId;

#[derive(Debug, Error, PartialEq)]
pub enum SelectionError {
    #[error("empty input")]
    EmptyInput,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// `ln(x!) - ((x + 1/2) ln x - x + ln sqrt(2π))` for x = 0..=15.
const STIRLING_ERR: [f64; 16] = [
    0.0,
    0.081_061_466_795_327_26,
    0.041_340_695_955_409_3,
    0.027_677_925_684_998_34,
    0.020_790_672_103_765_093,
    0.016_644_691_189_821_193,
    0.013_876_128_823_070_748,
    0.011_896_709_945_891_77,
    0.010_411_265_261_972_096,
    0.009_255_462_182_712_733,
    0.008_330_563_433_362_87,
    0.007_573_675_487_951_841,
    0.006_942_840_107_209_53,
    0.006_408_994_188_004_207,
    0.005_951_370_112_758_847_5,
    0.005_554_733_551_962_801,
];

/// Error of Stirling's approximation to `ln(x!)`.
fn stirling_err(x: u64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if let Some(&v) = STIRLING_ERR.get(x as usize) {
        return v;
    }
    let n = x as f64;
    let nn = n * n;
    if x > 500 {
        (S0 - S1 / nn) / n
    } else if x > 80 {
        (S0 - (S1 - S2 / nn) / nn) / n
    } else if x > 35 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / n
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n
    }
}

/// Deviance term `x ln(x/μ) + μ - x`, evaluated without cancellation when
/// `x` is close to `μ`.
fn deviance(x: f64, mu: f64) -> f64 {
    if (x - mu).abs() < 0.1 * (x + mu) {
        let v = (x - mu) / (x + mu);
        let mut sum = (x - mu) * v;
        let mut term = 2.0 * x * v;
        let v2 = v * v;
        for j in 1..1000 {
            term *= v2;
            let next = sum + term / (2 * j + 1) as f64;
            if next == sum {
                return next;
            }
            sum = next;
        }
        sum
    } else {
        x * (x / mu).ln() + mu - x
    }
}

fn check_lambda(lambda: f64) -> Result<(), SelectionError> {
    if lambda.is_finite() && lambda > 0.0 {
        Ok(())
    } else {
        Err(SelectionError::InvalidArgument(format!("lambda must be positive and finite, got {lambda}")))
    }
}

/// Natural log of the Poisson probability mass `e^{-λ} λ^x / x!`.
///
/// Stays accurate where the mass itself underflows `f64`.
pub fn ln_poisson_pmf(x: u64, lambda: f64) -> Result<f64, SelectionError> {
    check_lambda(lambda)?;
    if x == 0 {
        return Ok(-lambda);
    }
    let xf = x as f64;
    Ok(-(stirling_err(x) + deviance(xf, lambda)) - 0.5 * (2.0 * PI * xf).ln())
}

/// Poisson probability mass `e^{-λ} λ^x / x!` (saddle-point form, no
/// factorials or powers are ever materialized).
pub fn poisson_pmf(x: u64, lambda: f64) -> Result<f64, SelectionError> {
    check_lambda(lambda)?;
    if x == 0 {
        return Ok((-lambda).exp());
    }
    let xf = x as f64;
    Ok((-(stirling_err(x) + deviance(xf, lambda))).exp() / (2.0 * PI * xf).sqrt())
}

/// Maximum-likelihood `λ` for Poisson data: the sample mean.
pub fn estimate_lambda(sizes: &[u64]) -> Result<f64, SelectionError> {
    if sizes.is_empty() {
        return Err(SelectionError::EmptyInput);
    }
    let total: u128 = sizes.iter().map(|&s| s as u128).sum();
    Ok(total as f64 / sizes.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    All,
    #[default]
    PoissonDropout,
}

impl SelectionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectionMode::All => "all",
            SelectionMode::PoissonDropout => "poisson_dropout",
        }
    }
}

impl std::str::FromStr for SelectionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(SelectionMode::All),
            "poisson_dropout" => Ok(SelectionMode::PoissonDropout),
            other => Err(format!("unknown selection mode `{other}` (expected all or poisson_dropout)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionPolicy {
    mode: SelectionMode,
    full_participation_period: u64,
    lambda_estimate: f64,
}

impl SelectionPolicy {
    pub fn new(
        mode: SelectionMode,
        full_participation_period: u64,
        lambda_estimate: f64,
    ) -> Result<Self, SelectionError> {
        if full_participation_period == 0 {
            return Err(SelectionError::InvalidArgument("full_participation_period must be >= 1".into()));
        }
        if mode == SelectionMode::PoissonDropout {
            check_lambda(lambda_estimate)?;
        }
        Ok(Self { mode, full_participation_period, lambda_estimate })
    }

    pub fn all() -> Self {
        Self { mode: SelectionMode::All, full_participation_period: 1, lambda_estimate: 1.0 }
    }

    /// Dropout policy with `λ` estimated from the declared sizes.
    pub fn poisson_dropout(sizes: &[u64], full_participation_period: u64) -> Result<Self, SelectionError> {
        Self::new(SelectionMode::PoissonDropout, full_participation_period, estimate_lambda(sizes)?)
    }

    pub fn mode(&self) -> SelectionMode {
        self.mode
    }

    pub fn full_participation_period(&self) -> u64 {
        self.full_participation_period
    }

    pub fn lambda_estimate(&self) -> f64 {
        self.lambda_estimate
    }

    pub fn outlier_threshold(&self) -> f64 {
        2.0 * self.lambda_estimate
    }

    pub fn is_full_participation_round(&self, round_index: u64) -> bool {
        match self.mode {
            SelectionMode::All => true,
            SelectionMode::PoissonDropout => {
                round_index % self.full_participation_period == self.full_participation_period - 1
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    /// Ascending client ids.
    pub ids: Vec<ClientId>,
    /// Every client was an outlier, so everyone was kept.
    pub all_outliers: bool,
}

pub fn select_clients(
    sizes: &BTreeMap<ClientId, u64>,
    policy: &SelectionPolicy,
    round_index: u64,
) -> Result<Selection, SelectionError> {
    if sizes.is_empty() {
        return Err(SelectionError::EmptyInput);
    }
    let everyone = || sizes.keys().copied().collect::<Vec<_>>();
    if policy.is_full_participation_round(round_index) {
        return Ok(Selection { ids: everyone(), all_outliers: false });
    }
    let threshold = policy.outlier_threshold();
    let ids: Vec<_> = sizes.iter().filter(|(_, &size)| size as f64 <= threshold).map(|(&id, _)| id).collect();
    if ids.is_empty() {
        return Ok(Selection { ids: everyone(), all_outliers: true });
    }
    Ok(Selection { ids, all_outliers: false })
}
