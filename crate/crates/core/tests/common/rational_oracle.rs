//! Exact-arithmetic aggregation oracle.
//!
//! Every f64 input converts to a rational without loss, so the only rounding
//! is the final conversion back to f64.

use fedpid::aggregation::{ClientRoundInput, CostDrop, Fallback, Strategy};
use num::{BigRational, Signed, ToPrimitive, Zero};

fn q(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite input")
}

fn to_f64(x: &BigRational) -> f64 {
    x.to_f64().expect("representable")
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub weights: Vec<f64>,
    pub model: Vec<f64>,
    pub fallback: Fallback,
}

fn shares(inputs: &[ClientRoundInput]) -> Vec<BigRational> {
    let total: u64 = inputs.iter().map(|c| c.size).sum();
    inputs.iter().map(|c| BigRational::new(c.size.into(), total.into())).collect()
}

fn last_two(h: &[f64]) -> (BigRational, BigRational) {
    (q(h[h.len() - 2]), q(h[h.len() - 1]))
}

/// Exact weights, with the round-0 FedAvg fallback applied when any history
/// is shorter than two.
pub fn exact_weights(strategy: &Strategy, inputs: &[ClientRoundInput]) -> (Vec<BigRational>, Fallback) {
    let s = shares(inputs);
    let history_based = !matches!(strategy, Strategy::FedAvg);
    if history_based && inputs.iter().any(|c| c.cost_history.len() < 2) {
        return (s, Fallback::MissingHistory);
    }
    match *strategy {
        Strategy::FedAvg => (s, Fallback::None),
        Strategy::FedCostWAvg { alpha } => {
            let a = q(alpha);
            let one_minus = BigRational::from_integer(1.into()) - &a;
            let k: Vec<BigRational> = inputs
                .iter()
                .map(|c| {
                    let (prev, curr) = last_two(&c.cost_history);
                    prev / curr
                })
                .collect();
            let total: BigRational = k.iter().sum();
            let w = s.iter().zip(&k).map(|(sj, kj)| &a * sj + &one_minus * kj / &total).collect();
            (w, Fallback::None)
        }
        Strategy::FedPidAvg(cfg) => {
            let eps = q(1e-12);
            let len = inputs[0].cost_history.len();
            let window = cfg.window.min(len);
            let mut k = Vec::new();
            let mut m = Vec::new();
            let mut max_prev = BigRational::zero();
            for c in inputs {
                let (prev, curr) = last_two(&c.cost_history);
                if prev.abs() > max_prev {
                    max_prev = prev.abs();
                }
                let drop = &prev - &curr;
                k.push(match cfg.cost_drop {
                    CostDrop::Signed => drop,
                    CostDrop::Magnitude => drop.abs(),
                });
                m.push(c.cost_history[len - window..].iter().map(|&v| q(v)).sum::<BigRational>());
            }
            let k_total: BigRational = k.iter().sum();
            let i_total: BigRational = m.iter().sum();
            let max_m = m.iter().map(|v| v.abs()).max().unwrap_or_else(BigRational::zero);

            let (mut alpha, beta, gamma) = (q(cfg.coeffs.alpha()), q(cfg.coeffs.beta()), q(cfg.coeffs.gamma()));
            let mut fallback = Fallback::None;
            let use_k = k_total.abs() > &eps * &max_prev;
            let use_i = i_total.abs() > &eps * &max_m;
            if !use_k {
                alpha += &beta;
                fallback = Fallback::DegenerateNormalizer;
            }
            if !use_i {
                alpha += &gamma;
                fallback = Fallback::DegenerateNormalizer;
            }
            let w = (0..inputs.len())
                .map(|j| {
                    let mut w = &alpha * &s[j];
                    if use_k {
                        w += &beta * &k[j] / &k_total;
                    }
                    if use_i {
                        w += &gamma * &m[j] / &i_total;
                    }
                    w
                })
                .collect();
            (w, fallback)
        }
    }
}

pub fn exact_aggregate(strategy: &Strategy, inputs: &[ClientRoundInput]) -> OracleResult {
    let (w, fallback) = exact_weights(strategy, inputs);
    let dim = inputs[0].model.dim();
    let model = (0..dim)
        .map(|d| {
            let v: BigRational = w.iter().zip(inputs).map(|(wj, c)| wj * q(c.model.as_slice()[d])).sum();
            to_f64(&v)
        })
        .collect();
    OracleResult { weights: w.iter().map(to_f64).collect(), model, fallback }
}

/// `Σ_j w_j · M_j` for f64 weights taken exactly.
pub fn exact_weighted_sum(models: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
    let dim = models[0].len();
    (0..dim)
        .map(|d| {
            let v: BigRational = models.iter().zip(weights).map(|(m, &w)| q(w) * q(m[d])).sum();
            to_f64(&v)
        })
        .collect()
}
