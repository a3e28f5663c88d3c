//! Random aggregation instances covering every strategy and fallback path.

use fedpid::aggregation::{ClientRoundInput, CostDrop, PidCoefficients, PidConfig, Strategy};
use fedpid::params::ParameterVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Instance {
    pub strategy: Strategy,
    pub inputs: Vec<ClientRoundInput>,
}

/// Coefficients in [0, 1] summing to one within f64 rounding.
pub fn random_coefficients(rng: &mut impl Rng) -> PidCoefficients {
    let (a, b) = (rng.random::<f64>(), rng.random::<f64>());
    let (lo, hi) = (a.min(b), a.max(b));
    let alpha = lo;
    let beta = hi - lo;
    PidCoefficients::new(alpha, beta, (1.0 - alpha - beta).max(0.0)).expect("valid coefficients")
}

pub fn random_strategy(rng: &mut impl Rng) -> Strategy {
    match rng.random_range(0..3) {
        0 => Strategy::FedAvg,
        1 => Strategy::FedCostWAvg { alpha: rng.random() },
        _ => Strategy::FedPidAvg(PidConfig {
            coeffs: random_coefficients(rng),
            window: rng.random_range(1..=8),
            cost_drop: if rng.random_bool(0.5) { CostDrop::Magnitude } else { CostDrop::Signed },
        }),
    }
}

/// Strictly positive, mostly decreasing cost histories of a common length.
/// Sometimes every client's last two costs are equal, which makes the
/// cost-drop normalizer vanish.
pub fn random_histories(rng: &mut impl Rng, n: usize, len: usize) -> Vec<Vec<f64>> {
    let flat = len >= 2 && rng.random_bool(0.05);
    (0..n)
        .map(|_| {
            let mut h = vec![rng.random_range(0.1..10.0)];
            while h.len() < len {
                let last = *h.last().unwrap();
                h.push(last * rng.random_range(0.5..1.1));
            }
            if flat {
                h[len - 1] = h[len - 2];
            }
            h.truncate(len);
            h
        })
        .collect()
}

pub fn random_instance(rng: &mut impl Rng) -> Instance {
    let n = rng.random_range(1..=20);
    let dim = rng.random_range(1..=16);
    let len = if rng.random_bool(0.05) { rng.random_range(0..2) } else { rng.random_range(2..=12) };
    let histories = random_histories(rng, n, len);
    let inputs = histories
        .into_iter()
        .enumerate()
        .map(|(i, cost_history)| ClientRoundInput {
            client_id: i as u64,
            size: rng.random_range(1..=1000),
            model: ParameterVector::new((0..dim).map(|_| rng.random_range(-10.0..10.0)).collect()).unwrap(),
            cost_history,
        })
        .collect();
    Instance { strategy: random_strategy(rng), inputs }
}

pub fn instances(seed: u64, count: usize) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_instance(&mut rng)).collect()
}

/// `p / q` with small positive integers, rounded to f64 once.
fn small_rational(rng: &mut impl Rng, max_p: u32) -> f64 {
    rng.random_range(1..=max_p) as f64 / rng.random_range(1..=12u32) as f64
}

/// Small instances (n ≤ 5, dim ≤ 4) with costs and model entries drawn as
/// small rationals. Histories are unordered, so signed cost drops of either
/// sign occur, and some instances have equal last-two costs everywhere.
pub fn small_rational_instance(rng: &mut impl Rng) -> Instance {
    let n = rng.random_range(1..=5);
    let dim = rng.random_range(1..=4);
    let len = if rng.random_bool(0.05) { rng.random_range(0..2) } else { rng.random_range(2..=8) };
    let flat = len >= 2 && rng.random_bool(0.1);
    let inputs = (0..n as u64)
        .map(|id| {
            let mut cost_history: Vec<f64> = (0..len).map(|_| small_rational(rng, 40)).collect();
            if flat {
                cost_history[len - 1] = cost_history[len - 2];
            }
            let model =
                (0..dim).map(|_| small_rational(rng, 60) * if rng.random_bool(0.5) { -1.0 } else { 1.0 }).collect();
            ClientRoundInput {
                client_id: id,
                size: rng.random_range(1..=60),
                model: ParameterVector::new(model).unwrap(),
                cost_history,
            }
        })
        .collect();
    Instance { strategy: random_strategy(rng), inputs }
}
