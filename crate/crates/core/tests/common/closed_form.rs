//! Normal-equations oracle for the least-squares task.

use fedpid::sim::{FederationState, LocalDataset};
use nalgebra::{DMatrix, DVector};

/// Minimizer of the half mean squared error over the union of `datasets`.
pub fn least_squares_optimum<'a>(datasets: impl IntoIterator<Item = &'a LocalDataset>) -> Vec<f64> {
    let mut gram: Option<DMatrix<f64>> = None;
    let mut rhs: Option<DVector<f64>> = None;
    for d in datasets {
        let x = DMatrix::from_row_slice(d.len(), d.dim, &d.features);
        let y = DVector::from_column_slice(&d.targets);
        let g = x.transpose() * &x;
        let r = x.transpose() * y;
        gram = Some(match gram {
            Some(acc) => acc + g,
            None => g,
        });
        rhs = Some(match rhs {
            Some(acc) => acc + r,
            None => r,
        });
    }
    let gram = gram.expect("at least one dataset");
    let solution = gram.cholesky().expect("pooled gram matrix is positive definite").solve(&rhs.unwrap());
    solution.iter().copied().collect()
}

/// Half mean squared error of `w` on the pooled data, computed directly.
pub fn pooled_half_mse(state: &FederationState, w: &[f64]) -> f64 {
    let (mut total, mut n) = (0.0, 0usize);
    for c in &state.clients {
        for (row, y) in c.data.features.chunks_exact(c.data.dim).zip(&c.data.targets) {
            let r: f64 = row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() - y;
            total += 0.5 * r * r;
            n += 1;
        }
    }
    total / n as f64
}

pub fn centralized_optimum_cost(state: &FederationState) -> f64 {
    let w = least_squares_optimum(state.clients.iter().map(|c| &c.data));
    pooled_half_mse(state, &w)
}
