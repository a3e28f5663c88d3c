//! Local datasets and the losses trained on them.

use crate::config::TaskKind;

/// Cost floor keeping every reported cost strictly positive.
pub const COST_FLOOR: f64 = 1e-12;

/// One client's samples, features stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalDataset {
    pub kind: TaskKind,
    pub dim: usize,
    pub features: Vec<f64>,
    pub targets: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LocalDataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.features.chunks_exact(self.dim).zip(self.targets.iter().copied())
    }

    /// Mean per-sample loss: half squared error, or logistic cross-entropy
    /// with labels in {0, 1}.
    pub fn loss(&self, w: &[f64]) -> f64 {
        let n = self.len() as f64;
        let total: f64 = match self.kind {
            TaskKind::LeastSquares => self
                .rows()
                .map(|(x, y)| {
                    let r = dot(x, w) - y;
                    0.5 * r * r
                })
                .sum(),
            TaskKind::Logistic => self
                .rows()
                .map(|(x, y)| {
                    let z = dot(x, w);
                    softplus(z) - y * z
                })
                .sum(),
        };
        total / n
    }

    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let n = self.len() as f64;
        let mut grad = vec![0.0; self.dim];
        for (x, y) in self.rows() {
            let z = dot(x, w);
            let residual = match self.kind {
                TaskKind::LeastSquares => z - y,
                TaskKind::Logistic => sigmoid(z) - y,
            };
            for (g, xi) in grad.iter_mut().zip(x) {
                *g += residual * xi;
            }
        }
        for g in &mut grad {
            *g /= n;
        }
        grad
    }
}

/// Sample-weighted mean loss over several datasets, i.e. the loss on their union.
pub fn pooled_loss<'a>(datasets: impl IntoIterator<Item = &'a LocalDataset>, w: &[f64]) -> f64 {
    let (mut total, mut count) = (0.0, 0usize);
    for d in datasets {
        total += d.loss(w) * d.len() as f64;
        count += d.len();
    }
    total / count as f64
}
