use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A doubly-centered kernel `HKH` with `H = I − 11ᵀ/n`.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredKernel {
    matrix: Array2<f64>,
}

impl CenteredKernel {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.matrix.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.matrix
    }
}

/// Centers a symmetric kernel matrix. The result is exactly symmetric.
pub fn center(kernel: &Array2<f64>) -> Result<CenteredKernel> {
    let (n, m) = kernel.dim();
    if n != m || n == 0 {
        return Err(Error::Shape(format!("kernel must be square and non-empty, got {n}×{m}")));
    }
    let inv_n = 1.0 / n as f64;
    let row_means: Vec<f64> = kernel.rows().into_iter().map(|r| r.sum() * inv_n).collect();
    let grand = row_means.iter().sum::<f64>() * inv_n;
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            // Symmetric input: column mean j equals row mean j.
            let v = kernel[[i, j]] - row_means[i] - row_means[j] + grand;
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    Ok(CenteredKernel { matrix: out })
}

/// Scale applied to `tr(K̃_a K̃_b)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    RawTrace,
    #[default]
    NMinus1Squared,
    Frobenius,
}

/// `Σᵢⱼ aᵢⱼ bᵢⱼ`, which is `tr(AB)` for symmetric `B`.
pub(crate) fn trace_product(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Normalized HSIC statistic between two centered kernels of equal size.
pub fn nhsic(a: &CenteredKernel, b: &CenteredKernel, normalization: Normalization) -> Result<f64> {
    if a.n() != b.n() {
        return Err(Error::Shape(format!("nhsic of {}×{} and {}×{} kernels", a.n(), a.n(), b.n(), b.n())));
    }
    let trace = trace_product(&a.matrix, &b.matrix);
    Ok(match normalization {
        Normalization::RawTrace => trace,
        Normalization::NMinus1Squared => {
            let d = (a.n() as f64 - 1.0).max(1.0);
            trace / (d * d)
        }
        Normalization::Frobenius => {
            let denom = a.frobenius_norm() * b.frobenius_norm();
            if denom == 0.0 {
                0.0
            } else {
                trace / denom
            }
        }
    })
}
