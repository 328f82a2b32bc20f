use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Rbf,
    Linear,
    Delta,
}

/// Kernel choice. For `rbf`, a missing bandwidth means the median
/// heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub kind: KernelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
}

impl KernelConfig {
    pub const fn rbf_median() -> Self {
        Self {
            kind: KernelKind::Rbf,
            bandwidth: None,
        }
    }

    pub const fn rbf(bandwidth: f64) -> Self {
        Self {
            kind: KernelKind::Rbf,
            bandwidth: Some(bandwidth),
        }
    }

    pub const fn linear() -> Self {
        Self {
            kind: KernelKind::Linear,
            bandwidth: None,
        }
    }

    pub const fn delta() -> Self {
        Self {
            kind: KernelKind::Delta,
            bandwidth: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind, self.bandwidth) {
            (KernelKind::Rbf, Some(b)) if !(b > 0.0 && b.is_finite()) => Err(
                Error::InvalidArgument(format!("rbf bandwidth must be positive, got {b}")),
            ),
            (KernelKind::Linear | KernelKind::Delta, Some(_)) => Err(Error::InvalidArgument(
                "bandwidth only applies to the rbf kernel".into(),
            )),
            _ => Ok(()),
        }
    }
}

fn squared_distances(rows: &ArrayView2<'_, f64>) -> Array2<f64> {
    let n = rows.nrows();
    let mut d2 = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let xi = rows.row(i);
        for j in (i + 1)..n {
            let s: f64 = xi
                .iter()
                .zip(rows.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d2[[i, j]] = s;
            d2[[j, i]] = s;
        }
    }
    d2
}

/// Median of the pairwise Euclidean distances over `i < j`.
pub fn median_pairwise_distance(rows: &ArrayView2<'_, f64>) -> Result<f64> {
    let d2 = squared_distances(rows);
    median_from_squared(&d2)
}

fn median_from_squared(d2: &Array2<f64>) -> Result<f64> {
    let n = d2.nrows();
    let mut dists: Vec<f64> = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push(d2[[i, j]].sqrt());
        }
    }
    if dists.is_empty() {
        return Err(Error::DegenerateKernel("median heuristic needs at least two rows".into()));
    }
    let count = dists.len();
    let mid = count / 2;
    let (lower, upper, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    let median = if count % 2 == 1 {
        upper
    } else {
        let below = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (below + upper)
    };
    if median > 0.0 {
        Ok(median)
    } else {
        Err(Error::DegenerateKernel(
            "median pairwise distance is zero (rows are identical)".into(),
        ))
    }
}

/// Gram matrix of `rows` under `config`.
///
/// * rbf: `exp(−‖xᵢ − xⱼ‖² / (2σ²))`
/// * linear: `XXᵀ`
/// * delta: `1` where rows are identical, else `0`
pub fn kernel_matrix(rows: ArrayView2<'_, f64>, config: &KernelConfig) -> Result<Array2<f64>> {
    config.validate()?;
    let n = rows.nrows();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("kernel matrix needs n ≥ 2, got {n}")));
    }
    if rows.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("kernel input has non-finite entries".into()));
    }
    Ok(match config.kind {
        KernelKind::Linear => {
            let mut k = rows.dot(&rows.t());
            // Exact symmetry.
            for i in 0..n {
                for j in (i + 1)..n {
                    k[[j, i]] = k[[i, j]];
                }
            }
            k
        }
        KernelKind::Delta => Array2::from_shape_fn((n, n), |(i, j)| {
            f64::from(u8::from(rows.row(i) == rows.row(j)))
        }),
        KernelKind::Rbf => {
            let d2 = squared_distances(&rows);
            let sigma = match config.bandwidth {
                Some(b) => b,
                None => median_from_squared(&d2)?,
            };
            let scale = 1.0 / (2.0 * sigma * sigma);
            d2.mapv(|d| (-d * scale).exp())
        }
    })
}

/// Gram matrix of class ids. The delta kernel compares ids directly; the
/// linear and rbf kernels act on one-hot encodings.
pub fn label_kernel(labels: &[usize], class_count: usize, config: &KernelConfig) -> Result<Array2<f64>> {
    match config.kind {
        KernelKind::Delta => {
            config.validate()?;
            let n = labels.len();
            if n < 2 {
                return Err(Error::InvalidArgument(format!("kernel matrix needs n ≥ 2, got {n}")));
            }
            Ok(Array2::from_shape_fn((n, n), |(i, j)| {
                f64::from(u8::from(labels[i] == labels[j]))
            }))
        }
        _ => kernel_matrix(one_hot(labels, class_count).view(), config),
    }
}

pub fn one_hot(labels: &[usize], class_count: usize) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((labels.len(), class_count));
    for (i, &y) in labels.iter().enumerate() {
        out[[i, y]] = 1.0;
    }
    out
}
