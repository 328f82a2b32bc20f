//! Kernel dependence measures and the distributional-independence loss.
//!
//! The loss compares how strongly the features depend on the true labels
//! with how strongly they depend on the model's predicted probabilities:
//!
//! ```text
//! L_F = nHSIC(X, Y) − α · nHSIC(X, Ŷ)
//! nHSIC(A, B) = c · tr(K̃_A K̃_B),   K̃ = H K H,   H = I − 11ᵀ/n
//! ```
//!
//! `c` is set by [`Normalization`]. The first term does not depend on the
//! model and is computed once per batch in [`IndependenceContext`].

mod hsic;
mod kernel;
mod mi;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::DatasetTable;
use crate::error::{Error, Result};

pub use hsic::{center, nhsic, CenteredKernel, Normalization};
pub use kernel::{kernel_matrix, label_kernel, median_pairwise_distance, one_hot, KernelConfig, KernelKind};
pub use mi::{entropy, plugin_mi, Binning};

pub const DEFAULT_BATCH_SIZE: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IndependenceConfig {
    pub feature_kernel: KernelConfig,
    pub label_kernel: KernelConfig,
    pub prediction_kernel: KernelConfig,
    pub alpha: f64,
    pub normalization: Normalization,
    /// Rows per HSIC batch; larger inputs are subsampled.
    pub batch_size: usize,
    pub seed: u64,
    /// Feature used by the plug-in MI diagnostic; `None` picks the
    /// highest-variance column.
    pub mi_feature: Option<usize>,
}

impl Default for IndependenceConfig {
    fn default() -> Self {
        Self {
            feature_kernel: KernelConfig::rbf_median(),
            label_kernel: KernelConfig::delta(),
            prediction_kernel: KernelConfig::linear(),
            alpha: 1.0,
            normalization: Normalization::NMinus1Squared,
            batch_size: DEFAULT_BATCH_SIZE,
            seed: 0,
            mi_feature: None,
        }
    }
}

impl IndependenceConfig {
    pub fn validate(&self) -> Result<()> {
        self.feature_kernel.validate()?;
        self.label_kernel.validate()?;
        self.prediction_kernel.validate()?;
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha must be ≥ 0, got {}", self.alpha)));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument("independence batch_size must be ≥ 2".into()));
        }
        Ok(())
    }

    fn ensure_differentiable(&self) -> Result<()> {
        if self.prediction_kernel.kind == KernelKind::Delta {
            Err(Error::NonDifferentiableKernel)
        } else {
            Ok(())
        }
    }
}

/// Euclidean distance between two scalars.
pub fn dist(a: f64, b: f64) -> f64 {
    (a - b).abs()
}

fn check_stochastic(predictions: &ArrayView2<'_, f64>) -> Result<()> {
    for (i, row) in predictions.outer_iter().enumerate() {
        let s = row.sum();
        if (s - 1.0).abs() > 1e-6 || row.iter().any(|&p| p < -1e-12) {
            return Err(Error::InvalidArgument(format!(
                "prediction row {i} is not a probability vector (sum {s})"
            )));
        }
    }
    Ok(())
}

/// `nHSIC(X, Ŷ)` for a prediction matrix.
fn prediction_term(
    features_kernel: &CenteredKernel,
    predictions: &ArrayView2<'_, f64>,
    config: &IndependenceConfig,
) -> Result<f64> {
    let k = kernel_matrix(predictions.view(), &config.prediction_kernel)?;
    nhsic(features_kernel, &center(&k)?, config.normalization)
}

/// `nHSIC(X, Y)` for integer class labels.
pub fn label_term(
    features_kernel: &CenteredKernel,
    labels: &[usize],
    class_count: usize,
    config: &IndependenceConfig,
) -> Result<f64> {
    let k = label_kernel(labels, class_count, &config.label_kernel)?;
    nhsic(features_kernel, &center(&k)?, config.normalization)
}

/// `L_F = nHSIC(X, Y) − α·nHSIC(X, Ŷ)`. The class count is taken from the
/// prediction matrix width.
pub fn lf_value(
    features_kernel: &CenteredKernel,
    labels: &[usize],
    predictions: ArrayView2<'_, f64>,
    config: &IndependenceConfig,
) -> Result<f64> {
    config.ensure_differentiable()?;
    check_stochastic(&predictions)?;
    if labels.len() != features_kernel.n() || predictions.nrows() != features_kernel.n() {
        return Err(Error::Shape("labels/predictions do not match the kernel size".into()));
    }
    let first = label_term(features_kernel, labels, predictions.ncols(), config)?;
    if config.alpha == 0.0 {
        return Ok(first);
    }
    Ok(first - config.alpha * prediction_term(features_kernel, &predictions, config)?)
}

/// Gradient of [`lf_value`] with respect to the prediction matrix.
///
/// With a linear prediction kernel and scale `c`, `∂L_F/∂Ŷ = −2αc·K̃_X Ŷ`.
/// Frobenius normalization adds the quotient-rule term from `‖K̃_Ŷ‖_F`.
/// The rbf prediction kernel is supported with a fixed bandwidth under the
/// trace-scaled normalizations.
pub fn lf_grad_predictions(
    features_kernel: &CenteredKernel,
    predictions: ArrayView2<'_, f64>,
    config: &IndependenceConfig,
) -> Result<Array2<f64>> {
    config.ensure_differentiable()?;
    let n = features_kernel.n();
    if predictions.nrows() != n {
        return Err(Error::Shape(format!(
            "{} prediction rows for a {n}×{n} kernel",
            predictions.nrows()
        )));
    }
    if config.alpha == 0.0 {
        return Ok(Array2::<f64>::zeros(predictions.raw_dim()));
    }
    let a = features_kernel.matrix();
    let scale = match config.normalization {
        Normalization::RawTrace => Some(1.0),
        Normalization::NMinus1Squared => {
            let d = (n as f64 - 1.0).max(1.0);
            Some(1.0 / (d * d))
        }
        Normalization::Frobenius => None,
    };
    match (config.prediction_kernel.kind, scale) {
        (KernelKind::Linear, Some(c)) => Ok(a.dot(&predictions) * (-2.0 * config.alpha * c)),
        (KernelKind::Linear, None) => {
            // f = tr(MᵀAM) / (‖A‖ ‖MMᵀ‖), M = HŶ.
            let mean = predictions.mean_axis(Axis(0)).expect("non-empty");
            let m = &predictions - &mean;
            let norm_a = features_kernel.frobenius_norm();
            let gram = m.t().dot(&m);
            let norm_k = gram.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm_a == 0.0 || norm_k == 0.0 {
                return Ok(Array2::<f64>::zeros(predictions.raw_dim()));
            }
            let am = a.dot(&m);
            let numer: f64 = am.iter().zip(m.iter()).map(|(x, y)| x * y).sum();
            let d_numer = am * (2.0 / (norm_a * norm_k));
            let d_norm = m.dot(&gram) * (2.0 * numer / (norm_a * norm_k.powi(3)));
            Ok((d_numer - d_norm) * (-config.alpha))
        }
        (KernelKind::Rbf, Some(c)) => {
            let sigma = config.prediction_kernel.bandwidth.ok_or_else(|| {
                Error::InvalidArgument(
                    "rbf prediction-kernel gradient needs a fixed bandwidth".into(),
                )
            })?;
            let k = kernel_matrix(predictions.view(), &config.prediction_kernel)?;
            let inv_s2 = 1.0 / (sigma * sigma);
            let mut g = Array2::<f64>::zeros(predictions.raw_dim());
            for i in 0..n {
                for j in 0..n {
                    let w = 2.0 * c * a[[i, j]] * k[[i, j]] * inv_s2;
                    if w == 0.0 {
                        continue;
                    }
                    for col in 0..predictions.ncols() {
                        g[[i, col]] -= w * (predictions[[i, col]] - predictions[[j, col]]);
                    }
                }
            }
            Ok(g * (-config.alpha))
        }
        (KernelKind::Rbf, None) => Err(Error::InvalidArgument(
            "rbf prediction-kernel gradient is not available under frobenius normalization".into(),
        )),
        (KernelKind::Delta, _) => Err(Error::NonDifferentiableKernel),
    }
}

/// Seeded choice of at most `cap` rows from `rows`, sorted. `priority` rows
/// are taken first (subsampled themselves if they alone exceed `cap`).
pub fn batch_rows(rows: &[usize], priority: &[usize], cap: usize, seed: u64) -> Vec<usize> {
    if rows.len() <= cap {
        let mut all = rows.to_vec();
        all.sort_unstable();
        return all;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = if priority.len() > cap {
        sample(&mut rng, priority.len(), cap).into_iter().map(|i| priority[i]).collect()
    } else {
        priority.to_vec()
    };
    if chosen.len() < cap {
        let mut taken: std::collections::HashSet<usize> = chosen.iter().copied().collect();
        let rest: Vec<usize> = rows.iter().copied().filter(|r| !taken.contains(r)).collect();
        let need = (cap - chosen.len()).min(rest.len());
        for i in sample(&mut rng, rest.len(), need) {
            if taken.insert(rest[i]) {
                chosen.push(rest[i]);
            }
        }
    }
    chosen.sort_unstable();
    chosen
}

/// Feature kernel and label term for a fixed batch of rows, reused across
/// every evaluation of the independence loss during training or unlearning.
#[derive(Debug, Clone)]
pub struct IndependenceContext {
    rows: Vec<usize>,
    features_kernel: CenteredKernel,
    labels: Vec<usize>,
    label_term: f64,
    config: IndependenceConfig,
}

impl IndependenceContext {
    /// `rows` index into `table` and are used as given (see [`batch_rows`]).
    pub fn new(table: &DatasetTable, rows: Vec<usize>, config: &IndependenceConfig) -> Result<Self> {
        config.validate()?;
        config.ensure_differentiable()?;
        let x = table.features().select(Axis(0), &rows);
        let features_kernel = center(&kernel_matrix(x.view(), &config.feature_kernel)?)?;
        let labels: Vec<usize> = rows.iter().map(|&r| table.labels()[r]).collect();
        let label_term = label_term(&features_kernel, &labels, table.class_count(), config)?;
        Ok(Self {
            rows,
            features_kernel,
            labels,
            label_term,
            config: config.clone(),
        })
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn features_kernel(&self) -> &CenteredKernel {
        &self.features_kernel
    }

    pub fn config(&self) -> &IndependenceConfig {
        &self.config
    }

    pub fn label_term(&self) -> f64 {
        self.label_term
    }

    /// L_F for the batch predictions (rows aligned with [`Self::rows`]).
    pub fn value(&self, batch_predictions: ArrayView2<'_, f64>) -> Result<f64> {
        if self.config.alpha == 0.0 {
            return Ok(self.label_term);
        }
        check_stochastic(&batch_predictions)?;
        let second = prediction_term(&self.features_kernel, &batch_predictions, &self.config)?;
        Ok(self.label_term - self.config.alpha * second)
    }

    pub fn grad(&self, batch_predictions: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        lf_grad_predictions(&self.features_kernel, batch_predictions, &self.config)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// Dependence measure used by [`delta_p`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dependence {
    Hsic,
    MutualInformation,
}

fn argmax_rows(p: &ArrayView2<'_, f64>) -> Vec<usize> {
    p.outer_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (c, &v)| if v > best.1 { (c, v) } else { best })
                .0
        })
        .collect()
}

fn highest_variance_feature(table: &DatasetTable) -> usize {
    let x = table.features();
    (0..x.ncols())
        .map(|j| (j, x.column(j).var(0.0)))
        .fold((0, f64::NEG_INFINITY), |best, (j, v)| if v > best.1 { (j, v) } else { best })
        .0
}

/// `|dep(X, Ŷ) − dep(X, Y)|` on one dataset.
fn dependence_gap(
    table: &DatasetTable,
    predictions: &ArrayView2<'_, f64>,
    config: &IndependenceConfig,
    measure: Dependence,
    mi: Option<(usize, Binning)>,
) -> Result<f64> {
    match measure {
        Dependence::Hsic => {
            let all: Vec<usize> = (0..table.n_rows()).collect();
            let rows = batch_rows(&all, &[], config.batch_size, config.seed);
            let x = table.features().select(Axis(0), &rows);
            let kx = center(&kernel_matrix(x.view(), &config.feature_kernel)?)?;
            let labels: Vec<usize> = rows.iter().map(|&r| table.labels()[r]).collect();
            let with_labels = label_term(&kx, &labels, table.class_count(), config)?;
            let p = predictions.select(Axis(0), &rows);
            let kp = center(&kernel_matrix(p.view(), &config.prediction_kernel)?)?;
            let with_predictions = nhsic(&kx, &kp, config.normalization)?;
            Ok(dist(with_predictions, with_labels))
        }
        Dependence::MutualInformation => {
            let (feature, binning) = mi.expect("binning prepared by caller");
            let column: Vec<f64> = table.features().column(feature).to_vec();
            let x = binning.apply(&column);
            let with_labels = plugin_mi(&x, table.labels());
            let with_predictions = plugin_mi(&x, &argmax_rows(predictions));
            Ok(dist(with_predictions, with_labels))
        }
    }
}

/// Distribution shift between a dataset and its retained part:
///
/// ```text
/// ΔP = DIST(dep(D, Ŷ), dep(D, Y)) − DIST(dep(D∖ΔD, Ŷ), dep(D∖ΔD, Y))
/// ```
///
/// Prediction rows must align with the table rows. Under mutual
/// information, the feature and its bin edges come from the full table and
/// are shared by both terms.
pub fn delta_p(
    predictions_full: ArrayView2<'_, f64>,
    predictions_retained: ArrayView2<'_, f64>,
    data_full: &DatasetTable,
    data_retained: &DatasetTable,
    config: &IndependenceConfig,
    measure: Dependence,
) -> Result<f64> {
    if data_retained.n_rows() == 0 || predictions_retained.nrows() == 0 {
        return Err(Error::EmptyRetainedSet);
    }
    if predictions_full.nrows() != data_full.n_rows()
        || predictions_retained.nrows() != data_retained.n_rows()
    {
        return Err(Error::Shape("predictions are not aligned with their datasets".into()));
    }
    let mi = match measure {
        Dependence::Hsic => None,
        Dependence::MutualInformation => {
            let feature = config.mi_feature.unwrap_or_else(|| highest_variance_feature(data_full));
            if feature >= data_full.n_features() {
                return Err(Error::InvalidArgument(format!("mi_feature {feature} out of range")));
            }
            let column: Vec<f64> = data_full.features().column(feature).to_vec();
            Some((feature, Binning::sqrt_rule(&column)))
        }
    };
    let full = dependence_gap(data_full, &predictions_full, config, measure, mi)?;
    let retained = dependence_gap(data_retained, &predictions_retained, config, measure, mi)?;
    Ok(full - retained)
}
