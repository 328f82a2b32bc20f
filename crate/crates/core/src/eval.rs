//! Classification metrics and distribution-shift diagnostics.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::datasets::{DatasetTable, Subset};
use crate::error::{Error, Result};
use crate::independence::{delta_p, Dependence, IndependenceConfig};
use crate::models::{forward, ModelSpec};
use crate::requests::AppliedRequest;

/// Row-wise argmax, ties to the lower class id.
pub fn predicted_classes(probabilities: &ArrayView2<'_, f64>) -> Vec<usize> {
    probabilities
        .outer_iter()
        .map(|row| {
            let mut best = 0;
            for (c, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// `(tp, fp, fn)` per class.
fn confusion(predicted: &[usize], truth: &[usize], classes: usize) -> Vec<(f64, f64, f64)> {
    let mut counts = vec![(0.0, 0.0, 0.0); classes];
    for (&p, &t) in predicted.iter().zip(truth) {
        if p == t {
            counts[t].0 += 1.0;
        } else {
            counts[p].1 += 1.0;
            counts[t].2 += 1.0;
        }
    }
    counts
}

fn check_lengths(predicted: &[usize], truth: &[usize], classes: usize) -> Result<()> {
    if predicted.len() != truth.len() || predicted.is_empty() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    if let Some(&c) = predicted.iter().chain(truth).find(|&&c| c >= classes) {
        return Err(Error::InvalidArgument(format!("class {c} outside [0, {classes})")));
    }
    Ok(())
}

/// Unweighted mean of per-class F1 over all `classes`; a class with
/// `precision + recall = 0` scores 0.
pub fn macro_f1(predicted: &[usize], truth: &[usize], classes: usize) -> Result<f64> {
    check_lengths(predicted, truth, classes)?;
    let total: f64 = confusion(predicted, truth, classes)
        .into_iter()
        .map(|(tp, fp, fn_)| {
            let denom = 2.0 * tp + fp + fn_;
            if denom == 0.0 {
                0.0
            } else {
                2.0 * tp / denom
            }
        })
        .sum();
    Ok(total / classes as f64)
}

/// F1 of the pooled confusion counts.
pub fn micro_f1(predicted: &[usize], truth: &[usize], classes: usize) -> Result<f64> {
    check_lengths(predicted, truth, classes)?;
    let (tp, fp, fn_) = confusion(predicted, truth, classes)
        .into_iter()
        .fold((0.0, 0.0, 0.0), |a, c| (a.0 + c.0, a.1 + c.1, a.2 + c.2));
    Ok(2.0 * tp / (2.0 * tp + fp + fn_))
}

/// Multiclass Brier score, `mean_i Σ_c (p_ic − 1[y_i = c])²`, in `[0, 2]`.
pub fn brier(probabilities: &ArrayView2<'_, f64>, truth: &[usize]) -> Result<f64> {
    if probabilities.nrows() != truth.len() || truth.is_empty() {
        return Err(Error::Shape(format!(
            "{} probability rows for {} labels",
            probabilities.nrows(),
            truth.len()
        )));
    }
    let total: f64 = probabilities
        .outer_iter()
        .zip(truth)
        .map(|(row, &y)| {
            row.iter()
                .enumerate()
                .map(|(c, &p)| {
                    let target = if c == y { 1.0 } else { 0.0 };
                    (p - target) * (p - target)
                })
                .sum::<f64>()
        })
        .sum();
    Ok(total / truth.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    Label,
    Feature(usize),
    PredictionClass,
}

/// Empirical marginal of one discrete variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDistribution {
    pub variable: Variable,
    pub histogram: Vec<f64>,
}

impl EmpiricalDistribution {
    pub fn from_values(variable: Variable, values: &[usize], bins: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut histogram = vec![0.0; bins];
        for &v in values {
            *histogram.get_mut(v).ok_or_else(|| {
                Error::InvalidArgument(format!("value {v} outside [0, {bins})"))
            })? += 1.0;
        }
        let n = values.len() as f64;
        histogram.iter_mut().for_each(|h| *h /= n);
        Ok(Self { variable, histogram })
    }

    pub fn total_variation(&self, other: &Self) -> f64 {
        0.5 * self
            .histogram
            .iter()
            .zip(&other.histogram)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

/// Quality of one model on held-out rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub brier: f64,
}

pub fn metrics_from_probabilities(probabilities: &ArrayView2<'_, f64>, truth: &[usize]) -> Result<Metrics> {
    let classes = probabilities.ncols();
    let predicted = predicted_classes(probabilities);
    Ok(Metrics {
        macro_f1: macro_f1(&predicted, truth, classes)?,
        micro_f1: micro_f1(&predicted, truth, classes)?,
        brier: brier(probabilities, truth)?,
    })
}

/// Class probabilities of the subset rows, in order. Graph models see the
/// whole graph.
pub fn predict(spec: &ModelSpec, theta: &Array1<f64>, data: &Subset) -> Result<Array2<f64>> {
    Ok(forward(spec, theta, &data.data)?.select(Axis(0), &data.rows))
}

pub fn evaluate(spec: &ModelSpec, theta: &Array1<f64>, data: &Subset) -> Result<Metrics> {
    let probabilities = predict(spec, theta, data)?;
    metrics_from_probabilities(&probabilities.view(), &data.labels())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    /// `ΔP` with the original model predicting on both datasets.
    pub hsic_shift: f64,
    pub mi_shift: f64,
    /// `ΔP` with the unlearned model predicting on the retained rows.
    pub hsic_shift_unlearned: f64,
    pub mi_shift_unlearned: f64,
    /// Label marginals of the full and the retained training rows.
    pub label_full: EmpiricalDistribution,
    pub label_retained: EmpiricalDistribution,
}

fn subset_table(data: &Subset) -> DatasetTable {
    data.table().select_rows(&data.rows)
}

/// Distribution shift caused by a request, as the `ΔP` of [`delta_p`]
/// under HSIC and plug-in MI.
///
/// The headline shifts hold the model fixed at `θ`, so they measure how
/// the data moved. The `_unlearned` variants let `θ*` predict on the
/// retained rows, which also folds in how far the update moved the model.
pub fn shift_report(
    spec: &ModelSpec,
    theta: &Array1<f64>,
    theta_star: &Array1<f64>,
    data_full: &Subset,
    applied: &AppliedRequest,
    config: &IndependenceConfig,
) -> Result<ShiftReport> {
    let retained = &applied.retained;
    let full_table = subset_table(data_full);
    let retained_table = subset_table(retained);
    let p_full = predict(spec, theta, data_full)?;
    let p_kept = predict(spec, theta, retained)?;
    let p_unlearned = predict(spec, theta_star, retained)?;
    let shift = |p_retained: &Array2<f64>, measure| {
        delta_p(
            p_full.view(),
            p_retained.view(),
            &full_table,
            &retained_table,
            config,
            measure,
        )
    };
    let classes = full_table.class_count();
    Ok(ShiftReport {
        hsic_shift: shift(&p_kept, Dependence::Hsic)?,
        mi_shift: shift(&p_kept, Dependence::MutualInformation)?,
        hsic_shift_unlearned: shift(&p_unlearned, Dependence::Hsic)?,
        mi_shift_unlearned: shift(&p_unlearned, Dependence::MutualInformation)?,
        label_full: EmpiricalDistribution::from_values(Variable::Label, full_table.labels(), classes)?,
        label_retained: EmpiricalDistribution::from_values(Variable::Label, retained_table.labels(), classes)?,
    })
}

/// One evaluated grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub unlearn_ratio: f64,
    pub feature_ratio: f64,
    pub seed: u64,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub brier: f64,
    pub runtime_seconds: f64,
    pub hsic_shift: f64,
    pub mi_shift: f64,
}

impl EvalReport {
    pub fn validate(&self) -> Result<()> {
        let values = [
            self.macro_f1,
            self.micro_f1,
            self.brier,
            self.runtime_seconds,
            self.hsic_shift,
            self.mi_shift,
        ];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("evaluation of {}", self.method)));
        }
        Ok(())
    }
}
