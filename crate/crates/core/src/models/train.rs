use std::time::Instant;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use super::{ModelSpec, Objective};
use crate::datasets::Subset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Stop once `‖∇L‖` drops below this.
    pub tolerance: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 500,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub theta: Array1<f64>,
    pub runtime_seconds: f64,
    pub epochs_run: usize,
    pub final_loss: f64,
    pub final_grad_norm: f64,
    /// Objective value before each step.
    pub loss_history: Vec<f64>,
}

/// Full-batch gradient descent on the mean cross-entropy plus ridge, from
/// the spec's seeded initialization.
pub fn train(spec: &ModelSpec, data: &Subset, opt: &TrainOptions) -> Result<TrainOutcome> {
    if opt.epochs == 0 {
        return Err(Error::InvalidArgument("epochs must be ≥ 1".into()));
    }
    if !(opt.learning_rate > 0.0 && opt.learning_rate.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "learning_rate must be positive, got {}",
            opt.learning_rate
        )));
    }
    let start = Instant::now();
    let objective = Objective::new(spec, data)?;
    let mut theta = spec.init_params()?;
    let mut history = Vec::with_capacity(opt.epochs);
    let mut last_finite = f64::NAN;
    let mut grad_norm = f64::INFINITY;
    let mut epochs_run = 0;
    for epoch in 0..opt.epochs {
        let (g, loss) = objective.grad_with_loss(&theta)?;
        if !loss.total.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                last_finite_loss: last_finite,
            });
        }
        last_finite = loss.total;
        history.push(loss.total);
        grad_norm = g.dot(&g).sqrt();
        if grad_norm < opt.tolerance {
            break;
        }
        theta.scaled_add(-opt.learning_rate, &g);
        epochs_run = epoch + 1;
    }
    let final_loss = objective.loss(&theta)?.total;
    if !final_loss.is_finite() {
        return Err(Error::Diverged {
            epoch: epochs_run,
            last_finite_loss: last_finite,
        });
    }
    if epochs_run == opt.epochs {
        grad_norm = objective.grad(&theta).map(|g| g.dot(&g).sqrt())?;
    }
    Ok(TrainOutcome {
        theta,
        runtime_seconds: start.elapsed().as_secs_f64(),
        epochs_run,
        final_loss,
        final_grad_norm: grad_norm,
        loss_history: history,
    })
}
