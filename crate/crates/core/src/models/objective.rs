use ndarray::{Array1, Array2, Axis, CowArray, Ix2};
use serde::{Deserialize, Serialize};

use super::{softmax, Architecture, ModelSpec, Tape};
use crate::datasets::{Dataset, Subset};
use crate::error::{Error, Result};
use crate::independence::{batch_rows, IndependenceConfig, IndependenceContext};

/// Objective value split into its parts. `total = origin + λ·lf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Mean cross-entropy plus the ridge term.
    pub origin: f64,
    pub lf: f64,
    pub total: f64,
}

/// The training objective on a [`Subset`]:
/// `mean CE over subset rows + (l2/2)‖θ‖² + λ·L_F`.
///
/// The independence term is evaluated on a fixed batch of the subset rows
/// (see [`IndependenceContext`]) and only when `λ > 0`.
pub struct Objective<'a> {
    arch: Box<dyn Architecture>,
    spec: ModelSpec,
    subset: &'a Subset,
    lambda: f64,
    context: Option<IndependenceContext>,
}

/// A forward pass over some rows of the dataset.
struct Pass<'b> {
    x: CowArray<'b, f64, Ix2>,
    tape: Tape,
    probs: Array2<f64>,
    /// Dataset row → tape row.
    position: Vec<usize>,
}

const ABSENT: usize = usize::MAX;

impl<'a> Objective<'a> {
    pub fn new(spec: &ModelSpec, subset: &'a Subset) -> Result<Self> {
        let arch = spec.build()?;
        let table = subset.table();
        if table.n_features() != spec.input_dim {
            return Err(Error::Shape(format!(
                "model expects {} features, data has {}",
                spec.input_dim,
                table.n_features()
            )));
        }
        if table.class_count() != spec.class_count {
            return Err(Error::Shape(format!(
                "model expects {} classes, data has {}",
                spec.class_count,
                table.class_count()
            )));
        }
        if arch.needs_graph() && !subset.data.is_graph() {
            return Err(Error::Shape(format!("{} needs a graph dataset", arch.name())));
        }
        if subset.rows.is_empty() {
            return Err(Error::InvalidArgument("empty index set".into()));
        }
        Ok(Self {
            arch,
            spec: spec.clone(),
            subset,
            lambda: 0.0,
            context: None,
        })
    }

    /// Adds `λ·L_F`, batching the subset rows per `config`.
    pub fn with_independence(self, lambda: f64, config: &IndependenceConfig) -> Result<Self> {
        if lambda == 0.0 {
            return self.with_context(0.0, None);
        }
        let rows = batch_rows(&self.subset.rows, &[], config.batch_size, config.seed);
        let ctx = IndependenceContext::new(self.subset.table(), rows, config)?;
        self.with_context(lambda, Some(ctx))
    }

    /// Adds `λ·L_F` over an already prepared batch. Batch rows must be rows
    /// of the dataset; they need not be loss rows.
    pub fn with_context(mut self, lambda: f64, context: Option<IndependenceContext>) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("λ must be ≥ 0, got {lambda}")));
        }
        if lambda > 0.0 && context.is_none() {
            return Err(Error::InvalidArgument("λ > 0 needs an independence context".into()));
        }
        if let Some(ctx) = &context {
            let n = self.subset.data.n_rows();
            if ctx.rows().iter().any(|&r| r >= n) {
                return Err(Error::Shape("independence batch row out of bounds".into()));
            }
        }
        self.lambda = lambda;
        self.context = if lambda > 0.0 { context } else { None };
        Ok(self)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn subset(&self) -> &Subset {
        self.subset
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn context(&self) -> Option<&IndependenceContext> {
        self.context.as_ref()
    }

    pub fn param_count(&self) -> usize {
        self.arch.param_count()
    }

    fn check_theta(&self, theta: &Array1<f64>) -> Result<()> {
        if theta.len() != self.arch.param_count() {
            return Err(Error::Shape(format!(
                "θ has {} entries, {} expects {}",
                theta.len(),
                self.arch.name(),
                self.arch.param_count()
            )));
        }
        Ok(())
    }

    /// Forward pass covering at least `rows`. Graph models always run on the
    /// whole graph; tabular models only on the requested rows.
    fn pass(&self, theta: &Array1<f64>, rows: &[usize]) -> Pass<'a> {
        let data: &'a Dataset = &self.subset.data;
        let n = data.n_rows();
        let features = data.table().features();
        let adj = data.normalized_adjacency();
        let theta = theta.as_slice().expect("contiguous θ");
        let whole = data.is_graph() || (rows.len() == n && rows.iter().enumerate().all(|(i, &r)| i == r));
        let (x, position) = if whole {
            (CowArray::from(features), (0..n).collect())
        } else {
            let mut position = vec![ABSENT; n];
            for (i, &r) in rows.iter().enumerate() {
                position[r] = i;
            }
            (CowArray::from(features.select(Axis(0), rows)), position)
        };
        let tape = self.arch.forward(theta, x.view(), adj);
        let probs = softmax(&tape.logits);
        Pass { x, tape, probs, position }
    }

    fn backward(&self, theta: &Array1<f64>, pass: &Pass<'_>, d_logits: &Array2<f64>) -> Array1<f64> {
        self.arch.backward(
            theta.as_slice().expect("contiguous θ"),
            pass.x.view(),
            self.subset.data.normalized_adjacency(),
            &pass.tape,
            d_logits,
        )
    }

    /// Class probabilities for the given dataset rows, in order.
    pub fn predict_rows(&self, theta: &Array1<f64>, rows: &[usize]) -> Result<Array2<f64>> {
        self.check_theta(theta)?;
        let pass = self.pass(theta, rows);
        let local: Vec<usize> = rows.iter().map(|&r| pass.position[r]).collect();
        Ok(pass.probs.select(Axis(0), &local))
    }

    /// Gradient (and summed cross-entropy) of
    /// `ce_weight·Σ_{ce_rows} ℓ + lf_weight·L_F` restricted to the
    /// prediction rows in `lf_rows` (`None`: the whole batch). No ridge.
    fn accumulate(
        &self,
        theta: &Array1<f64>,
        ce: Option<(&[usize], f64)>,
        lf: Option<(Option<&[usize]>, f64)>,
    ) -> Result<(Array1<f64>, f64, Option<f64>)> {
        self.check_theta(theta)?;
        // With α = 0, L_F is the label term alone and constant in θ.
        let lf = match (&self.context, lf) {
            (Some(ctx), Some((mask, w))) if ctx.config().alpha != 0.0 => Some((ctx, mask, w)),
            _ => None,
        };
        let constant_lf = self.context.as_ref().filter(|ctx| ctx.config().alpha == 0.0);
        let mut needed: Vec<usize> = ce.map(|(r, _)| r.to_vec()).unwrap_or_default();
        if let Some((ctx, _, _)) = lf {
            needed.extend_from_slice(ctx.rows());
        }
        needed.sort_unstable();
        needed.dedup();
        let pass = self.pass(theta, &needed);
        let labels = self.subset.table().labels();
        let mut d_logits = Array2::zeros(pass.probs.raw_dim());
        let mut ce_sum = 0.0;
        if let Some((rows, weight)) = ce {
            for &r in rows {
                let i = pass.position[r];
                let p = pass.probs.row(i);
                ce_sum -= p[labels[r]].max(f64::MIN_POSITIVE).ln();
                let mut d = d_logits.row_mut(i);
                d.scaled_add(weight, &p);
                d[labels[r]] -= weight;
            }
        }
        let mut lf_value = None;
        if let Some((ctx, mask, weight)) = lf {
            let local: Vec<usize> = ctx.rows().iter().map(|&r| pass.position[r]).collect();
            let batch_probs = pass.probs.select(Axis(0), &local);
            lf_value = Some(ctx.value(batch_probs.view())?);
            let g = ctx.grad(batch_probs.view())?;
            let keep: Option<std::collections::HashSet<usize>> = mask.map(|m| m.iter().copied().collect());
            for (b, &r) in ctx.rows().iter().enumerate() {
                if keep.as_ref().is_some_and(|k| !k.contains(&r)) {
                    continue;
                }
                // Softmax Jacobian: p ⊙ (g − ⟨g, p⟩).
                let i = local[b];
                let p = pass.probs.row(i);
                let gb = g.row(b);
                let inner = gb.dot(&p);
                let mut d = d_logits.row_mut(i);
                for c in 0..d.len() {
                    d[c] += weight * p[c] * (gb[c] - inner);
                }
            }
        }
        if let Some(ctx) = constant_lf {
            lf_value = Some(ctx.label_term());
        }
        Ok((self.backward(theta, &pass, &d_logits), ce_sum, lf_value))
    }

    fn ridge(&self, theta: &Array1<f64>) -> f64 {
        0.5 * self.spec.l2_reg * theta.dot(theta)
    }

    fn breakdown(&self, theta: &Array1<f64>, ce_sum: f64, lf: Option<f64>) -> LossBreakdown {
        let origin = ce_sum / self.subset.len() as f64 + self.ridge(theta);
        let lf = lf.unwrap_or(0.0);
        LossBreakdown {
            origin,
            lf,
            total: origin + self.lambda * lf,
        }
    }

    /// Full objective gradient and value.
    pub fn grad_with_loss(&self, theta: &Array1<f64>) -> Result<(Array1<f64>, LossBreakdown)> {
        let weight = 1.0 / self.subset.len() as f64;
        let lf = (self.lambda > 0.0).then_some((None, self.lambda));
        let (mut g, ce_sum, lf_value) = self.accumulate(theta, Some((&self.subset.rows, weight)), lf)?;
        g.scaled_add(self.spec.l2_reg, theta);
        Ok((g, self.breakdown(theta, ce_sum, lf_value)))
    }

    pub fn grad(&self, theta: &Array1<f64>) -> Result<Array1<f64>> {
        Ok(self.grad_with_loss(theta)?.0)
    }

    pub fn loss(&self, theta: &Array1<f64>) -> Result<LossBreakdown> {
        self.check_theta(theta)?;
        let pass = self.pass(theta, &self.subset.rows);
        let labels = self.subset.table().labels();
        let ce_sum: f64 = self
            .subset
            .rows
            .iter()
            .map(|&r| -pass.probs[[pass.position[r], labels[r]]].max(f64::MIN_POSITIVE).ln())
            .sum();
        let lf = match &self.context {
            Some(ctx) => {
                let local: Vec<usize> = ctx.rows().iter().map(|&r| pass.position[r]).collect();
                Some(ctx.value(pass.probs.select(Axis(0), &local).view())?)
            }
            None => None,
        };
        Ok(self.breakdown(theta, ce_sum, lf))
    }

    /// `Σ_{r ∈ rows} ∇ℓ(z_r, θ)`, cross-entropy only.
    pub fn loss_grad_sum(&self, theta: &Array1<f64>, rows: &[usize]) -> Result<Array1<f64>> {
        if rows.is_empty() {
            return Ok(Array1::zeros(self.param_count()));
        }
        Ok(self.accumulate(theta, Some((rows, 1.0)), None)?.0)
    }

    /// Gradient of the batch `L_F` flowing through the predictions of
    /// `rows` only (the per-point share of the independence loss). Rows
    /// outside the batch contribute nothing; the shares over the whole batch
    /// sum to `∇L_F`.
    pub fn lf_grad_rows(&self, theta: &Array1<f64>, rows: Option<&[usize]>) -> Result<Array1<f64>> {
        match &self.context {
            Some(ctx) if ctx.config().alpha != 0.0 => Ok(self.accumulate(theta, None, Some((rows, 1.0)))?.0),
            _ => {
                self.check_theta(theta)?;
                Ok(Array1::zeros(self.param_count()))
            }
        }
    }

    /// Per-row combined gradient sum
    /// `Σ_{r ∈ rows} [ce_weight·∇ℓ(z_r) + λ·∇_{ŷ_r} L_F]`.
    pub fn combined_row_grad(&self, theta: &Array1<f64>, rows: &[usize], ce_weight: f64) -> Result<Array1<f64>> {
        if rows.is_empty() {
            return Ok(Array1::zeros(self.param_count()));
        }
        let lf = (self.lambda > 0.0).then_some((Some(rows), self.lambda));
        Ok(self.accumulate(theta, Some((rows, ce_weight)), lf)?.0)
    }

    /// Hessian-vector product of the objective. The cross-entropy part
    /// uses the architecture's closed form when it has one; the
    /// independence term, and architectures without a closed form, use
    /// central differences of the analytic gradient.
    pub fn hvp(&self, theta: &Array1<f64>, v: &Array1<f64>) -> Result<Array1<f64>> {
        self.check_theta(theta)?;
        if v.iter().all(|&x| x == 0.0) {
            return Ok(Array1::zeros(v.len()));
        }
        if self.subset.data.is_graph() {
            return self.hvp_finite_difference(theta, v);
        }
        let rows = &self.subset.rows;
        let x = self.subset.table().features().select(Axis(0), rows);
        let labels = self.subset.labels();
        let Some(mut hv) = self.arch.cross_entropy_hvp(
            theta.as_slice().expect("contiguous θ"),
            x.view(),
            &labels,
            v.as_slice().expect("contiguous v"),
        ) else {
            return self.hvp_finite_difference(theta, v);
        };
        hv.scaled_add(self.spec.l2_reg, v);
        if self.lambda > 0.0 {
            let h = fd_step(theta, v);
            let plus = self.lf_grad_rows(&(theta + &(v * h)), None)?;
            let minus = self.lf_grad_rows(&(theta - &(v * h)), None)?;
            hv.scaled_add(self.lambda / (2.0 * h), &(plus - minus));
        }
        Ok(hv)
    }

    /// `(∇f(θ + hv) − ∇f(θ − hv)) / 2h` with `h = 1e−4·(1+‖θ‖)/‖v‖`.
    pub fn hvp_finite_difference(&self, theta: &Array1<f64>, v: &Array1<f64>) -> Result<Array1<f64>> {
        let v_norm = v.dot(v).sqrt();
        if v_norm == 0.0 {
            return Ok(Array1::zeros(v.len()));
        }
        let h = fd_step(theta, v);
        let plus = self.grad(&(theta + &(v * h)))?;
        let minus = self.grad(&(theta - &(v * h)))?;
        Ok((plus - minus) / (2.0 * h))
    }
}

fn fd_step(theta: &Array1<f64>, v: &Array1<f64>) -> f64 {
    1e-4 * (1.0 + theta.dot(theta).sqrt()) / v.dot(v).sqrt().max(1e-12)
}

/// Class probabilities for every row of `data`.
pub fn forward(spec: &ModelSpec, theta: &Array1<f64>, data: &Dataset) -> Result<Array2<f64>> {
    let arch = spec.build()?;
    let x = data.table().features();
    if x.ncols() != spec.input_dim || theta.len() != arch.param_count() {
        return Err(Error::Shape(format!(
            "features {:?} / θ {} vs spec input {} / P {}",
            x.dim(),
            theta.len(),
            spec.input_dim,
            arch.param_count()
        )));
    }
    let adj = data.normalized_adjacency();
    if arch.needs_graph() && adj.is_none() {
        return Err(Error::Shape(format!("{} needs a graph dataset", arch.name())));
    }
    let tape = arch.forward(theta.as_slice().expect("contiguous θ"), x, adj);
    Ok(softmax(&tape.logits))
}

/// Mean cross-entropy over the subset rows plus the ridge term.
pub fn loss(spec: &ModelSpec, theta: &Array1<f64>, data: &Subset) -> Result<f64> {
    Ok(Objective::new(spec, data)?.loss(theta)?.origin)
}

pub fn grad(spec: &ModelSpec, theta: &Array1<f64>, data: &Subset) -> Result<Array1<f64>> {
    Objective::new(spec, data)?.grad(theta)
}

pub fn hvp(spec: &ModelSpec, theta: &Array1<f64>, data: &Subset, v: &Array1<f64>) -> Result<Array1<f64>> {
    Objective::new(spec, data)?.hvp(theta, v)
}

pub fn hvp_finite_difference(
    spec: &ModelSpec,
    theta: &Array1<f64>,
    data: &Subset,
    v: &Array1<f64>,
) -> Result<Array1<f64>> {
    Objective::new(spec, data)?.hvp_finite_difference(theta, v)
}

/// `∇(L_origin + λ·L_F)` and the loss breakdown.
pub fn combined_grad(
    spec: &ModelSpec,
    theta: &Array1<f64>,
    data: &Subset,
    lambda: f64,
    config: &IndependenceConfig,
) -> Result<(Array1<f64>, LossBreakdown)> {
    Objective::new(spec, data)?
        .with_independence(lambda, config)?
        .grad_with_loss(theta)
}

/// HVP of `L_origin + λ·L_F` by central differences of [`combined_grad`].
pub fn combined_hvp(
    spec: &ModelSpec,
    theta: &Array1<f64>,
    data: &Subset,
    lambda: f64,
    config: &IndependenceConfig,
    v: &Array1<f64>,
) -> Result<Array1<f64>> {
    Objective::new(spec, data)?
        .with_independence(lambda, config)?
        .hvp(theta, v)
}
