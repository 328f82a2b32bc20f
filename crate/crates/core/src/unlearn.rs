//! The unlearning engine.
//!
//! Given a model `θ` trained on a subset and an applied request, a method
//! produces `θ*`:
//!
//! * `retrain` trains from scratch on the retained data (the oracle).
//! * `influence` takes one Newton-style step `θ* = θ − H̃⁻¹g`, where `g` is
//!   the influence gradient of the touched rows and `H̃` the damped Hessian
//!   of the cross-entropy objective on the retained data.
//! * `dui` does the same with the independence term `λ·L_F` folded into
//!   both `g` and `H̃`.
//!
//! `H̃⁻¹g` comes from an inverse-HVP solver: `direct` (dense Cholesky, small
//! models) or `lissa` (truncated Neumann recursion). Methods and solvers are
//! looked up by name in [`MethodRegistry`] and [`SolverRegistry`].

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::datasets::Subset;
use crate::error::{Error, Result};
use crate::independence::{batch_rows, IndependenceConfig, IndependenceContext};
use crate::models::{train, LossBreakdown, ModelSpec, Objective, ParamVector, TrainOptions};
use crate::requests::{AppliedRequest, RequestMode};

/// Largest parameter count the dense solver accepts.
pub const DIRECT_MAX_PARAMS: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnlearnConfig {
    pub method: String,
    /// Weight of the independence term (`dui` only).
    pub lambda: f64,
    pub solver: String,
    pub lissa_iterations: usize,
    pub lissa_scale: f64,
    pub lissa_repeats: usize,
    /// Power-iteration steps used to check `β·ρ(H̃) < 1`; 0 disables it.
    pub spectral_probe_iterations: usize,
    pub damping: f64,
    pub independence: IndependenceConfig,
    /// Optimizer settings for `retrain`.
    pub train: TrainOptions,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        Self {
            method: "influence".into(),
            lambda: 0.1,
            solver: "direct".into(),
            lissa_iterations: 1000,
            lissa_scale: 0.1,
            lissa_repeats: 1,
            spectral_probe_iterations: 10,
            damping: 0.01,
            independence: IndependenceConfig::default(),
            train: TrainOptions::default(),
        }
    }
}

impl UnlearnConfig {
    pub fn with_method(mut self, method: &str) -> Self {
        self.method = method.into();
        self
    }

    pub fn with_solver(mut self, solver: &str) -> Self {
        self.solver = solver.into();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !MethodRegistry::default().contains(&self.method) {
            return Err(Error::Unknown {
                kind: "unlearning method",
                name: self.method.clone(),
            });
        }
        if !SolverRegistry::default().contains(&self.solver) {
            return Err(Error::Unknown {
                kind: "solver",
                name: self.solver.clone(),
            });
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be ≥ 0, got {}", self.lambda));
        }
        if self.lissa_iterations == 0 || self.lissa_repeats == 0 {
            return bad("lissa_iterations and lissa_repeats must be ≥ 1".into());
        }
        if !(self.lissa_scale > 0.0 && self.lissa_scale.is_finite()) {
            return bad(format!("lissa_scale must be positive, got {}", self.lissa_scale));
        }
        if !(self.damping >= 0.0 && self.damping.is_finite()) {
            return bad(format!("damping must be ≥ 0, got {}", self.damping));
        }
        self.independence.validate()
    }

    fn lissa(&self) -> LissaOptions {
        LissaOptions {
            iterations: self.lissa_iterations,
            scale: self.lissa_scale,
            repeats: self.lissa_repeats,
            probe_iterations: self.spectral_probe_iterations,
        }
    }
}

/// A symmetric linear map given only by its action.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, v: &Array1<f64>) -> Result<Array1<f64>>;

    /// Multiple of the identity already included in [`Self::apply`].
    fn damping(&self) -> f64 {
        0.0
    }
}

/// `v ↦ (∇²f(θ) + δI)v` for an objective `f`.
pub struct HessianOperator<'a> {
    objective: Objective<'a>,
    theta: Array1<f64>,
    damping: f64,
}

impl<'a> HessianOperator<'a> {
    pub fn new(objective: Objective<'a>, theta: &Array1<f64>, damping: f64) -> Self {
        Self {
            objective,
            theta: theta.clone(),
            damping,
        }
    }

    /// Damped Hessian of `L_origin + λ·L_F` over `data`, with the
    /// independence batch drawn from the data rows.
    pub fn for_data(
        spec: &ModelSpec,
        theta: &Array1<f64>,
        data: &'a Subset,
        lambda: f64,
        independence: &IndependenceConfig,
        damping: f64,
    ) -> Result<Self> {
        let objective = Objective::new(spec, data)?.with_independence(lambda, independence)?;
        Ok(Self::new(objective, theta, damping))
    }
}

impl LinearOperator for HessianOperator<'_> {
    fn dim(&self) -> usize {
        self.theta.len()
    }

    fn apply(&self, v: &Array1<f64>) -> Result<Array1<f64>> {
        let mut hv = self.objective.hvp(&self.theta, v)?;
        hv.scaled_add(self.damping, v);
        Ok(hv)
    }

    fn damping(&self) -> f64 {
        self.damping
    }
}

/// An approximate `A⁻¹v` and what the solver learned on the way.
#[derive(Debug, Clone)]
pub struct Solution {
    pub x: Array1<f64>,
    /// `‖Ax − v‖/‖v‖` (reported by iterative solvers).
    pub residual: Option<f64>,
    /// `(max Lᵢᵢ / min Lᵢᵢ)²` of the Cholesky factor, a cheap lower bound
    /// on the condition number (dense solver).
    pub condition_estimate: Option<f64>,
    /// Power-iteration estimate of `ρ(A)` (iterative solver).
    pub spectral_estimate: Option<f64>,
}

/// Assembles `A` column by column and solves by Cholesky.
pub fn inverse_hvp_direct(op: &dyn LinearOperator, v: &Array1<f64>) -> Result<Solution> {
    let p = op.dim();
    if p > DIRECT_MAX_PARAMS {
        return Err(Error::InvalidArgument(format!(
            "direct solver needs P ≤ {DIRECT_MAX_PARAMS}, model has {p}; use lissa"
        )));
    }
    if v.len() != p {
        return Err(Error::Shape(format!("v has {} entries, operator dimension is {p}", v.len())));
    }
    if v.iter().all(|&x| x == 0.0) {
        return Ok(Solution {
            x: Array1::zeros(p),
            residual: None,
            condition_estimate: None,
            spectral_estimate: None,
        });
    }
    let mut a = DMatrix::<f64>::zeros(p, p);
    let mut e = Array1::zeros(p);
    for j in 0..p {
        e[j] = 1.0;
        let col = op.apply(&e)?;
        e[j] = 0.0;
        for (i, &c) in col.iter().enumerate() {
            a[(i, j)] = c;
        }
    }
    // Finite-difference HVPs are only symmetric up to rounding.
    let a = (&a + a.transpose()) * 0.5;
    let indefinite = Error::Indefinite {
        damping: op.damping(),
    };
    let chol = a.cholesky().ok_or(indefinite)?;
    let diag = chol.l_dirty().diagonal();
    let condition = (diag.max() / diag.min()).powi(2);
    let x = chol.solve(&DVector::from_iterator(p, v.iter().copied()));
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Indefinite {
            damping: op.damping(),
        });
    }
    Ok(Solution {
        x: x.iter().copied().collect(),
        residual: None,
        condition_estimate: Some(condition),
        spectral_estimate: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LissaOptions {
    /// Number of estimates `x₀ … x_{J−1}`; `J = 1` returns `β·v`.
    pub iterations: usize,
    /// Step scale `β`.
    pub scale: f64,
    pub repeats: usize,
    pub probe_iterations: usize,
}

fn norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

/// Power iteration for the largest eigenvalue magnitude of `op`.
pub fn spectral_radius(op: &dyn LinearOperator, iterations: usize) -> Result<f64> {
    let p = op.dim();
    // Deterministic, not aligned with any coordinate axis.
    let mut x: Array1<f64> = (0..p).map(|i| 1.0 + ((i * 7919) % 13) as f64 / 13.0).collect();
    let n0 = norm(&x);
    x /= n0;
    let mut estimate = 0.0;
    for _ in 0..iterations {
        let y = op.apply(&x)?;
        estimate = norm(&y);
        if estimate == 0.0 {
            return Ok(0.0);
        }
        x = y / estimate;
    }
    Ok(estimate)
}

/// Truncated Neumann recursion for `A⁻¹v`:
///
/// ```text
/// x₀ = v,   x_j = v + x_{j−1} − β·A·x_{j−1}
/// ```
///
/// `x_j → (βA)⁻¹v`, so the returned estimate is `β·x_{J−1}`. Repeats are
/// averaged. The recursion fails if the iterate norm more than doubles on
/// three consecutive steps.
pub fn inverse_hvp_lissa(op: &dyn LinearOperator, v: &Array1<f64>, opt: &LissaOptions) -> Result<Solution> {
    let p = op.dim();
    if v.len() != p {
        return Err(Error::Shape(format!("v has {} entries, operator dimension is {p}", v.len())));
    }
    if opt.iterations == 0 || opt.repeats == 0 || !(opt.scale > 0.0) {
        return Err(Error::InvalidArgument("lissa needs J ≥ 1, r ≥ 1 and β > 0".into()));
    }
    let v_norm = norm(v);
    if v_norm == 0.0 {
        return Ok(Solution {
            x: Array1::zeros(p),
            residual: Some(0.0),
            condition_estimate: None,
            spectral_estimate: None,
        });
    }
    let spectral = if opt.probe_iterations > 0 {
        let rho = spectral_radius(op, opt.probe_iterations)?;
        if opt.scale * rho >= 1.0 {
            log::warn!(
                "lissa scale {} times spectral radius estimate {rho:.4e} is ≥ 1; the recursion may diverge",
                opt.scale
            );
        }
        Some(rho)
    } else {
        None
    };
    let mut total = Array1::zeros(p);
    for _ in 0..opt.repeats {
        let mut x = v.clone();
        let mut prev = v_norm;
        let mut growth = 0;
        for j in 1..opt.iterations {
            let ax = op.apply(&x)?;
            let mut next = v + &x;
            next.scaled_add(-opt.scale, &ax);
            let n = norm(&next);
            if !n.is_finite() {
                return Err(Error::LissaDiverged { iteration: j });
            }
            growth = if n > 2.0 * prev { growth + 1 } else { 0 };
            if growth >= 3 {
                return Err(Error::LissaDiverged { iteration: j });
            }
            prev = n;
            x = next;
        }
        total += &x;
    }
    let x = total * (opt.scale / opt.repeats as f64);
    let residual = norm(&(op.apply(&x)? - v)) / v_norm;
    Ok(Solution {
        x,
        residual: Some(residual),
        condition_estimate: None,
        spectral_estimate: spectral,
    })
}

pub trait InverseHvpSolver: Send + Sync {
    fn name(&self) -> &'static str;
    fn solve(&self, op: &dyn LinearOperator, v: &Array1<f64>, config: &UnlearnConfig) -> Result<Solution>;
}

struct Direct;

impl InverseHvpSolver for Direct {
    fn name(&self) -> &'static str {
        "direct"
    }

    fn solve(&self, op: &dyn LinearOperator, v: &Array1<f64>, _config: &UnlearnConfig) -> Result<Solution> {
        inverse_hvp_direct(op, v)
    }
}

struct Lissa;

impl InverseHvpSolver for Lissa {
    fn name(&self) -> &'static str {
        "lissa"
    }

    fn solve(&self, op: &dyn LinearOperator, v: &Array1<f64>, config: &UnlearnConfig) -> Result<Solution> {
        inverse_hvp_lissa(op, v, &config.lissa())
    }
}

pub struct SolverRegistry {
    entries: BTreeMap<&'static str, Box<dyn InverseHvpSolver>>,
}

impl Default for SolverRegistry {
    fn default() -> Self {
        let mut reg = Self {
            entries: BTreeMap::new(),
        };
        reg.register(Box::new(Direct));
        reg.register(Box::new(Lissa));
        reg
    }
}

impl SolverRegistry {
    pub fn register(&mut self, solver: Box<dyn InverseHvpSolver>) {
        self.entries.insert(solver.name(), solver);
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    pub fn get(&self, name: &str) -> Result<&dyn InverseHvpSolver> {
        self.entries.get(name).map(|s| s.as_ref()).ok_or_else(|| Error::Unknown {
            kind: "solver",
            name: name.to_string(),
        })
    }
}

/// The independence batch for `data`, with `priority` rows taken first.
fn independence_context(
    data: &Subset,
    priority: &[usize],
    config: &IndependenceConfig,
) -> Result<IndependenceContext> {
    let rows = batch_rows(&data.rows, priority, config.batch_size, config.seed);
    IndependenceContext::new(data.table(), rows, config)
}

fn objective<'a>(
    spec: &ModelSpec,
    data: &'a Subset,
    lambda: f64,
    priority: &[usize],
    config: &IndependenceConfig,
) -> Result<Objective<'a>> {
    let context = if lambda > 0.0 {
        Some(independence_context(data, priority, config)?)
    } else {
        None
    };
    Objective::new(spec, data)?.with_context(lambda, context)
}

/// The gradient `g` of the update `θ* = θ − H̃⁻¹g`.
///
/// With `n` training rows and touched rows `Δ`:
///
/// * points: `g = −Σ_{z∈Δ} [∇ℓ(z)/n + λ·∇_{ŷ_z}L_F]`
/// * feature values: `g = Σ_{z∈Δ} [∇ℓ(z̃)/n − ∇ℓ(z)/n] + λ·[share(z̃) − share(z)]`
///
/// where `share(z)` is the part of `∇L_F` flowing through the prediction
/// of `z`. The `1/n` matches the mean-loss objective whose Hessian the
/// update inverts. `data` is the subset the model was trained on.
pub fn influence_gradient(
    spec: &ModelSpec,
    theta: &Array1<f64>,
    data: &Subset,
    applied: &AppliedRequest,
    lambda: f64,
    independence: &IndependenceConfig,
) -> Result<Array1<f64>> {
    let p = spec.param_count()?;
    if applied.is_empty() {
        log::warn!("empty unlearning request; the influence gradient is zero");
        return Ok(Array1::zeros(p));
    }
    let delta = &applied.delta_rows;
    let weight = 1.0 / data.len() as f64;
    let original = objective(spec, data, lambda, delta, independence)?;
    let before = original.combined_row_grad(theta, delta, weight)?;
    match applied.mode {
        RequestMode::Points => Ok(-before),
        RequestMode::FeatureValues => {
            let perturbed = objective(spec, &applied.retained, lambda, delta, independence)?;
            Ok(perturbed.combined_row_grad(theta, delta, weight)? - before)
        }
    }
}

/// Inputs shared by every unlearning method.
pub struct Problem<'a> {
    pub spec: &'a ModelSpec,
    pub theta: &'a Array1<f64>,
    /// The subset `θ` was trained on.
    pub data: &'a Subset,
    pub applied: &'a AppliedRequest,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub influence_grad_norm: Option<f64>,
    pub lissa_residual: Option<f64>,
    pub condition_estimate: Option<f64>,
    pub spectral_estimate: Option<f64>,
    /// Objective on the retained data at `θ` and at `θ*`.
    pub loss_before: Option<LossBreakdown>,
    pub loss_after: Option<LossBreakdown>,
}

pub struct Update {
    pub theta: Array1<f64>,
    pub diagnostics: Diagnostics,
}

pub trait Unlearner: Send + Sync {
    fn name(&self) -> &'static str;
    fn update(&self, problem: &Problem<'_>, config: &UnlearnConfig) -> Result<Update>;
}

struct Retrain;

impl Unlearner for Retrain {
    fn name(&self) -> &'static str {
        "retrain"
    }

    fn update(&self, problem: &Problem<'_>, config: &UnlearnConfig) -> Result<Update> {
        let outcome = train(problem.spec, &problem.applied.retained, &config.train)?;
        Ok(Update {
            theta: outcome.theta,
            diagnostics: Diagnostics::default(),
        })
    }
}

/// One damped Newton step from `θ`, with `λ` weighting the independence
/// term in both the gradient and the curvature.
fn newton_update(problem: &Problem<'_>, config: &UnlearnConfig, lambda: f64) -> Result<Update> {
    let g = influence_gradient(
        problem.spec,
        problem.theta,
        problem.data,
        problem.applied,
        lambda,
        &config.independence,
    )?;
    let mut diagnostics = Diagnostics {
        influence_grad_norm: Some(norm(&g)),
        ..Diagnostics::default()
    };
    if problem.applied.is_empty() {
        return Ok(Update {
            theta: problem.theta.clone(),
            diagnostics,
        });
    }
    let retained = &problem.applied.retained;
    let op = HessianOperator::new(
        objective(problem.spec, retained, lambda, &[], &config.independence)?,
        problem.theta,
        config.damping,
    );
    let solution = SolverRegistry::default().get(&config.solver)?.solve(&op, &g, config)?;
    diagnostics.lissa_residual = solution.residual;
    diagnostics.condition_estimate = solution.condition_estimate;
    diagnostics.spectral_estimate = solution.spectral_estimate;
    Ok(Update {
        theta: problem.theta - &solution.x,
        diagnostics,
    })
}

struct Influence;

impl Unlearner for Influence {
    fn name(&self) -> &'static str {
        "influence"
    }

    fn update(&self, problem: &Problem<'_>, config: &UnlearnConfig) -> Result<Update> {
        newton_update(problem, config, 0.0)
    }
}

struct Dui;

impl Unlearner for Dui {
    fn name(&self) -> &'static str {
        "dui"
    }

    fn update(&self, problem: &Problem<'_>, config: &UnlearnConfig) -> Result<Update> {
        newton_update(problem, config, config.lambda)
    }
}

pub struct MethodRegistry {
    entries: BTreeMap<&'static str, Box<dyn Unlearner>>,
}

impl Default for MethodRegistry {
    fn default() -> Self {
        let mut reg = Self {
            entries: BTreeMap::new(),
        };
        reg.register(Box::new(Retrain));
        reg.register(Box::new(Influence));
        reg.register(Box::new(Dui));
        reg
    }
}

impl MethodRegistry {
    pub fn register(&mut self, method: Box<dyn Unlearner>) {
        self.entries.insert(method.name(), method);
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    pub fn get(&self, name: &str) -> Result<&dyn Unlearner> {
        self.entries.get(name).map(|m| m.as_ref()).ok_or_else(|| Error::Unknown {
            kind: "unlearning method",
            name: name.to_string(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct UnlearnResult {
    pub method: String,
    pub theta_star: ParamVector,
    /// Wall-clock time of the update itself.
    pub runtime_seconds: f64,
    pub diagnostics: Diagnostics,
}

/// Runs `config.method` on a model trained on `data`.
pub fn unlearn(
    spec: &ModelSpec,
    theta: &Array1<f64>,
    data: &Subset,
    applied: &AppliedRequest,
    config: &UnlearnConfig,
) -> Result<UnlearnResult> {
    config.validate()?;
    let method = MethodRegistry::default();
    let method = method.get(&config.method)?;
    let problem = Problem {
        spec,
        theta,
        data,
        applied,
    };
    let start = Instant::now();
    let mut update = method.update(&problem, config)?;
    let runtime_seconds = start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE);
    if update.theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{} unlearning", config.method)));
    }
    let lambda = if config.method == "dui" { config.lambda } else { 0.0 };
    let retained = objective(spec, &applied.retained, lambda, &[], &config.independence)?;
    update.diagnostics.loss_before = Some(retained.loss(theta)?);
    update.diagnostics.loss_after = Some(retained.loss(&update.theta)?);
    Ok(UnlearnResult {
        method: config.method.clone(),
        theta_star: ParamVector::new(spec, update.theta)?,
        runtime_seconds,
        diagnostics: update.diagnostics,
    })
}

/// Parameter influence of upweighting one row through the independence
/// loss, `−H̃⁻¹·∇_{ŷ_z}L_F`, with `H̃` the damped Hessian of the
/// cross-entropy objective on `data`. A diagnostic; the update path does
/// not use it.
pub fn i_up_params(
    spec: &ModelSpec,
    theta: &Array1<f64>,
    z_row: usize,
    data: &Subset,
    config: &UnlearnConfig,
) -> Result<Array1<f64>> {
    let lf = objective(spec, data, 1.0, &[z_row], &config.independence)?;
    let g = lf.lf_grad_rows(theta, Some(&[z_row]))?;
    if g.iter().all(|&v| v == 0.0) {
        return Ok(g);
    }
    let op = HessianOperator::for_data(spec, theta, data, 0.0, &config.independence, config.damping)?;
    let solution = SolverRegistry::default().get(&config.solver)?.solve(&op, &g, config)?;
    Ok(-solution.x)
}
