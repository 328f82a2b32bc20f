//! Differentiable classifiers behind one contract.
//!
//! An [`Architecture`] maps a flat parameter vector and an input matrix to
//! logits, and back-propagates a logit-space gradient to parameter space.
//! Everything else (softmax, cross-entropy, the independence term, HVPs,
//! training) is written once on top of that in [`Objective`] and [`train`].
//!
//! Architectures are looked up by name in an [`ArchitectureRegistry`]; the
//! built-in entries are `logreg`, `mlp` and `gcn`.

mod gcn;
mod logreg;
mod mlp;
mod objective;
mod params;
mod train;

use std::collections::BTreeMap;
use std::fmt::Debug;

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::SparseMatrix;
use crate::digest::sha256;
use crate::error::{Error, Result};

pub use gcn::Gcn;
pub use logreg::LogReg;
pub use mlp::Mlp;
pub use objective::{
    combined_grad, combined_hvp, forward, grad, hvp, hvp_finite_difference, loss, LossBreakdown,
    Objective,
};
pub use params::{load_params, read_params, save_params, write_params, ParamVector, PARAMS_MAGIC};
pub use train::{train, TrainOptions, TrainOutcome};

/// Intermediate values of one forward pass, kept for back-propagation.
#[derive(Debug, Clone)]
pub struct Tape {
    /// Layer inputs and pre-activations, architecture specific.
    pub cache: Vec<Array2<f64>>,
    pub logits: Array2<f64>,
}

/// One parameter block and the fan-in used to scale its initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub len: usize,
    pub fan_in: usize,
}

pub trait Architecture: Debug + Send + Sync {
    fn name(&self) -> &'static str;

    /// Parameter blocks in layout order.
    fn blocks(&self) -> Vec<Block>;

    fn param_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len).sum()
    }

    fn needs_graph(&self) -> bool {
        false
    }

    fn forward(&self, theta: &[f64], x: ArrayView2<'_, f64>, adj: Option<&SparseMatrix>) -> Tape;

    /// Gradient with respect to `theta` given `∂loss/∂logits`.
    fn backward(
        &self,
        theta: &[f64],
        x: ArrayView2<'_, f64>,
        adj: Option<&SparseMatrix>,
        tape: &Tape,
        d_logits: &Array2<f64>,
    ) -> Array1<f64>;

    /// Exact Hessian-vector product of the mean cross-entropy over all
    /// rows of `x` (no ridge), when the architecture has one.
    fn cross_entropy_hvp(
        &self,
        _theta: &[f64],
        _x: ArrayView2<'_, f64>,
        _labels: &[usize],
        _v: &[f64],
    ) -> Option<Array1<f64>> {
        None
    }
}

/// Architecture descriptor. `hidden_dim` is ignored by `logreg`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub arch: String,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    pub input_dim: usize,
    pub class_count: usize,
    #[serde(default = "default_l2")]
    pub l2_reg: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_hidden() -> usize {
    32
}

fn default_l2() -> f64 {
    0.01
}

impl ModelSpec {
    pub fn new(arch: &str, input_dim: usize, class_count: usize) -> Self {
        Self {
            arch: arch.to_string(),
            hidden_dim: default_hidden(),
            input_dim,
            class_count,
            l2_reg: default_l2(),
            seed: 0,
        }
    }

    pub fn with_hidden(mut self, hidden: usize) -> Self {
        self.hidden_dim = hidden;
        self
    }

    pub fn with_l2(mut self, l2: f64) -> Self {
        self.l2_reg = l2;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.class_count < 2 {
            return Err(Error::InvalidArgument(format!(
                "model needs input_dim ≥ 1 and class_count ≥ 2, got {} and {}",
                self.input_dim, self.class_count
            )));
        }
        if self.hidden_dim == 0 && self.arch != "logreg" {
            return Err(Error::InvalidArgument("hidden_dim must be ≥ 1".into()));
        }
        if !(self.l2_reg >= 0.0 && self.l2_reg.is_finite()) {
            return Err(Error::InvalidArgument(format!("l2_reg must be ≥ 0, got {}", self.l2_reg)));
        }
        Ok(())
    }

    /// Instantiates the architecture through the default registry.
    pub fn build(&self) -> Result<Box<dyn Architecture>> {
        ArchitectureRegistry::default().build(self)
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.build()?.param_count())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> [u8; 32] {
        sha256(serde_json::to_string(self).expect("spec serializes").as_bytes())
    }

    /// Seeded uniform initialization, `±0.1/√fan_in` per block.
    pub fn init_params(&self) -> Result<Array1<f64>> {
        let arch = self.build()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut theta = Vec::with_capacity(arch.param_count());
        for block in arch.blocks() {
            let bound = 0.1 / (block.fan_in.max(1) as f64).sqrt();
            theta.extend((0..block.len).map(|_| rng.random_range(-bound..=bound)));
        }
        Ok(Array1::from(theta))
    }
}

type Constructor = fn(&ModelSpec) -> Box<dyn Architecture>;

/// Name → constructor table for architectures.
pub struct ArchitectureRegistry {
    entries: BTreeMap<&'static str, Constructor>,
}

impl Default for ArchitectureRegistry {
    fn default() -> Self {
        let mut reg = Self {
            entries: BTreeMap::new(),
        };
        reg.register("logreg", |s| Box::new(LogReg::new(s.input_dim, s.class_count)));
        reg.register("mlp", |s| Box::new(Mlp::new(s.input_dim, s.hidden_dim, s.class_count)));
        reg.register("gcn", |s| Box::new(Gcn::new(s.input_dim, s.hidden_dim, s.class_count)));
        reg
    }
}

impl ArchitectureRegistry {
    pub fn register(&mut self, name: &'static str, ctor: Constructor) {
        self.entries.insert(name, ctor);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    pub fn build(&self, spec: &ModelSpec) -> Result<Box<dyn Architecture>> {
        spec.validate()?;
        let ctor = self.entries.get(spec.arch.as_str()).ok_or_else(|| Error::Unknown {
            kind: "architecture",
            name: spec.arch.clone(),
        })?;
        Ok(ctor(spec))
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.outer_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Reinterprets a slice of `theta` as a row-major matrix.
pub(crate) fn mat(theta: &[f64], offset: usize, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), &theta[offset..offset + rows * cols])
        .expect("parameter block shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_knows_builtin_archs() {
        let names: Vec<_> = ArchitectureRegistry::default().names().collect();
        assert_eq!(names, vec!["gcn", "logreg", "mlp"]);
        let err = ModelSpec::new("cnn", 4, 2).build().unwrap_err();
        assert!(err.to_string().contains("unknown architecture `cnn`"));
    }

    #[test]
    fn param_counts() {
        assert_eq!(ModelSpec::new("logreg", 4, 3).param_count().unwrap(), 15);
        assert_eq!(ModelSpec::new("mlp", 4, 3).with_hidden(5).param_count().unwrap(), 4 * 5 + 5 + 5 * 3 + 3);
        assert_eq!(ModelSpec::new("gcn", 4, 3).with_hidden(5).param_count().unwrap(), 4 * 5 + 5 * 3);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let spec = ModelSpec::new("mlp", 16, 3).with_hidden(4).with_seed(9);
        let a = spec.init_params().unwrap();
        assert_eq!(a, spec.init_params().unwrap());
        assert!(a.iter().take(64).all(|v| v.abs() <= 0.1 / 4.0));
        assert_ne!(a, spec.clone().with_seed(10).init_params().unwrap());
    }
}
