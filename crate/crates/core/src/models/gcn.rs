use ndarray::{Array1, Array2, ArrayView2, Zip};

use super::{mat, Architecture, Block, Tape};
use crate::datasets::SparseMatrix;

/// Two-layer graph convolution, `softmax(Â · ReLU(Â X W₀) · W₁)`.
///
/// Layout: `W₀` (`m × h`) then `W₁` (`h × C`); no biases. The forward pass
/// always consumes the whole graph.
#[derive(Debug, Clone)]
pub struct Gcn {
    input_dim: usize,
    hidden: usize,
    classes: usize,
}

impl Gcn {
    pub fn new(input_dim: usize, hidden: usize, classes: usize) -> Self {
        Self { input_dim, hidden, classes }
    }
}

fn adjacency(adj: Option<&SparseMatrix>) -> &SparseMatrix {
    adj.expect("gcn forward requires the normalized adjacency")
}

impl Architecture for Gcn {
    fn name(&self) -> &'static str {
        "gcn"
    }

    fn blocks(&self) -> Vec<Block> {
        let (m, h, c) = (self.input_dim, self.hidden, self.classes);
        vec![Block { len: m * h, fan_in: m }, Block { len: h * c, fan_in: h }]
    }

    fn needs_graph(&self) -> bool {
        true
    }

    fn forward(&self, theta: &[f64], x: ArrayView2<'_, f64>, adj: Option<&SparseMatrix>) -> Tape {
        let a = adjacency(adj);
        let (m, h, c) = (self.input_dim, self.hidden, self.classes);
        let pre = a.matmul(&x.dot(&mat(theta, 0, m, h)).view());
        let act = pre.mapv(|v| v.max(0.0));
        let logits = a.matmul(&act.dot(&mat(theta, m * h, h, c)).view());
        Tape {
            cache: vec![pre, act],
            logits,
        }
    }

    fn backward(
        &self,
        theta: &[f64],
        x: ArrayView2<'_, f64>,
        adj: Option<&SparseMatrix>,
        tape: &Tape,
        d_logits: &Array2<f64>,
    ) -> Array1<f64> {
        // Â is symmetric, so Âᵀ = Â.
        let a = adjacency(adj);
        let (m, h, c) = (self.input_dim, self.hidden, self.classes);
        let (pre, act) = (&tape.cache[0], &tape.cache[1]);
        let d_hw = a.matmul(&d_logits.view());
        let dw1 = act.t().dot(&d_hw);
        let mut d_pre = d_hw.dot(&mat(theta, m * h, h, c).t());
        Zip::from(&mut d_pre).and(pre).for_each(|d, &z| {
            if z <= 0.0 {
                *d = 0.0;
            }
        });
        let d_xw = a.matmul(&d_pre.view());
        let dw0 = x.t().dot(&d_xw);
        dw0.iter().chain(dw1.iter()).copied().collect()
    }
}
