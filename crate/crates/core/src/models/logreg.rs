use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::{mat, softmax, Architecture, Block, Tape};
use crate::datasets::SparseMatrix;

/// Multinomial logistic regression, `softmax(XW + b)`.
///
/// Layout: `W` (`m × C`, row-major) then `b` (`C`).
#[derive(Debug, Clone)]
pub struct LogReg {
    input_dim: usize,
    classes: usize,
}

impl LogReg {
    pub fn new(input_dim: usize, classes: usize) -> Self {
        Self { input_dim, classes }
    }
}

impl Architecture for LogReg {
    fn name(&self) -> &'static str {
        "logreg"
    }

    fn blocks(&self) -> Vec<Block> {
        let fan_in = self.input_dim;
        vec![
            Block { len: self.input_dim * self.classes, fan_in },
            Block { len: self.classes, fan_in },
        ]
    }

    fn forward(&self, theta: &[f64], x: ArrayView2<'_, f64>, _adj: Option<&SparseMatrix>) -> Tape {
        let (m, c) = (self.input_dim, self.classes);
        let w = mat(theta, 0, m, c);
        let b = mat(theta, m * c, 1, c);
        Tape {
            cache: Vec::new(),
            logits: x.dot(&w) + &b,
        }
    }

    fn backward(
        &self,
        _theta: &[f64],
        x: ArrayView2<'_, f64>,
        _adj: Option<&SparseMatrix>,
        _tape: &Tape,
        d_logits: &Array2<f64>,
    ) -> Array1<f64> {
        let dw = x.t().dot(d_logits);
        let db = d_logits.sum_axis(Axis(0));
        dw.iter().chain(db.iter()).copied().collect()
    }

    fn cross_entropy_hvp(
        &self,
        theta: &[f64],
        x: ArrayView2<'_, f64>,
        _labels: &[usize],
        v: &[f64],
    ) -> Option<Array1<f64>> {
        let (m, c) = (self.input_dim, self.classes);
        let n = x.nrows() as f64;
        let p = softmax(&self.forward(theta, x, None).logits);
        let vw = mat(v, 0, m, c);
        let vb = mat(v, m * c, 1, c);
        // Directional derivative of the logits, then (diag(p) − ppᵀ) per row.
        let u = x.dot(&vw) + &vb;
        let mut s = &p * &u;
        let pu = s.sum_axis(Axis(1));
        for (mut row, (pr, dot)) in s.outer_iter_mut().zip(p.outer_iter().zip(pu.iter())) {
            row.scaled_add(-dot, &pr);
        }
        s /= n;
        let hw = x.t().dot(&s);
        let hb = s.sum_axis(Axis(0));
        Some(hw.iter().chain(hb.iter()).copied().collect())
    }
}
