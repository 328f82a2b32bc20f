use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use super::{mat, softmax, Architecture, Block, Tape};
use crate::datasets::SparseMatrix;

/// One hidden ReLU layer, `softmax(ReLU(XW₀ + b₀)W₁ + b₁)`.
///
/// Layout: `W₀` (`m × h`), `b₀` (`h`), `W₁` (`h × C`), `b₁` (`C`).
#[derive(Debug, Clone)]
pub struct Mlp {
    input_dim: usize,
    hidden: usize,
    classes: usize,
}

impl Mlp {
    pub fn new(input_dim: usize, hidden: usize, classes: usize) -> Self {
        Self { input_dim, hidden, classes }
    }

    fn offsets(&self) -> [usize; 3] {
        let (m, h, c) = (self.input_dim, self.hidden, self.classes);
        let b0 = m * h;
        let w1 = b0 + h;
        [b0, w1, w1 + h * c]
    }
}

impl Architecture for Mlp {
    fn name(&self) -> &'static str {
        "mlp"
    }

    fn blocks(&self) -> Vec<Block> {
        let (m, h, c) = (self.input_dim, self.hidden, self.classes);
        vec![
            Block { len: m * h, fan_in: m },
            Block { len: h, fan_in: m },
            Block { len: h * c, fan_in: h },
            Block { len: c, fan_in: h },
        ]
    }

    fn forward(&self, theta: &[f64], x: ArrayView2<'_, f64>, _adj: Option<&SparseMatrix>) -> Tape {
        let (m, h, c) = (self.input_dim, self.hidden, self.classes);
        let [b0, w1, b1] = self.offsets();
        let pre = x.dot(&mat(theta, 0, m, h)) + &mat(theta, b0, 1, h);
        let act = pre.mapv(|v| v.max(0.0));
        let logits = act.dot(&mat(theta, w1, h, c)) + &mat(theta, b1, 1, c);
        Tape {
            cache: vec![pre, act],
            logits,
        }
    }

    fn backward(
        &self,
        theta: &[f64],
        x: ArrayView2<'_, f64>,
        _adj: Option<&SparseMatrix>,
        tape: &Tape,
        d_logits: &Array2<f64>,
    ) -> Array1<f64> {
        let (h, c) = (self.hidden, self.classes);
        let [_, w1, _] = self.offsets();
        let (pre, act) = (&tape.cache[0], &tape.cache[1]);
        let dw1 = act.t().dot(d_logits);
        let db1 = d_logits.sum_axis(Axis(0));
        let mut d_pre = d_logits.dot(&mat(theta, w1, h, c).t());
        Zip::from(&mut d_pre).and(pre).for_each(|d, &z| {
            if z <= 0.0 {
                *d = 0.0;
            }
        });
        let dw0 = x.t().dot(&d_pre);
        let db0 = d_pre.sum_axis(Axis(0));
        dw0.iter()
            .chain(db0.iter())
            .chain(dw1.iter())
            .chain(db1.iter())
            .copied()
            .collect()
    }

    /// Forward-over-backward (R-operator) pass. ReLU has zero curvature
    /// away from its kink, so only the softmax and the bilinear layer
    /// couplings contribute.
    fn cross_entropy_hvp(
        &self,
        theta: &[f64],
        x: ArrayView2<'_, f64>,
        labels: &[usize],
        v: &[f64],
    ) -> Option<Array1<f64>> {
        let (m, h, c) = (self.input_dim, self.hidden, self.classes);
        let [b0, w1, b1] = self.offsets();
        let n = x.nrows() as f64;
        let tape = self.forward(theta, x, None);
        let (pre, act) = (&tape.cache[0], &tape.cache[1]);
        let p = softmax(&tape.logits);
        let mut d_logits = p.clone();
        for (i, &y) in labels.iter().enumerate() {
            d_logits[[i, y]] -= 1.0;
        }
        d_logits /= n;
        let mask = pre.mapv(|z| f64::from(u8::from(z > 0.0)));
        let weight1 = mat(theta, w1, h, c);
        let v_w1 = mat(v, w1, h, c);

        let r_act = (x.dot(&mat(v, 0, m, h)) + &mat(v, b0, 1, h)) * &mask;
        let r_logits = r_act.dot(&weight1) + act.dot(&v_w1) + &mat(v, b1, 1, c);
        // Row-wise (diag(p) − ppᵀ)·R(logits), scaled like the mean loss.
        let mut r_d_logits = &p * &r_logits;
        let dots = r_d_logits.sum_axis(Axis(1));
        for (mut row, (pr, dot)) in r_d_logits.outer_iter_mut().zip(p.outer_iter().zip(dots.iter())) {
            row.scaled_add(-dot, &pr);
        }
        r_d_logits /= n;

        let hw1 = r_act.t().dot(&d_logits) + act.t().dot(&r_d_logits);
        let hb1 = r_d_logits.sum_axis(Axis(0));
        let r_d_pre = (r_d_logits.dot(&weight1.t()) + d_logits.dot(&v_w1.t())) * &mask;
        let hw0 = x.t().dot(&r_d_pre);
        let hb0 = r_d_pre.sum_axis(Axis(0));
        Some(
            hw0.iter()
                .chain(hb0.iter())
                .chain(hw1.iter())
                .chain(hb1.iter())
                .copied()
                .collect(),
        )
    }
}
