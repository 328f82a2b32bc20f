//! Analytic gradients and Hessian-vector products against finite
//! differences of the loss value.

mod common;

use common::{blobs, fd_gradient, random_vector, rel_err, small_graph};
use ndarray::{Array1, Array2};
use unlearn_core::datasets::Subset;
use unlearn_core::independence::{
    center, kernel_matrix, label_term, lf_grad_predictions, nhsic, IndependenceConfig, KernelConfig,
    Normalization,
};
use unlearn_core::models::{combined_grad, grad, hvp, hvp_finite_difference, ModelSpec, Objective};

fn cases() -> Vec<(ModelSpec, Subset)> {
    vec![
        (ModelSpec::new("logreg", 4, 3).with_l2(0.05), blobs(8, 4, 3, 1.5, 2)),
        (ModelSpec::new("mlp", 3, 3).with_hidden(4).with_l2(0.05), blobs(8, 3, 3, 1.5, 4)),
        (ModelSpec::new("gcn", 3, 3).with_hidden(4).with_l2(0.05), small_graph()),
    ]
}

fn theta_for(spec: &ModelSpec, seed: u64) -> Array1<f64> {
    random_vector(spec.param_count().unwrap(), seed) * 0.8
}

fn independence() -> IndependenceConfig {
    IndependenceConfig {
        alpha: 0.7,
        ..IndependenceConfig::default()
    }
}

#[test]
fn fixtures_are_small() {
    for (spec, data) in cases() {
        assert!(spec.param_count().unwrap() <= 60);
        assert!(data.table().n_rows() <= 8);
    }
}

#[test]
fn cross_entropy_gradient_matches_differences() {
    for (spec, data) in cases() {
        let theta = theta_for(&spec, 1);
        let obj = Objective::new(&spec, &data).unwrap();
        let analytic = grad(&spec, &theta, &data).unwrap();
        let numeric = fd_gradient(|t| obj.loss(t).unwrap().total, &theta, 1e-6);
        let err = rel_err(&analytic, &numeric);
        assert!(err <= 1e-4, "{}: rel err {err:e}", spec.arch);
    }
}

#[test]
fn combined_gradient_matches_differences() {
    for normalization in [Normalization::NMinus1Squared, Normalization::RawTrace, Normalization::Frobenius] {
        let config = IndependenceConfig {
            normalization,
            ..independence()
        };
        for (spec, data) in cases() {
            let theta = theta_for(&spec, 2);
            let obj = Objective::new(&spec, &data).unwrap().with_independence(0.8, &config).unwrap();
            let (analytic, breakdown) = combined_grad(&spec, &theta, &data, 0.8, &config).unwrap();
            assert!(breakdown.lf != 0.0);
            let numeric = fd_gradient(|t| obj.loss(t).unwrap().total, &theta, 1e-6);
            let err = rel_err(&analytic, &numeric);
            assert!(err <= 1e-4, "{} {normalization:?}: rel err {err:e}", spec.arch);
        }
    }
}

#[test]
fn rbf_prediction_kernel_gradient() {
    let config = IndependenceConfig {
        prediction_kernel: KernelConfig::rbf(0.5),
        ..independence()
    };
    let (spec, data) = cases().remove(1);
    let theta = theta_for(&spec, 3);
    let obj = Objective::new(&spec, &data).unwrap().with_independence(0.5, &config).unwrap();
    let analytic = obj.grad(&theta).unwrap();
    let numeric = fd_gradient(|t| obj.loss(t).unwrap().total, &theta, 1e-6);
    assert!(rel_err(&analytic, &numeric) <= 1e-4);
}

#[test]
fn hvp_is_symmetric() {
    for (spec, data) in cases() {
        let theta = theta_for(&spec, 4);
        let p = theta.len();
        let v = random_vector(p, 10);
        let w = random_vector(p, 11);
        let hv = hvp(&spec, &theta, &data, &v).unwrap();
        let hw = hvp(&spec, &theta, &data, &w).unwrap();
        let (a, b) = (w.dot(&hv), v.dot(&hw));
        let err = (a - b).abs() / a.abs().max(b.abs());
        assert!(err <= 1e-6, "{}: {a} vs {b}", spec.arch);
    }
}

#[test]
fn closed_form_hvp_matches_gradient_differences() {
    for (spec, data) in cases().into_iter().take(2) {
        let theta = theta_for(&spec, 5);
        let v = random_vector(theta.len(), 12);
        let closed = hvp(&spec, &theta, &data, &v).unwrap();
        let h = 1e-6;
        let plus = grad(&spec, &(&theta + &(&v * h)), &data).unwrap();
        let minus = grad(&spec, &(&theta - &(&v * h)), &data).unwrap();
        let numeric = (plus - minus) / (2.0 * h);
        assert!(rel_err(&closed, &numeric) <= 1e-6, "{}", spec.arch);
        let fd = hvp_finite_difference(&spec, &theta, &data, &v).unwrap();
        assert!(rel_err(&fd, &closed) <= 1e-5, "{}", spec.arch);
    }
}

#[test]
fn hvp_is_linear_in_v() {
    for (spec, data) in cases() {
        let theta = theta_for(&spec, 6);
        let v = random_vector(theta.len(), 13);
        let hv = hvp(&spec, &theta, &data, &v).unwrap();
        let h3v = hvp(&spec, &theta, &data, &(&v * 3.0)).unwrap();
        assert!(rel_err(&h3v, &(&hv * 3.0)) <= 1e-6, "{}", spec.arch);
        let zero = hvp(&spec, &theta, &data, &Array1::zeros(theta.len())).unwrap();
        assert!(zero.iter().all(|&z| z == 0.0));
    }
}

/// `L_F` recomputed from kernel primitives, without the row-stochastic
/// check, so it can be differenced freely.
fn lf_reference(x: &Array2<f64>, labels: &[usize], predictions: &Array2<f64>, config: &IndependenceConfig) -> f64 {
    let kx = center(&kernel_matrix(x.view(), &config.feature_kernel).unwrap()).unwrap();
    let ky = label_term(&kx, labels, predictions.ncols(), config).unwrap();
    let kp = center(&kernel_matrix(predictions.view(), &config.prediction_kernel).unwrap()).unwrap();
    ky - config.alpha * nhsic(&kx, &kp, config.normalization).unwrap()
}

#[test]
fn prediction_gradient_matches_differences() {
    let x = ndarray::array![[0.0, 1.0], [1.0, 0.5], [2.0, -1.0], [0.5, 0.5], [-1.0, 2.0]];
    let labels = [0, 1, 1, 0, 2];
    let p = ndarray::array![
        [0.6, 0.3, 0.1],
        [0.2, 0.5, 0.3],
        [0.1, 0.8, 0.1],
        [0.5, 0.25, 0.25],
        [0.3, 0.3, 0.4]
    ];
    let configs = [
        IndependenceConfig { alpha: 0.9, ..IndependenceConfig::default() },
        IndependenceConfig { alpha: 0.9, normalization: Normalization::RawTrace, ..IndependenceConfig::default() },
        IndependenceConfig { alpha: 0.9, normalization: Normalization::Frobenius, ..IndependenceConfig::default() },
        IndependenceConfig { alpha: 0.9, prediction_kernel: KernelConfig::rbf(0.7), ..IndependenceConfig::default() },
    ];
    for config in configs {
        let kx = center(&kernel_matrix(x.view(), &config.feature_kernel).unwrap()).unwrap();
        let analytic = lf_grad_predictions(&kx, p.view(), &config).unwrap();
        let flat: Array1<f64> = p.iter().copied().collect();
        let numeric = fd_gradient(
            |q| lf_reference(&x, &labels, &q.to_shape(p.raw_dim()).unwrap().to_owned(), &config),
            &flat,
            1e-6,
        );
        let analytic_flat: Array1<f64> = analytic.iter().copied().collect();
        let err = rel_err(&analytic_flat, &numeric);
        assert!(err <= 1e-4, "{:?}/{:?}: {err:e}", config.normalization, config.prediction_kernel.kind);
    }
}

#[test]
fn split_hvp_matches_full_differences_with_independence() {
    for (spec, data) in cases().into_iter().take(2) {
        let theta = theta_for(&spec, 7);
        let v = random_vector(theta.len(), 14);
        let obj = Objective::new(&spec, &data).unwrap().with_independence(0.6, &independence()).unwrap();
        let split = obj.hvp(&theta, &v).unwrap();
        let fd = obj.hvp_finite_difference(&theta, &v).unwrap();
        assert!(rel_err(&split, &fd) <= 1e-5, "{}: {:e}", spec.arch, rel_err(&split, &fd));
    }
}
