//! Dependence measures against brute-force matrix arithmetic.

use ndarray::{array, Array2};
use proptest::prelude::*;
use unlearn_core::independence::{
    center, entropy, kernel_matrix, label_kernel, nhsic, plugin_mi, KernelConfig, Normalization,
};

/// `tr(H A H · H B H)` with `H` materialized and the trace summed over the
/// diagonal of the full product.
fn brute_hsic(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let h = Array2::from_shape_fn((n, n), |(i, j)| f64::from(u8::from(i == j)) - 1.0 / n as f64);
    let ka = h.dot(a).dot(&h);
    let kb = h.dot(b).dot(&h);
    let prod = ka.dot(&kb);
    (0..n).map(|i| prod[[i, i]]).sum()
}

fn rows_strategy(n: std::ops::RangeInclusive<usize>, m: usize) -> impl Strategy<Value = Array2<f64>> {
    n.prop_flat_map(move |n| {
        prop::collection::vec(-3.0f64..3.0, n * m).prop_map(move |v| Array2::from_shape_vec((n, m), v).unwrap())
    })
}

#[test]
fn trace_matches_brute_force_on_small_fixtures() {
    let x = array![[0.1, 1.0], [1.5, -0.5], [2.0, 0.3], [-1.0, 0.7], [0.4, 0.4], [1.1, -2.0]];
    let labels = [0, 1, 1, 0, 2, 2];
    for n in 4..=6 {
        let xs = x.slice(ndarray::s![..n, ..]);
        let kx = kernel_matrix(xs, &KernelConfig::rbf(0.9)).unwrap();
        let ky = label_kernel(&labels[..n], 3, &KernelConfig::delta()).unwrap();
        let got = nhsic(&center(&kx).unwrap(), &center(&ky).unwrap(), Normalization::RawTrace).unwrap();
        let want = brute_hsic(&kx, &ky);
        assert!((got - want).abs() <= 1e-10, "n = {n}: {got} vs {want}");
        let scaled = nhsic(&center(&kx).unwrap(), &center(&ky).unwrap(), Normalization::NMinus1Squared).unwrap();
        let d = (n - 1) as f64;
        assert!((scaled - want / (d * d)).abs() <= 1e-10);
    }
}

#[test]
fn constant_variable_is_independent() {
    let x = array![[0.0, 1.0], [1.0, 2.0], [3.0, -1.0], [2.0, 2.0]];
    let kx = center(&kernel_matrix(x.view(), &KernelConfig::rbf_median()).unwrap()).unwrap();
    let kc = center(&label_kernel(&[1, 1, 1, 1], 2, &KernelConfig::delta()).unwrap()).unwrap();
    for norm in [Normalization::RawTrace, Normalization::NMinus1Squared, Normalization::Frobenius] {
        assert!(nhsic(&kx, &kc, norm).unwrap().abs() < 1e-12);
    }
}

#[test]
fn frobenius_self_dependence_is_one() {
    let x = array![[0.0, 1.0], [1.0, 2.0], [3.0, -1.0], [2.0, 2.0], [0.5, 0.5]];
    let kx = center(&kernel_matrix(x.view(), &KernelConfig::linear()).unwrap()).unwrap();
    assert!((nhsic(&kx, &kx, Normalization::Frobenius).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn coupled_binary_table_has_ln2_information() {
    let x = [0, 1, 0, 1, 1, 0, 0, 1];
    assert!((plugin_mi(&x, &x) - std::f64::consts::LN_2).abs() <= 1e-12);
    assert!((entropy(&x) - std::f64::consts::LN_2).abs() <= 1e-12);
    let independent = plugin_mi(&[0, 0, 1, 1], &[0, 1, 0, 1]);
    assert!(independent.abs() <= 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hsic_agrees_with_brute_force(x in rows_strategy(2..=7, 2), y in rows_strategy(7..=7, 1)) {
        let n = x.nrows();
        let y = y.slice(ndarray::s![..n, ..]).to_owned();
        let kx = kernel_matrix(x.view(), &KernelConfig::rbf(1.3)).unwrap();
        let ky = kernel_matrix(y.view(), &KernelConfig::linear()).unwrap();
        let got = nhsic(&center(&kx).unwrap(), &center(&ky).unwrap(), Normalization::RawTrace).unwrap();
        let want = brute_hsic(&kx, &ky);
        prop_assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0));
    }

    #[test]
    fn hsic_is_symmetric_and_nonnegative(x in rows_strategy(3..=6, 2), seed in 0u64..1000) {
        let n = x.nrows();
        let labels: Vec<usize> = (0..n).map(|i| ((i as u64 * 31 + seed) % 3) as usize).collect();
        let kx = center(&kernel_matrix(x.view(), &KernelConfig::rbf(1.0)).unwrap()).unwrap();
        let ky = center(&label_kernel(&labels, 3, &KernelConfig::delta()).unwrap()).unwrap();
        let ab = nhsic(&kx, &ky, Normalization::NMinus1Squared).unwrap();
        let ba = nhsic(&ky, &kx, Normalization::NMinus1Squared).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-14);
        prop_assert!(ab >= -1e-12);
        let f = nhsic(&kx, &ky, Normalization::Frobenius).unwrap();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&f));
    }

    #[test]
    fn hsic_is_invariant_to_sample_order(x in rows_strategy(3..=7, 3), shift in 1usize..6) {
        let n = x.nrows();
        let order: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        let xp = x.select(ndarray::Axis(0), &order);
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let lp: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
        let cfg = KernelConfig::rbf(0.8);
        let a = nhsic(
            &center(&kernel_matrix(x.view(), &cfg).unwrap()).unwrap(),
            &center(&label_kernel(&labels, 2, &KernelConfig::delta()).unwrap()).unwrap(),
            Normalization::NMinus1Squared,
        ).unwrap();
        let b = nhsic(
            &center(&kernel_matrix(xp.view(), &cfg).unwrap()).unwrap(),
            &center(&label_kernel(&lp, 2, &KernelConfig::delta()).unwrap()).unwrap(),
            Normalization::NMinus1Squared,
        ).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn mi_is_bounded_by_entropy(x in prop::collection::vec(0usize..4, 2..40), y_seed in 0usize..100) {
        let y: Vec<usize> = x.iter().enumerate().map(|(i, &v)| (v + i * y_seed) % 3).collect();
        let mi = plugin_mi(&x, &y);
        prop_assert!(mi >= 0.0);
        prop_assert!(mi <= entropy(&x).min(entropy(&y)) + 1e-12);
        prop_assert!((plugin_mi(&y, &x) - mi).abs() <= 1e-12);
    }
}
