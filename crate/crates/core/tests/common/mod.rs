#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use unlearn_core::datasets::{synthetic, DatasetTable, GraphDataset, Subset};
use unlearn_core::models::{train, ModelSpec, TrainOptions};

/// Central differences of a scalar function, step `h` per coordinate.
pub fn fd_gradient(f: impl Fn(&Array1<f64>) -> f64, theta: &Array1<f64>, h: f64) -> Array1<f64> {
    let mut out = Array1::zeros(theta.len());
    let mut probe = theta.clone();
    for i in 0..theta.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe);
        probe[i] = orig - h;
        let minus = f(&probe);
        probe[i] = orig;
        out[i] = (plus - minus) / (2.0 * h);
    }
    out
}

/// `‖a − b‖_∞ / max(‖b‖_∞, floor)`.
pub fn rel_err(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-8);
    diff / scale
}

pub fn norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

pub fn random_vector(len: usize, seed: u64) -> Array1<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Gaussian classes as a full subset.
pub fn blobs(n: usize, m: usize, classes: usize, separation: f64, seed: u64) -> Subset {
    Subset::full(synthetic::gaussian_classes(n, m, classes, separation, seed).unwrap().into())
}

/// Eight-node, two-community graph with three features; rows 0..6 are the
/// training mask.
pub fn small_graph() -> Subset {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let labels = vec![0, 0, 1, 2, 1, 2, 0, 1];
    let x = Array2::from_shape_fn((8, 3), |(i, j)| {
        let signal = if labels[i] == j { 1.0 } else { 0.0 };
        signal + rng.random_range(-0.3..0.3)
    });
    let table = DatasetTable::new(x, labels, 3).unwrap();
    let edges = [(0, 1), (1, 6), (2, 4), (4, 7), (3, 5), (0, 2), (5, 6), (3, 7)];
    let g = GraphDataset::new(table, &edges).unwrap();
    Subset::new(g.into(), (0..6).collect()).unwrap()
}

pub fn converge() -> TrainOptions {
    TrainOptions {
        learning_rate: 0.5,
        epochs: 20_000,
        tolerance: 1e-10,
    }
}

pub fn trained(spec: &ModelSpec, data: &Subset, opt: &TrainOptions) -> Array1<f64> {
    train(spec, data, opt).unwrap().theta
}

/// Two classes where feature 0 is large for class 0 only, so ranking rows
/// by that feature removes mostly one class.
pub fn class_marked(n: usize, m: usize, seed: u64) -> Subset {
    class_correlated(n, m, 3.0, seed)
}

/// Two balanced classes; feature 0 is shifted up by `signal` for class 0
/// and feature 1 carries a weaker opposite cue. Small signals leave the
/// classes overlapping.
pub fn class_correlated(n: usize, m: usize, signal: f64, seed: u64) -> Subset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let x = Array2::from_shape_fn((n, m), |(i, j)| {
        let noise: f64 = rng.random_range(-1.0..1.0);
        match j {
            0 if labels[i] == 0 => signal + noise,
            0 => noise,
            1 => noise + if labels[i] == 0 { 0.5 } else { -0.5 },
            _ => noise,
        }
    });
    Subset::full(DatasetTable::new(x, labels, 2).unwrap().into())
}
