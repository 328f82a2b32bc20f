//! Seeded synthetic datasets: Gaussian class blobs, rendered digit glyphs
//! (28×28, IDX-ready) and a stochastic-block citation corpus in Planetoid
//! text form.

use std::fmt::Write as _;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::DatasetTable;
use crate::error::Result;

/// `n` points in `m` dimensions, one isotropic unit Gaussian per class with
/// means drawn at distance `separation` from the origin. Labels cycle through
/// the classes and are then shuffled.
pub fn gaussian_classes(
    n: usize,
    m: usize,
    classes: usize,
    separation: f64,
    seed: u64,
) -> Result<DatasetTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let dir: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            dir.iter().map(|v| v * separation / norm).collect()
        })
        .collect();
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    let mut features = Array2::zeros((n, m));
    for (i, &y) in labels.iter().enumerate() {
        for j in 0..m {
            let noise: f64 = rng.sample(StandardNormal);
            features[[i, j]] = means[y][j] + noise;
        }
    }
    DatasetTable::new(features, labels, classes)
}

pub const GLYPH_SIDE: usize = 28;

// Seven-segment endpoints in a unit box (x right, y down):
// a top, b upper right, c lower right, d bottom, e lower left, f upper left, g middle.
const SEGMENTS: [((f64, f64), (f64, f64)); 7] = [
    ((0.0, 0.0), (1.0, 0.0)),
    ((1.0, 0.0), (1.0, 0.5)),
    ((1.0, 0.5), (1.0, 1.0)),
    ((0.0, 1.0), (1.0, 1.0)),
    ((0.0, 0.5), (0.0, 1.0)),
    ((0.0, 0.0), (0.0, 0.5)),
    ((0.0, 0.5), (1.0, 0.5)),
];

const DIGIT_SEGMENTS: [&[usize]; 10] = [
    &[0, 1, 2, 3, 4, 5],
    &[1, 2],
    &[0, 1, 6, 4, 3],
    &[0, 1, 6, 2, 3],
    &[5, 6, 1, 2],
    &[0, 5, 6, 2, 3],
    &[0, 5, 6, 4, 3, 2],
    &[0, 1, 2],
    &[0, 1, 2, 3, 4, 5, 6],
    &[0, 1, 2, 3, 5, 6],
];

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

/// Renders `n` handwriting-like digits as 28×28 grayscale bytes.
///
/// Each image is a seven-segment glyph with random size, position, slant,
/// stroke width and intensity, plus sparse background speckle. Labels cycle
/// 0..9 and are shuffled. Returns `(pixels, labels)` laid out for
/// [`super::write_idx_images`] / [`super::write_idx_labels`].
pub fn digit_glyphs(n: usize, seed: u64) -> (Vec<u8>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
    labels.shuffle(&mut rng);
    let speckle: Normal<f64> = Normal::new(0.0, 25.0).expect("valid normal");
    let side = GLYPH_SIDE as f64;
    let mut pixels = vec![0u8; n * GLYPH_SIDE * GLYPH_SIDE];
    for (img, &digit) in pixels.chunks_mut(GLYPH_SIDE * GLYPH_SIDE).zip(&labels) {
        let width = rng.random_range(9.0..14.0);
        let height = rng.random_range(15.0..20.0);
        let left = rng.random_range(3.0..(side - 3.0 - width));
        let top = rng.random_range(3.0..(side - 3.0 - height));
        let slant = rng.random_range(-0.2..0.2);
        let half_width = rng.random_range(0.9..1.6);
        let ink = rng.random_range(190.0..255.0);
        let place = |(x, y): (f64, f64)| (left + x * width + slant * (1.0 - y) * height, top + y * height);
        let strokes: Vec<_> = DIGIT_SEGMENTS[digit as usize]
            .iter()
            .map(|&s| (place(SEGMENTS[s].0), place(SEGMENTS[s].1)))
            .collect();
        for r in 0..GLYPH_SIDE {
            for c in 0..GLYPH_SIDE {
                let p = (c as f64 + 0.5, r as f64 + 0.5);
                let d = strokes
                    .iter()
                    .map(|&(a, b)| segment_distance(p, a, b))
                    .fold(f64::INFINITY, f64::min);
                let coverage = (half_width + 0.5 - d).clamp(0.0, 1.0);
                let mut v = ink * coverage;
                if rng.random_bool(0.03) {
                    v += speckle.sample(&mut rng).abs() * 3.0;
                }
                img[r * GLYPH_SIDE + c] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    (pixels, labels)
}

/// [`digit_glyphs`] decoded the way the IDX loader would decode it.
pub fn digit_glyph_table(n: usize, seed: u64) -> Result<DatasetTable> {
    let (pixels, labels) = digit_glyphs(n, seed);
    let features = Array2::from_shape_vec(
        (n, GLYPH_SIDE * GLYPH_SIDE),
        pixels.iter().map(|&p| f64::from(p) / 255.0).collect(),
    )
    .expect("pixel buffer shape");
    DatasetTable::new(features, labels.iter().map(|&y| y as usize).collect(), 10)
}

/// A citation corpus in Planetoid text form: `(content, cites)`.
///
/// Nodes belong to `classes` communities; each class prefers its own slice
/// of the binary vocabulary, and edges are denser inside communities.
pub fn citation_corpus(n: usize, m: usize, classes: usize, avg_degree: f64, seed: u64) -> (String, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
    let mut content = String::new();
    for (i, &y) in labels.iter().enumerate() {
        write!(content, "paper{i}").unwrap();
        for j in 0..m {
            let own = j * classes / m == y;
            let p = if own { 0.2 } else { 0.03 };
            write!(content, "\t{}", u8::from(rng.random_bool(p))).unwrap();
        }
        writeln!(content, "\tclass_{y}").unwrap();
    }
    // 80% of edge mass inside communities.
    let p_in = 0.8 * avg_degree * classes as f64 / n as f64;
    let p_out = 0.2 * avg_degree * classes as f64 / (n as f64 * (classes - 1).max(1) as f64);
    let mut cites = String::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            if rng.random_bool(p.min(1.0)) {
                writeln!(cites, "paper{i}\tpaper{j}").unwrap();
            }
        }
    }
    (content, cites)
}
