use std::collections::BTreeMap;

/// Plug-in mutual information (natural log) from empirical frequencies.
pub fn plugin_mi(x: &[usize], y: &[usize]) -> f64 {
    assert_eq!(x.len(), y.len(), "plugin_mi inputs must have equal length");
    let n = x.len();
    if n == 0 {
        return 0.0;
    }
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut px: BTreeMap<usize, usize> = BTreeMap::new();
    let mut py: BTreeMap<usize, usize> = BTreeMap::new();
    for (&a, &b) in x.iter().zip(y) {
        *joint.entry((a, b)).or_default() += 1;
        *px.entry(a).or_default() += 1;
        *py.entry(b).or_default() += 1;
    }
    let nf = n as f64;
    let mi: f64 = joint
        .iter()
        .map(|(&(a, b), &c)| {
            let c = c as f64;
            (c / nf) * (c * nf / (px[&a] as f64 * py[&b] as f64)).ln()
        })
        .sum();
    mi.max(0.0)
}

/// Empirical Shannon entropy (natural log).
pub fn entropy(x: &[usize]) -> f64 {
    let n = x.len() as f64;
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &a in x {
        *counts.entry(a).or_default() += 1;
    }
    -counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>()
}

/// Equal-width bin edges over `[min, max]` of `values`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Binning {
    pub min: f64,
    pub width: f64,
    pub bins: usize,
}

impl Binning {
    /// `⌈√n⌉` bins spanning the observed range.
    pub fn sqrt_rule(values: &[f64]) -> Self {
        let bins = (values.len() as f64).sqrt().ceil().max(1.0) as usize;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = if max > min { (max - min) / bins as f64 } else { 0.0 };
        Self { min, width, bins }
    }

    pub fn bin(&self, v: f64) -> usize {
        if self.width == 0.0 {
            return 0;
        }
        (((v - self.min) / self.width).floor().max(0.0) as usize).min(self.bins - 1)
    }

    pub fn apply(&self, values: &[f64]) -> Vec<usize> {
        values.iter().map(|&v| self.bin(v)).collect()
    }
}
