//! Unlearning requests: which training points or feature cells to forget,
//! and the retained dataset that results from forgetting them.
//!
//! Requests index rows of the dataset behind a [`Subset`] and are drawn
//! only from the subset's rows (the training rows). A request serializes
//! to a line-based canonical text form whose SHA-256 is its digest.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use ndarray::{Array2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{Dataset, Subset};
use crate::digest::sha256_hex;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestMode {
    Points,
    FeatureValues,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Replacement {
    Zero,
    FeatureMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    TopK,
}

macro_rules! text_names {
    ($ty:ty { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $(Self::$variant => $name),+ }
            }

            pub fn parse(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok(Self::$variant),)+
                    other => Err(Error::Unknown { kind: stringify!($ty), name: other.to_string() }),
                }
            }
        }
    };
}

text_names!(RequestMode { Points => "points", FeatureValues => "feature_values" });
text_names!(Replacement { Zero => "zero", FeatureMean => "feature_mean" });
text_names!(Strategy { Random => "random", TopK => "top_k" });

#[derive(Debug, Clone, PartialEq)]
pub struct UnlearnRequest {
    pub mode: RequestMode,
    pub strategy: Strategy,
    pub replacement: Replacement,
    pub unlearn_ratio: f64,
    pub feature_ratio: f64,
    pub seed: u64,
    /// Sorted, unique dataset rows (points mode).
    pub point_indices: Vec<usize>,
    /// Sorted, unique `(row, feature)` cells (feature-values mode).
    pub cells: Vec<(usize, usize)>,
}

fn check_ratios(unlearn_ratio: f64, feature_ratio: f64) -> Result<()> {
    if !(0.0..1.0).contains(&unlearn_ratio) {
        return Err(Error::InvalidArgument(format!(
            "unlearn_ratio must be in [0, 1), got {unlearn_ratio}"
        )));
    }
    if !(feature_ratio > 0.0 && feature_ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "feature_ratio must be in (0, 1], got {feature_ratio}"
        )));
    }
    Ok(())
}

fn sorted_unique<T: Ord>(v: &[T]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

/// `⌊total · fraction⌋`, tolerant of products like `0.29 · 100`.
fn floor_count(total: usize, fraction: f64) -> usize {
    (total as f64 * fraction + 1e-9).floor() as usize
}

impl UnlearnRequest {
    fn empty(mode: RequestMode, strategy: Strategy, unlearn_ratio: f64, feature_ratio: f64, seed: u64) -> Self {
        Self {
            mode,
            strategy,
            replacement: Replacement::Zero,
            unlearn_ratio,
            feature_ratio,
            seed,
            point_indices: Vec::new(),
            cells: Vec::new(),
        }
    }

    pub fn with_replacement(mut self, replacement: Replacement) -> Self {
        self.replacement = replacement;
        self
    }

    pub fn is_empty(&self) -> bool {
        self.point_indices.is_empty() && self.cells.is_empty()
    }

    /// Rows touched by the request, sorted and unique.
    pub fn delta_rows(&self) -> Vec<usize> {
        match self.mode {
            RequestMode::Points => self.point_indices.clone(),
            RequestMode::FeatureValues => {
                self.cells.iter().map(|&(r, _)| r).collect::<BTreeSet<_>>().into_iter().collect()
            }
        }
    }

    /// Checks bounds, ordering and uniqueness against a dataset.
    pub fn validate(&self, data: &Dataset) -> Result<()> {
        check_ratios(self.unlearn_ratio, self.feature_ratio)?;
        let (n, m) = (data.n_rows(), data.table().n_features());
        match self.mode {
            RequestMode::Points => {
                if !self.cells.is_empty() {
                    return Err(Error::InvalidArgument("points request carries cells".into()));
                }
                if !sorted_unique(&self.point_indices) {
                    return Err(Error::InvalidArgument("point indices must be sorted and unique".into()));
                }
                if let Some(&r) = self.point_indices.iter().find(|&&r| r >= n) {
                    return Err(Error::InvalidArgument(format!("point {r} out of bounds for n = {n}")));
                }
            }
            RequestMode::FeatureValues => {
                if !self.point_indices.is_empty() {
                    return Err(Error::InvalidArgument("feature-values request carries points".into()));
                }
                if !sorted_unique(&self.cells) {
                    return Err(Error::InvalidArgument("cells must be sorted and unique".into()));
                }
                if let Some(&(r, c)) = self.cells.iter().find(|&&(r, c)| r >= n || c >= m) {
                    return Err(Error::InvalidArgument(format!(
                        "cell ({r}, {c}) out of bounds for {n}×{m}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Canonical line-based form. Floats use Rust's shortest round-trip
    /// formatting, so parsing gives back an identical request.
    pub fn to_text(&self) -> String {
        let mut out = String::from("unlearn-request v1\n");
        writeln!(out, "mode {}", self.mode.as_str()).unwrap();
        writeln!(out, "strategy {}", self.strategy.as_str()).unwrap();
        writeln!(out, "replacement {}", self.replacement.as_str()).unwrap();
        writeln!(out, "unlearn_ratio {:?}", self.unlearn_ratio).unwrap();
        writeln!(out, "feature_ratio {:?}", self.feature_ratio).unwrap();
        writeln!(out, "seed {}", self.seed).unwrap();
        out.push_str("points");
        for r in &self.point_indices {
            write!(out, " {r}").unwrap();
        }
        out.push_str("\ncells");
        for (r, c) in &self.cells {
            write!(out, " {r}:{c}").unwrap();
        }
        out.push('\n');
        out
    }

    pub fn digest(&self) -> String {
        sha256_hex(self.to_text().as_bytes())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, detail: String| Error::format("request", format!("line {line}: {detail}"));
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end()));
        match lines.next() {
            Some((_, "unlearn-request v1")) => {}
            _ => return Err(bad(1, "expected header `unlearn-request v1`".into())),
        }
        let mut fields: Vec<(usize, &str, &str)> = Vec::new();
        for (no, line) in lines {
            if line.is_empty() {
                continue;
            }
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            fields.push((no, key, rest.trim()));
        }
        const KEYS: [&str; 8] = [
            "mode",
            "strategy",
            "replacement",
            "unlearn_ratio",
            "feature_ratio",
            "seed",
            "points",
            "cells",
        ];
        if fields.len() != KEYS.len() {
            return Err(bad(fields.last().map_or(1, |f| f.0), format!("expected {} fields", KEYS.len())));
        }
        for (&(no, key, _), want) in fields.iter().zip(KEYS) {
            if key != want {
                return Err(bad(no, format!("expected `{want}`, found `{key}`")));
            }
        }
        let value = |i: usize| fields[i].2;
        let num = |i: usize| -> Result<f64> {
            value(i).parse().map_err(|e| bad(fields[i].0, format!("{e}")))
        };
        let points = value(6)
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|e| bad(fields[6].0, format!("{e}"))))
            .collect::<Result<Vec<_>>>()?;
        let cells = value(7)
            .split_whitespace()
            .map(|t| {
                let (r, c) = t.split_once(':').ok_or_else(|| bad(fields[7].0, format!("bad cell `{t}`")))?;
                let parse = |s: &str| s.parse::<usize>().map_err(|e| bad(fields[7].0, format!("{e}")));
                Ok((parse(r)?, parse(c)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let request = Self {
            mode: RequestMode::parse(value(0))?,
            strategy: Strategy::parse(value(1))?,
            replacement: Replacement::parse(value(2))?,
            unlearn_ratio: num(3)?,
            feature_ratio: num(4)?,
            seed: value(5).parse().map_err(|e| bad(fields[5].0, format!("{e}")))?,
            point_indices: points,
            cells,
        };
        check_ratios(request.unlearn_ratio, request.feature_ratio)?;
        Ok(request)
    }
}

/// Seeded random request over the subset's rows.
///
/// Points mode samples `⌊n·unlearn_ratio⌋` rows without replacement.
/// Feature-values mode samples `⌊m·feature_ratio⌋` features, then
/// `⌊n·unlearn_ratio⌋` rows independently for each of them.
pub fn random_request(
    data: &Subset,
    unlearn_ratio: f64,
    mode: RequestMode,
    seed: u64,
    feature_ratio: f64,
) -> Result<UnlearnRequest> {
    check_ratios(unlearn_ratio, feature_ratio)?;
    let n = data.len();
    let m = data.table().n_features();
    let k = floor_count(n, unlearn_ratio);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut request = UnlearnRequest::empty(mode, Strategy::Random, unlearn_ratio, feature_ratio, seed);
    match mode {
        RequestMode::Points => {
            let mut rows: Vec<usize> = sample(&mut rng, n, k).into_iter().map(|i| data.rows[i]).collect();
            rows.sort_unstable();
            request.point_indices = rows;
        }
        RequestMode::FeatureValues => {
            let mut features = sample(&mut rng, m, floor_count(m, feature_ratio)).into_vec();
            features.sort_unstable();
            let mut cells = Vec::with_capacity(features.len() * k);
            for &f in &features {
                cells.extend(sample(&mut rng, n, k).into_iter().map(|i| (data.rows[i], f)));
            }
            cells.sort_unstable();
            request.cells = cells;
        }
    }
    if request.is_empty() {
        log::warn!("random request selects nothing (n = {n}, unlearn_ratio = {unlearn_ratio})");
    }
    Ok(request)
}

/// Indices of the `count` largest entries of `score`, ties to the lower
/// position, returned in ranking order.
fn top_positions(score: &[f64], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..score.len()).collect();
    order.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
    order.truncate(count);
    order
}

/// Deterministic top-k request.
///
/// Features are ranked by their column sum over the subset rows and the
/// top `⌊m·feature_ratio⌋` kept. Feature-values mode marks, in each kept
/// feature, the `k = ⌊n·unlearn_ratio⌋` cells with the largest values.
/// Points mode removes the `k` rows with the largest sum over the kept
/// features. Ties go to the lower feature or row index.
pub fn topk_request(
    data: &Subset,
    unlearn_ratio: f64,
    feature_ratio: f64,
    mode: RequestMode,
) -> Result<UnlearnRequest> {
    check_ratios(unlearn_ratio, feature_ratio)?;
    let n = data.len();
    let m = data.table().n_features();
    let k = floor_count(n, unlearn_ratio);
    let x = data.table().features().select(Axis(0), &data.rows);
    let column_sums: Vec<f64> = x.sum_axis(Axis(0)).to_vec();
    let mut features = top_positions(&column_sums, floor_count(m, feature_ratio));
    features.sort_unstable();
    let mut request = UnlearnRequest::empty(mode, Strategy::TopK, unlearn_ratio, feature_ratio, 0);
    match mode {
        RequestMode::Points => {
            let score: Vec<f64> = x
                .outer_iter()
                .map(|row| features.iter().map(|&f| row[f]).sum())
                .collect();
            let mut rows: Vec<usize> = top_positions(&score, k).into_iter().map(|i| data.rows[i]).collect();
            rows.sort_unstable();
            request.point_indices = rows;
        }
        RequestMode::FeatureValues => {
            let mut cells = Vec::with_capacity(features.len() * k);
            for &f in &features {
                let column = x.column(f).to_vec();
                cells.extend(top_positions(&column, k).into_iter().map(|i| (data.rows[i], f)));
            }
            cells.sort_unstable();
            request.cells = cells;
        }
    }
    Ok(request)
}

/// A request applied to a subset.
#[derive(Debug, Clone)]
pub struct AppliedRequest {
    pub mode: RequestMode,
    /// Points mode: the subset without the removed rows (graphs also lose
    /// the removed nodes and their edges). Feature-values mode: the subset
    /// over the perturbed features, same rows.
    pub retained: Subset,
    /// Touched rows, indexed into the original dataset.
    pub delta_rows: Vec<usize>,
    /// Original features of the touched rows (`z`).
    pub original_rows: Array2<f64>,
    /// Perturbed features of the touched rows (`z̃`); zero rows in points mode.
    pub perturbed_rows: Array2<f64>,
    /// Original dataset row → retained dataset row.
    pub row_map: Vec<Option<usize>>,
}

impl AppliedRequest {
    pub fn is_empty(&self) -> bool {
        self.delta_rows.is_empty()
    }

    /// Retained-dataset rows of the touched rows that still exist.
    pub fn delta_rows_retained(&self) -> Vec<usize> {
        self.delta_rows.iter().filter_map(|&r| self.row_map[r]).collect()
    }
}

pub fn apply(data: &Subset, request: &UnlearnRequest) -> Result<AppliedRequest> {
    request.validate(&data.data)?;
    let n = data.data.n_rows();
    let features = data.table().features();
    let delta_rows = request.delta_rows();
    let in_subset: BTreeSet<usize> = data.rows.iter().copied().collect();
    if let Some(r) = delta_rows.iter().find(|r| !in_subset.contains(r)) {
        return Err(Error::InvalidArgument(format!("request row {r} is not in the subset")));
    }
    let original_rows = features.select(Axis(0), &delta_rows);
    match request.mode {
        RequestMode::Points => {
            if delta_rows.is_empty() {
                return Ok(AppliedRequest {
                    mode: request.mode,
                    retained: data.clone(),
                    delta_rows,
                    perturbed_rows: Array2::zeros((0, features.ncols())),
                    original_rows,
                    row_map: (0..n).map(Some).collect(),
                });
            }
            if delta_rows.len() == data.len() {
                return Err(Error::EmptyRetainedSet);
            }
            let (retained_data, row_map) = data.data.remove_rows(&delta_rows)?;
            let rows = data.rows.iter().filter_map(|&r| row_map[r]).collect();
            Ok(AppliedRequest {
                mode: request.mode,
                retained: Subset::new(retained_data, rows)?,
                delta_rows,
                perturbed_rows: Array2::zeros((0, features.ncols())),
                original_rows,
                row_map,
            })
        }
        RequestMode::FeatureValues => {
            let mut perturbed = features.to_owned();
            if !request.cells.is_empty() {
                let means = match request.replacement {
                    Replacement::Zero => None,
                    Replacement::FeatureMean => Some(
                        features
                            .select(Axis(0), &data.rows)
                            .mean_axis(Axis(0))
                            .expect("non-empty subset"),
                    ),
                };
                for &(r, c) in &request.cells {
                    perturbed[[r, c]] = means.as_ref().map_or(0.0, |m| m[c]);
                }
            }
            let perturbed_rows = perturbed.select(Axis(0), &delta_rows);
            let retained = Subset::new(data.data.with_features(perturbed)?, data.rows.clone())?;
            Ok(AppliedRequest {
                mode: request.mode,
                retained,
                delta_rows,
                original_rows,
                perturbed_rows,
                row_map: (0..n).map(Some).collect(),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{DatasetTable, GraphDataset};
    use ndarray::array;

    fn subset(x: Array2<f64>, labels: Vec<usize>) -> Subset {
        Subset::full(DatasetTable::new(x, labels, 2).unwrap().into())
    }

    fn ranked_fixture() -> Subset {
        subset(array![[1.0, 9.0], [2.0, 8.0], [3.0, 7.0], [4.0, 6.0]], vec![0, 1, 0, 1])
    }

    #[test]
    fn zero_ratio_is_empty() {
        let s = ranked_fixture();
        let r = random_request(&s, 0.0, RequestMode::Points, 1, 1.0).unwrap();
        assert!(r.is_empty());
        let t = topk_request(&s, 0.0, 0.5, RequestMode::FeatureValues).unwrap();
        assert!(t.cells.is_empty());
    }

    #[test]
    fn random_points_floor_count() {
        let x = Array2::from_shape_fn((100, 3), |(i, j)| (i * 3 + j) as f64);
        let s = subset(x, (0..100).map(|i| i % 2).collect());
        let r = random_request(&s, 0.05, RequestMode::Points, 4, 1.0).unwrap();
        assert_eq!(r.point_indices.len(), 5);
        assert_eq!(r, random_request(&s, 0.05, RequestMode::Points, 4, 1.0).unwrap());
        let f = random_request(&s, 0.1, RequestMode::FeatureValues, 4, 0.67).unwrap();
        assert_eq!(f.cells.len(), 2 * 10);
    }

    #[test]
    fn topk_hand_ranked() {
        let r = topk_request(&ranked_fixture(), 0.5, 0.5, RequestMode::FeatureValues).unwrap();
        assert_eq!(r.cells, vec![(0, 1), (1, 1)]);
    }

    #[test]
    fn topk_ties_take_lower_rows() {
        let s = subset(Array2::from_elem((5, 1), 2.0), vec![0, 1, 0, 1, 0]);
        let r = topk_request(&s, 0.4, 1.0, RequestMode::FeatureValues).unwrap();
        assert_eq!(r.cells, vec![(0, 0), (1, 0)]);
    }

    #[test]
    fn topk_points_ranks_rows() {
        let r = topk_request(&ranked_fixture(), 0.5, 0.5, RequestMode::Points).unwrap();
        assert_eq!(r.point_indices, vec![0, 1]);
    }

    #[test]
    fn apply_points_keeps_order() {
        let s = subset(array![[1.0], [2.0], [3.0]], vec![0, 1, 0]);
        let mut r = UnlearnRequest::empty(RequestMode::Points, Strategy::Random, 0.4, 1.0, 0);
        r.point_indices = vec![0];
        let a = apply(&s, &r).unwrap();
        assert_eq!(a.retained.table().features(), array![[2.0], [3.0]]);
        assert_eq!(a.retained.rows, vec![0, 1]);
        assert_eq!(a.row_map, vec![None, Some(0), Some(1)]);
    }

    #[test]
    fn apply_empty_is_identity() {
        let s = ranked_fixture();
        for mode in [RequestMode::Points, RequestMode::FeatureValues] {
            let r = random_request(&s, 0.0, mode, 0, 1.0).unwrap();
            let a = apply(&s, &r).unwrap();
            assert_eq!(a.retained, s);
            assert!(a.is_empty());
        }
    }

    #[test]
    fn removing_everything_fails() {
        let s = subset(array![[1.0], [2.0]], vec![0, 1]);
        let mut r = UnlearnRequest::empty(RequestMode::Points, Strategy::Random, 0.5, 1.0, 0);
        r.point_indices = vec![0, 1];
        assert!(matches!(apply(&s, &r).unwrap_err(), Error::EmptyRetainedSet));
    }

    #[test]
    fn zero_replacement_touches_one_coordinate() {
        let s = ranked_fixture();
        let mut r = UnlearnRequest::empty(RequestMode::FeatureValues, Strategy::Random, 0.25, 0.5, 0);
        r.cells = vec![(2, 1)];
        let a = apply(&s, &r).unwrap();
        assert_eq!(a.delta_rows, vec![2]);
        assert_eq!(a.original_rows, array![[3.0, 7.0]]);
        assert_eq!(a.perturbed_rows, array![[3.0, 0.0]]);
        assert_eq!(a.retained.table().n_rows(), 4);
    }

    #[test]
    fn mean_replacement() {
        let s = ranked_fixture();
        let mut r = UnlearnRequest::empty(RequestMode::FeatureValues, Strategy::Random, 0.25, 0.5, 0)
            .with_replacement(Replacement::FeatureMean);
        r.cells = vec![(0, 0)];
        let a = apply(&s, &r).unwrap();
        assert_eq!(a.perturbed_rows, array![[2.5, 9.0]]);
    }

    #[test]
    fn graph_points_drop_incident_edges() {
        let t = DatasetTable::new(Array2::eye(3), vec![0, 1, 0], 2).unwrap();
        let g = GraphDataset::new(t, &[(0, 1), (1, 2)]).unwrap();
        let s = Subset::new(g.into(), vec![0, 1]).unwrap();
        let mut r = UnlearnRequest::empty(RequestMode::Points, Strategy::Random, 0.5, 1.0, 0);
        r.point_indices = vec![1];
        let a = apply(&s, &r).unwrap();
        match &a.retained.data {
            Dataset::Graph(g) => assert_eq!(g.edge_count(), 0),
            Dataset::Table(_) => panic!("graph expected"),
        }
        assert_eq!(a.retained.rows, vec![0]);
    }

    #[test]
    fn request_outside_subset_rejected() {
        let t = DatasetTable::new(Array2::eye(3), vec![0, 1, 0], 2).unwrap();
        let s = Subset::new(t.into(), vec![0, 1]).unwrap();
        let mut r = UnlearnRequest::empty(RequestMode::Points, Strategy::Random, 0.5, 1.0, 0);
        r.point_indices = vec![2];
        assert!(apply(&s, &r).is_err());
    }

    #[test]
    fn text_round_trip() {
        let x = Array2::from_shape_fn((30, 4), |(i, j)| ((i * 7 + j * 3) % 11) as f64);
        let s = subset(x, (0..30).map(|i| i % 2).collect());
        for mode in [RequestMode::Points, RequestMode::FeatureValues] {
            let r = random_request(&s, 0.1, mode, 9, 0.5)
                .unwrap()
                .with_replacement(Replacement::FeatureMean);
            let back = UnlearnRequest::from_text(&r.to_text()).unwrap();
            assert_eq!(back, r);
            assert_eq!(back.digest(), r.digest());
        }
    }

    #[test]
    fn text_errors_name_the_line() {
        let err = UnlearnRequest::from_text("unlearn-request v1\nmode points\nstrategy sideways\n").unwrap_err();
        assert!(err.to_string().contains("line"), "{err}");
        let err = UnlearnRequest::from_text("hello\n").unwrap_err();
        assert!(err.to_string().contains("line 1"));
    }
}
