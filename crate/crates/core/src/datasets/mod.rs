//! Dataset ingestion and train/test splitting.
//!
//! Every loader produces a [`DatasetTable`]: an `n × m` matrix of finite
//! features plus integer class labels. Citation graphs additionally carry a
//! symmetric adjacency and its renormalized form, see [`GraphDataset`].

mod citation;
mod graph;
mod idx;
mod split;
mod tabular;
pub mod synthetic;

use ndarray::{Array2, ArrayView2, Axis};

use crate::digest::sha256_hex;
use crate::error::{Error, Result};

pub use citation::{load_citation_graph, parse_citation_graph};
pub use graph::{GraphDataset, SparseMatrix};
pub use idx::{
    load_idx, load_idx_merged, parse_idx_images, parse_idx_labels, write_idx_images,
    write_idx_labels, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};
pub use split::{split, Split, SplitSpec};
pub use tabular::{load_csv, parse_csv};

/// Feature matrix and labels for `n` data points.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetTable {
    features: Array2<f64>,
    labels: Vec<usize>,
    class_count: usize,
    feature_names: Option<Vec<String>>,
    /// Original label strings, indexed by class id (first-appearance order).
    label_names: Option<Vec<String>>,
}

impl DatasetTable {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        let (n, m) = features.dim();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if m == 0 {
            return Err(Error::Shape("dataset has zero feature columns".into()));
        }
        if labels.len() != n {
            return Err(Error::Shape(format!(
                "{} labels for {} feature rows",
                labels.len(),
                n
            )));
        }
        if class_count < 2 {
            return Err(Error::InvalidArgument(format!(
                "class_count must be at least 2, got {class_count}"
            )));
        }
        if let Some(bad) = labels.iter().position(|&y| y >= class_count) {
            return Err(Error::InvalidArgument(format!(
                "label {} at row {bad} is outside [0, {class_count})",
                labels[bad]
            )));
        }
        if let Some(((r, c), v)) = features.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite feature value {v} at ({r}, {c})"
            )));
        }
        Ok(Self {
            features,
            labels,
            class_count,
            feature_names: None,
            label_names: None,
        })
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_features() {
            return Err(Error::Shape(format!(
                "{} feature names for {} columns",
                names.len(),
                self.n_features()
            )));
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    pub fn with_label_names(mut self, names: Vec<String>) -> Self {
        self.label_names = Some(names);
        self
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn label_names(&self) -> Option<&[String]> {
        self.label_names.as_deref()
    }

    /// Rows `rows` in the given order. Class count and names are preserved.
    pub fn select_rows(&self, rows: &[usize]) -> DatasetTable {
        DatasetTable {
            features: self.features.select(Axis(0), rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            class_count: self.class_count,
            feature_names: self.feature_names.clone(),
            label_names: self.label_names.clone(),
        }
    }

    /// Same labels and metadata with a replacement feature matrix.
    pub fn with_features(&self, features: Array2<f64>) -> Result<DatasetTable> {
        if features.dim() != self.features.dim() {
            return Err(Error::Shape(format!(
                "replacement features {:?} vs {:?}",
                features.dim(),
                self.features.dim()
            )));
        }
        Ok(DatasetTable {
            features,
            labels: self.labels.clone(),
            class_count: self.class_count,
            feature_names: self.feature_names.clone(),
            label_names: self.label_names.clone(),
        })
    }

    /// SHA-256 over shape, feature bits and labels.
    pub fn digest(&self) -> String {
        let mut bytes = Vec::with_capacity(24 + self.features.len() * 8 + self.labels.len() * 8);
        bytes.extend_from_slice(&(self.n_rows() as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.n_features() as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.class_count as u64).to_le_bytes());
        for v in self.features.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for &y in &self.labels {
            bytes.extend_from_slice(&(y as u64).to_le_bytes());
        }
        sha256_hex(&bytes)
    }

    /// Class histogram normalized to a probability vector.
    pub fn label_histogram(&self, rows: &[usize]) -> Vec<f64> {
        let mut counts = vec![0.0; self.class_count];
        for &r in rows {
            counts[self.labels[r]] += 1.0;
        }
        let total = rows.len().max(1) as f64;
        counts.iter_mut().for_each(|c| *c /= total);
        counts
    }
}

/// A tabular dataset or a citation graph.
#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Table(DatasetTable),
    Graph(GraphDataset),
}

impl Dataset {
    pub fn table(&self) -> &DatasetTable {
        match self {
            Dataset::Table(t) => t,
            Dataset::Graph(g) => g.table(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.table().n_rows()
    }

    pub fn normalized_adjacency(&self) -> Option<&SparseMatrix> {
        match self {
            Dataset::Table(_) => None,
            Dataset::Graph(g) => Some(g.normalized_adjacency()),
        }
    }

    pub fn is_graph(&self) -> bool {
        matches!(self, Dataset::Graph(_))
    }

    /// Same structure (graph edges included) with new feature values.
    pub fn with_features(&self, features: Array2<f64>) -> Result<Dataset> {
        Ok(match self {
            Dataset::Table(t) => Dataset::Table(t.with_features(features)?),
            Dataset::Graph(g) => Dataset::Graph(g.with_features(features)?),
        })
    }

    /// Drops the given rows. For graphs the incident edges go too and the
    /// normalized adjacency is rebuilt. Returns the old→new row map.
    pub fn remove_rows(&self, rows: &[usize]) -> Result<(Dataset, Vec<Option<usize>>)> {
        let n = self.n_rows();
        let mut drop = vec![false; n];
        for &r in rows {
            if r >= n {
                return Err(Error::InvalidArgument(format!("row {r} out of bounds for n = {n}")));
            }
            drop[r] = true;
        }
        let keep: Vec<usize> = (0..n).filter(|&r| !drop[r]).collect();
        if keep.is_empty() {
            return Err(Error::EmptyRetainedSet);
        }
        let mut map = vec![None; n];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = Some(new);
        }
        let data = match self {
            Dataset::Table(t) => Dataset::Table(t.select_rows(&keep)),
            Dataset::Graph(g) => Dataset::Graph(g.induced_subgraph(&keep)),
        };
        Ok((data, map))
    }

    pub fn digest(&self) -> String {
        match self {
            Dataset::Table(t) => t.digest(),
            Dataset::Graph(g) => g.digest(),
        }
    }
}

impl From<DatasetTable> for Dataset {
    fn from(t: DatasetTable) -> Self {
        Dataset::Table(t)
    }
}

impl From<GraphDataset> for Dataset {
    fn from(g: GraphDataset) -> Self {
        Dataset::Graph(g)
    }
}

/// A dataset together with the rows that carry loss (training) or are
/// scored (evaluation).
///
/// Tabular splits materialize the selected rows, so `rows` is `0..n`.
/// Graph splits are transductive: the whole graph stays in place for
/// propagation and `rows` masks the supervised or evaluated nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Subset {
    pub data: Dataset,
    pub rows: Vec<usize>,
}

impl Subset {
    pub fn new(data: Dataset, rows: Vec<usize>) -> Result<Self> {
        let n = data.n_rows();
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::InvalidArgument(format!("row {bad} out of bounds for n = {n}")));
        }
        Ok(Self { data, rows })
    }

    /// Every row of `data`.
    pub fn full(data: Dataset) -> Self {
        let rows = (0..data.n_rows()).collect();
        Self { data, rows }
    }

    pub fn table(&self) -> &DatasetTable {
        self.data.table()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        let labels = self.table().labels();
        self.rows.iter().map(|&r| labels[r]).collect()
    }
}
