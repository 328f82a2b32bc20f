use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView2};

use super::DatasetTable;
use crate::digest::sha256_hex;
use crate::error::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from per-row `(column, value)` lists. Columns must be sorted.
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in &rows {
            for &(c, v) in row {
                debug_assert!(c < n_cols);
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            n_rows: rows.len(),
            n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    /// `self · rhs` for a dense right-hand side.
    pub fn matmul(&self, rhs: &ArrayView2<'_, f64>) -> Array2<f64> {
        assert_eq!(self.n_cols, rhs.nrows(), "sparse matmul inner dimension");
        let mut out = Array2::<f64>::zeros((self.n_rows, rhs.ncols()));
        for (r, mut out_row) in out.outer_iter_mut().enumerate() {
            for (c, v) in self.row(r) {
                out_row.scaled_add(v, &rhs.row(c));
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::<f64>::zeros((self.n_rows, self.n_cols));
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                out[[r, c]] = v;
            }
        }
        out
    }
}

/// A node-classification dataset: node features and labels plus an
/// undirected citation structure.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphDataset {
    table: DatasetTable,
    /// Sorted neighbour lists; symmetric, no self loops.
    neighbors: Vec<Vec<usize>>,
    /// D̃^(−1/2)(A+I)D̃^(−1/2)
    normalized: SparseMatrix,
    dropped_edges: usize,
}

impl GraphDataset {
    /// Builds the graph from an undirected edge list over the table's rows.
    /// Self loops and duplicate edges are ignored.
    pub fn new(table: DatasetTable, edges: &[(usize, usize)]) -> Result<Self> {
        let n = table.n_rows();
        let mut sets = vec![BTreeSet::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidArgument(format!(
                    "edge ({a}, {b}) references a node outside [0, {n})"
                )));
            }
            if a != b {
                sets[a].insert(b);
                sets[b].insert(a);
            }
        }
        let neighbors = sets.into_iter().map(|s| s.into_iter().collect()).collect();
        Ok(Self::from_neighbors(table, neighbors, 0))
    }

    fn from_neighbors(table: DatasetTable, neighbors: Vec<Vec<usize>>, dropped_edges: usize) -> Self {
        let normalized = renormalized_adjacency(&neighbors);
        Self {
            table,
            neighbors,
            normalized,
            dropped_edges,
        }
    }

    pub(crate) fn set_dropped_edges(&mut self, dropped: usize) {
        self.dropped_edges = dropped;
    }

    pub fn table(&self) -> &DatasetTable {
        &self.table
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    pub fn normalized_adjacency(&self) -> &SparseMatrix {
        &self.normalized
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Edges in the source files that referenced unknown node ids.
    pub fn dropped_edges(&self) -> usize {
        self.dropped_edges
    }

    /// Dense 0/1 adjacency (no self loops).
    pub fn adjacency_dense(&self) -> Array2<f64> {
        let n = self.neighbors.len();
        let mut a = Array2::<f64>::zeros((n, n));
        for (i, ns) in self.neighbors.iter().enumerate() {
            for &j in ns {
                a[[i, j]] = 1.0;
            }
        }
        a
    }

    pub fn with_features(&self, features: Array2<f64>) -> Result<GraphDataset> {
        Ok(GraphDataset {
            table: self.table.with_features(features)?,
            neighbors: self.neighbors.clone(),
            normalized: self.normalized.clone(),
            dropped_edges: self.dropped_edges,
        })
    }

    /// Subgraph on `keep` (sorted ascending), renumbered densely.
    pub fn induced_subgraph(&self, keep: &[usize]) -> GraphDataset {
        let mut map = vec![usize::MAX; self.neighbors.len()];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let neighbors = keep
            .iter()
            .map(|&old| {
                self.neighbors[old]
                    .iter()
                    .filter_map(|&j| (map[j] != usize::MAX).then_some(map[j]))
                    .collect()
            })
            .collect();
        Self::from_neighbors(self.table.select_rows(keep), neighbors, self.dropped_edges)
    }

    pub fn digest(&self) -> String {
        let mut bytes = self.table.digest().into_bytes();
        for (i, ns) in self.neighbors.iter().enumerate() {
            for &j in ns.iter().filter(|&&j| j > i) {
                bytes.extend_from_slice(&(i as u64).to_le_bytes());
                bytes.extend_from_slice(&(j as u64).to_le_bytes());
            }
        }
        sha256_hex(&bytes)
    }
}

fn renormalized_adjacency(neighbors: &[Vec<usize>]) -> SparseMatrix {
    // Degree of A + I.
    let inv_sqrt: Vec<f64> = neighbors
        .iter()
        .map(|ns| 1.0 / ((ns.len() + 1) as f64).sqrt())
        .collect();
    let rows = neighbors
        .iter()
        .enumerate()
        .map(|(i, ns)| {
            let mut row: Vec<(usize, f64)> = ns
                .iter()
                .map(|&j| (j, inv_sqrt[i] * inv_sqrt[j]))
                .collect();
            row.push((i, inv_sqrt[i] * inv_sqrt[i]));
            row.sort_by_key(|&(c, _)| c);
            row
        })
        .collect();
    SparseMatrix::from_rows(neighbors.len(), rows)
}
