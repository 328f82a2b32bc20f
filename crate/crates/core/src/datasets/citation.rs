use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;

use super::{DatasetTable, GraphDataset};
use crate::error::{Error, Result};

/// Loads a Planetoid-style `.content` / `.cites` pair.
///
/// Nodes keep their order of appearance in the content file and string
/// labels are numbered by first appearance. Citation lines naming unknown
/// paper ids are skipped and counted in [`GraphDataset::dropped_edges`].
pub fn load_citation_graph(
    content_path: impl AsRef<Path>,
    cites_path: impl AsRef<Path>,
) -> Result<GraphDataset> {
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
    let content = read(content_path.as_ref())?;
    let cites = read(cites_path.as_ref())?;
    parse_citation_graph(&content, &cites)
}

pub fn parse_citation_graph(content: &str, cites: &str) -> Result<GraphDataset> {
    let mut ids: HashMap<&str, usize> = HashMap::new();
    let mut label_ids: HashMap<&str, usize> = HashMap::new();
    let mut label_names = Vec::new();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;

    for (lineno, line) in content.lines().enumerate() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        let lineno = lineno + 1;
        if tokens.len() < 3 {
            return Err(Error::format(
                "citation content",
                format!("line {lineno}: expected `id <features> label`"),
            ));
        }
        let m = tokens.len() - 2;
        match width {
            None => width = Some(m),
            Some(w) if w != m => {
                return Err(Error::format(
                    "citation content",
                    format!("line {lineno}: {m} feature values, expected {w}"),
                ))
            }
            _ => {}
        }
        let id = tokens[0];
        if ids.insert(id, labels.len()).is_some() {
            return Err(Error::format(
                "citation content",
                format!("line {lineno}: duplicate node id `{id}`"),
            ));
        }
        for tok in &tokens[1..=m] {
            let v: f64 = tok.parse().map_err(|_| {
                Error::format(
                    "citation content",
                    format!("line {lineno}: feature value `{tok}` is not a number"),
                )
            })?;
            values.push(v);
        }
        let label = tokens[m + 1];
        let next = label_ids.len();
        let y = *label_ids.entry(label).or_insert_with(|| {
            label_names.push(label.to_string());
            next
        });
        labels.push(y);
    }

    let n = labels.len();
    let m = width.ok_or(Error::EmptyDataset)?;
    let features = Array2::from_shape_vec((n, m), values).map_err(|e| Error::Shape(e.to_string()))?;
    // A single-label corpus still gets two classes so the table is valid.
    let class_count = label_names.len().max(2);
    let table = DatasetTable::new(features, labels, class_count)?.with_label_names(label_names);

    let mut edges = Vec::new();
    let mut dropped = 0;
    for (lineno, line) in cites.lines().enumerate() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            [] => continue,
            [cited, citing] => match (ids.get(cited), ids.get(citing)) {
                (Some(&a), Some(&b)) => edges.push((a, b)),
                _ => dropped += 1,
            },
            _ => {
                return Err(Error::format(
                    "citation cites",
                    format!("line {}: expected `cited_id citing_id`", lineno + 1),
                ))
            }
        }
    }
    if dropped > 0 {
        log::info!("dropped {dropped} citation edges with unknown node ids");
    }
    let mut graph = GraphDataset::new(table, &edges)?;
    graph.set_dropped_edges(dropped);
    Ok(graph)
}
