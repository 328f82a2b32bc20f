use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;

use super::DatasetTable;
use crate::error::{Error, Result};

/// Loads a CSV table with a header row. The last column is the label;
/// label strings are numbered by first appearance.
pub fn load_csv(path: impl AsRef<Path>) -> Result<DatasetTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text)
}

pub fn parse_csv(text: &str) -> Result<DatasetTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::format("csv", e.to_string()))?
        .clone();
    if header.len() < 2 {
        return Err(Error::format("csv", "need at least one feature column and a label column"));
    }
    let m = header.len() - 1;
    let names: Vec<String> = header.iter().take(m).map(str::to_string).collect();

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut label_ids: HashMap<String, usize> = HashMap::new();
    let mut label_names = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::format("csv", format!("line {line}: {e}")))?;
        if record.len() != m + 1 {
            return Err(Error::format(
                "csv",
                format!("line {line}: {} fields, expected {}", record.len(), m + 1),
            ));
        }
        for field in record.iter().take(m) {
            values.push(field.parse::<f64>().map_err(|_| {
                Error::format("csv", format!("line {line}: `{field}` is not a number"))
            })?);
        }
        let label = &record[m];
        let next = label_ids.len();
        let y = *label_ids.entry(label.to_string()).or_insert_with(|| {
            label_names.push(label.to_string());
            next
        });
        labels.push(y);
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let features = Array2::from_shape_vec((labels.len(), m), values)
        .map_err(|e| Error::Shape(e.to_string()))?;
    let classes = label_names.len().max(2);
    DatasetTable::new(features, labels, classes)?
        .with_feature_names(names)
        .map(|t| t.with_label_names(label_names))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_header_and_labels() {
        let t = parse_csv("a,b,label\n1,2,yes\n3,4,no\n5,6,yes\n").unwrap();
        assert_eq!(t.features().dim(), (3, 2));
        assert_eq!(t.labels(), &[0, 1, 0]);
        assert_eq!(t.feature_names().unwrap(), &["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn non_numeric_feature_names_line() {
        let err = parse_csv("a,label\n1,x\nfoo,y\n").unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn header_only_is_empty() {
        assert!(matches!(parse_csv("a,label\n"), Err(Error::EmptyDataset)));
    }
}
