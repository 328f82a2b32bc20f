use std::io::Write;
use std::path::Path;

use ndarray::{concatenate, Array2, Axis};

use super::DatasetTable;
use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

const DIGIT_CLASSES: usize = 10;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn u32_be(&mut self, field: &str) -> Result<u32> {
        let end = self.pos + 4;
        let chunk = self.bytes.get(self.pos..end).ok_or_else(|| {
            Error::format(self.what, format!("truncated file: missing {field}"))
        })?;
        self.pos = end;
        Ok(u32::from_be_bytes(chunk.try_into().expect("4 bytes")))
    }

    fn body(&self, len: usize, field: &str) -> Result<&'a [u8]> {
        let rest = &self.bytes[self.pos..];
        if rest.len() < len {
            return Err(Error::format(
                self.what,
                format!("truncated file: {field} needs {len} bytes, found {}", rest.len()),
            ));
        }
        Ok(&rest[..len])
    }
}

/// Decodes an IDX3 image file into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let mut r = Reader {
        bytes,
        pos: 0,
        what: "idx images",
    };
    let magic = r.u32_be("magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(
            "idx images",
            format!("bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"),
        ));
    }
    let count = r.u32_be("item count")? as usize;
    let rows = r.u32_be("row count")? as usize;
    let cols = r.u32_be("column count")? as usize;
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    let pixels = r.body(count * rows * cols, "pixel data")?.to_vec();
    Ok((count, rows, cols, pixels))
}

/// Decodes an IDX1 label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut r = Reader {
        bytes,
        pos: 0,
        what: "idx labels",
    };
    let magic = r.u32_be("magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(
            "idx labels",
            format!("bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"),
        ));
    }
    let count = r.u32_be("item count")? as usize;
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(r.body(count, "label data")?.to_vec())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn table_from_idx(images: &[u8], labels: &[u8]) -> Result<DatasetTable> {
    let (count, rows, cols, pixels) = parse_idx_images(images)?;
    let labels = parse_idx_labels(labels)?;
    if labels.len() != count {
        return Err(Error::format(
            "idx pair",
            format!("item count mismatch: {count} images vs {} labels", labels.len()),
        ));
    }
    if let Some(bad) = labels.iter().find(|&&y| y as usize >= DIGIT_CLASSES) {
        return Err(Error::format("idx labels", format!("label {bad} is not a digit")));
    }
    let features = Array2::from_shape_vec(
        (count, rows * cols),
        pixels.iter().map(|&p| f64::from(p) / 255.0).collect(),
    )
    .map_err(|e| Error::Shape(e.to_string()))?;
    DatasetTable::new(
        features,
        labels.iter().map(|&y| y as usize).collect(),
        DIGIT_CLASSES,
    )
}

/// Loads an IDX image/label pair. Pixels are scaled to `[0, 1]` and
/// flattened row-major.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<DatasetTable> {
    table_from_idx(&read(images_path.as_ref())?, &read(labels_path.as_ref())?)
}

/// Loads several IDX pairs (e.g. MNIST's train and test files) and stacks
/// them in order, ready for a fresh split.
pub fn load_idx_merged<P: AsRef<Path>>(pairs: &[(P, P)]) -> Result<DatasetTable> {
    let tables = pairs
        .iter()
        .map(|(i, l)| load_idx(i, l))
        .collect::<Result<Vec<_>>>()?;
    let first = tables.first().ok_or(Error::EmptyDataset)?;
    if tables.iter().any(|t| t.n_features() != first.n_features()) {
        return Err(Error::format("idx pair", "image sizes differ between files"));
    }
    let views: Vec<_> = tables.iter().map(|t| t.features()).collect();
    let features = concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
    let labels = tables.iter().flat_map(|t| t.labels().iter().copied()).collect();
    DatasetTable::new(features, labels, DIGIT_CLASSES)
}

pub fn write_idx_images(mut w: impl Write, rows: usize, cols: usize, pixels: &[u8]) -> std::io::Result<()> {
    assert_eq!(pixels.len() % (rows * cols), 0, "pixel buffer is not a whole number of images");
    let count = pixels.len() / (rows * cols);
    for v in [IDX_IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        w.write_all(&v.to_be_bytes())?;
    }
    w.write_all(pixels)
}

pub fn write_idx_labels(mut w: impl Write, labels: &[u8]) -> std::io::Result<()> {
    w.write_all(&IDX_LABELS_MAGIC.to_be_bytes())?;
    w.write_all(&(labels.len() as u32).to_be_bytes())?;
    w.write_all(labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> (Vec<u8>, Vec<u8>) {
        // Two 2x2 images written byte by byte.
        let mut img = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        img.extend_from_slice(&[0, 255, 255, 0, 255, 255, 0, 0]);
        let lbl = vec![0, 0, 8, 1, 0, 0, 0, 2, 3, 7];
        (img, lbl)
    }

    #[test]
    fn decodes_hand_written_pair() {
        let (img, lbl) = fixture();
        let t = table_from_idx(&img, &lbl).unwrap();
        assert_eq!(t.features().dim(), (2, 4));
        assert_eq!(
            t.features().iter().copied().collect::<Vec<_>>(),
            vec![0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0]
        );
        assert_eq!(t.labels(), &[3, 7]);
        assert_eq!(t.class_count(), 10);
    }

    #[test]
    fn writer_matches_hand_bytes() {
        let (img, lbl) = fixture();
        let mut out = Vec::new();
        write_idx_images(&mut out, 2, 2, &img[16..]).unwrap();
        assert_eq!(out, img);
        out.clear();
        write_idx_labels(&mut out, &[3, 7]).unwrap();
        assert_eq!(out, lbl);
    }

    #[test]
    fn bad_magic_names_field() {
        let (mut img, lbl) = fixture();
        img[3] = 0x01;
        let err = table_from_idx(&img, &lbl).unwrap_err().to_string();
        assert!(err.contains("idx images") && err.contains("magic"), "{err}");
        let err = table_from_idx(&lbl, &lbl).unwrap_err().to_string();
        assert!(err.contains("magic"), "{err}");
    }

    #[test]
    fn truncated_pixels() {
        let (img, lbl) = fixture();
        let err = table_from_idx(&img[..img.len() - 1], &lbl).unwrap_err().to_string();
        assert!(err.contains("truncated") && err.contains("pixel"), "{err}");
        let err = table_from_idx(&img[..10], &lbl).unwrap_err().to_string();
        assert!(err.contains("row count"), "{err}");
    }

    #[test]
    fn count_mismatch() {
        let (img, _) = fixture();
        let lbl = vec![0, 0, 8, 1, 0, 0, 0, 1, 3];
        let err = table_from_idx(&img, &lbl).unwrap_err().to_string();
        assert!(err.contains("count mismatch"), "{err}");
    }

    #[test]
    fn zero_items_is_empty_dataset() {
        let img = [0, 0, 8, 3, 0, 0, 0, 0, 0, 0, 0, 28, 0, 0, 0, 28];
        assert!(matches!(parse_idx_images(&img), Err(Error::EmptyDataset)));
        let lbl = [0, 0, 8, 1, 0, 0, 0, 0];
        assert!(matches!(parse_idx_labels(&lbl), Err(Error::EmptyDataset)));
    }
}
