use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, Subset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.9,
            seed: 0,
        }
    }
}

/// Disjoint, sorted train and test row indices covering `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// `⌊x⌋` tolerant of products like `0.29 * 100 = 28.999…`.
pub(crate) fn floor_count(total: usize, fraction: f64) -> usize {
    (total as f64 * fraction + 1e-9).floor() as usize
}

/// Seeded shuffle, then the first `⌊n · train_fraction⌋` rows go to training.
pub fn split(n: usize, spec: &SplitSpec) -> Result<Split> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("cannot split {n} rows")));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train_fraction {} is outside (0, 1)",
            spec.train_fraction
        )));
    }
    let n_train = floor_count(n, spec.train_fraction);
    if n_train == 0 || n_train == n {
        return Err(Error::InvalidArgument(format!(
            "train_fraction {} leaves an empty side for n = {n}",
            spec.train_fraction
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

impl Split {
    /// Tabular data is materialized to the selected rows; graphs keep every
    /// node and mask the selected ones.
    fn view(data: &Dataset, rows: &[usize]) -> Subset {
        match data {
            Dataset::Table(t) => Subset::full(Dataset::Table(t.select_rows(rows))),
            Dataset::Graph(_) => Subset {
                data: data.clone(),
                rows: rows.to_vec(),
            },
        }
    }

    pub fn train_subset(&self, data: &Dataset) -> Subset {
        Self::view(data, &self.train)
    }

    pub fn test_subset(&self, data: &Dataset) -> Subset {
        Self::view(data, &self.test)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_rows_ninety_percent() {
        let s = split(10, &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (9, 1));
        assert!(!s.train.contains(&s.test[0]));
    }

    #[test]
    fn cora_sized_floor() {
        let s = split(2708, &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (2437, 271));
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SplitSpec { train_fraction: 0.7, seed: 11 };
        assert_eq!(split(50, &spec).unwrap(), split(50, &spec).unwrap());
        let other = SplitSpec { seed: 12, ..spec };
        assert_ne!(split(50, &spec).unwrap(), split(50, &other).unwrap());
    }

    #[test]
    fn empty_side_rejected() {
        let spec = SplitSpec { train_fraction: 0.1, seed: 0 };
        assert!(split(5, &spec).is_err());
        assert!(split(1, &SplitSpec::default()).is_err());
    }
}
