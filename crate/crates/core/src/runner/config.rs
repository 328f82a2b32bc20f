use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasets::{
    load_citation_graph, load_csv, load_idx, parse_citation_graph, synthetic, Dataset, SplitSpec,
};
use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::models::{ModelSpec, TrainOptions};
use crate::requests::{Replacement, RequestMode, Strategy};
use crate::unlearn::{MethodRegistry, UnlearnConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// Where the data comes from. Relative paths resolve against the config
/// file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Idx {
        images: PathBuf,
        labels: PathBuf,
        /// Keep only the first `limit` images.
        #[serde(default)]
        limit: Option<usize>,
    },
    Citation {
        content: PathBuf,
        cites: PathBuf,
    },
    Csv {
        path: PathBuf,
    },
    Gaussian {
        n: usize,
        m: usize,
        #[serde(default = "default_classes")]
        classes: usize,
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Rendered seven-segment digits, MNIST-shaped.
    Digits {
        n: usize,
        #[serde(default)]
        seed: u64,
    },
    SyntheticCitation {
        n: usize,
        m: usize,
        #[serde(default = "default_classes")]
        classes: usize,
        #[serde(default = "default_degree")]
        avg_degree: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn default_classes() -> usize {
    2
}

fn default_separation() -> f64 {
    2.0
}

fn default_degree() -> f64 {
    4.0
}

impl DatasetSource {
    pub fn load(&self, base: &Path) -> Result<Dataset> {
        let at = |p: &PathBuf| base.join(p);
        Ok(match self {
            DatasetSource::Idx { images, labels, limit } => {
                let table = load_idx(at(images), at(labels))?;
                match limit {
                    Some(k) if *k < table.n_rows() => {
                        table.select_rows(&(0..*k).collect::<Vec<_>>()).into()
                    }
                    _ => table.into(),
                }
            }
            DatasetSource::Citation { content, cites } => load_citation_graph(at(content), at(cites))?.into(),
            DatasetSource::Csv { path } => load_csv(at(path))?.into(),
            DatasetSource::Gaussian { n, m, classes, separation, seed } => {
                synthetic::gaussian_classes(*n, *m, *classes, *separation, *seed)?.into()
            }
            DatasetSource::Digits { n, seed } => synthetic::digit_glyph_table(*n, *seed)?.into(),
            DatasetSource::SyntheticCitation { n, m, classes, avg_degree, seed } => {
                let (content, cites) = synthetic::citation_corpus(*n, *m, *classes, *avg_degree, *seed);
                parse_citation_graph(&content, &cites)?.into()
            }
        })
    }
}

/// Architecture fields of the config; input and class counts come from
/// the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub arch: String,
    pub hidden_dim: usize,
    pub l2_reg: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let spec = ModelSpec::new("logreg", 1, 2);
        Self {
            arch: spec.arch,
            hidden_dim: spec.hidden_dim,
            l2_reg: spec.l2_reg,
        }
    }
}

impl ModelSection {
    pub fn spec(&self, data: &Dataset, seed: u64) -> ModelSpec {
        let table = data.table();
        ModelSpec::new(&self.arch, table.n_features(), table.class_count())
            .with_hidden(self.hidden_dim)
            .with_l2(self.l2_reg)
            .with_seed(seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RequestSection {
    pub strategy: Strategy,
    pub mode: RequestMode,
    pub unlearn_ratios: Vec<f64>,
    pub feature_ratio: f64,
    pub replacement: Replacement,
}

impl Default for RequestSection {
    fn default() -> Self {
        Self {
            strategy: Strategy::Random,
            mode: RequestMode::Points,
            unlearn_ratios: vec![0.05, 0.075, 0.1, 0.2],
            feature_ratio: 0.1,
            replacement: Replacement::Zero,
        }
    }
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

fn default_methods() -> Vec<String> {
    vec!["retrain".into(), "influence".into(), "dui".into()]
}

fn default_repeats() -> usize {
    1
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    /// Base seed; repeat `r` uses `seed + r` for initialization and
    /// random requests.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainOptions,
    #[serde(default)]
    pub request: RequestSection,
    /// Shared by every method; `method` and `train` inside are overridden
    /// per grid cell.
    #[serde(default)]
    pub unlearn: UnlearnConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.repeats == 0 {
            return bad("repeats must be ≥ 1".into());
        }
        if self.methods.is_empty() {
            return bad("methods must name at least one method".into());
        }
        let registry = MethodRegistry::default();
        for m in &self.methods {
            if !registry.contains(m) {
                return bad(format!(
                    "unknown method `{m}` (known: {})",
                    registry.names().collect::<Vec<_>>().join(", ")
                ));
            }
        }
        if self.request.unlearn_ratios.is_empty() {
            return bad("request.unlearn_ratios must not be empty".into());
        }
        for &r in &self.request.unlearn_ratios {
            if !(0.0..1.0).contains(&r) {
                return bad(format!("request.unlearn_ratios entry {r} is outside [0, 1)"));
            }
        }
        if !(self.request.feature_ratio > 0.0 && self.request.feature_ratio <= 1.0) {
            return bad(format!("request.feature_ratio {} is outside (0, 1]", self.request.feature_ratio));
        }
        self.unlearn
            .validate()
            .map_err(|e| Error::Config(format!("unlearn: {e}")))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}
