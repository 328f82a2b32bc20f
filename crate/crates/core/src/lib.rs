//! Machine unlearning with influence functions and a kernel
//! distributional-independence regularizer.
//!
//! The crate is organised as a pipeline:
//!
//! * [`datasets`] loads IDX images, Planetoid citation graphs and CSV tables
//!   and splits them into train/test index sets.
//! * [`models`] holds the differentiable classifiers (logistic regression,
//!   MLP, two-layer GCN) behind the [`models::Architecture`] trait.
//! * [`independence`] computes centered kernels, HSIC, plug-in mutual
//!   information and the independence loss used by the DUI update.
//! * [`requests`] builds random and top-k unlearning requests and applies them.
//! * [`unlearn`] turns a request into parameter updates. Methods
//!   (`retrain`, `influence`, `dui`) and inverse-HVP solvers (`direct`,
//!   `lissa`) are looked up by name in registries.
//! * [`eval`] has the F1 / Brier / distribution-shift metrics and
//!   [`runner`] the experiment grid and CLI.

pub mod datasets;
pub mod error;
pub mod eval;
pub mod independence;
pub mod models;
pub mod requests;
pub mod runner;
pub mod unlearn;

pub(crate) mod digest;

pub use error::{Error, Result};
