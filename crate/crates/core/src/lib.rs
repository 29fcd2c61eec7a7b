//! Structured penalized multivariate regression.
//!
//! Jointly predicts several correlated responses from heterogeneous feature
//! blocks. Supported penalties are the lasso, the elastic net and the
//! tree-guided group lasso ("tree-lasso"), each with an integrative
//! penalty-factor (IPF) variant that penalizes feature blocks differently.
//!
//! The crate is organized bottom-up:
//!
//! * [`data`] holds the dataset, standardization and fit-result types.
//! * [`cd`] is the coordinate-descent solver for the lasso/elastic-net family.
//! * [`ipf`] reduces the IPF variants to their plain counterparts.
//! * [`tree`] builds the response tree and evaluates the tree-lasso penalty.
//! * [`spg`] is the smoothing proximal gradient solver for tree-lasso.
//! * [`estimator`] dispatches a [`ipf::PenaltyConfig`] to the right solver.
//! * [`epsgo`] is a Gaussian-process hyperparameter tuner.
//! * [`selection`] runs cross-validation and the full tuning protocol.
//! * [`simulation`] generates synthetic benchmark data and scores fits.
//! * [`cli`] wires everything into the `structpen` command-line tool.

pub mod cd;
pub mod cli;
pub mod data;
pub mod epsgo;
pub mod error;
pub mod estimator;
pub mod io;
pub mod ipf;
pub mod linalg;
pub mod rng;
pub mod selection;
pub mod simulation;
pub mod spg;
pub mod tree;

pub use data::{assemble_dataset, standardize, Dataset, FitResult, Standardization};
pub use error::{Error, Result};
pub use ipf::{Method, PenaltyConfig};
