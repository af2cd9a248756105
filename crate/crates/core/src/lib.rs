//! Chi-bar-squared mixture weights for likelihood ratio tests with some
//! parameters on the boundary, and a Monte Carlo check of the resulting
//! null distributions.
//!
//! The null cone of the whitened problem is built by [`Cone`]; its
//! intrinsic volumes give the point-null weights, and [`weights`] offers the
//! orthogonal closed forms, the one-nuisance approximation and rank-based
//! weights for general nuisance sets. [`sim`] draws the limiting statistic.

pub mod cone;
pub mod cov;
pub mod error;
pub mod numkit;
pub mod orthant;
pub mod seed;
pub mod sim;
pub mod suites;
pub mod weights;

pub use cone::{AngleConvention, Cone, FaceId, FaceMass, Projection};
pub use cov::{gen_covariance, CovGenSpec, CovKind, CovSpec};
pub use error::{ChibarError, Result};
pub use numkit::{Matrix, SymMatrix};
pub use orthant::{OrthantEstimate, OrthantMethod, QmcBudget};
pub use sim::{DiagnosticsReport, EcdfPoint, ExperimentConfig};
pub use suites::{CellResult, CellSpec, MethodSpec, Suite, SuiteOptions, WeightEngine};
pub use weights::{MixtureDist, PartitionSpec, WeightMethod, WeightVector};
