//! Invariant subspace decomposition for time-varying linear models.
//!
//! Historical data with drifting coefficients is split into an invariant
//! subspace, whose coefficient is estimated once, and a residual subspace,
//! whose coefficient is re-estimated on a short adaptation window.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ajd;
pub mod dataset;
pub mod decomposition;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod jbd;
pub mod linalg;
pub mod metrics;
pub mod moments;
pub mod pipeline;
pub mod simulate;

pub use dataset::{load_csv, make_windows, TimeSeries, WindowPlan, WindowScheme};
pub use decomposition::{CvOptions, InvarianceScores, SubspaceSplit};
pub use error::{IsdError, Result};
pub use estimators::{AdaptationFit, InterceptMode, InterceptPolicy, IsdModel};
pub use jbd::BlockDecomposition;
pub use pipeline::{fit_isd, IsdConfig, IsdFit, LambdaChoice};
