//! Predictive state reconstruction for spatio-temporal scalar fields via
//! light-cone decomposition.
//!
//! A gridded field is decomposed into past/future light-cone pairs, which are
//! clustered into predictive states ([`states`]), used for pointwise
//! forecasting and likelihood scoring ([`predict`]), and compared against
//! reference predictors ([`baselines`]) under leave-one-out protocols
//! ([`eval`]). Synthetic fields with known structure live in [`synth`], and
//! numerical checks of the estimator's perturbation bounds in [`bounds`].

pub mod baselines;
pub mod bounds;
pub mod cluster;
pub mod error;
pub mod eval;
pub mod field;
pub mod kde;
pub mod matrix;
pub mod model_file;
pub mod predict;
pub mod rng;
pub mod states;
pub mod synth;

pub use error::{Error, Result};
