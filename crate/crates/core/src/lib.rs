//! One-shot distributed linear regression.
//!
//! Each site holds `(X_m, y_m)` privately and sends a single summary to the
//! central site (site 1). The central site combines the local maximum
//! likelihood estimates by treating the remote Gram matrices `S_m = X_mᵀX_m`
//! as missing data and running EM over them ([`cedar`]). Remote sites can
//! additionally release tempered posterior draws ([`posterior`]) which sharpen
//! the imputation while remaining differentially private ([`privacy`]).
//!
//! The crate also carries the usual comparison estimators ([`baselines`]),
//! Wald inference ([`inference`]), a versioned site/central wire protocol with
//! round accounting ([`protocol`]) and a seeded simulation harness
//! ([`harness`]).

pub mod baselines;
pub mod cedar;
pub mod drivers;
pub mod error;
pub mod harness;
pub mod inference;
pub mod linalg;
pub mod model;
pub mod posterior;
pub mod privacy;
pub mod protocol;
pub mod seed;

pub use error::{Error, Result};
