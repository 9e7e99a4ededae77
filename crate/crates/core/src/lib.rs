//! Censoring-aware tree-based learning of multi-stage dynamic treatment
//! regimes from right-censored survival trajectories.
//!
//! The crate is organised bottom-up:
//!
//! * [`data`]: trajectories, histories, validation and CSV ingestion.
//! * [`simgen`]: the semi-synthetic two-stage generator and its oracle.
//! * [`nuisance`]: propensity, censoring-survival and conditional-mean models.
//! * [`caipw`]: censoring-adjusted AIPW estimates and pseudo-outcomes.
//! * [`policy_tree`]: purity-maximising treatment-assignment trees.
//! * [`dtr`]: backward-induction fitting, persistence and grid search.
//! * [`eval`]: policy evaluation, baselines and the fold benchmark.

pub mod caipw;
pub mod data;
pub mod dtr;
pub mod error;
pub mod eval;
pub mod nuisance;
pub mod policy_tree;
pub mod rng;
pub mod simgen;
pub mod stats;

pub use error::{Error, Result};

pub const LIBRARY_VERSION: &str = env!("CARGO_PKG_VERSION");
