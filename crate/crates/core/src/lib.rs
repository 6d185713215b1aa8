//! Probabilistic position-bias modeling for recommendation feeds.
//!
//! Scroll depth is modeled as a discrete power-law random variable; the
//! survival function of that distribution gives closed-form view
//! probabilities per rank. The crate provides:
//!
//! - [`distributions`]: the scroll-depth distribution, its special
//!   functions, and an exact sampler;
//! - [`models`]: the position-bias model families (fixed DCG discount,
//!   parametric log/exp/survival forms, contextual variants, empirical
//!   baseline);
//! - [`estimation`]: NLL@K fitting with analytic gradients and a
//!   deterministic full-batch optimizer;
//! - [`simulator`]: synthetic interventional session logs with a
//!   ground-truth contextual scroll-budget model;
//! - [`evaluation`]: IPS-based unbiased offline reward estimation and the
//!   offline-online correlation study;
//! - [`io`]: byte-reproducible file formats (JSONL datasets, model JSON,
//!   ground-truth sidecars).

pub mod distributions;
pub mod error;
pub mod estimation;
pub mod evaluation;
pub mod io;
pub mod models;
pub mod simulator;

pub use error::{Error, Result};
pub use models::{ContextVector, PositionBiasModel};
pub use simulator::{ImpressionRecord, SimConfig};
