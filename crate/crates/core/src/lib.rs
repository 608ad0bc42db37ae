//! External control arms for master-protocol trials.
//!
//! The crate is organised along the analysis roadmap:
//!
//! * [`estimand`] – the research question (five estimand attributes) and the
//!   temporal taxonomy of comparator arms.
//! * [`data`] – the observed-data model `O = (C, A, Δ, ΔY)`, datasets with
//!   source provenance, CSV ingestion and export.
//! * [`fitness`] – fit-for-use scoring of candidate external sources.
//! * [`controls`] – historical selection, synthetic weighting, hybrid
//!   augmentation (test-and-pool, power prior, two-stage matching) and
//!   virtual controls.
//! * [`estimators`] – propensity and outcome models, G-computation, IPW,
//!   TMLE, the exact single-arm binomial test and bootstrap intervals.
//! * [`sensitivity`] – causal-gap sweeps and E-values.
//! * [`simulate`] – a structural causal model generator with sealed
//!   counterfactual truth, plus the deterministic replicate runner.

pub mod controls;
pub mod data;
pub mod estimand;
pub mod estimators;
pub mod fitness;
pub mod rng;
pub mod sensitivity;
pub mod simulate;

mod error;

pub use error::{Error, Result};
