//! Survival analysis and facial-biomarker evaluation engine.
//!
//! The crate is organised by analysis stage:
//!
//! - [`cohort`]: subject records, CSV ingestion, validation.
//! - [`survival`]: Kaplan-Meier, reverse Kaplan-Meier follow-up, log-rank, early mortality.
//! - [`cox`]: Cox proportional hazards (Efron/Breslow), screening, adjusted fits, AIC.
//! - [`metrics`]: Harrell's C, time-dependent AUC, age accuracy, rank tests, correlation.
//! - [`biomarkers`]: age deviation, min-max scaling, stratification, embedding similarity.
//! - [`trainer`]: ranking-loss risk head, MAE age head, age-balancing resamplers.
//! - [`synth`]: synthetic cohorts with known ground truth.
//! - [`attention`]: attention-grid upsampling, mesh subdivision, per-triangle scores, OBJ export.

// `!(x > 0.0)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod biomarkers;
pub mod cohort;
pub mod cox;
pub mod error;
pub mod metrics;
pub mod stats;
pub mod survival;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
