//! Daytime hypoglycemia prediction from continuous glucose monitoring traces.
//!
//! The pipeline turns 5-minute CGM series plus meal markers into two-feature
//! decision instances (current glucose and rate of decrease since the
//! post-meal peak), trains a cost-sensitive classification tree pruned to a
//! fixed depth, and evaluates it with repeated k-fold cross-validation,
//! per-patient testing, missed-event severity analysis and a one-way ANOVA
//! across patient groups.
//!
//! Module map:
//!
//! * [`cgm`] parses and validates CGM record files.
//! * [`features`] builds [`features::DecisionInstance`]s over the post-meal decision grid.
//! * [`cart`] grows, prunes, serializes and applies the classification tree.
//! * [`evaluation`] runs the evaluation protocol.
//! * [`synth`] generates seeded synthetic cohorts.
//! * [`report`] renders evaluation results as CSV tables and a JSON summary.

pub mod cart;
pub mod cgm;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod features;
pub mod report;
pub mod synth;

pub use cart::{Class, CostMatrix, Feature, TreeNode};
pub use cgm::{DmType, GlucoseSample, GlucoseUnit, PatientSeries};
pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use exec::Execution;
pub use features::DecisionInstance;
