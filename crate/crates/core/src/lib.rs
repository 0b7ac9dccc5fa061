//! Update audits for pairs of classifier versions.
//!
//! Given two versions `A` and `B` of a classifier, this crate computes
//! occlusion attributions for both in standardized feature space, differences
//! them into delta attributions, scores the delta with a quality suite
//! (magnitude, concentration, rank agreement, distributional shift,
//! behavioural coupling, robustness) and classifies the update for CI use.
//!
//! Modules map onto the audit stages:
//!
//! * [`data`]: datasets, stratified splits, standardization, embedded fixtures.
//! * [`learners`]: small built-in classifiers used to build A/B pairs.
//! * [`model`]: the scoring contract shared by built-in and external models.
//! * [`explainer`]: baselines, occlusion attributions, grouped occlusion.
//! * [`suite`]: the delta metrics.
//! * [`pipeline`]: end-to-end audits, batches, verdicts and report files.
//! * [`protocol`]: line-delimited JSON bridge to externally hosted models.

pub mod data;
pub mod error;
pub mod explainer;
pub mod learners;
pub mod model;
pub mod numeric;
pub mod pipeline;
pub mod protocol;
pub mod suite;

pub use error::{Error, Result};
