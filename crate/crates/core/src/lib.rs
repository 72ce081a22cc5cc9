//! Instance-level explanations for random forest classifiers: per-feature
//! contributions from local increments, partial dependence curves and
//! locally faithful rule sets.

pub mod contribution;
pub mod data;
pub mod forest;
pub mod report;
pub mod rules;
pub mod sensitivity;
