//! Reconstruction errors to decisions: error profiles, percentile
//! thresholds, the percentile search, confusion metrics and fleet reports.

pub mod metrics;
pub mod profile;
pub mod report;
pub mod threshold;

pub use metrics::{f_score, normalized_errors, Confusion, NormalizedErrors};
pub use profile::{profile_errors, ErrorProfile, ErrorSummary, ScoredRecord};
pub use report::{
    assemble, evaluate, evaluate_node, histogram, DetectionReport, EvalConfig, NodeEvaluation,
    NodeReport, Protocol,
};
pub use threshold::{classify, percentile, search_percentile, Decision, SearchOutcome, Threshold};
