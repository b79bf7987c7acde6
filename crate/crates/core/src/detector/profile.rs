use serde::{Deserialize, Serialize};

use crate::autoencoder::AutoencoderModel;
use crate::error::Result;
use crate::telemetry::{Label, TelemetryRecord};

use super::threshold::percentile;

/// One scored record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRecord {
    pub timestamp: i64,
    pub label: Label,
    pub error: f64,
}

/// Summary statistics of an error list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub count: usize,
    pub mean: f64,
    /// Root mean square of the per-record errors.
    pub rms: f64,
    pub p50: f64,
    pub p90: f64,
    pub p95: f64,
    pub p99: f64,
    pub max: f64,
}

impl ErrorSummary {
    pub fn of(errors: &[f64]) -> Option<Self> {
        if errors.is_empty() {
            return None;
        }
        let n = errors.len() as f64;
        let pct = |p| percentile(errors, p).expect("non-empty list, valid percentile");
        Some(ErrorSummary {
            count: errors.len(),
            mean: errors.iter().sum::<f64>() / n,
            rms: (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
            p50: pct(50),
            p90: pct(90),
            p95: pct(95),
            p99: pct(99),
            max: errors.iter().copied().fold(0.0, f64::max),
        })
    }
}

/// Reconstruction errors of one record set under one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorProfile {
    pub node_id: String,
    pub source: String,
    pub records: Vec<ScoredRecord>,
}

impl ErrorProfile {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn errors(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.error).collect()
    }

    pub fn summary(&self) -> Option<ErrorSummary> {
        ErrorSummary::of(&self.errors())
    }

    pub fn mean(&self) -> f64 {
        self.records.iter().map(|r| r.error).sum::<f64>() / self.len() as f64
    }

    pub fn rms(&self) -> f64 {
        (self.records.iter().map(|r| r.error * r.error).sum::<f64>() / self.len() as f64).sqrt()
    }

    /// Records matching a predicate, as a new profile.
    pub fn filter(&self, source: &str, keep: impl Fn(&ScoredRecord) -> bool) -> ErrorProfile {
        ErrorProfile {
            node_id: self.node_id.clone(),
            source: source.to_owned(),
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }

    /// Concatenation of two profiles of the same node.
    pub fn union(&self, other: &ErrorProfile, source: &str) -> ErrorProfile {
        ErrorProfile {
            node_id: self.node_id.clone(),
            source: source.to_owned(),
            records: self.records.iter().chain(&other.records).cloned().collect(),
        }
    }
}

/// Scores normalized records with a model, preserving order.
pub fn profile_errors(
    model: &AutoencoderModel,
    records: &[TelemetryRecord],
    source: &str,
) -> Result<ErrorProfile> {
    let errors = model.score_records(records)?;
    Ok(ErrorProfile {
        node_id: model.node_id.clone(),
        source: source.to_owned(),
        records: records
            .iter()
            .zip(errors)
            .map(|(r, error)| ScoredRecord {
                timestamp: r.timestamp,
                label: r.label,
                error,
            })
            .collect(),
    })
}
