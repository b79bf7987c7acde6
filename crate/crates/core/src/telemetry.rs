//! Domain types shared by the whole pipeline: feature vectors, labeled
//! telemetry records and the per-node three-way dataset.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Feature width of the production telemetry set.
pub const DEFAULT_FEATURES: usize = 166;

/// Ordered feature values for one aggregation interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Self {
        FeatureVector(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for FeatureVector {
    fn from(values: Vec<f64>) -> Self {
        FeatureVector(values)
    }
}

/// Ground-truth label. Only used to assemble splits and to score decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    #[serde(rename = "powersave")]
    AnomalyPowersave,
    #[serde(rename = "performance")]
    AnomalyPerformance,
    Unlabeled,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::AnomalyPowersave => "powersave",
            Label::AnomalyPerformance => "performance",
            Label::Unlabeled => "unlabeled",
        }
    }

    pub fn is_anomaly(self) -> bool {
        matches!(self, Label::AnomalyPowersave | Label::AnomalyPerformance)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "normal" => Ok(Label::Normal),
            "powersave" => Ok(Label::AnomalyPowersave),
            "performance" => Ok(Label::AnomalyPerformance),
            "unlabeled" => Ok(Label::Unlabeled),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

/// Record identity: one node, one aggregation interval.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RecordId {
    pub node_id: String,
    pub timestamp: i64,
}

impl fmt::Display for RecordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.node_id, self.timestamp)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryRecord {
    pub node_id: String,
    /// Seconds since the Unix epoch, start of the aggregation interval.
    pub timestamp: i64,
    pub features: FeatureVector,
    pub label: Label,
    pub idle: bool,
}

impl TelemetryRecord {
    pub fn id(&self) -> RecordId {
        RecordId {
            node_id: self.node_id.clone(),
            timestamp: self.timestamp,
        }
    }
}

/// The three disjoint sets a node model is trained and tested on.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeDataset {
    pub node_id: String,
    pub train: Vec<TelemetryRecord>,
    pub test_normal: Vec<TelemetryRecord>,
    pub test_anomaly: Vec<TelemetryRecord>,
    pub feature_names: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    TestNormal,
    TestAnomaly,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::TestNormal => "test_normal",
            Split::TestAnomaly => "test_anomaly",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Rule {
    /// Record label is not allowed in this split.
    Label {
        split: Split,
        label: Label,
    },
    Idle {
        split: Split,
    },
    ForeignNode {
        split: Split,
    },
    Width {
        split: Split,
        expected: usize,
        found: usize,
    },
    /// Record appears in both train and test_normal.
    Shared,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rule::Label { split, label } => {
                write!(f, "label {label} not allowed in {}", split.as_str())
            }
            Rule::Idle { split } => write!(f, "idle record in {}", split.as_str()),
            Rule::ForeignNode { split } => {
                write!(f, "record of another node in {}", split.as_str())
            }
            Rule::Width {
                split,
                expected,
                found,
            } => write!(
                f,
                "{found} features in {} (dataset declares {expected})",
                split.as_str()
            ),
            Rule::Shared => f.write_str("record present in both train and test_normal"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub record: RecordId,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.record, self.rule)
    }
}

impl NodeDataset {
    pub fn feature_count(&self) -> usize {
        self.feature_names.len()
    }

    /// Checks every dataset invariant. An empty list means the dataset is
    /// well formed.
    pub fn validate(&self) -> Vec<Violation> {
        let width = self.feature_count();
        let mut out = Vec::new();
        let splits = [
            (Split::Train, &self.train),
            (Split::TestNormal, &self.test_normal),
            (Split::TestAnomaly, &self.test_anomaly),
        ];
        for (split, records) in splits {
            for r in records.iter() {
                let label_ok = match split {
                    Split::Train | Split::TestNormal => r.label == Label::Normal,
                    Split::TestAnomaly => r.label.is_anomaly(),
                };
                if !label_ok {
                    out.push(Violation {
                        record: r.id(),
                        rule: Rule::Label {
                            split,
                            label: r.label,
                        },
                    });
                }
                if r.idle {
                    out.push(Violation {
                        record: r.id(),
                        rule: Rule::Idle { split },
                    });
                }
                if r.node_id != self.node_id {
                    out.push(Violation {
                        record: r.id(),
                        rule: Rule::ForeignNode { split },
                    });
                }
                if r.features.len() != width {
                    out.push(Violation {
                        record: r.id(),
                        rule: Rule::Width {
                            split,
                            expected: width,
                            found: r.features.len(),
                        },
                    });
                }
            }
        }

        let train_ids: HashSet<RecordId> = self.train.iter().map(TelemetryRecord::id).collect();
        for r in &self.test_normal {
            let id = r.id();
            if train_ids.contains(&id) {
                out.push(Violation {
                    record: id,
                    rule: Rule::Shared,
                });
            }
        }
        out
    }
}

/// Free-function form of [`NodeDataset::validate`].
pub fn validate_dataset(ds: &NodeDataset) -> Vec<Violation> {
    ds.validate()
}
