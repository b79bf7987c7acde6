use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::profile::ErrorProfile;

/// Binary confusion matrix with the anomaly class as positive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    /// Builds the matrix from `(actual_anomaly, predicted_anomaly)` pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = Confusion::default();
        for pair in pairs {
            match pair {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&self, other: &Confusion) -> Confusion {
        Confusion {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            tn: self.tn + other.tn,
            fn_: self.fn_ + other.fn_,
        }
    }

    /// F-score of the anomaly class; `None` when the class is absent from
    /// both truth and predictions.
    pub fn f_anomaly(&self) -> Option<f64> {
        f_score(self.tp, self.fp, self.fn_)
    }

    /// F-score of the normal class, counting normal as the positive side.
    pub fn f_normal(&self) -> Option<f64> {
        f_score(self.tn, self.fn_, self.fp)
    }
}

/// Harmonic mean of precision and recall for one class. Returns `None` when
/// `tp + fp + fn == 0` and `0.0` when precision and recall are both zero.
pub fn f_score(tp: usize, fp: usize, fn_: usize) -> Option<f64> {
    if tp + fp + fn_ == 0 {
        return None;
    }
    if tp == 0 {
        return Some(0.0);
    }
    let tp = tp as f64;
    let precision = tp / (tp + fp as f64);
    let recall = tp / (tp + fn_ as f64);
    Some(2.0 * precision * recall / (precision + recall))
}

/// Error statistics of a record set relative to the training set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedErrors {
    pub mae: f64,
    pub rmse: f64,
}

/// MAE and RMSE of `other` divided by those of `train`. Both statistics are
/// taken over per-record reconstruction errors.
pub fn normalized_errors(train: &ErrorProfile, other: &ErrorProfile) -> Result<NormalizedErrors> {
    if train.is_empty() {
        return Err(Error::Empty("training error profile"));
    }
    if other.is_empty() {
        return Err(Error::Empty("error profile to normalize"));
    }
    let (train_mae, train_rms) = (train.mean(), train.rms());
    if !(train_mae > 0.0) || !train_mae.is_finite() {
        return Err(Error::DegenerateModel);
    }
    Ok(NormalizedErrors {
        mae: other.mean() / train_mae,
        rmse: other.rms() / train_rms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::profile::ScoredRecord;
    use crate::telemetry::Label;

    fn profile(errors: &[f64]) -> ErrorProfile {
        ErrorProfile {
            node_id: "n".into(),
            source: "s".into(),
            records: errors
                .iter()
                .enumerate()
                .map(|(i, &error)| ScoredRecord {
                    timestamp: i as i64,
                    label: Label::Normal,
                    error,
                })
                .collect(),
        }
    }

    #[test]
    fn arithmetic_example() {
        let f = f_score(9, 1, 1).unwrap();
        assert!((f - 0.9).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_empty() {
        assert_eq!(f_score(5, 0, 0), Some(1.0));
        assert_eq!(f_score(0, 3, 2), Some(0.0));
        assert_eq!(f_score(0, 0, 0), None);
    }

    #[test]
    fn confusion_counts() {
        let c = Confusion::from_pairs([
            (true, true),
            (true, false),
            (false, false),
            (false, true),
            (false, false),
        ]);
        assert_eq!(
            c,
            Confusion {
                tp: 1,
                fp: 1,
                tn: 2,
                fn_: 1
            }
        );
        assert_eq!(c.total(), 5);
        assert_eq!(c.f_anomaly(), Some(0.5));
        assert!((c.f_normal().unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn all_normal_correct() {
        let c = Confusion::from_pairs((0..7).map(|_| (false, false)));
        assert_eq!(c.tn, 7);
        assert_eq!(c.f_normal(), Some(1.0));
        assert_eq!(c.f_anomaly(), None);
    }

    #[test]
    fn serializes_fn_field() {
        let json = serde_json::to_string(&Confusion::default()).unwrap();
        assert_eq!(json, r#"{"tp":0,"fp":0,"tn":0,"fn":0}"#);
    }

    #[test]
    fn self_normalization_is_one() {
        let p = profile(&[0.013, 0.2, 0.0071, 0.5]);
        let n = normalized_errors(&p, &p).unwrap();
        assert_eq!(n.mae, 1.0);
        assert_eq!(n.rmse, 1.0);
    }

    #[test]
    fn ratio_example() {
        let train = profile(&[1.0, 3.0]);
        let other = profile(&[4.0, 4.0]);
        let n = normalized_errors(&train, &other).unwrap();
        assert_eq!(n.mae, 2.0);
        assert!((n.rmse - 4.0 / 5.0f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zero_training_error_is_degenerate() {
        let train = profile(&[0.0, 0.0]);
        assert!(matches!(
            normalized_errors(&train, &profile(&[1.0])),
            Err(Error::DegenerateModel)
        ));
        assert!(normalized_errors(&profile(&[]), &profile(&[1.0])).is_err());
        assert!(normalized_errors(&profile(&[1.0]), &profile(&[])).is_err());
    }
}
