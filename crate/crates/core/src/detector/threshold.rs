use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::metrics::Confusion;

/// Nearest-rank percentile: the smallest value whose rank is at least
/// `n`% of the sample size.
pub fn percentile(errors: &[f64], n: u32) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::Empty("percentile of an empty list"));
    }
    if !(1..=99).contains(&n) {
        return Err(Error::PercentileRange(n));
    }
    let len = errors.len();
    // ceil(n·N / 100), 1-based
    let rank = (n as usize * len).div_ceil(100);
    let mut scratch = errors.to_vec();
    let (_, value, _) = scratch.select_nth_unstable_by(rank - 1, f64::total_cmp);
    Ok(*value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub theta: f64,
    pub percentile_n: u32,
    /// Size of the error list the percentile was taken over.
    pub calibrated_on: usize,
}

impl Threshold {
    pub fn from_errors(errors: &[f64], n: u32) -> Result<Self> {
        Ok(Threshold {
            theta: percentile(errors, n)?,
            percentile_n: n,
            calibrated_on: errors.len(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Normal,
    Anomaly,
}

/// A record is anomalous when its error is strictly above the threshold.
pub fn classify(error: f64, th: &Threshold) -> Decision {
    if error > th.theta {
        Decision::Anomaly
    } else {
        Decision::Normal
    }
}

/// Candidate evaluated during the percentile search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub threshold: Threshold,
    pub f_normal: f64,
    pub f_anomaly: f64,
    pub macro_f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: CandidateScore,
    pub candidates: Vec<CandidateScore>,
}

/// Generate-and-test search for the percentile `n`.
///
/// Each candidate's threshold comes from `reference` (healthy errors); the
/// labeled `calibration` set is classified with it and scored by the
/// macro-average of the normal and anomaly F-scores. Ties go to the larger
/// `n`.
pub fn search_percentile(
    reference: &[f64],
    calibration: &[(f64, bool)],
    candidates: &[u32],
) -> Result<SearchOutcome> {
    if candidates.is_empty() {
        return Err(Error::Empty("percentile candidate list"));
    }
    if !calibration.iter().any(|&(_, a)| a) {
        return Err(Error::MissingClass("anomaly"));
    }
    if !calibration.iter().any(|&(_, a)| !a) {
        return Err(Error::MissingClass("normal"));
    }
    let mut ns = candidates.to_vec();
    ns.sort_unstable();
    ns.dedup();

    let mut scored = Vec::with_capacity(ns.len());
    for n in ns {
        let threshold = Threshold::from_errors(reference, n)?;
        let confusion = Confusion::from_pairs(
            calibration
                .iter()
                .map(|&(e, actual)| (actual, classify(e, &threshold) == Decision::Anomaly)),
        );
        let f_normal = confusion.f_normal().expect("normal class present");
        let f_anomaly = confusion.f_anomaly().expect("anomaly class present");
        scored.push(CandidateScore {
            threshold,
            f_normal,
            f_anomaly,
            macro_f: 0.5 * (f_normal + f_anomaly),
        });
    }
    let best = scored
        .iter()
        .fold(None::<&CandidateScore>, |best, c| match best {
            Some(b) if b.macro_f > c.macro_f => Some(b),
            _ => Some(c),
        })
        .expect("at least one candidate")
        .clone();
    Ok(SearchOutcome {
        best,
        candidates: scored,
    })
}
