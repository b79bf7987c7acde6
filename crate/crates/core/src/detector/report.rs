use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autoencoder::AutoencoderModel;
use crate::error::{Error, Result};
use crate::seed;
use crate::telemetry::{Label, NodeDataset};

use super::metrics::{normalized_errors, Confusion, NormalizedErrors};
use super::profile::{profile_errors, ErrorProfile, ErrorSummary, ScoredRecord};
use super::threshold::{classify, search_percentile, CandidateScore, Decision, Threshold};

pub const PERCENTILE_DEFINITION: &str =
    "nearest rank: ascending sort, element at 1-based index ceil(n/100 * N)";
pub const RMSE_DEFINITION: &str = "root mean square of per-record reconstruction errors";

/// Where thresholds and the percentile search draw their data from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// Thresholds from training errors; `n` chosen on a seeded calibration
    /// slice of the test sets; metrics on the remaining records.
    HeldOut,
    /// Thresholds from training plus normal test errors; `n` chosen and
    /// metrics computed on the full test sets.
    Paper,
}

impl Protocol {
    pub fn threshold_source(self) -> &'static str {
        match self {
            Protocol::HeldOut => {
                "training errors only; percentile chosen on a held-out calibration slice \
                 (deviation from thresholds over training plus normal test errors)"
            }
            Protocol::Paper => {
                "training plus normal test errors; percentile chosen on the full test sets"
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub candidates: Vec<u32>,
    pub protocol: Protocol,
    pub calibration_fraction: f64,
    pub seed: u64,
    pub histogram_bins: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            candidates: (90..=99).collect(),
            protocol: Protocol::HeldOut,
            calibration_fraction: 0.2,
            seed: 42,
            histogram_bins: 50,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::InvalidConfig(
                "percentile candidate list is empty".into(),
            ));
        }
        if let Some(&n) = self.candidates.iter().find(|n| !(1..=99).contains(*n)) {
            return Err(Error::PercentileRange(n));
        }
        if !(self.calibration_fraction > 0.0 && self.calibration_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "calibration fraction must be in (0, 1), got {}",
                self.calibration_fraction
            )));
        }
        if self.histogram_bins == 0 {
            return Err(Error::InvalidConfig(
                "histogram needs at least one bin".into(),
            ));
        }
        Ok(())
    }

    fn max_candidate(&self) -> u32 {
        self.candidates
            .iter()
            .copied()
            .max()
            .expect("validated non-empty")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordCounts {
    pub train: usize,
    pub test_normal: usize,
    pub test_anomaly: usize,
    pub calibration_normal: usize,
    pub calibration_anomaly: usize,
    pub eval_normal: usize,
    pub eval_anomaly: usize,
}

/// Normalized errors per record set. `None` where the set is empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorTable {
    pub train: Option<NormalizedErrors>,
    pub test_normal: Option<NormalizedErrors>,
    pub test_anomaly: Option<NormalizedErrors>,
    pub powersave: Option<NormalizedErrors>,
    pub performance: Option<NormalizedErrors>,
}

impl ErrorTable {
    const COLUMNS: [&'static str; 5] = [
        "train",
        "test_normal",
        "test_anomaly",
        "powersave",
        "performance",
    ];

    fn cells(&self) -> [Option<NormalizedErrors>; 5] {
        [
            self.train,
            self.test_normal,
            self.test_anomaly,
            self.powersave,
            self.performance,
        ]
    }
}

/// F-scores of one candidate percentile on the evaluation slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCandidate {
    pub percentile_n: u32,
    pub theta: f64,
    pub f_normal: Option<f64>,
    pub f_anomaly: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    pub node_id: String,
    pub records: RecordCounts,
    pub threshold: Threshold,
    /// Scores of every candidate on the calibration data; `None` when the
    /// search could not run.
    pub search: Option<Vec<CandidateScore>>,
    pub confusion: Confusion,
    pub f_normal: Option<f64>,
    pub f_anomaly: Option<f64>,
    pub eval_candidates: Vec<EvalCandidate>,
    pub normalized: ErrorTable,
    pub train_errors: ErrorSummary,
    pub warnings: Vec<String>,
}

/// A node's report plus the raw error profiles behind it.
#[derive(Debug, Clone)]
pub struct NodeEvaluation {
    pub report: NodeReport,
    pub train: ErrorProfile,
    pub test_normal: ErrorProfile,
    pub test_anomaly: ErrorProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub tool_version: String,
    pub config_hash: Option<String>,
    pub seeds: BTreeMap<String, u64>,
    pub protocol: Protocol,
    pub paper_protocol: bool,
    pub candidates: Vec<u32>,
    pub calibration_fraction: f64,
    pub percentile_definition: String,
    pub rmse_definition: String,
    pub threshold_source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub node_count: usize,
    pub f_normal: Option<f64>,
    pub f_anomaly: Option<f64>,
    pub percentile_n: Option<f64>,
    pub normalized: ErrorTable,
    /// Confusion counts summed over nodes.
    pub confusion: Confusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub metadata: ReportMetadata,
    pub nodes: Vec<NodeReport>,
    pub averages: Averages,
    pub warnings: Vec<String>,
}

/// Seeded choice of `round(fraction * n)` calibration records, keeping at
/// least one record on each side when `n >= 2`.
pub fn calibration_mask(n: usize, fraction: f64, seed: u64) -> Vec<bool> {
    let mut k = (fraction * n as f64).round() as usize;
    if n >= 2 {
        k = k.clamp(1, n - 1);
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut mask = vec![false; n];
    for &i in &idx[..k.min(n)] {
        mask[i] = true;
    }
    mask
}

fn partition(records: &[ScoredRecord], mask: &[bool]) -> (Vec<ScoredRecord>, Vec<ScoredRecord>) {
    let mut calib = Vec::new();
    let mut rest = Vec::new();
    for (r, &m) in records.iter().zip(mask) {
        if m {
            calib.push(r.clone())
        } else {
            rest.push(r.clone())
        }
    }
    (calib, rest)
}

fn labeled(normal: &[ScoredRecord], anomaly: &[ScoredRecord]) -> Vec<(f64, bool)> {
    normal
        .iter()
        .map(|r| (r.error, false))
        .chain(anomaly.iter().map(|r| (r.error, true)))
        .collect()
}

fn confusion_at(th: &Threshold, set: &[(f64, bool)]) -> Confusion {
    Confusion::from_pairs(
        set.iter()
            .map(|&(e, a)| (a, classify(e, th) == Decision::Anomaly)),
    )
}

fn optional_ratio(train: &ErrorProfile, other: &ErrorProfile) -> Result<Option<NormalizedErrors>> {
    if other.is_empty() {
        Ok(None)
    } else {
        normalized_errors(train, other).map(Some)
    }
}

/// Scores one node and computes its threshold, decisions and error ratios.
/// The dataset must already be normalized with the model's parameters.
pub fn evaluate_node(
    model: &AutoencoderModel,
    dataset: &NodeDataset,
    cfg: &EvalConfig,
) -> Result<NodeEvaluation> {
    cfg.validate()?;
    if model.node_id != dataset.node_id {
        return Err(Error::InvalidInput(format!(
            "model for node {} applied to node {}",
            model.node_id, dataset.node_id
        )));
    }
    let train = profile_errors(model, &dataset.train, "train")?;
    let test_normal = profile_errors(model, &dataset.test_normal, "test_normal")?;
    let test_anomaly = profile_errors(model, &dataset.test_anomaly, "test_anomaly")?;
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }

    let (reference, calib_n, eval_n, calib_a, eval_a) = match cfg.protocol {
        Protocol::HeldOut => {
            let node_seed = |tag: &str| {
                seed::derive(cfg.seed, &format!("calibration/{}/{tag}", dataset.node_id))
            };
            let mask_n = calibration_mask(
                test_normal.len(),
                cfg.calibration_fraction,
                node_seed("normal"),
            );
            let mask_a = calibration_mask(
                test_anomaly.len(),
                cfg.calibration_fraction,
                node_seed("anomaly"),
            );
            let (cn, en) = partition(&test_normal.records, &mask_n);
            let (ca, ea) = partition(&test_anomaly.records, &mask_a);
            (train.errors(), cn, en, ca, ea)
        }
        Protocol::Paper => (
            train.union(&test_normal, "train+test_normal").errors(),
            test_normal.records.clone(),
            test_normal.records.clone(),
            test_anomaly.records.clone(),
            test_anomaly.records.clone(),
        ),
    };

    let mut warnings = Vec::new();
    let calibration = labeled(&calib_n, &calib_a);
    let (threshold, search) = match search_percentile(&reference, &calibration, &cfg.candidates) {
        Ok(outcome) => (outcome.best.threshold, Some(outcome.candidates)),
        Err(Error::MissingClass(class)) => {
            let n = cfg.max_candidate();
            warnings.push(format!(
                "node {}: calibration data has no {class} records; threshold fixed at percentile {n}",
                dataset.node_id
            ));
            (Threshold::from_errors(&reference, n)?, None)
        }
        Err(e) => return Err(e),
    };

    let evaluation = labeled(&eval_n, &eval_a);
    let confusion = confusion_at(&threshold, &evaluation);
    if eval_a.is_empty() {
        warnings.push(format!(
            "node {}: no anomalous records to evaluate; only normal-class metrics reported",
            dataset.node_id
        ));
    }
    let mut ns = cfg.candidates.clone();
    ns.sort_unstable();
    ns.dedup();
    let eval_candidates = ns
        .into_iter()
        .map(|n| {
            let th = Threshold::from_errors(&reference, n)?;
            let c = confusion_at(&th, &evaluation);
            Ok(EvalCandidate {
                percentile_n: n,
                theta: th.theta,
                f_normal: c.f_normal(),
                f_anomaly: c.f_anomaly(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let by_label = |label: Label, name: &str| test_anomaly.filter(name, |r| r.label == label);
    let normalized = ErrorTable {
        train: Some(normalized_errors(&train, &train)?),
        test_normal: optional_ratio(&train, &test_normal)?,
        test_anomaly: optional_ratio(&train, &test_anomaly)?,
        powersave: optional_ratio(&train, &by_label(Label::AnomalyPowersave, "powersave"))?,
        performance: optional_ratio(&train, &by_label(Label::AnomalyPerformance, "performance"))?,
    };

    let report = NodeReport {
        node_id: dataset.node_id.clone(),
        records: RecordCounts {
            train: train.len(),
            test_normal: test_normal.len(),
            test_anomaly: test_anomaly.len(),
            calibration_normal: calib_n.len(),
            calibration_anomaly: calib_a.len(),
            eval_normal: eval_n.len(),
            eval_anomaly: eval_a.len(),
        },
        threshold,
        search,
        f_normal: confusion.f_normal(),
        f_anomaly: confusion.f_anomaly(),
        confusion,
        eval_candidates,
        normalized,
        train_errors: train.summary().expect("non-empty training profile"),
        warnings,
    };
    Ok(NodeEvaluation {
        report,
        train,
        test_normal,
        test_anomaly,
    })
}

fn mean(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, count) = values
        .into_iter()
        .flatten()
        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

fn mean_table(nodes: &[NodeReport]) -> ErrorTable {
    let column = |i: usize| -> Option<NormalizedErrors> {
        let cells: Vec<NormalizedErrors> = nodes
            .iter()
            .filter_map(|n| n.normalized.cells()[i])
            .collect();
        Some(NormalizedErrors {
            mae: mean(cells.iter().map(|c| Some(c.mae)))?,
            rmse: mean(cells.iter().map(|c| Some(c.rmse)))?,
        })
    };
    ErrorTable {
        train: column(0),
        test_normal: column(1),
        test_anomaly: column(2),
        powersave: column(3),
        performance: column(4),
    }
}

/// Reduces per-node reports into a fleet report. Averages are arithmetic
/// means over the nodes where a value is defined.
pub fn assemble(nodes: Vec<NodeReport>, cfg: &EvalConfig) -> DetectionReport {
    let averages = Averages {
        node_count: nodes.len(),
        f_normal: mean(nodes.iter().map(|n| n.f_normal)),
        f_anomaly: mean(nodes.iter().map(|n| n.f_anomaly)),
        percentile_n: mean(
            nodes
                .iter()
                .map(|n| Some(f64::from(n.threshold.percentile_n))),
        ),
        normalized: mean_table(&nodes),
        confusion: nodes
            .iter()
            .fold(Confusion::default(), |acc, n| acc.add(&n.confusion)),
    };
    let mut warnings: Vec<String> = nodes
        .iter()
        .flat_map(|n| n.warnings.iter().cloned())
        .collect();
    if nodes.iter().all(|n| n.records.test_anomaly == 0) {
        warnings.push("no anomalous records in any node; anomaly-class metrics omitted".into());
    }
    let metadata = ReportMetadata {
        tool_version: env!("CARGO_PKG_VERSION").to_owned(),
        config_hash: None,
        seeds: BTreeMap::from([("calibration".to_owned(), cfg.seed)]),
        protocol: cfg.protocol,
        paper_protocol: cfg.protocol == Protocol::Paper,
        candidates: cfg.candidates.clone(),
        calibration_fraction: cfg.calibration_fraction,
        percentile_definition: PERCENTILE_DEFINITION.to_owned(),
        rmse_definition: RMSE_DEFINITION.to_owned(),
        threshold_source: cfg.protocol.threshold_source().to_owned(),
    };
    DetectionReport {
        metadata,
        nodes,
        averages,
        warnings,
    }
}

/// Evaluates every dataset with the model of the same node.
pub fn evaluate(
    models: &[AutoencoderModel],
    datasets: &[NodeDataset],
    cfg: &EvalConfig,
) -> Result<(DetectionReport, Vec<NodeEvaluation>)> {
    cfg.validate()?;
    let mut evaluations = Vec::with_capacity(datasets.len());
    for ds in datasets {
        let model = models
            .iter()
            .find(|m| m.node_id == ds.node_id)
            .ok_or_else(|| Error::InvalidInput(format!("no model for node {}", ds.node_id)))?;
        evaluations.push(evaluate_node(model, ds, cfg)?);
    }
    let report = assemble(evaluations.iter().map(|e| e.report.clone()).collect(), cfg);
    Ok((report, evaluations))
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Csv(e)
}

impl DetectionReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Normalized MAE and RMSE per node and record set, plus an average row.
    pub fn write_table1<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["node".to_owned()];
        for col in ErrorTable::COLUMNS {
            header.push(format!("mae_{col}"));
            header.push(format!("rmse_{col}"));
        }
        w.write_record(&header).map_err(csv_err)?;
        let rows = self
            .nodes
            .iter()
            .map(|n| (n.node_id.as_str(), &n.normalized))
            .chain(std::iter::once(("average", &self.averages.normalized)));
        for (name, table) in rows {
            let mut row = vec![name.to_owned()];
            for c in table.cells() {
                row.push(cell(c.map(|c| c.mae)));
                row.push(cell(c.map(|c| c.rmse)));
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }

    /// Chosen percentile, threshold, per-class F-scores and confusion counts
    /// per node, plus an average row.
    pub fn write_table2<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "node",
            "percentile_n",
            "theta",
            "f_normal",
            "f_anomaly",
            "tp",
            "fp",
            "tn",
            "fn",
        ])
        .map_err(csv_err)?;
        for n in &self.nodes {
            let c = &n.confusion;
            w.write_record([
                n.node_id.clone(),
                n.threshold.percentile_n.to_string(),
                n.threshold.theta.to_string(),
                cell(n.f_normal),
                cell(n.f_anomaly),
                c.tp.to_string(),
                c.fp.to_string(),
                c.tn.to_string(),
                c.fn_.to_string(),
            ])
            .map_err(csv_err)?;
        }
        let a = &self.averages;
        let c = &a.confusion;
        w.write_record([
            "average".to_owned(),
            cell(a.percentile_n),
            String::new(),
            cell(a.f_normal),
            cell(a.f_anomaly),
            c.tp.to_string(),
            c.fp.to_string(),
            c.tn.to_string(),
            c.fn_.to_string(),
        ])
        .map_err(csv_err)?;
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_left: f64,
    pub bin_right: f64,
    pub count_normal: usize,
    pub count_anomaly: usize,
}

/// Equal-width histogram over `[0, max error]` of two error lists.
pub fn histogram(normal: &[f64], anomaly: &[f64], bins: usize) -> Vec<HistogramBin> {
    let bins = bins.max(1);
    let top = normal.iter().chain(anomaly).copied().fold(0.0, f64::max);
    let top = if top > 0.0 { top } else { 1.0 };
    let width = top / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            bin_left: i as f64 * width,
            bin_right: if i + 1 == bins {
                top
            } else {
                (i + 1) as f64 * width
            },
            count_normal: 0,
            count_anomaly: 0,
        })
        .collect();
    let index = |e: f64| ((e / width) as usize).min(bins - 1);
    for &e in normal {
        out[index(e)].count_normal += 1;
    }
    for &e in anomaly {
        out[index(e)].count_anomaly += 1;
    }
    out
}

impl NodeEvaluation {
    /// All scored records of the node in timestamp order.
    pub fn trend(&self) -> Vec<ScoredRecord> {
        let mut all: Vec<ScoredRecord> = self
            .train
            .records
            .iter()
            .chain(&self.test_normal.records)
            .chain(&self.test_anomaly.records)
            .cloned()
            .collect();
        all.sort_by_key(|r| r.timestamp);
        all
    }

    pub fn write_trend<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["timestamp", "error", "label"])
            .map_err(csv_err)?;
        for r in self.trend() {
            w.write_record([
                r.timestamp.to_string(),
                r.error.to_string(),
                r.label.as_str().to_owned(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }

    /// Histogram of healthy (training and normal test) against anomalous
    /// errors.
    pub fn histogram(&self, bins: usize) -> Vec<HistogramBin> {
        let normal: Vec<f64> = self
            .train
            .errors()
            .into_iter()
            .chain(self.test_normal.errors())
            .collect();
        histogram(&normal, &self.test_anomaly.errors(), bins)
    }

    pub fn write_histogram<W: Write>(&self, out: W, bins: usize) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for bin in self.histogram(bins) {
            w.serialize(bin).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::{Network, TrainConfig};
    use crate::dataset::NormalizationParams;
    use crate::telemetry::TelemetryRecord;

    // Identity-like network on two features: reconstruction of x is
    // (x0, 0), so the error is |x1| / 2.
    fn model() -> AutoencoderModel {
        let mut network = Network::zeros(2);
        network.encoder.weights[[0, 0]] = 1.0;
        network.decoder.weights[[0, 0]] = 1.0;
        AutoencoderModel {
            node_id: "n1".into(),
            network,
            hyper: TrainConfig::default(),
            norm: NormalizationParams {
                feature_names: vec!["a".into(), "b".into()],
                min: vec![0.0; 2],
                span: vec![1.0; 2],
                fitted_on: 100,
            },
            train_mae: 0.0,
        }
    }

    fn recs(start: i64, errors: &[f64], label: Label) -> Vec<TelemetryRecord> {
        errors
            .iter()
            .enumerate()
            .map(|(i, &e)| TelemetryRecord {
                node_id: "n1".into(),
                timestamp: start + i as i64,
                features: vec![0.5, 2.0 * e].into(),
                label,
                idle: false,
            })
            .collect()
    }

    fn dataset(train: &[f64], normal: &[f64], anomaly: &[(f64, Label)]) -> NodeDataset {
        let mut test_anomaly = Vec::new();
        for (i, &(e, l)) in anomaly.iter().enumerate() {
            test_anomaly.extend(recs(20_000 + i as i64, &[e], l));
        }
        NodeDataset {
            node_id: "n1".into(),
            train: recs(0, train, Label::Normal),
            test_normal: recs(10_000, normal, Label::Normal),
            test_anomaly,
            feature_names: vec!["a".into(), "b".into()],
        }
    }

    fn spread(n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / n as f64)
            .collect()
    }

    #[test]
    fn all_normal_below_threshold() {
        let ds = dataset(&spread(100, 0.1, 0.2), &spread(30, 0.1, 0.15), &[]);
        let cfg = EvalConfig::default();
        let (report, _) = evaluate(&[model()], &[ds], &cfg).unwrap();
        let node = &report.nodes[0];
        assert_eq!(node.confusion.tn, node.records.eval_normal);
        assert_eq!(
            node.confusion.tp + node.confusion.fp + node.confusion.fn_,
            0
        );
        assert_eq!(node.f_normal, Some(1.0));
        assert_eq!(node.f_anomaly, None);
        assert!(node.search.is_none());
        assert_eq!(node.threshold.percentile_n, 99);
        assert!(!report.warnings.is_empty());
        assert_eq!(report.averages.f_anomaly, None);
    }

    #[test]
    fn separated_node_is_perfect() {
        let anomalies: Vec<(f64, Label)> = spread(20, 0.8, 0.9)
            .into_iter()
            .enumerate()
            .map(|(i, e)| {
                (
                    e,
                    if i % 2 == 0 {
                        Label::AnomalyPowersave
                    } else {
                        Label::AnomalyPerformance
                    },
                )
            })
            .collect();
        let ds = dataset(&spread(200, 0.1, 0.2), &spread(50, 0.1, 0.15), &anomalies);
        for protocol in [Protocol::HeldOut, Protocol::Paper] {
            let cfg = EvalConfig {
                protocol,
                ..Default::default()
            };
            let (report, evals) = evaluate(&[model()], std::slice::from_ref(&ds), &cfg).unwrap();
            let node = &report.nodes[0];
            assert_eq!(node.f_normal, Some(1.0));
            assert_eq!(node.f_anomaly, Some(1.0));
            assert_eq!(node.threshold.percentile_n, 99);
            assert_eq!(node.normalized.train.unwrap().mae, 1.0);
            assert!(node.normalized.test_anomaly.unwrap().mae > 4.0);
            assert_eq!(
                node.confusion.total(),
                node.records.eval_normal + node.records.eval_anomaly
            );
            assert_eq!(report.metadata.paper_protocol, protocol == Protocol::Paper);
            assert_eq!(evals[0].trend().len(), 270);
        }
    }

    #[test]
    fn held_out_slices_partition_test_sets() {
        let anomalies: Vec<(f64, Label)> = spread(40, 0.3, 0.9)
            .into_iter()
            .map(|e| (e, Label::AnomalyPowersave))
            .collect();
        let ds = dataset(&spread(200, 0.1, 0.2), &spread(100, 0.1, 0.25), &anomalies);
        let (report, _) = evaluate(&[model()], &[ds], &EvalConfig::default()).unwrap();
        let r = report.nodes[0].records;
        assert_eq!((r.calibration_normal, r.eval_normal), (20, 80));
        assert_eq!((r.calibration_anomaly, r.eval_anomaly), (8, 32));
        assert!(report.nodes[0].normalized.performance.is_none());
    }

    #[test]
    fn calibration_mask_sizes() {
        assert_eq!(
            calibration_mask(100, 0.2, 1).iter().filter(|&&m| m).count(),
            20
        );
        assert_eq!(
            calibration_mask(2, 0.2, 1).iter().filter(|&&m| m).count(),
            1
        );
        assert_eq!(calibration_mask(0, 0.2, 1).len(), 0);
        assert_eq!(calibration_mask(50, 0.2, 7), calibration_mask(50, 0.2, 7));
    }

    #[test]
    fn node_mismatch_is_rejected() {
        let mut ds = dataset(&spread(20, 0.1, 0.2), &[], &[]);
        ds.node_id = "other".into();
        assert!(evaluate(&[model()], &[ds.clone()], &EvalConfig::default()).is_err());
        assert!(evaluate_node(&model(), &ds, &EvalConfig::default()).is_err());
    }

    #[test]
    fn histogram_counts_everything() {
        let h = histogram(&[0.0, 0.1, 0.5, 1.0], &[1.0, 2.0], 4);
        assert_eq!(h.len(), 4);
        assert_eq!(h.iter().map(|b| b.count_normal).sum::<usize>(), 4);
        assert_eq!(h.iter().map(|b| b.count_anomaly).sum::<usize>(), 2);
        assert_eq!(h[3].bin_right, 2.0);
        assert_eq!(h[3].count_anomaly, 1);
        assert_eq!(histogram(&[0.0], &[], 3)[0].count_normal, 1);
    }

    #[test]
    fn tables_have_average_rows() {
        let anomalies: Vec<(f64, Label)> = spread(20, 0.8, 0.9)
            .into_iter()
            .map(|e| (e, Label::AnomalyPerformance))
            .collect();
        let ds = dataset(&spread(100, 0.1, 0.2), &spread(50, 0.1, 0.2), &anomalies);
        let (report, evals) = evaluate(&[model()], &[ds], &EvalConfig::default()).unwrap();
        let mut t1 = Vec::new();
        report.write_table1(&mut t1).unwrap();
        let t1 = String::from_utf8(t1).unwrap();
        assert!(t1.starts_with("node,mae_train,rmse_train,mae_test_normal"));
        assert!(t1.lines().last().unwrap().starts_with("average,1,1,"));
        let mut t2 = Vec::new();
        report.write_table2(&mut t2).unwrap();
        assert_eq!(String::from_utf8(t2).unwrap().lines().count(), 3);
        let mut h = Vec::new();
        evals[0].write_histogram(&mut h, 10).unwrap();
        let h = String::from_utf8(h).unwrap();
        assert!(h.starts_with("bin_left,bin_right,count_normal,count_anomaly\n"));
        assert_eq!(h.lines().count(), 11);
        let json = report.to_json().unwrap();
        let back: DetectionReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }
}
