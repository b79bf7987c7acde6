//! CSV ingestion, idle removal, the seeded train/test split and min-max
//! normalization fitted on the training split only.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::telemetry::{Label, NodeDataset, TelemetryRecord};

const FIXED_COLUMNS: [&str; 4] = ["timestamp", "node_id", "idle", "label"];

/// Minimum number of normal records for a train/test split to be meaningful.
pub const MIN_SPLIT_RECORDS: usize = 10;

/// Parsed telemetry, grouped by node and sorted by timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct Telemetry {
    pub feature_names: Vec<String>,
    pub nodes: BTreeMap<String, Vec<TelemetryRecord>>,
}

impl Telemetry {
    pub fn feature_count(&self) -> usize {
        self.feature_names.len()
    }

    /// Merges another parsed file into this one. Headers must agree and
    /// record identities must stay unique.
    pub fn merge(&mut self, other: Telemetry) -> Result<()> {
        if self.feature_names != other.feature_names {
            return Err(Error::HeaderMismatch(format!(
                "{} features vs {} features",
                self.feature_count(),
                other.feature_count()
            )));
        }
        for (node, records) in other.nodes {
            let series = self.nodes.entry(node).or_default();
            series.extend(records);
            sort_and_check(series)?;
        }
        Ok(())
    }
}

fn sort_and_check(series: &mut [TelemetryRecord]) -> Result<()> {
    series.sort_by_key(|r| r.timestamp);
    if let Some(w) = series.windows(2).find(|w| w[0].timestamp == w[1].timestamp) {
        return Err(Error::DuplicateRecord {
            line: 0,
            node_id: w[1].node_id.clone(),
            timestamp: w[1].timestamp,
        });
    }
    Ok(())
}

/// Reads one telemetry CSV file.
pub fn ingest(path: impl AsRef<Path>) -> Result<Telemetry> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(BufReader::new(file))
}

/// Reads several telemetry CSV files into one collection.
pub fn ingest_all<P: AsRef<Path>>(paths: &[P]) -> Result<Telemetry> {
    let mut iter = paths.iter();
    let first = iter
        .next()
        .ok_or(Error::Empty("no telemetry files given"))?;
    let mut out = ingest(first)?;
    for p in iter {
        out.merge(ingest(p)?)?;
    }
    Ok(out)
}

pub fn ingest_reader<R: Read>(reader: R) -> Result<Telemetry> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);

    let header = rdr.headers()?.clone();
    if header.len() <= FIXED_COLUMNS.len()
        || header.iter().take(FIXED_COLUMNS.len()).ne(FIXED_COLUMNS)
    {
        return Err(Error::MalformedRow {
            line: 1,
            reason: format!(
                "header must start with {} followed by at least one feature",
                FIXED_COLUMNS.join(",")
            ),
        });
    }
    let feature_names: Vec<String> = header
        .iter()
        .skip(FIXED_COLUMNS.len())
        .map(str::to_owned)
        .collect();
    let width = feature_names.len();

    let mut nodes: BTreeMap<String, Vec<TelemetryRecord>> = BTreeMap::new();
    let mut seen: HashSet<(String, i64)> = HashSet::new();
    let mut row = csv::StringRecord::new();
    loop {
        let more = rdr.read_record(&mut row)?;
        if !more {
            break;
        }
        let line = row.position().map_or(0, |p| p.line());
        let found = row.len().saturating_sub(FIXED_COLUMNS.len());
        if found != width {
            return Err(Error::FeatureCount {
                line,
                expected: width,
                found,
            });
        }
        let record = parse_row(&row, line)?;
        if !seen.insert((record.node_id.clone(), record.timestamp)) {
            return Err(Error::DuplicateRecord {
                line,
                node_id: record.node_id,
                timestamp: record.timestamp,
            });
        }
        nodes
            .entry(record.node_id.clone())
            .or_default()
            .push(record);
    }

    for series in nodes.values_mut() {
        series.sort_by_key(|r| r.timestamp);
    }
    Ok(Telemetry {
        feature_names,
        nodes,
    })
}

fn parse_row(row: &csv::StringRecord, line: u64) -> Result<TelemetryRecord> {
    let malformed = |reason: String| Error::MalformedRow { line, reason };

    let timestamp = row[0]
        .trim()
        .parse::<i64>()
        .map_err(|e| malformed(format!("timestamp {:?}: {e}", &row[0])))?;
    let node_id = row[1].trim();
    if node_id.is_empty() {
        return Err(malformed("empty node_id".into()));
    }
    let idle = match row[2].trim() {
        "0" => false,
        "1" => true,
        other => return Err(malformed(format!("idle must be 0 or 1, got {other:?}"))),
    };
    let label = row[3].trim().parse::<Label>().map_err(malformed)?;
    let features = row
        .iter()
        .skip(FIXED_COLUMNS.len())
        .enumerate()
        .map(|(i, v)| {
            let x = v
                .trim()
                .parse::<f64>()
                .map_err(|e| malformed(format!("feature {i} {v:?}: {e}")))?;
            if x.is_finite() {
                Ok(x)
            } else {
                Err(malformed(format!("feature {i} is not finite")))
            }
        })
        .collect::<Result<Vec<f64>>>()?;

    Ok(TelemetryRecord {
        node_id: node_id.to_owned(),
        timestamp,
        features: features.into(),
        label,
        idle,
    })
}

/// Writes records in the telemetry CSV format. Features are written with six
/// decimals.
pub fn write_csv<W: Write>(
    writer: W,
    feature_names: &[String],
    records: &[TelemetryRecord],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let header = FIXED_COLUMNS
        .iter()
        .copied()
        .chain(feature_names.iter().map(String::as_str));
    w.write_record(header)?;
    let mut fields: Vec<String> = Vec::with_capacity(feature_names.len() + FIXED_COLUMNS.len());
    for r in records {
        if r.features.len() != feature_names.len() {
            return Err(Error::WidthMismatch {
                expected: feature_names.len(),
                found: r.features.len(),
            });
        }
        fields.clear();
        fields.push(r.timestamp.to_string());
        fields.push(r.node_id.clone());
        fields.push(if r.idle { "1" } else { "0" }.to_owned());
        fields.push(r.label.as_str().to_owned());
        fields.extend(r.features.as_slice().iter().map(|v| format!("{v:.6}")));
        w.write_record(&fields)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn write_csv_file(
    path: impl AsRef<Path>,
    feature_names: &[String],
    records: &[TelemetryRecord],
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(BufWriter::new(file), feature_names, records)
}

/// Keeps the non-idle records, preserving order.
pub fn drop_idle(records: Vec<TelemetryRecord>) -> Vec<TelemetryRecord> {
    records.into_iter().filter(|r| !r.idle).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub rng_seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.8,
            rng_seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "train_fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }

    pub fn train_len(&self, n: usize) -> usize {
        (self.train_fraction * n as f64).round() as usize
    }
}

/// Seeded random partition of normal records into (train, test_normal).
/// Both halves keep the input's relative order.
pub fn split_normal(
    records: Vec<TelemetryRecord>,
    spec: &SplitSpec,
) -> Result<(Vec<TelemetryRecord>, Vec<TelemetryRecord>)> {
    spec.validate()?;
    if let Some(r) = records.iter().find(|r| r.label != Label::Normal || r.idle) {
        return Err(Error::InvalidInput(format!(
            "split_normal requires non-idle normal records; {} is {}{}",
            r.id(),
            r.label,
            if r.idle { " (idle)" } else { "" }
        )));
    }
    if records.len() < MIN_SPLIT_RECORDS {
        return Err(Error::TooFewRecords {
            min: MIN_SPLIT_RECORDS,
            got: records.len(),
        });
    }
    let mask = split_mask(records.len(), spec);
    let mut train = Vec::with_capacity(spec.train_len(records.len()));
    let mut test = Vec::with_capacity(records.len() - train.capacity());
    for (r, is_train) in records.into_iter().zip(mask) {
        if is_train {
            train.push(r);
        } else {
            test.push(r);
        }
    }
    Ok((train, test))
}

/// `mask[i]` is true when index `i` lands in the first part of the split.
/// Depends only on `n` and `spec`.
pub fn split_mask(n: usize, spec: &SplitSpec) -> Vec<bool> {
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    indices.shuffle(&mut rng);
    let mut mask = vec![false; n];
    for &i in &indices[..spec.train_len(n)] {
        mask[i] = true;
    }
    mask
}

/// Per-feature min-max scaling parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub feature_names: Vec<String>,
    pub min: Vec<f64>,
    /// `max - min`; zero marks a constant feature.
    pub span: Vec<f64>,
    pub fitted_on: usize,
}

impl NormalizationParams {
    pub fn fit(feature_names: &[String], train: &[TelemetryRecord]) -> Result<Self> {
        let first = train.first().ok_or(Error::Empty("normalization fit set"))?;
        let width = feature_names.len();
        let mut min = first.features.as_slice().to_vec();
        let mut max = min.clone();
        for r in train {
            let x = r.features.as_slice();
            if x.len() != width {
                return Err(Error::WidthMismatch {
                    expected: width,
                    found: x.len(),
                });
            }
            for ((lo, hi), &v) in min.iter_mut().zip(max.iter_mut()).zip(x) {
                *lo = lo.min(v);
                *hi = hi.max(v);
            }
        }
        let span = max.iter().zip(&min).map(|(hi, lo)| hi - lo).collect();
        Ok(NormalizationParams {
            feature_names: feature_names.to_vec(),
            min,
            span,
            fitted_on: train.len(),
        })
    }

    pub fn width(&self) -> usize {
        self.min.len()
    }

    /// Scales into `[0, 1]`, clamping values outside the fitted range.
    /// Constant features map to 0.
    pub fn apply_values(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.min.iter().zip(&self.span))
            .map(|(&v, (&lo, &span))| {
                if span > 0.0 {
                    ((v - lo) / span).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn apply(&self, record: &TelemetryRecord) -> Result<TelemetryRecord> {
        if record.features.len() != self.width() {
            return Err(Error::WidthMismatch {
                expected: self.width(),
                found: record.features.len(),
            });
        }
        Ok(TelemetryRecord {
            features: self.apply_values(record.features.as_slice()).into(),
            ..record.clone()
        })
    }

    pub fn apply_all(&self, records: &[TelemetryRecord]) -> Result<Vec<TelemetryRecord>> {
        records.iter().map(|r| self.apply(r)).collect()
    }

    /// Inverse of the scaling for in-range values.
    pub fn denormalize(&self, scaled: &[f64]) -> Vec<f64> {
        scaled
            .iter()
            .zip(self.min.iter().zip(&self.span))
            .map(|(&v, (&lo, &span))| lo + v * span)
            .collect()
    }

    pub fn check_width(&self, width: usize) -> Result<()> {
        if self.span.len() != width || self.feature_names.len() != width {
            return Err(Error::ModelFormat(format!(
                "normalization parameters have {} names, {} mins, {} spans; expected {width}",
                self.feature_names.len(),
                self.min.len(),
                self.span.len()
            )));
        }
        Ok(())
    }
}

/// A node's normalized dataset plus the parameters used to scale it.
#[derive(Debug, Clone)]
pub struct PreparedNode {
    pub dataset: NodeDataset,
    pub norm: NormalizationParams,
    /// Non-idle unlabeled records; scorable but never used for fitting.
    pub unlabeled: Vec<TelemetryRecord>,
}

/// Runs idle removal, the normal split and normalization for one node.
///
/// When `norm` is given (a saved model's parameters) it is used as-is instead
/// of being refitted, and must match the training split size.
pub fn prepare_node(
    node_id: &str,
    feature_names: &[String],
    records: Vec<TelemetryRecord>,
    split: &SplitSpec,
    norm: Option<&NormalizationParams>,
) -> Result<PreparedNode> {
    let mut normal = Vec::new();
    let mut anomaly = Vec::new();
    let mut unlabeled = Vec::new();
    for r in drop_idle(records) {
        if r.node_id != node_id {
            return Err(Error::InvalidInput(format!(
                "record {} does not belong to node {node_id}",
                r.id()
            )));
        }
        match r.label {
            Label::Normal => normal.push(r),
            Label::Unlabeled => unlabeled.push(r),
            _ => anomaly.push(r),
        }
    }
    let (train, test_normal) = split_normal(normal, split)?;
    let norm = match norm {
        Some(p) => {
            p.check_width(feature_names.len())?;
            if p.fitted_on != train.len() {
                return Err(Error::InvalidInput(format!(
                    "node {node_id}: normalization was fitted on {} records but the \
                     training split has {}",
                    p.fitted_on,
                    train.len()
                )));
            }
            p.clone()
        }
        None => NormalizationParams::fit(feature_names, &train)?,
    };
    Ok(PreparedNode {
        dataset: NodeDataset {
            node_id: node_id.to_owned(),
            train: norm.apply_all(&train)?,
            test_normal: norm.apply_all(&test_normal)?,
            test_anomaly: norm.apply_all(&anomaly)?,
            feature_names: feature_names.to_vec(),
        },
        unlabeled: norm.apply_all(&unlabeled)?,
        norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("f{i}")).collect()
    }

    fn rec(node: &str, ts: i64, features: Vec<f64>) -> TelemetryRecord {
        TelemetryRecord {
            node_id: node.into(),
            timestamp: ts,
            features: features.into(),
            label: Label::Normal,
            idle: false,
        }
    }

    fn two_node_csv() -> (String, Vec<TelemetryRecord>) {
        let mut records = Vec::new();
        for node in ["a", "b"] {
            for i in 0..10 {
                let mut r = rec(node, 1_000 + 300 * i, vec![i as f64, 0.5, -(i as f64)]);
                r.idle = i % 3 == 0;
                r.label = if i == 7 {
                    Label::AnomalyPerformance
                } else {
                    Label::Normal
                };
                records.push(r);
            }
        }
        let mut buf = Vec::new();
        write_csv(&mut buf, &names(3), &records).unwrap();
        (String::from_utf8(buf).unwrap(), records)
    }

    #[test]
    fn ingest_two_nodes() {
        let (text, records) = two_node_csv();
        let t = ingest_reader(text.as_bytes()).unwrap();
        assert_eq!(t.feature_names, names(3));
        assert_eq!(t.nodes.len(), 2);
        assert_eq!(t.nodes["a"].len(), 10);
        assert_eq!(t.nodes["b"].len(), 10);
        assert_eq!(t.nodes["a"], records[..10].to_vec());
        assert_eq!(t.nodes["b"], records[10..].to_vec());
    }

    #[test]
    fn short_row_names_its_line() {
        let (text, _) = two_node_csv();
        let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
        // line 5 of the file, the fourth data row
        let cut = lines[4].rfind(',').unwrap();
        lines[4].truncate(cut);
        let err = ingest_reader(lines.join("\n").as_bytes()).unwrap_err();
        match err {
            Error::FeatureCount {
                line,
                expected,
                found,
            } => {
                assert_eq!((line, expected, found), (5, 3, 2));
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn shuffled_rows_come_back_sorted() {
        let (text, records) = two_node_csv();
        let mut lines: Vec<&str> = text.lines().collect();
        let header = lines.remove(0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        lines.shuffle(&mut rng);
        let shuffled = std::iter::once(header)
            .chain(lines)
            .collect::<Vec<_>>()
            .join("\n");
        let t = ingest_reader(shuffled.as_bytes()).unwrap();

        let mut oracle = records.clone();
        oracle.sort_by(|a, b| (&a.node_id, a.timestamp).cmp(&(&b.node_id, b.timestamp)));
        let got: Vec<TelemetryRecord> = t.nodes.into_values().flatten().collect();
        assert_eq!(got, oracle);
    }

    #[test]
    fn duplicate_timestamp_is_rejected() {
        let text = "timestamp,node_id,idle,label,x\n10,a,0,normal,1\n10,a,0,normal,2\n";
        assert!(matches!(
            ingest_reader(text.as_bytes()),
            Err(Error::DuplicateRecord { line: 3, .. })
        ));
        // same timestamp on different nodes is fine
        let text = "timestamp,node_id,idle,label,x\n10,a,0,normal,1\n10,b,0,normal,2\n";
        assert!(ingest_reader(text.as_bytes()).is_ok());
    }

    #[test]
    fn malformed_fields_are_rejected() {
        for bad in [
            "x,a,0,normal,1",
            "10,a,2,normal,1",
            "10,a,0,broken,1",
            "10,a,0,normal,abc",
            "10,a,0,normal,NaN",
            "10,,0,normal,1",
        ] {
            let text = format!("timestamp,node_id,idle,label,x\n{bad}\n");
            assert!(
                matches!(
                    ingest_reader(text.as_bytes()),
                    Err(Error::MalformedRow { line: 2, .. })
                ),
                "{bad}"
            );
        }
        let text = "time,node_id,idle,label,x\n";
        assert!(matches!(
            ingest_reader(text.as_bytes()),
            Err(Error::MalformedRow { line: 1, .. })
        ));
    }

    #[test]
    fn merge_rejects_cross_file_duplicates() {
        let (text, _) = two_node_csv();
        let mut t = ingest_reader(text.as_bytes()).unwrap();
        let again = ingest_reader(text.as_bytes()).unwrap();
        assert!(matches!(t.merge(again), Err(Error::DuplicateRecord { .. })));
    }

    #[test]
    fn drop_idle_cases() {
        let mut all: Vec<TelemetryRecord> = (0..5).map(|i| rec("a", i, vec![0.0])).collect();
        assert_eq!(drop_idle(all.clone()), all);
        for r in &mut all {
            r.idle = true;
        }
        assert!(drop_idle(all).is_empty());

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mixed: Vec<TelemetryRecord> = (0..200)
            .map(|i| {
                let mut r = rec("a", i, vec![i as f64]);
                r.idle = rng.random_bool(0.4);
                r
            })
            .collect();
        let mut oracle = Vec::new();
        for r in &mixed {
            if !r.idle {
                oracle.push(r.clone());
            }
        }
        assert_eq!(drop_idle(mixed), oracle);
    }

    fn normals(n: usize) -> Vec<TelemetryRecord> {
        (0..n as i64)
            .map(|i| rec("a", i * 300, vec![i as f64]))
            .collect()
    }

    #[test]
    fn split_sizes_follow_the_fraction() {
        let spec = SplitSpec {
            train_fraction: 0.8,
            rng_seed: 1,
        };
        let (train, test) = split_normal(normals(100), &spec).unwrap();
        assert_eq!((train.len(), test.len()), (80, 20));
    }

    #[test]
    fn split_is_deterministic_and_seed_dependent() {
        let spec = SplitSpec {
            train_fraction: 0.8,
            rng_seed: 7,
        };
        let a = split_normal(normals(10), &spec).unwrap();
        let b = split_normal(normals(10), &spec).unwrap();
        assert_eq!(a, b);

        let mut distinct = HashSet::new();
        for seed in 0..20 {
            let (train, test) = split_normal(
                normals(10),
                &SplitSpec {
                    train_fraction: 0.8,
                    rng_seed: seed,
                },
            )
            .unwrap();
            let mut union: Vec<i64> = train.iter().chain(&test).map(|r| r.timestamp).collect();
            union.sort();
            assert_eq!(union, (0..10).map(|i| i * 300).collect::<Vec<_>>());
            let train_ts: HashSet<i64> = train.iter().map(|r| r.timestamp).collect();
            assert!(test.iter().all(|r| !train_ts.contains(&r.timestamp)));
            distinct.insert(train.iter().map(|r| r.timestamp).collect::<Vec<_>>());
        }
        assert!(distinct.len() > 1);
    }

    #[test]
    fn split_refuses_small_or_mislabeled_input() {
        let spec = SplitSpec::default();
        assert!(matches!(
            split_normal(normals(9), &spec),
            Err(Error::TooFewRecords { min: 10, got: 9 })
        ));
        let mut recs = normals(20);
        recs[3].label = Label::AnomalyPowersave;
        assert!(matches!(
            split_normal(recs, &spec),
            Err(Error::InvalidInput(_))
        ));
        let bad = SplitSpec {
            train_fraction: 1.0,
            rng_seed: 0,
        };
        assert!(split_normal(normals(20), &bad).is_err());
    }

    #[test]
    fn split_ignores_feature_values() {
        let spec = SplitSpec {
            train_fraction: 0.8,
            rng_seed: 11,
        };
        let base = normals(50);
        let mut permuted = base.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut values: Vec<Vec<f64>> = base
            .iter()
            .map(|r| r.features.as_slice().to_vec())
            .collect();
        values.shuffle(&mut rng);
        for (r, v) in permuted.iter_mut().zip(values) {
            r.features = v.into();
        }
        let (a, _) = split_normal(base, &spec).unwrap();
        let (b, _) = split_normal(permuted, &spec).unwrap();
        let ts = |v: &[TelemetryRecord]| v.iter().map(|r| r.timestamp).collect::<Vec<_>>();
        assert_eq!(ts(&a), ts(&b));
    }

    #[test]
    fn fit_simple_columns() {
        let train = vec![
            rec("a", 0, vec![2.0, 5.0]),
            rec("a", 1, vec![4.0, 5.0]),
            rec("a", 2, vec![6.0, 5.0]),
        ];
        let p = NormalizationParams::fit(&names(2), &train).unwrap();
        assert_eq!(p.min, vec![2.0, 5.0]);
        assert_eq!(p.span, vec![4.0, 0.0]);
        assert_eq!(p.fitted_on, 3);
        assert!(NormalizationParams::fit(&names(2), &[]).is_err());
    }

    #[test]
    fn fit_matches_column_scan() {
        let width = 17;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let train: Vec<TelemetryRecord> = (0..100)
            .map(|i| {
                rec(
                    "a",
                    i,
                    (0..width).map(|_| rng.random_range(-50.0..50.0)).collect(),
                )
            })
            .collect();
        let p = NormalizationParams::fit(&names(width), &train).unwrap();
        for j in 0..width {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for r in &train {
                let v = r.features.as_slice()[j];
                if v < lo {
                    lo = v;
                }
                if v > hi {
                    hi = v;
                }
            }
            assert_eq!(p.min[j], lo);
            assert_eq!(p.span[j], hi - lo);
        }
    }

    #[test]
    fn apply_endpoints_and_clamping() {
        let p = NormalizationParams {
            feature_names: names(3),
            min: vec![2.0, -1.0, 5.0],
            span: vec![4.0, 2.0, 0.0],
            fitted_on: 3,
        };
        assert_eq!(p.apply_values(&[2.0, -1.0, 5.0]), vec![0.0, 0.0, 0.0]);
        assert_eq!(p.apply_values(&[6.0, 1.0, 9.0]), vec![1.0, 1.0, 0.0]);
        assert_eq!(p.apply_values(&[1.0, 3.0, 4.0]), vec![0.0, 1.0, 0.0]);
        assert_eq!(p.apply_values(&[3.0, 0.0, 5.0]), vec![0.25, 0.5, 0.0]);
        let r = rec("a", 0, vec![1.0]);
        assert!(matches!(p.apply(&r), Err(Error::WidthMismatch { .. })));
    }

    #[test]
    fn prepare_node_assembles_clean_splits() {
        let mut records = Vec::new();
        for i in 0..60 {
            let mut r = rec("n", i * 300, vec![i as f64, (i % 7) as f64]);
            r.idle = i % 5 == 0;
            r.label = match i {
                40..=44 => Label::AnomalyPowersave,
                45..=49 => Label::AnomalyPerformance,
                50..=52 => Label::Unlabeled,
                _ => Label::Normal,
            };
            records.push(r);
        }
        let spec = SplitSpec {
            train_fraction: 0.8,
            rng_seed: 3,
        };
        let p = prepare_node("n", &names(2), records.clone(), &spec, None).unwrap();
        assert!(p.dataset.validate().is_empty());
        // 47 normal records, 9 of them idle
        assert_eq!(p.dataset.train.len() + p.dataset.test_normal.len(), 38);
        assert_eq!(p.dataset.train.len(), 30);
        assert_eq!(p.dataset.test_anomaly.len(), 8);
        assert_eq!(p.unlabeled.len(), 2);
        assert_eq!(p.norm.fitted_on, 30);
        let all = p
            .dataset
            .train
            .iter()
            .chain(&p.dataset.test_normal)
            .chain(&p.dataset.test_anomaly);
        for r in all {
            assert!(r
                .features
                .as_slice()
                .iter()
                .all(|v| (0.0..=1.0).contains(v)));
        }

        let again = prepare_node("n", &names(2), records.clone(), &spec, Some(&p.norm)).unwrap();
        assert_eq!(again.dataset, p.dataset);

        let mut wrong = p.norm.clone();
        wrong.fitted_on += 1;
        assert!(prepare_node("n", &names(2), records, &spec, Some(&wrong)).is_err());
    }

    proptest! {
        #[test]
        fn normalization_round_trips_on_train(
            rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 4), 2..40)
        ) {
            let train: Vec<TelemetryRecord> = rows
                .iter()
                .enumerate()
                .map(|(i, v)| rec("a", i as i64, v.clone()))
                .collect();
            let p = NormalizationParams::fit(&names(4), &train).unwrap();
            for r in &train {
                let raw = r.features.as_slice();
                let back = p.denormalize(&p.apply_values(raw));
                for j in 0..4 {
                    if p.span[j] > 0.0 {
                        let tol = 1e-9 * raw[j].abs().max(p.span[j]);
                        prop_assert!((back[j] - raw[j]).abs() <= tol);
                    }
                }
            }
        }

        #[test]
        fn csv_round_trip(values in prop::collection::vec(-1e3f64..1e3, 3 * 5)) {
            let records: Vec<TelemetryRecord> = values
                .chunks(3)
                .enumerate()
                .map(|(i, c)| {
                    // six decimals on output
                    let v = c.iter().map(|x| (x * 1e6).round() / 1e6).collect();
                    rec("z", 10 * i as i64, v)
                })
                .collect();
            let mut buf = Vec::new();
            write_csv(&mut buf, &names(3), &records).unwrap();
            let t = ingest_reader(buf.as_slice()).unwrap();
            let back = &t.nodes["z"];
            prop_assert_eq!(back.len(), records.len());
            for (a, b) in back.iter().zip(&records) {
                for (x, y) in a.features.as_slice().iter().zip(b.features.as_slice()) {
                    prop_assert!((x - y).abs() <= 1e-9);
                }
            }
        }
    }
}
