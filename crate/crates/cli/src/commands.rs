use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nodewatch_core::autoencoder::{self, AutoencoderModel};
use nodewatch_core::dataset::{self, prepare_node, Telemetry};
use nodewatch_core::detector::{self, classify, Decision, DetectionReport, Threshold};
use nodewatch_core::synthgen::{generate_fleet, FleetManifest};
use nodewatch_core::{seed, Error, Result};
use rayon::prelude::*;

use crate::config::RunConfig;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))
}

pub fn model_path(cfg: &RunConfig, node_id: &str) -> PathBuf {
    cfg.models_dir().join(format!("{node_id}.model.json"))
}

/// Generates the synthetic fleet into the data directory.
pub fn synth(cfg: &RunConfig) -> Result<FleetManifest> {
    cfg.validate()?;
    let fleet = generate_fleet(&cfg.fleet_config())?;
    fleet.write_to(cfg.data_dir())?;
    Ok(fleet.manifest)
}

/// Reads every `*.csv` file of the data directory.
pub fn load_telemetry(dir: &Path) -> Result<Telemetry> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "csv") {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no telemetry CSV files in {}",
            dir.display()
        )));
    }
    dataset::ingest_all(&paths)
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub node_id: String,
    pub train_records: usize,
    pub final_loss: f64,
    pub train_mae: f64,
    pub wall_time: Duration,
}

/// Trains one model per node and writes model and training-curve files.
pub fn train(cfg: &RunConfig) -> Result<Vec<TrainSummary>> {
    cfg.validate()?;
    let telemetry = load_telemetry(&cfg.data_dir())?;
    let dir = cfg.models_dir();
    create_dir(&dir)?;
    let names = telemetry.feature_names;
    let nodes: Vec<_> = telemetry.nodes.into_iter().collect();
    pool(cfg.workers)?.install(|| {
        nodes
            .into_par_iter()
            .map(|(node_id, records)| {
                let start = Instant::now();
                let prepared =
                    prepare_node(&node_id, &names, records, &cfg.split_spec(&node_id), None)?;
                let trained = autoencoder::train(
                    &prepared.dataset,
                    &prepared.norm,
                    &cfg.train_config(&node_id),
                )?;
                trained.model.save(model_path(cfg, &node_id))?;
                let curve_path = dir.join(format!("{node_id}.curve.csv"));
                write_file(&curve_path, trained.curve.to_csv().as_bytes())?;
                Ok(TrainSummary {
                    node_id,
                    train_records: prepared.dataset.train.len(),
                    final_loss: trained.curve.epoch_loss.last().copied().unwrap_or(f64::NAN),
                    train_mae: trained.model.train_mae,
                    wall_time: start.elapsed(),
                })
            })
            .collect()
    })
}

/// Scores every node with its saved model and writes the report files.
pub fn eval(cfg: &RunConfig) -> Result<DetectionReport> {
    cfg.validate()?;
    let telemetry = load_telemetry(&cfg.data_dir())?;
    let eval_cfg = cfg.eval_config();
    let names = telemetry.feature_names;
    let nodes: Vec<_> = telemetry.nodes.into_iter().collect();
    let evaluations = pool(cfg.workers)?.install(|| {
        nodes
            .into_par_iter()
            .map(|(node_id, records)| {
                let path = model_path(cfg, &node_id);
                if !path.exists() {
                    return Err(Error::InvalidInput(format!(
                        "no model for node {node_id} at {}",
                        path.display()
                    )));
                }
                let model = AutoencoderModel::load(&path)?;
                let prepared = prepare_node(
                    &node_id,
                    &names,
                    records,
                    &cfg.split_spec(&node_id),
                    Some(&model.norm),
                )?;
                detector::evaluate_node(&model, &prepared.dataset, &eval_cfg)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut report = detector::assemble(
        evaluations.iter().map(|e| e.report.clone()).collect(),
        &eval_cfg,
    );
    report.metadata.tool_version = env!("CARGO_PKG_VERSION").to_owned();
    report.metadata.config_hash = Some(cfg.hash());
    report.metadata.seeds.insert("master".into(), cfg.seed);
    report
        .metadata
        .seeds
        .insert("synth".into(), seed::derive(cfg.seed, "synth"));

    let dir = cfg.report_dir();
    let trend_dir = dir.join("trend");
    let hist_dir = dir.join("histogram");
    for d in [&dir, &trend_dir, &hist_dir] {
        create_dir(d)?;
    }
    write_file(&dir.join("report.json"), report.to_json()?.as_bytes())?;
    report.write_table1(create_file(&dir.join("table1.csv"))?)?;
    report.write_table2(create_file(&dir.join("table2.csv"))?)?;
    for e in &evaluations {
        let id = &e.report.node_id;
        e.write_trend(create_file(&trend_dir.join(format!("{id}.csv")))?)?;
        e.write_histogram(
            create_file(&hist_dir.join(format!("{id}.csv")))?,
            cfg.histogram_bins,
        )?;
    }
    Ok(report)
}

/// Applies a saved model to raw telemetry and writes one error per record of
/// the model's node. With a threshold, a decision column is added.
pub fn score<W: Write>(
    model_path: &Path,
    input: &Path,
    threshold: Option<f64>,
    out: W,
) -> Result<usize> {
    let model = AutoencoderModel::load(model_path)?;
    let telemetry = dataset::ingest(input)?;
    model.norm.check_width(telemetry.feature_count())?;
    let records = telemetry.nodes.get(&model.node_id).ok_or_else(|| {
        Error::InvalidInput(format!(
            "{} has no records for node {}",
            input.display(),
            model.node_id
        ))
    })?;
    let scaled = model.norm.apply_all(records)?;
    let errors = model.score_records(&scaled)?;
    let th = threshold.map(|theta| Threshold {
        theta,
        percentile_n: 0,
        calibrated_on: 0,
    });

    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["timestamp", "node_id", "idle", "label", "error"];
    if th.is_some() {
        header.push("decision");
    }
    w.write_record(&header)?;
    for (r, e) in records.iter().zip(&errors) {
        let mut row = vec![
            r.timestamp.to_string(),
            r.node_id.clone(),
            u8::from(r.idle).to_string(),
            r.label.as_str().to_owned(),
            e.to_string(),
        ];
        if let Some(th) = &th {
            let d = match classify(*e, th) {
                Decision::Normal => "normal",
                Decision::Anomaly => "anomaly",
            };
            row.push(d.to_owned());
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(errors.len())
}

/// Process exit status for an error: 2 configuration, 3 data, 4 divergence,
/// 1 anything else.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_) | Error::PercentileRange(_) | Error::Schedule(_) => 2,
        Error::MalformedRow { .. }
        | Error::FeatureCount { .. }
        | Error::DuplicateRecord { .. }
        | Error::HeaderMismatch(_)
        | Error::TooFewRecords { .. }
        | Error::InvalidInput(_)
        | Error::WidthMismatch { .. }
        | Error::ModelFormat(_)
        | Error::Empty(_)
        | Error::MissingClass(_)
        | Error::Json(_)
        | Error::Csv(_) => 3,
        Error::Divergence { .. } => 4,
        Error::Io { .. } | Error::DegenerateModel => 1,
    }
}
