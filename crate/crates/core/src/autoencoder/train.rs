use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{records_to_matrix, AdamState, AutoencoderModel, Network, TrainConfig};
use crate::dataset::NormalizationParams;
use crate::error::{Error, Result};
use crate::telemetry::NodeDataset;

/// Sample-weighted mean training loss of every epoch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingCurve {
    pub epoch_loss: Vec<f64>,
}

impl TrainingCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss\n");
        for (i, l) in self.epoch_loss.iter().enumerate() {
            out.push_str(&format!("{},{}\n", i + 1, l));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: AutoencoderModel,
    pub curve: TrainingCurve,
}

/// Trains a node model on the (already normalized) training split.
/// Labels are never read.
pub fn train(
    ds: &NodeDataset,
    norm: &NormalizationParams,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    let width = ds.feature_count();
    norm.check_width(width)?;
    let rows = records_to_matrix(&ds.train, width)?;
    let (network, curve) = train_rows(rows.view(), cfg)?;
    let train_mae = mean(&score(&network, rows.view()));
    let model = AutoencoderModel {
        node_id: ds.node_id.clone(),
        network,
        hyper: cfg.clone(),
        norm: norm.clone(),
        train_mae,
    };
    Ok(TrainedModel { model, curve })
}

/// Minibatch Adam over the rows of a normalized matrix.
///
/// Initialization draws from the seed's first stream, epoch shuffles from
/// its second; the last short batch of an epoch is kept.
pub fn train_rows(
    rows: ArrayView2<'_, f64>,
    cfg: &TrainConfig,
) -> Result<(Network, TrainingCurve)> {
    cfg.validate()?;
    let n = rows.nrows();
    if n == 0 {
        return Err(Error::Empty("training set"));
    }
    let width = rows.ncols();
    let mut net = Network::init(width, cfg.rng_seed)?;
    let mut state = AdamState::new(net.param_count());
    let adam = cfg.adam();

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    shuffle_rng.set_stream(1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut batch = Array2::<f64>::zeros((cfg.batch_size.min(n), width));
    let mut curve = TrainingCurve::default();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut weighted_loss = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let mut view = batch.slice_mut(ndarray::s![..idx.len(), ..]);
            for (mut dst, &i) in view.outer_iter_mut().zip(idx) {
                dst.assign(&rows.row(i));
            }
            let (grads, loss) = net.gradients(view.view(), cfg.l1_lambda);
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch: epoch + 1,
                    batch: b + 1,
                    loss,
                });
            }
            weighted_loss += loss * idx.len() as f64;
            let [ew, eb, dw, db] = net.tensors_mut();
            let [gew, geb, gdw, gdb] = grads.tensors();
            state.step(&adam, [(ew, gew), (eb, geb), (dw, gdw), (db, gdb)]);
        }
        curve.epoch_loss.push(weighted_loss / n as f64);
    }

    if !net.is_finite() {
        let loss = curve.epoch_loss.last().copied().unwrap_or(f64::NAN);
        return Err(Error::Divergence {
            epoch: cfg.epochs,
            batch: 0,
            loss,
        });
    }
    Ok((net, curve))
}

fn score(net: &Network, rows: ArrayView2<'_, f64>) -> Vec<f64> {
    rows.axis_chunks_iter(Axis(0), 512)
        .flat_map(|c| net.reconstruction_errors(c))
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
