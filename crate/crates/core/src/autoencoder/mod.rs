//! Three-layer dense autoencoder: `F` inputs, a sparse ReLU layer of `10·F`
//! units with an L1 activity penalty, and `F` linear outputs.
//!
//! Layer weights are stored `out × in`, so a forward pass on a batch of row
//! vectors `X` (`B × F`) is `relu(X·Weᵀ + be)·Wdᵀ + bd`.

mod adam;
mod model_file;
mod train;

pub use adam::{AdamConfig, AdamState};
pub use model_file::{ModelFile, MODEL_FORMAT_VERSION};
pub use train::{train, train_rows, TrainedModel, TrainingCurve};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::NormalizationParams;
use crate::error::{Error, Result};
use crate::telemetry::TelemetryRecord;

/// Hidden width as a multiple of the input width.
pub const HIDDEN_FACTOR: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Weight of the L1 penalty on hidden activations.
    pub l1_lambda: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            learning_rate: 0.001,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            l1_lambda: 1e-5,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.epochs < 1 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        if !(self.l1_lambda >= 0.0 && self.l1_lambda.is_finite()) {
            return bad(format!("l1_lambda must be >= 0, got {}", self.l1_lambda));
        }
        for (name, b) in [
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        if !(self.adam_epsilon > 0.0) {
            return bad(format!(
                "adam_epsilon must be > 0, got {}",
                self.adam_epsilon
            ));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }
}

/// Weights (`out × in`) and biases of one dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

impl Layer {
    pub fn zeros(outputs: usize, inputs: usize) -> Self {
        Layer {
            weights: Array2::zeros((outputs, inputs)),
            biases: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .all(|v| v.is_finite())
    }
}

/// Result of a single-record forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub hidden: Vec<f64>,
    pub reconstruction: Vec<f64>,
}

/// Intermediate values of a batched forward pass, kept for backprop.
pub(crate) struct BatchPass {
    pub pre: Array2<f64>,
    pub hidden: Array2<f64>,
    pub output: Array2<f64>,
}

/// The encoder/decoder parameter pair. Also used as the container for
/// gradients and optimizer moments, which share its shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub encoder: Layer,
    pub decoder: Layer,
}

impl Network {
    pub fn zeros(features: usize) -> Self {
        let hidden = HIDDEN_FACTOR * features;
        Network {
            encoder: Layer::zeros(hidden, features),
            decoder: Layer::zeros(features, hidden),
        }
    }

    /// Uniform `±sqrt(6 / (fan_in + fan_out))` weights, zero biases.
    pub fn init(features: usize, seed: u64) -> Result<Self> {
        if features == 0 {
            return Err(Error::InvalidConfig(
                "feature count must be at least 1".into(),
            ));
        }
        let mut net = Network::zeros(features);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in [&mut net.encoder, &mut net.decoder] {
            let limit = (6.0 / (layer.inputs() + layer.outputs()) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
            layer
                .weights
                .iter_mut()
                .for_each(|w| *w = dist.sample(&mut rng));
        }
        Ok(net)
    }

    pub fn features(&self) -> usize {
        self.encoder.inputs()
    }

    pub fn hidden_width(&self) -> usize {
        self.encoder.outputs()
    }

    pub fn is_finite(&self) -> bool {
        self.encoder.is_finite() && self.decoder.is_finite()
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Parameter tensors as flat slices: encoder W, encoder b, decoder W,
    /// decoder b.
    pub fn tensors(&self) -> [&[f64]; 4] {
        [
            self.encoder.weights.as_slice().expect("standard layout"),
            self.encoder.biases.as_slice().expect("standard layout"),
            self.decoder.weights.as_slice().expect("standard layout"),
            self.decoder.biases.as_slice().expect("standard layout"),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.encoder
                .weights
                .as_slice_mut()
                .expect("standard layout"),
            self.encoder.biases.as_slice_mut().expect("standard layout"),
            self.decoder
                .weights
                .as_slice_mut()
                .expect("standard layout"),
            self.decoder.biases.as_slice_mut().expect("standard layout"),
        ]
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.features() {
            return Err(Error::WidthMismatch {
                expected: self.features(),
                found: x.len(),
            });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("non-finite feature value".into()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Forward> {
        self.check_input(x)?;
        let row = ArrayView2::from_shape((1, x.len()), x).expect("row shape");
        let pass = self.forward_batch(row);
        Ok(Forward {
            hidden: pass.hidden.into_raw_vec_and_offset().0,
            reconstruction: pass.output.into_raw_vec_and_offset().0,
        })
    }

    pub(crate) fn forward_batch(&self, x: ArrayView2<'_, f64>) -> BatchPass {
        let mut pre = x.dot(&self.encoder.weights.t());
        pre += &self.encoder.biases;
        let hidden = pre.mapv(|v| v.max(0.0));
        let mut output = hidden.dot(&self.decoder.weights.t());
        output += &self.decoder.biases;
        BatchPass {
            pre,
            hidden,
            output,
        }
    }

    /// Per-row mean absolute reconstruction error of a batch.
    pub fn reconstruction_errors(&self, x: ArrayView2<'_, f64>) -> Vec<f64> {
        let pass = self.forward_batch(x);
        row_mae(x, pass.output.view())
    }

    /// Gradient of the mean minibatch loss with respect to every parameter,
    /// and the mean loss itself. Subgradients of `|·|` and ReLU at zero are
    /// taken as zero.
    pub fn gradients(&self, x: ArrayView2<'_, f64>, l1_lambda: f64) -> (Network, f64) {
        let batch = x.nrows() as f64;
        let features = self.features() as f64;
        let BatchPass {
            pre,
            hidden,
            output,
        } = self.forward_batch(x);

        let residual_sum: f64 = output
            .iter()
            .zip(x.iter())
            .map(|(y, t)| (y - t).abs())
            .sum();
        let activity_sum: f64 = hidden.sum();
        let loss = (residual_sum / features + l1_lambda * activity_sum) / batch;

        let scale = 1.0 / (features * batch);
        let mut d_out = output;
        Zip::from(&mut d_out).and(&x).for_each(|y, &t| {
            let r = *y - t;
            *y = if r > 0.0 {
                scale
            } else if r < 0.0 {
                -scale
            } else {
                0.0
            };
        });

        let dec_w = d_out.t().dot(&hidden);
        let dec_b = d_out.sum_axis(Axis(0));

        let activity = l1_lambda / batch;
        let mut d_pre = d_out.dot(&self.decoder.weights);
        Zip::from(&mut d_pre).and(&pre).for_each(|g, &p| {
            *g = if p > 0.0 { *g + activity } else { 0.0 };
        });
        let enc_w = d_pre.t().dot(&x);
        let enc_b = d_pre.sum_axis(Axis(0));

        let grads = Network {
            encoder: Layer {
                weights: enc_w,
                biases: enc_b,
            },
            decoder: Layer {
                weights: dec_w,
                biases: dec_b,
            },
        };
        (grads, loss)
    }
}

fn row_mae(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Vec<f64> {
    let width = x.ncols() as f64;
    x.outer_iter()
        .zip(y.outer_iter())
        .map(|(a, b)| {
            a.iter()
                .zip(b.iter())
                .map(|(p, q)| (p - q).abs())
                .sum::<f64>()
                / width
        })
        .collect()
}

/// Training objective for one record: mean absolute error plus the L1
/// activity penalty.
pub fn loss(x: &[f64], reconstruction: &[f64], hidden: &[f64], l1_lambda: f64) -> f64 {
    mean_abs_error(x, reconstruction) + l1_lambda * hidden.iter().map(|h| h.abs()).sum::<f64>()
}

pub fn mean_abs_error(x: &[f64], reconstruction: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), reconstruction.len());
    x.iter()
        .zip(reconstruction)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / x.len() as f64
}

/// A trained network together with everything needed to score raw data
/// for its node.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderModel {
    pub node_id: String,
    pub network: Network,
    pub hyper: TrainConfig,
    pub norm: NormalizationParams,
    /// Mean reconstruction error over the training split.
    pub train_mae: f64,
}

/// Rows scored per forward pass when scoring many records.
const SCORE_CHUNK: usize = 512;

impl AutoencoderModel {
    pub fn features(&self) -> usize {
        self.network.features()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Forward> {
        self.network.forward(x)
    }

    /// Mean absolute difference between a normalized input and its
    /// reconstruction. The regularization term is not included.
    pub fn reconstruction_error(&self, x: &[f64]) -> Result<f64> {
        let f = self.network.forward(x)?;
        Ok(mean_abs_error(x, &f.reconstruction))
    }

    /// Largest single-feature absolute residual of a record.
    pub fn max_feature_error(&self, x: &[f64]) -> Result<f64> {
        let f = self.network.forward(x)?;
        Ok(x.iter()
            .zip(&f.reconstruction)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Reconstruction errors for normalized records, in input order.
    pub fn score_records(&self, records: &[TelemetryRecord]) -> Result<Vec<f64>> {
        let rows = records_to_matrix(records, self.features())?;
        Ok(self.score_matrix(rows.view()))
    }

    pub fn score_matrix(&self, rows: ArrayView2<'_, f64>) -> Vec<f64> {
        let mut out = Vec::with_capacity(rows.nrows());
        for chunk in rows.axis_chunks_iter(Axis(0), SCORE_CHUNK) {
            out.extend(self.network.reconstruction_errors(chunk));
        }
        out
    }
}

/// Stacks record features into a `records × width` matrix, rejecting
/// width mismatches and non-finite values.
pub fn records_to_matrix(records: &[TelemetryRecord], width: usize) -> Result<Array2<f64>> {
    let mut data = Vec::with_capacity(records.len() * width);
    for r in records {
        let x = r.features.as_slice();
        if x.len() != width {
            return Err(Error::WidthMismatch {
                expected: width,
                found: x.len(),
            });
        }
        if !r.features.is_finite() {
            return Err(Error::InvalidInput(format!(
                "non-finite feature in {}",
                r.id()
            )));
        }
        data.extend_from_slice(x);
    }
    Ok(Array2::from_shape_vec((records.len(), width), data).expect("shape matches data"))
}
