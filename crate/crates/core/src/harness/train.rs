//! Training loop, optimizers and the end-to-end experiment runner.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::data::{gen_keypoint_dataset, gen_mask_dataset, Dataset, Task};
use crate::harness::metrics::evaluate;
use crate::harness::net::{build_toy_net, ToyNet, ToyNetConfig, Variant};
use crate::ops;
use crate::tape::{ParamStore, Tape};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adam,
    Sgd,
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Optimizer::Adam => "adam",
            Optimizer::Sgd => "sgd",
        })
    }
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(Optimizer::Adam),
            "sgd" => Ok(Optimizer::Sgd),
            _ => Err(Error::UnknownName(s.to_string())),
        }
    }
}

/// Everything one training run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub task: Task,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: Optimizer,
    pub variant: Variant,
    pub width: usize,
    pub depth: usize,
    pub image_size: usize,
    /// Keypoints (heatmap task) or classes (mask task).
    pub maps: usize,
    pub sigma: f64,
    pub train_samples: usize,
    pub val_samples: usize,
    pub pck_radius: f64,
}

/// Desk-scale defaults: 16×16 images, width 16, depth 4, 600/200
/// samples, 12 epochs of Adam at 2e-3. A 5-seed, 3-variant comparison
/// takes about seven minutes on one core.
impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            task: Task::Heatmap,
            epochs: 12,
            batch_size: 16,
            lr: 2e-3,
            optimizer: Optimizer::Adam,
            variant: Variant::Baseline,
            width: 16,
            depth: 4,
            image_size: 16,
            maps: 4,
            sigma: 1.5,
            train_samples: 600,
            val_samples: 200,
            pck_radius: 2.0,
        }
    }
}

fn out_of_range(key: &str, message: impl Into<String>) -> Error {
    Error::OutOfRange {
        key: key.into(),
        message: message.into(),
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let at_least_one = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("width", self.width),
            ("maps", self.maps),
            ("train_samples", self.train_samples),
            ("val_samples", self.val_samples),
        ];
        for (key, v) in at_least_one {
            if v == 0 {
                return Err(out_of_range(key, "must be >= 1"));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(out_of_range("lr", format!("must be > 0, got {}", self.lr)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(out_of_range(
                "sigma",
                format!("must be > 0, got {}", self.sigma),
            ));
        }
        if !(self.pck_radius >= 0.0 && self.pck_radius.is_finite()) {
            return Err(out_of_range("pck_radius", "must be >= 0"));
        }
        if self.image_size < 4 {
            return Err(out_of_range("image_size", "must be >= 4"));
        }
        if let Some(kind) = self.variant.attention() {
            kind.validate_channels(self.width)
                .map_err(|e| out_of_range("width", e.to_string()))?;
        }
        Ok(())
    }

    /// The larger 32×32, width-32 setting (2000/500 samples, 20 epochs at
    /// 1e-3); roughly 50× the cost of the default.
    pub fn large() -> Self {
        Self {
            epochs: 20,
            lr: 1e-3,
            width: 32,
            image_size: 32,
            train_samples: 2000,
            val_samples: 500,
            ..Self::default()
        }
    }

    pub fn net_config(&self) -> ToyNetConfig {
        ToyNetConfig {
            width: self.width,
            depth: self.depth,
            in_channels: 3,
            outputs: self.maps,
            variant: self.variant,
        }
    }
}

/// One epoch of training history.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// PCK@r (heatmap) or mean IoU (mask).
    pub metric: f64,
}

/// Seed for an independent stream derived from `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

const STREAM_TRAIN_DATA: u64 = 10;
const STREAM_VAL_DATA: u64 = 11;
const STREAM_SHUFFLE: u64 = 12;

/// Training and validation sets for `cfg`.
pub fn make_datasets(cfg: &TrainConfig) -> Result<(Dataset, Dataset)> {
    let s = cfg.image_size;
    let gen = |n, stream| match cfg.task {
        Task::Heatmap => {
            gen_keypoint_dataset(n, s, s, cfg.maps, cfg.sigma, derive_seed(cfg.seed, stream))
        }
        Task::Mask => gen_mask_dataset(n, s, s, cfg.maps, derive_seed(cfg.seed, stream)),
    };
    Ok((
        gen(cfg.train_samples, STREAM_TRAIN_DATA)?,
        gen(cfg.val_samples, STREAM_VAL_DATA)?,
    ))
}

enum OptState {
    Adam {
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
        t: i32,
    },
    Sgd {
        velocity: Vec<Vec<f64>>,
    },
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const SGD_MOMENTUM: f64 = 0.9;

impl OptState {
    fn new(kind: Optimizer, store: &ParamStore) -> Self {
        let zeros = || store.iter().map(|p| vec![0.0; p.value().numel()]).collect();
        match kind {
            Optimizer::Adam => OptState::Adam {
                m: zeros(),
                v: zeros(),
                t: 0,
            },
            Optimizer::Sgd => OptState::Sgd { velocity: zeros() },
        }
    }

    /// Applies one update with gradients scaled by `scale`.
    fn step(&mut self, store: &mut ParamStore, lr: f64, scale: f64) {
        match self {
            OptState::Adam { m, v, t } => {
                *t += 1;
                let c1 = 1.0 - ADAM_BETA1.powi(*t);
                let c2 = 1.0 - ADAM_BETA2.powi(*t);
                for ((p, m), v) in store.iter_mut().zip(m).zip(v) {
                    let (value, grad) = p.value_and_grad_mut();
                    for i in 0..value.len() {
                        let g = grad[i] * scale;
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
                        value[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
            OptState::Sgd { velocity } => {
                for (p, vel) in store.iter_mut().zip(velocity) {
                    let (value, grad) = p.value_and_grad_mut();
                    for i in 0..value.len() {
                        vel[i] = SGD_MOMENTUM * vel[i] + grad[i] * scale;
                        value[i] -= lr * vel[i];
                    }
                }
            }
        }
    }
}

fn loss_var(
    tape: &mut Tape,
    task: Task,
    out: crate::tape::Var,
    target: &Tensor,
) -> Result<crate::tape::Var> {
    let t = tape.input(target.clone());
    match task {
        Task::Heatmap => tape.mse(out, t),
        Task::Mask => tape.bce_with_logits(out, t),
    }
}

/// Predictions (probabilities for masks) and mean loss over `data`.
pub fn predict_dataset(net: &ToyNet, data: &Dataset) -> Result<(Tensor, f64)> {
    let mut preds = Vec::with_capacity(data.len());
    let mut total = 0.0;
    for i in 0..data.len() {
        let out = net.predict(&data.images.sample(i)?)?;
        let target = data.targets.sample(i)?;
        let (loss, pred) = match data.task {
            Task::Heatmap => (ops::mse(&out, &target)?, out),
            Task::Mask => (ops::bce_with_logits(&out, &target)?, ops::sigmoid(&out)),
        };
        total += loss.item()?;
        preds.push(pred);
    }
    Ok((Tensor::stack(&preds)?, total / data.len() as f64))
}

/// Trains `net` on `train` for `cfg.epochs` epochs of shuffled
/// mini-batches, evaluating on `val` after each epoch.
pub fn train(
    net: &mut ToyNet,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<MetricsRecord>> {
    cfg.validate()?;
    if train.task != cfg.task || val.task != cfg.task {
        return Err(Error::Config(format!(
            "dataset task does not match configured task {}",
            cfg.task
        )));
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_SHUFFLE));
    let mut opt = OptState::new(cfg.optimizer, &net.store);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            net.store.zero_grad();
            for &i in batch {
                let mut tape = Tape::new();
                let x = tape.input(train.images.sample(i)?);
                let out = net.forward(&mut tape, x)?;
                let loss = loss_var(&mut tape, cfg.task, out, &train.targets.sample(i)?)?;
                let value = tape.value(loss).item()?;
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "training loss {value} at epoch {epoch}, batch {b}, sample {i}"
                    )));
                }
                epoch_loss += value;
                net.store.accumulate(&tape.backward(loss)?);
            }
            opt.step(&mut net.store, cfg.lr, 1.0 / batch.len() as f64);
        }
        let (preds, val_loss) = predict_dataset(net, val)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "validation loss {val_loss} at epoch {epoch}"
            )));
        }
        history.push(MetricsRecord {
            epoch,
            train_loss: epoch_loss / train.len() as f64,
            val_loss,
            metric: evaluate(&preds, &val.targets, cfg.task, cfg.pck_radius)?,
        });
    }
    Ok(history)
}

/// Outcome of [`run_experiment`].
#[derive(Clone, Debug)]
pub struct RunResult {
    pub net: ToyNet,
    pub history: Vec<MetricsRecord>,
}

impl RunResult {
    pub fn last(&self) -> MetricsRecord {
        *self.history.last().expect("at least one epoch")
    }
}

/// Generates data, builds the net and trains it, all from `cfg.seed`.
pub fn run_experiment(cfg: &TrainConfig) -> Result<RunResult> {
    cfg.validate()?;
    let (train_set, val_set) = make_datasets(cfg)?;
    let mut net = build_toy_net(cfg.net_config(), cfg.seed)?;
    let history = train(&mut net, &train_set, &val_set, cfg)?;
    Ok(RunResult { net, history })
}
