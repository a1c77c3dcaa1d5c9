use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{Adam, MlpParams};
use super::norm::{MinMax, NormalizationSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Paired input/target rows, each tagged with its split.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub splits: Vec<Split>,
}

impl TrainingSet {
    pub fn push(&mut self, input: Vec<f64>, target: Vec<f64>, split: Split) {
        self.inputs.push(input);
        self.targets.push(target);
        self.splits.push(split);
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn rows(&self, split: Split) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut x = Vec::new();
        let mut t = Vec::new();
        for k in 0..self.len() {
            if self.splits[k] == split {
                x.push(self.inputs[k].clone());
                t.push(self.targets[k].clone());
            }
        }
        (x, t)
    }

    pub fn count(&self, split: Split) -> usize {
        self.splits.iter().filter(|&&s| s == split).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many epochs without a validation improvement.
    pub patience: usize,
    /// Learning rate at the last epoch as a fraction of the initial one,
    /// reached by cosine annealing. 1.0 keeps the step constant.
    pub final_lr_fraction: f64,
    /// Seeds both the initial weights and the minibatch order.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { hidden: vec![32, 32], learning_rate: 1e-3, batch_size: 128, epochs: 500, patience: 50, final_lr_fraction: 1.0, seed: 0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
}

/// A trained network together with the scaling it was trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedNet {
    pub params: MlpParams,
    pub norm: NormalizationSpec,
}

impl TrainedNet {
    /// Raw input in, denormalized output out.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        let y = self.params.forward(&self.norm.inputs.normalize(input))?;
        Ok(self.norm.targets.denormalize(&y))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let net: TrainedNet = serde_json::from_str(s)?;
        net.params.validate()?;
        if net.norm.inputs.dim() != net.params.input_dim() || net.norm.targets.dim() != net.params.output_dim() {
            return Err(Error::InvalidInput("normalization does not match layer sizes".into()));
        }
        Ok(net)
    }
}

fn columns(rows: &[Vec<f64>], norm: &MinMax) -> DMatrix<f64> {
    let d = norm.dim();
    let mut m = DMatrix::zeros(d, rows.len());
    for (j, r) in rows.iter().enumerate() {
        for (i, v) in norm.normalize(r).into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    m
}

/// Fits a network on the train split with Adam, keeping the parameters
/// with the lowest validation loss. Normalization bounds come from the
/// train split only.
pub fn train_net(data: &TrainingSet, cfg: &TrainConfig) -> Result<(TrainedNet, TrainHistory)> {
    let (xr, tr) = data.rows(Split::Train);
    if xr.is_empty() {
        return Err(Error::InvalidInput("training split is empty".into()));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::InvalidInput("batch size, epochs and learning rate must be positive".into()));
    }
    let norm = NormalizationSpec { inputs: MinMax::fit(&xr)?, targets: MinMax::fit(&tr)? };
    let x = columns(&xr, &norm.inputs);
    let t = columns(&tr, &norm.targets);
    let (xv, tv) = data.rows(Split::Val);
    let val = if xv.is_empty() { None } else { Some((columns(&xv, &norm.inputs), columns(&tv, &norm.targets))) };

    let mut sizes = vec![norm.inputs.dim()];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(norm.targets.dim());
    let mut params = MlpParams::random(&sizes, cfg.seed)?;
    let mut opt = Adam::new(cfg.learning_rate, params.num_params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..x.ncols()).collect();

    let mut history = TrainHistory::default();
    let mut best = (f64::INFINITY, params.clone());
    let mut since_best = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let progress = epoch as f64 / cfg.epochs.max(2).saturating_sub(1) as f64;
        let f = cfg.final_lr_fraction;
        opt.lr = cfg.learning_rate * (f + (1.0 - f) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let xb = x.select_columns(chunk);
            let tb = t.select_columns(chunk);
            let (loss, grad) = params.loss_and_gradient(&xb, &tb);
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("non-finite training loss at epoch {epoch}")));
            }
            epoch_loss += loss * chunk.len() as f64;
            opt.update(&mut params, &grad);
        }
        history.train_loss.push(epoch_loss / x.ncols() as f64);
        let v = match &val {
            Some((xv, tv)) => params.loss(xv, tv),
            None => *history.train_loss.last().unwrap(),
        };
        if !v.is_finite() {
            return Err(Error::Diverged(format!("non-finite validation loss at epoch {epoch}")));
        }
        history.val_loss.push(v);
        if v < best.0 {
            best = (v, params.clone());
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    Ok((TrainedNet { params: best.1, norm }, history))
}
