use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use vidcast_autograd::{Adam, AdamConfig, Tensor};

use super::{check_sequences, unit_pixels, ElboNoise, ModelConfig, Srvp};
use crate::error::{Error, Result};
use crate::imaging::FrameSequence;
use crate::seed;

/// Sequences per graph when scoring validation data.
const VAL_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            epochs: 200,
            batch_size: 16,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(self.lr > 0.0 && (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0) {
            return Err(Error::invalid("invalid Adam hyperparameters"));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean negative ELBO over the epoch's minibatches.
    pub train: f64,
    /// Negative ELBO on the validation set with zero noise.
    pub val: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    /// Epoch whose parameters were kept; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochLoss>,
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub model: Srvp,
    pub meta: TrainingMeta,
}

/// Sequences flattened once to `[frames * pixels]` in `[0, 1]`.
struct Packed {
    seqs: Vec<Vec<f64>>,
    frames: usize,
    npix: usize,
    size: (usize, usize),
}

impl Packed {
    fn new(seqs: &[FrameSequence], cfg: &ModelConfig) -> Self {
        Packed {
            seqs: seqs
                .iter()
                .map(|s| s.frames().iter().flat_map(unit_pixels).collect())
                .collect(),
            frames: cfg.seq_len(),
            npix: cfg.image_size.0 * cfg.image_size.1,
            size: cfg.image_size,
        }
    }

    /// Time-major `[frames * b, 1, h, w]` tensor for the given sequences.
    fn batch(&self, idx: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(self.frames * idx.len() * self.npix);
        for t in 0..self.frames {
            for &i in idx {
                data.extend_from_slice(&self.seqs[i][t * self.npix..(t + 1) * self.npix]);
            }
        }
        Tensor::new(vec![self.frames * idx.len(), 1, self.size.0, self.size.1], data).expect("packed shape")
    }
}

/// Fits a fresh model by minimizing the negative ELBO with Adam.
///
/// Every stochastic draw (initialization, batch order, reparameterization
/// noise) derives from `seed`. The returned parameters are those of the epoch
/// with the lowest validation loss, or the lowest training loss when `val`
/// is empty.
pub fn train(
    train: &[FrameSequence],
    val: &[FrameSequence],
    cfg: ModelConfig,
    tcfg: &TrainConfig,
    seed: u64,
) -> Result<TrainedModel> {
    cfg.validate()?;
    tcfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    check_sequences(&cfg, train, cfg.seq_len())?;
    check_sequences(&cfg, val, cfg.seq_len())?;

    let mut model = Srvp::new(cfg.clone(), seed::derive(seed, "init"))?;
    let mut adam = Adam::new(tcfg.adam(), model.params());
    let mut order_rng = seed::rng(seed, "batch_order");
    let mut noise_rng = seed::rng(seed, "elbo_noise");
    let train_data = Packed::new(train, &cfg);
    let val_data = Packed::new(val, &cfg);
    let frames = cfg.seq_len();

    let mut history = Vec::with_capacity(tcfg.epochs);
    let mut best: Option<(f64, usize, vidcast_autograd::ParamStore)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=tcfg.epochs {
        order.shuffle(&mut order_rng);
        let mut sum = 0.0;
        for idx in order.chunks(tcfg.batch_size) {
            let x = train_data.batch(idx);
            let noise = ElboNoise::sample(&cfg, idx.len(), frames, &mut noise_rng);
            let (loss, grads) = model.elbo_with_grads_tensor(x, idx.len(), frames, &noise);
            if !loss.total.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    loss: loss.total,
                });
            }
            adam.step(model.params_mut(), &grads);
            sum += loss.total * idx.len() as f64;
        }
        let train_loss = sum / train.len() as f64;
        let val_loss = (!val.is_empty()).then(|| validation_loss(&model, &val_data));
        if let Some(v) = val_loss.filter(|v| !v.is_finite()) {
            return Err(Error::Diverged { epoch, loss: v });
        }
        log::debug!("epoch {epoch}: train {train_loss:.4} val {val_loss:?}");
        let score = val_loss.unwrap_or(train_loss);
        if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
            best = Some((score, epoch, model.params().clone()));
        }
        history.push(EpochLoss {
            epoch,
            train: train_loss,
            val: val_loss,
        });
    }
    let best_epoch = best.map(|(_, epoch, params)| {
        model.set_params(params);
        epoch
    });
    Ok(TrainedModel {
        model,
        meta: TrainingMeta {
            seed,
            epochs: tcfg.epochs,
            best_epoch,
            history,
        },
    })
}

fn validation_loss(model: &Srvp, data: &Packed) -> f64 {
    let cfg = model.config();
    let idx: Vec<usize> = (0..data.seqs.len()).collect();
    let mut sum = 0.0;
    for chunk in idx.chunks(VAL_CHUNK) {
        let noise = ElboNoise::zeros(cfg, chunk.len(), data.frames);
        let loss = model.elbo_tensor(data.batch(chunk), chunk.len(), data.frames, &noise);
        sum += loss.total * chunk.len() as f64;
    }
    sum / data.seqs.len() as f64
}
