//! Stochastic latent residual video predictor.
//!
//! Frames are encoded to vectors `x̃_t`. A content vector `w` is pooled from
//! the conditioning frames, an initial state `y_1` is inferred from them, and
//! the state evolves by residual steps `y_{t+1} = y_t + f(z_{t+1})`. During
//! training `z_t` comes from a recurrent posterior over the encodings; at
//! test time it comes from a learned Gaussian prior given `y_{t-1}`. A decoder
//! maps `(w, y_t)` back to a frame.

mod checkpoint;
mod net;
mod train;

use serde::{Deserialize, Serialize};
use vidcast_autograd::Tensor;

use crate::error::{Error, Result};
use crate::imaging::{Frame, FrameSequence, MAX_PIXEL};

pub use checkpoint::{CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use net::Srvp;
pub use train::{train, EpochLoss, TrainConfig, TrainedModel, TrainingMeta};

/// Bounds applied to every predicted log standard deviation.
pub const LOG_STD_MIN: f64 = -7.0;
pub const LOG_STD_MAX: f64 = 7.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EncoderDepth {
    /// Four 3×3 conv blocks.
    #[default]
    Small,
    /// Five VGG-style stages of 2, 2, 3, 3, 3 convs.
    VggLike,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_y: usize,
    pub d_z: usize,
    /// Conditioning frames.
    pub k: usize,
    pub horizon: usize,
    pub image_size: (usize, usize),
    pub encoder_depth: EncoderDepth,
    /// Leading conditioning frames pooled into the content vector.
    pub content_frames: usize,
    pub kl_weight: f64,
    pub l2_weight: f64,
    /// Observation noise std on `[0, 1]`-scaled pixels.
    pub obs_std: f64,
    /// Channels of the first conv block; later blocks multiply it.
    pub base_channels: usize,
    pub enc_dim: usize,
    pub hidden_dim: usize,
    pub content_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_y: 50,
            d_z: 50,
            k: 5,
            horizon: 10,
            image_size: (64, 64),
            encoder_depth: EncoderDepth::Small,
            content_frames: 5,
            kl_weight: 1.0,
            l2_weight: 1e-4,
            obs_std: 1.0,
            base_channels: 8,
            enc_dim: 64,
            hidden_dim: 64,
            content_dim: 32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_y", self.d_y),
            ("d_z", self.d_z),
            ("k", self.k),
            ("horizon", self.horizon),
            ("image height", self.image_size.0),
            ("image width", self.image_size.1),
            ("content_frames", self.content_frames),
            ("base_channels", self.base_channels),
            ("enc_dim", self.enc_dim),
            ("hidden_dim", self.hidden_dim),
            ("content_dim", self.content_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("model {name} must be positive")));
        }
        if self.content_frames > self.k {
            return Err(Error::invalid(format!(
                "content_frames {} exceeds k {}",
                self.content_frames, self.k
            )));
        }
        for (name, v) in [("kl_weight", self.kl_weight), ("l2_weight", self.l2_weight)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        if !(self.obs_std > 0.0 && self.obs_std.is_finite()) {
            return Err(Error::invalid(format!("obs_std must be positive, got {}", self.obs_std)));
        }
        Ok(())
    }

    /// Frames per training sequence.
    pub fn seq_len(&self) -> usize {
        self.k + self.horizon
    }
}

/// Diagonal Gaussian; `log_std` is already clamped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl GaussianParams {
    pub fn new(mean: Vec<f64>, log_std: Vec<f64>) -> Result<Self> {
        if mean.len() != log_std.len() {
            return Err(Error::LengthMismatch {
                expected: mean.len(),
                found: log_std.len(),
            });
        }
        let log_std = log_std.into_iter().map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect();
        Ok(Self { mean, log_std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|v| v.exp()).collect()
    }

    /// `mean + std · eps` (reparameterized draw).
    pub fn sample_with(&self, eps: &[f64]) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.log_std)
            .zip(eps)
            .map(|((m, l), e)| m + l.exp() * e)
            .collect()
    }

    /// Closed-form `KL(self ‖ other)` per dimension.
    pub fn kl_elementwise(&self, other: &GaussianParams) -> Vec<f64> {
        (0..self.dim())
            .map(|i| {
                kl_scalar(
                    self.mean[i],
                    self.log_std[i],
                    other.mean[i],
                    other.log_std[i],
                )
            })
            .collect()
    }

    pub fn kl(&self, other: &GaussianParams) -> f64 {
        self.kl_elementwise(other).iter().sum()
    }
}

/// `KL(N(mq, e^{lq}) ‖ N(mp, e^{lp}))`, written so equal inputs give exactly 0.
pub(crate) fn kl_scalar(mq: f64, lq: f64, mp: f64, lp: f64) -> f64 {
    let d = mq - mp;
    (lp - lq) + 0.5 * ((2.0 * (lq - lp)).exp() + d * d * (-2.0 * lp).exp()) - 0.5
}

/// One point of a latent trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub w: Vec<f64>,
}

/// Unit-normal draws for one ELBO evaluation on a batch of `b` sequences of
/// `t` frames: `eps_y` is `[b, d_y]`, `eps_z[i]` is `[b, d_z]` for step `i + 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct ElboNoise {
    pub eps_y: Tensor,
    pub eps_z: Vec<Tensor>,
}

impl ElboNoise {
    /// All-zero draws: every latent equals its posterior mean.
    pub fn zeros(cfg: &ModelConfig, batch: usize, frames: usize) -> Self {
        Self {
            eps_y: Tensor::zeros(vec![batch, cfg.d_y]),
            eps_z: (1..frames).map(|_| Tensor::zeros(vec![batch, cfg.d_z])).collect(),
        }
    }

    pub fn sample(cfg: &ModelConfig, batch: usize, frames: usize, rng: &mut impl rand::Rng) -> Self {
        let mut draw = |n: usize, d: usize| {
            let data = (0..n * d).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
            Tensor::new(vec![n, d], data).expect("shape matches data")
        };
        let eps_y = draw(batch, cfg.d_y);
        let eps_z = (1..frames).map(|_| draw(batch, cfg.d_z)).collect();
        Self { eps_y, eps_z }
    }
}

/// Components of the negative ELBO for one batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub nll: f64,
    pub kl_y: f64,
    /// One entry per transition step `z_2 .. z_T`.
    pub kl_z: Vec<f64>,
    pub l2: f64,
}

impl LossBreakdown {
    pub fn kl_z_total(&self) -> f64 {
        self.kl_z.iter().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PredictMode {
    /// Posterior means for conditioning, prior means for the rollout.
    #[default]
    Mean,
    /// Average of independent stochastic rollouts.
    Sample,
}

/// Pixels of one frame scaled to `[0, 1]`.
pub(crate) fn unit_pixels(frame: &Frame) -> impl Iterator<Item = f64> + '_ {
    frame.pixels().iter().map(|p| p / MAX_PIXEL)
}

/// `[n, 1, h, w]` tensor from frames, in the given order.
pub(crate) fn frames_tensor(frames: &[&Frame]) -> Tensor {
    let (h, w) = frames.first().map_or((0, 0), |f| f.size());
    let data = frames.iter().flat_map(|f| unit_pixels(f)).collect();
    Tensor::new(vec![frames.len(), 1, h, w], data).expect("frame sizes checked by caller")
}

pub(crate) fn check_sequences(cfg: &ModelConfig, seqs: &[FrameSequence], len: usize) -> Result<()> {
    for s in seqs {
        if s.len() != len {
            return Err(Error::LengthMismatch {
                expected: len,
                found: s.len(),
            });
        }
        if let Some(size) = s.size() {
            if size != cfg.image_size {
                return Err(Error::invalid(format!(
                    "frames are {size:?} but the model expects {:?}",
                    cfg.image_size
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_validate() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!((c.d_y, c.d_z, c.k, c.horizon, c.image_size), (50, 50, 5, 10, (64, 64)));
        assert_eq!((c.kl_weight, c.l2_weight), (1.0, 1e-4));
    }

    #[test]
    fn rejects_bad_config() {
        let c = ModelConfig { d_y: 0, ..ModelConfig::default() };
        assert!(c.validate().is_err());
        let c = ModelConfig { content_frames: 6, ..ModelConfig::default() };
        assert!(c.validate().is_err());
        let c = ModelConfig { kl_weight: -1.0, ..ModelConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn gaussian_clamps_log_std() {
        let g = GaussianParams::new(vec![0.0, 0.0], vec![-20.0, 9.0]).unwrap();
        assert_eq!(g.log_std, vec![LOG_STD_MIN, LOG_STD_MAX]);
        assert!(GaussianParams::new(vec![0.0], vec![]).is_err());
    }

    #[test]
    fn zero_std_sample_is_mean() {
        let g = GaussianParams {
            mean: vec![1.5, -2.0],
            log_std: vec![f64::NEG_INFINITY; 2],
        };
        assert_eq!(g.sample_with(&[3.0, -7.0]), g.mean);
    }

    /// Numerical integration of `∫ q ln(q/p)` for a 1-D pair.
    fn kl_quadrature(mq: f64, sq: f64, mp: f64, sp: f64) -> f64 {
        let logpdf = |x: f64, m: f64, s: f64| -0.5 * ((x - m) / s).powi(2) - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        let (lo, hi) = (mq - 12.0 * sq, mq + 12.0 * sq);
        let n = 200_000;
        let dx = (hi - lo) / n as f64;
        (0..n)
            .map(|i| {
                let x = lo + (i as f64 + 0.5) * dx;
                let lq = logpdf(x, mq, sq);
                lq.exp() * (lq - logpdf(x, mp, sp)) * dx
            })
            .sum()
    }

    #[test]
    fn kl_matches_quadrature() {
        for &(mq, sq, mp, sp) in &[(0.3, 0.5, -0.2, 1.3), (1.0, 2.0, 0.0, 1.0), (-0.7, 0.8, 0.4, 0.6)] {
            let closed = kl_scalar(mq, f64::ln(sq), mp, f64::ln(sp));
            let numeric = kl_quadrature(mq, sq, mp, sp);
            assert!((closed - numeric).abs() < 1e-6, "{closed} vs {numeric}");
        }
    }

    proptest! {
        #[test]
        fn kl_zero_iff_equal(
            m in prop::collection::vec(-5.0f64..5.0, 3),
            l in prop::collection::vec(-3.0f64..3.0, 3),
            dm in prop::collection::vec(-1.0f64..1.0, 3),
            dl in prop::collection::vec(-1.0f64..1.0, 3),
        ) {
            let q = GaussianParams::new(m.clone(), l.clone()).unwrap();
            prop_assert_eq!(q.kl(&q.clone()), 0.0);
            let p = GaussianParams::new(
                m.iter().zip(&dm).map(|(a, b)| a + b).collect(),
                l.iter().zip(&dl).map(|(a, b)| a + b).collect(),
            ).unwrap();
            let kl = q.kl(&p);
            prop_assert!(kl >= 0.0);
            if dm.iter().chain(&dl).any(|v| v.abs() > 1e-3) {
                prop_assert!(kl > 0.0);
            }
        }
    }
}
