#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vidcast_core::imaging::{Frame, FrameSequence};
use vidcast_core::model::ModelConfig;

/// 8×8 frames, `d_y = d_z = 4`, `k = 3`, `H = 2`.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        d_y: 4,
        d_z: 4,
        k: 3,
        horizon: 2,
        image_size: (8, 8),
        content_frames: 3,
        base_channels: 2,
        enc_dim: 8,
        hidden_dim: 8,
        content_dim: 4,
        ..ModelConfig::default()
    }
}

pub fn random_frame(rng: &mut impl Rng, size: (usize, usize)) -> Frame {
    let px = (0..size.0 * size.1).map(|_| rng.random_range(0.0..255.0)).collect();
    Frame::new(size.0, size.1, px).unwrap()
}

pub fn random_sequences(seed: u64, n: usize, len: usize, size: (usize, usize)) -> Vec<FrameSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| FrameSequence::new((0..len).map(|_| random_frame(&mut rng, size)).collect(), None).unwrap())
        .collect()
}

use vidcast_core::model::{ElboNoise, Srvp};

/// Denominator floor for relative gradient error; central differences on a
/// loss of a few hundred nats carry ~1e-9 absolute rounding noise.
pub const GRAD_CHECK_FLOOR: f64 = 1e-4;

pub struct GradCheck {
    pub max_rel: f64,
    pub worst: String,
    pub checked: usize,
}

/// Compares analytic gradients of the negative ELBO with central
/// differences, `|a − n| / max(|a|, |n|, floor)` per scalar.
pub fn grad_check(model: &Srvp, seqs: &[FrameSequence], noise: &ElboNoise, h: f64, floor: f64) -> GradCheck {
    let (_, grads) = model.elbo_with_grads(seqs, noise).unwrap();
    let cfg = model.config().clone();
    let mut out = GradCheck {
        max_rel: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let base = model.params().clone();
    for (pi, (name, tensor)) in base.iter().enumerate() {
        for j in 0..tensor.numel() {
            let eval = |delta: f64| {
                let mut store = base.clone();
                store.tensors_mut()[pi].data_mut()[j] += delta;
                let m = Srvp::from_params(cfg.clone(), store).unwrap();
                m.elbo_loss(seqs, noise).unwrap().total
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let analytic = grads[pi].data()[j];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
            out.checked += 1;
            if rel > out.max_rel {
                out.max_rel = rel;
                out.worst = format!("{name}[{j}]: analytic {analytic:e} numeric {numeric:e}");
            }
        }
    }
    out
}
