mod common;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vidcast_core::imaging::{Frame, FrameSequence};
use vidcast_core::model::*;

fn tiny_model(seed: u64) -> Srvp {
    Srvp::new(tiny_config(), seed).unwrap()
}

fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn encoding_is_deterministic_and_sized() {
    let m = tiny_model(1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f = random_frame(&mut rng, (8, 8));
    let a = m.encode_frame(&f).unwrap();
    assert_eq!(a, m.encode_frame(&f).unwrap());
    assert_eq!(a.len(), m.config().enc_dim);
    for v in [0.0, 255.0] {
        let e = m.encode_frame(&Frame::uniform(8, 8, v).unwrap()).unwrap();
        assert!(e.iter().all(|x| x.is_finite()));
    }
    assert!(m.encode_frame(&Frame::uniform(4, 8, 0.0).unwrap()).is_err());
}

#[test]
fn vgg_like_encoder_builds_and_decodes_to_size() {
    let cfg = ModelConfig {
        encoder_depth: EncoderDepth::VggLike,
        image_size: (16, 16),
        ..tiny_config()
    };
    let m = Srvp::new(cfg, 4).unwrap();
    let f = m.decode_latent(&[0.1; 4], &[0.2; 4]).unwrap();
    assert_eq!(f.size(), (16, 16));
    assert_eq!(m.encode_frame(&Frame::uniform(16, 16, 30.0).unwrap()).unwrap().len(), 8);
}

#[test]
fn content_is_permutation_invariant() {
    let m = tiny_model(3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (a, b, c) = (random_vec(&mut rng, 8), random_vec(&mut rng, 8), random_vec(&mut rng, 8));
    let w1 = m.infer_content(&[a.clone(), b.clone(), c.clone()]).unwrap();
    let w2 = m.infer_content(&[c, a.clone(), b]).unwrap();
    assert!(max_abs_diff(&w1, &w2) < 1e-6);
    // mean pooling: duplicating a frame changes nothing
    let single = m.infer_content(std::slice::from_ref(&a)).unwrap();
    let double = m.infer_content(&[a.clone(), a]).unwrap();
    assert!(max_abs_diff(&single, &double) < 1e-12);
    assert_eq!(single.len(), m.config().content_dim);
    assert!(m.infer_content(&[]).is_err());
}

#[test]
fn initial_state_shapes_and_sensitivity() {
    let m = tiny_model(5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let enc1: Vec<Vec<f64>> = (0..3).map(|_| random_vec(&mut rng, 8)).collect();
    let enc2: Vec<Vec<f64>> = (0..3).map(|_| random_vec(&mut rng, 8)).collect();
    let q1 = m.infer_initial_state(&enc1).unwrap();
    let q2 = m.infer_initial_state(&enc2).unwrap();
    assert_eq!((q1.mean.len(), q1.log_std.len()), (4, 4));
    assert!(max_abs_diff(&q1.mean, &q2.mean) > 1e-6);
    let zero_std = GaussianParams {
        log_std: vec![f64::NEG_INFINITY; 4],
        ..q1.clone()
    };
    assert_eq!(zero_std.sample_with(&random_vec(&mut rng, 4)), q1.mean);
    assert!(m.infer_initial_state(&enc1[..2]).is_err());
}

#[test]
fn posterior_is_recurrent_and_order_sensitive() {
    let m = tiny_model(7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let enc: Vec<Vec<f64>> = (0..5).map(|_| random_vec(&mut rng, 8)).collect();
    let post = m.posterior_dynamics(&enc).unwrap();
    assert_eq!(post.len(), 4);
    assert!(post.iter().all(|g| g.dim() == 4));
    let rev: Vec<Vec<f64>> = enc.iter().rev().cloned().collect();
    let post_rev = m.posterior_dynamics(&rev).unwrap();
    assert!(max_abs_diff(&post[3].mean, &post_rev[3].mean) > 1e-6);
    let same = vec![enc[0].clone(); 4];
    assert_eq!(m.posterior_dynamics(&same).unwrap().len(), 3);
    assert!(m.posterior_dynamics(&enc[..1]).is_err());
}

#[test]
fn prior_is_deterministic_and_continuous() {
    let m = tiny_model(9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let y = random_vec(&mut rng, 4);
    let p = m.prior_dynamics(&y).unwrap();
    assert_eq!((p.mean.len(), p.log_std.len()), (4, 4));
    assert_eq!(p, m.prior_dynamics(&y).unwrap());
    // Lipschitz estimate from a larger step bounds the response to a small one.
    let shifted = |eps: f64| -> Vec<f64> { y.iter().map(|v| v + eps).collect() };
    let big = max_abs_diff(&m.prior_dynamics(&shifted(1e-1)).unwrap().mean, &p.mean) / 1e-1;
    let small = max_abs_diff(&m.prior_dynamics(&shifted(1e-3)).unwrap().mean, &p.mean);
    assert!(small <= 2.0 * big * 1e-3 + 1e-12, "{small} vs {big}");
    assert!(m.prior_dynamics(&[0.0; 3]).is_err());
}

#[test]
fn transition_is_residual() {
    let mut m = tiny_model(11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (y, z) = (random_vec(&mut rng, 4), random_vec(&mut rng, 4));
    let next = m.transition(&y, &z).unwrap();
    let f = m.residual(&z).unwrap();
    let step: Vec<f64> = next.iter().zip(&y).map(|(a, b)| a - b).collect();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!((norm(&step) - norm(&f)).abs() < 1e-12);
    m.zero_transition();
    assert_eq!(m.transition(&y, &z).unwrap(), y);
    let twice = m.transition(&m.transition(&y, &z).unwrap(), &z).unwrap();
    assert_eq!(twice, y);
    assert!(m.transition(&y, &[0.0; 3]).is_err());
}

#[test]
fn decoder_output_is_bounded_and_deterministic() {
    let m = tiny_model(13);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let (w, y) = (random_vec(&mut rng, 4), random_vec(&mut rng, 4));
    let f = m.decode_latent(&w, &y).unwrap();
    assert_eq!(f.size(), (8, 8));
    assert!(f.pixels().iter().all(|p| (0.0..=255.0).contains(p)));
    assert_eq!(f, m.decode_latent(&w, &y).unwrap());
    assert!(m.decode_latent(&w, &[0.0; 5]).is_err());
}

#[test]
fn kl_vanishes_when_posterior_copies_prior() {
    let m = tiny_model(15);
    let p = m.prior_dynamics(&[0.3, -0.2, 0.1, 0.5]).unwrap();
    assert_eq!(p.kl(&p.clone()), 0.0);
    assert!(p.kl_elementwise(&p).iter().all(|v| *v == 0.0));
}

#[test]
fn elbo_components_are_consistent() {
    let cfg = tiny_config();
    let m = Srvp::new(cfg.clone(), 16).unwrap();
    let seqs = random_sequences(17, 3, cfg.seq_len(), cfg.image_size);
    let noise = ElboNoise::sample(&cfg, 3, cfg.seq_len(), &mut ChaCha8Rng::seed_from_u64(18));
    let l = m.elbo_loss(&seqs, &noise).unwrap();
    assert!(l.kl_y >= 0.0);
    assert_eq!(l.kl_z.len(), cfg.seq_len() - 1);
    assert!(l.kl_z.iter().all(|v| *v >= 0.0));
    let expected = l.nll + cfg.kl_weight * (l.kl_y + l.kl_z_total()) + cfg.l2_weight * l.l2;
    assert!((l.total - expected).abs() < 1e-9 * l.total.abs());
    assert!((l.l2 - m.params().sum_sq()).abs() < 1e-9 * l.l2);
    // Gaussian NLL with unit std on [0, 1] pixels, averaged over sequences
    let recon_floor = 0.5 * (2.0 * std::f64::consts::PI).ln() * (cfg.seq_len() * 64) as f64;
    assert!(l.nll >= recon_floor);

    let wrong_len = random_sequences(19, 3, cfg.seq_len() - 1, cfg.image_size);
    assert!(m.elbo_loss(&wrong_len, &noise).is_err());
    assert!(m.elbo_loss(&seqs[..2], &noise).is_err());
}

#[test]
fn gradient_matches_finite_differences() {
    let cfg = tiny_config();
    let model = Srvp::new(cfg.clone(), 3).unwrap();
    let seqs = random_sequences(1, 2, cfg.seq_len(), cfg.image_size);
    let noise = ElboNoise::sample(&cfg, 2, cfg.seq_len(), &mut ChaCha8Rng::seed_from_u64(9));
    let r = grad_check(&model, &seqs, &noise, 1e-5, GRAD_CHECK_FLOOR);
    assert_eq!(r.checked, model.params().num_scalars());
    assert!(r.max_rel < 1e-4, "{} at {}", r.max_rel, r.worst);
}

#[test]
fn zero_transition_freezes_rollout() {
    let mut m = tiny_model(20);
    m.zero_transition();
    let cond = random_sequences(21, 1, 3, (8, 8)).remove(0);
    let states = m.rollout(&cond, 6).unwrap();
    assert_eq!(states.len(), 3 + 6);
    for s in &states[1..] {
        assert!(max_abs_diff(&s.y, &states[0].y) < 1e-6);
    }
    let pred = m.predict(&cond, 6, PredictMode::Mean, 1, 0).unwrap();
    for f in pred.frames() {
        assert!(max_abs_diff(f.pixels(), pred.frames()[0].pixels()) < 1e-6);
    }
}

#[test]
fn prediction_contract() {
    let m = tiny_model(22);
    let conds = random_sequences(23, 3, 3, (8, 8));
    let a = m.predict_batch(&conds, 10, PredictMode::Mean, 1, 0).unwrap();
    let b = m.predict_batch(&conds, 10, PredictMode::Mean, 1, 99).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 3);
    assert!(a.iter().all(|s| s.len() == 10));
    // batching does not change a sequence's prediction
    let single = m.predict(&conds[1], 10, PredictMode::Mean, 1, 0).unwrap();
    for (x, y) in single.frames().iter().zip(a[1].frames()) {
        assert!(max_abs_diff(x.pixels(), y.pixels()) < 1e-9);
    }
    let short = FrameSequence::new(conds[0].frames()[..2].to_vec(), None).unwrap();
    assert!(m.predict(&short, 2, PredictMode::Mean, 1, 0).is_err());
    assert!(m.predict(&conds[0], 2, PredictMode::Sample, 0, 0).is_err());
}

#[test]
fn sample_mode_average_converges() {
    let m = tiny_model(24);
    let cond = random_sequences(25, 1, 3, (8, 8)).remove(0);
    // Spread of independent n-sample estimates should shrink roughly as 1/sqrt(n).
    let spread = |n: usize| {
        let est: Vec<Vec<f64>> = (0..8)
            .map(|s| m.predict(&cond, 2, PredictMode::Sample, n, 100 + s).unwrap().frames()[1].pixels().to_vec())
            .collect();
        let npix = est[0].len();
        (0..npix)
            .map(|i| {
                let mean = est.iter().map(|e| e[i]).sum::<f64>() / est.len() as f64;
                (est.iter().map(|e| (e[i] - mean).powi(2)).sum::<f64>() / (est.len() - 1) as f64).sqrt()
            })
            .sum::<f64>()
            / npix as f64
    };
    let (s4, s64) = (spread(4), spread(64));
    assert!(s4 > 0.0);
    let ratio = s64 / s4;
    // ideal ratio is 1/4
    assert!(ratio > 0.1 && ratio < 0.45, "ratio {ratio}");
}

#[test]
fn training_is_deterministic_and_zero_epochs_is_identity() {
    let cfg = tiny_config();
    let data = random_sequences(26, 6, cfg.seq_len(), cfg.image_size);
    let tcfg = TrainConfig {
        epochs: 3,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let a = train(&data[..4], &data[4..], cfg.clone(), &tcfg, 7).unwrap();
    let b = train(&data[..4], &data[4..], cfg.clone(), &tcfg, 7).unwrap();
    assert_eq!(a.meta.history.len(), 3);
    for (x, y) in a.meta.history.iter().zip(&b.meta.history) {
        assert!((x.train - y.train).abs() < 1e-6);
        assert!(x.val.is_some());
    }
    assert_eq!(a.model.params(), b.model.params());

    let zero = train(&data, &[], cfg.clone(), &TrainConfig { epochs: 0, ..tcfg.clone() }, 7).unwrap();
    assert!(zero.meta.history.is_empty() && zero.meta.best_epoch.is_none());
    let init = Srvp::new(cfg.clone(), vidcast_core::seed::derive(7, "init")).unwrap();
    assert_eq!(zero.model.params(), init.params());

    assert!(train(&[], &[], cfg, &tcfg, 7).is_err());
}

#[test]
fn checkpoint_roundtrip() {
    let cfg = tiny_config();
    let data = random_sequences(27, 4, cfg.seq_len(), cfg.image_size);
    let tcfg = TrainConfig {
        epochs: 2,
        batch_size: 2,
        ..TrainConfig::default()
    };
    let trained = train(&data, &[], cfg, &tcfg, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    trained.save(&path).unwrap();
    let back = TrainedModel::load(&path).unwrap();
    assert_eq!(back.model.params(), trained.model.params());
    assert_eq!(back.meta, trained.meta);
    let cond = FrameSequence::new(data[0].frames()[..3].to_vec(), None).unwrap();
    assert_eq!(
        back.model.predict(&cond, 2, PredictMode::Mean, 1, 0).unwrap(),
        trained.model.predict(&cond, 2, PredictMode::Mean, 1, 0).unwrap()
    );

    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replace("\"version\":1", "\"version\":99")).unwrap();
    assert!(matches!(TrainedModel::load(&path), Err(vidcast_core::Error::Checkpoint(_))));
}
