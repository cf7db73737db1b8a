use rand::Rng;
use vidcast_autograd::{BoundParams, Graph, ParamId, ParamStore, Tensor, Var};

use super::{
    check_sequences, frames_tensor, ElboNoise, EncoderDepth, GaussianParams, LatentState, LossBreakdown,
    ModelConfig, PredictMode, LOG_STD_MAX, LOG_STD_MIN,
};
use crate::error::{Error, Result};
use crate::imaging::{Frame, FrameSequence, MAX_PIXEL};
use crate::seed;

/// Sequences per graph when predicting, to bound memory.
const PREDICT_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Conv {
    w: ParamId,
    b: ParamId,
    stride: usize,
}

#[derive(Clone, Copy, Debug)]
struct ConvPlan {
    cin: usize,
    cout: usize,
    stride: usize,
}

#[derive(Clone, Debug)]
struct Arch {
    enc_convs: Vec<Conv>,
    enc_out: Dense,
    /// `(channels, height, width)` after the conv stack.
    enc_grid: (usize, usize, usize),
    content_in: Dense,
    content_out: Dense,
    init_hidden: Dense,
    init_out: Dense,
    lstm: Dense,
    post_head: Dense,
    prior_mean: [Dense; 2],
    prior_log_std: [Dense; 2],
    trans: [Dense; 2],
    dec_in: Dense,
    /// Decoder convs with a flag for a preceding 2× upsample.
    dec_convs: Vec<(Conv, bool)>,
}

fn strided(h: usize, w: usize) -> bool {
    h >= 4 && w >= 4 && h.is_multiple_of(2) && w.is_multiple_of(2)
}

fn conv_plan(cfg: &ModelConfig) -> (Vec<ConvPlan>, (usize, usize, usize)) {
    let b = cfg.base_channels;
    let stages: Vec<(usize, usize)> = match cfg.encoder_depth {
        EncoderDepth::Small => vec![(1, b), (1, 2 * b), (1, 4 * b), (1, 4 * b)],
        EncoderDepth::VggLike => vec![(2, b), (2, 2 * b), (3, 4 * b), (3, 8 * b), (3, 8 * b)],
    };
    let (mut h, mut w) = cfg.image_size;
    let mut cin = 1;
    let mut plan = Vec::new();
    for (convs, cout) in stages {
        for i in 0..convs {
            let stride = if i + 1 == convs && strided(h, w) { 2 } else { 1 };
            plan.push(ConvPlan { cin, cout, stride });
            if stride == 2 {
                h /= 2;
                w /= 2;
            }
            cin = cout;
        }
    }
    (plan, (cin, h, w))
}

impl Arch {
    fn build(cfg: &ModelConfig, add: &mut dyn FnMut(&str, &[usize], usize) -> ParamId) -> Arch {
        let mut dense = |name: &str, i: usize, o: usize| Dense {
            w: add(&format!("{name}.w"), &[i, o], i),
            b: add(&format!("{name}.b"), &[o], i),
        };
        let (plan, grid) = conv_plan(cfg);
        let hd = cfg.hidden_dim;
        let e = cfg.enc_dim;
        let flat = grid.0 * grid.1 * grid.2;

        let mut enc_convs = Vec::new();
        let mut dec_plan = Vec::new();
        for (i, p) in plan.iter().enumerate() {
            enc_convs.push((format!("enc.conv{i}"), *p));
            dec_plan.push((format!("dec.conv{i}"), *p));
        }
        let enc_out = dense("enc.out", flat, e);
        let content_in = dense("content.in", e, hd);
        let content_out = dense("content.out", hd, cfg.content_dim);
        let init_hidden = dense("init.hidden", cfg.k * e, hd);
        let init_out = dense("init.out", hd, 2 * cfg.d_y);
        let lstm = dense("post.lstm", e + hd, 4 * hd);
        let post_head = dense("post.head", hd, 2 * cfg.d_z);
        let prior_mean = [dense("prior.mean.0", cfg.d_y, hd), dense("prior.mean.1", hd, cfg.d_z)];
        let prior_log_std = [
            dense("prior.log_std.0", cfg.d_y, hd),
            dense("prior.log_std.1", hd, cfg.d_z),
        ];
        let trans = [dense("trans.0", cfg.d_z, hd), dense("trans.1", hd, cfg.d_y)];
        let dec_in = dense("dec.in", cfg.content_dim + cfg.d_y, flat);

        let mut conv = |name: &str, cin: usize, cout: usize, stride: usize| Conv {
            w: add(&format!("{name}.w"), &[cout, cin, 3, 3], cin * 9),
            b: add(&format!("{name}.b"), &[cout], cin * 9),
            stride,
        };
        let enc_convs = enc_convs
            .into_iter()
            .map(|(name, p)| conv(&name, p.cin, p.cout, p.stride))
            .collect();
        // The decoder mirrors the encoder: layer i maps cout back to cin,
        // upsampling first wherever the encoder downsampled.
        let dec_convs = dec_plan
            .into_iter()
            .rev()
            .map(|(name, p)| (conv(&name, p.cout, p.cin, 1), p.stride == 2))
            .collect();
        Arch {
            enc_convs,
            enc_out,
            enc_grid: grid,
            content_in,
            content_out,
            init_hidden,
            init_out,
            lstm,
            post_head,
            prior_mean,
            prior_log_std,
            trans,
            dec_in,
            dec_convs,
        }
    }
}

/// Network parameters plus the configuration they were built for.
#[derive(Clone, Debug)]
pub struct Srvp {
    cfg: ModelConfig,
    store: ParamStore,
    arch: Arch,
}

/// Graph handles for the scalar pieces of the negative ELBO.
pub(crate) struct ElboVars {
    pub total: Var,
    pub nll: Var,
    pub kl_y: Var,
    pub kl_z: Vec<Var>,
    pub l2: Var,
}

/// Per-step quantities of a batched posterior pass.
struct Inferred {
    w: Var,
    y1: (Var, Var),
    /// Posterior `(mean, log_std)` for `z_2 .. z_T`.
    z: Vec<(Var, Var)>,
}

impl Srvp {
    /// Fresh model with `U(±1/√fan_in)` initialization.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Srvp> {
        cfg.validate()?;
        let mut rng = seed::rng(seed, "srvp_init");
        let mut store = ParamStore::new();
        let arch = Arch::build(&cfg, &mut |name, shape, fan_in| {
            store.add_uniform(name, shape, 1.0 / (fan_in as f64).sqrt(), &mut rng)
        });
        Ok(Srvp { cfg, store, arch })
    }

    /// Rebuilds a model around existing parameters, checking names and shapes.
    pub fn from_params(cfg: ModelConfig, params: ParamStore) -> Result<Srvp> {
        cfg.validate()?;
        let mut expected = ParamStore::new();
        let arch = Arch::build(&cfg, &mut |name, shape, _| expected.add(name, Tensor::zeros(shape.to_vec())));
        if expected.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                params.len()
            )));
        }
        for ((en, et), (pn, pt)) in expected.iter().zip(params.iter()) {
            if en != pn || et.shape() != pt.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{pn}` {:?} does not match `{en}` {:?}",
                    pt.shape(),
                    et.shape()
                )));
            }
            if !pt.is_finite() {
                return Err(Error::Checkpoint(format!("parameter `{pn}` is not finite")));
            }
        }
        Ok(Srvp {
            cfg,
            store: params,
            arch,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub(crate) fn set_params(&mut self, store: ParamStore) {
        self.store = store;
    }

    /// Zeroes every parameter of the residual network `f`, so `f ≡ 0`.
    pub fn zero_transition(&mut self) {
        for d in &self.arch.trans {
            for id in [d.w, d.b] {
                self.store.get_mut(id).data_mut().fill(0.0);
            }
        }
    }

    // ---- graph building blocks ----

    fn dense(g: &mut Graph, p: &BoundParams, d: Dense, x: Var) -> Var {
        g.linear(x, p[d.w], p[d.b])
    }

    fn mlp2(g: &mut Graph, p: &BoundParams, layers: &[Dense; 2], x: Var) -> Var {
        let h = Self::dense(g, p, layers[0], x);
        let h = g.silu(h);
        Self::dense(g, p, layers[1], h)
    }

    fn split_gaussian(g: &mut Graph, x: Var, d: usize) -> (Var, Var) {
        let mean = g.narrow_cols(x, 0, d);
        let ls = g.narrow_cols(x, d, d);
        (mean, g.clamp(ls, LOG_STD_MIN, LOG_STD_MAX))
    }

    /// `[n, 1, h, w]` frames in `[0, 1]` to `[n, enc_dim]`.
    fn g_encode(&self, g: &mut Graph, p: &BoundParams, x: Var) -> Var {
        let n = g.shape(x)[0];
        let mut h = x;
        for c in &self.arch.enc_convs {
            h = g.conv2d(h, p[c.w], p[c.b], c.stride, 1);
            h = g.silu(h);
        }
        let (ch, gh, gw) = self.arch.enc_grid;
        let flat = g.reshape(h, &[n, ch * gh * gw]);
        Self::dense(g, p, self.arch.enc_out, flat)
    }

    /// Mean-pooled per-frame transform. `enc` rows are grouped by sequence,
    /// `frames` consecutive rows each.
    fn g_content(&self, g: &mut Graph, p: &BoundParams, enc: Var, frames: usize) -> Var {
        let h = Self::dense(g, p, self.arch.content_in, enc);
        let h = g.silu(h);
        let pooled = g.mean_row_groups(h, frames);
        Self::dense(g, p, self.arch.content_out, pooled)
    }

    /// `enc`: `[b, k * enc_dim]`, each row the concatenated conditioning encodings.
    fn g_initial(&self, g: &mut Graph, p: &BoundParams, enc: Var) -> (Var, Var) {
        let h = Self::dense(g, p, self.arch.init_hidden, enc);
        let h = g.silu(h);
        let o = Self::dense(g, p, self.arch.init_out, h);
        Self::split_gaussian(g, o, self.cfg.d_y)
    }

    fn g_lstm(&self, g: &mut Graph, p: &BoundParams, x: Var, h: Var, c: Var) -> (Var, Var) {
        let hd = self.cfg.hidden_dim;
        let xh = g.concat_cols(&[x, h]);
        let gates = Self::dense(g, p, self.arch.lstm, xh);
        let i = g.narrow_cols(gates, 0, hd);
        let i = g.sigmoid(i);
        let f = g.narrow_cols(gates, hd, hd);
        let f = g.sigmoid(f);
        let u = g.narrow_cols(gates, 2 * hd, hd);
        let u = g.tanh(u);
        let o = g.narrow_cols(gates, 3 * hd, hd);
        let o = g.sigmoid(o);
        let fc = g.mul(f, c);
        let iu = g.mul(i, u);
        let c = g.add(fc, iu);
        let tc = g.tanh(c);
        (g.mul(o, tc), c)
    }

    fn g_post_head(&self, g: &mut Graph, p: &BoundParams, h: Var) -> (Var, Var) {
        let o = Self::dense(g, p, self.arch.post_head, h);
        Self::split_gaussian(g, o, self.cfg.d_z)
    }

    fn g_prior(&self, g: &mut Graph, p: &BoundParams, y: Var) -> (Var, Var) {
        let mean = Self::mlp2(g, p, &self.arch.prior_mean, y);
        let ls = Self::mlp2(g, p, &self.arch.prior_log_std, y);
        (mean, g.clamp(ls, LOG_STD_MIN, LOG_STD_MAX))
    }

    fn g_residual(&self, g: &mut Graph, p: &BoundParams, z: Var) -> Var {
        Self::mlp2(g, p, &self.arch.trans, z)
    }

    /// `w: [n, content_dim]`, `y: [n, d_y]` to `[n, 1, h, w]` in `[0, 1]`.
    fn g_decode(&self, g: &mut Graph, p: &BoundParams, w: Var, y: Var) -> Var {
        let n = g.shape(y)[0];
        let wy = g.concat_cols(&[w, y]);
        let h = Self::dense(g, p, self.arch.dec_in, wy);
        let h = g.silu(h);
        let (ch, gh, gw) = self.arch.enc_grid;
        let mut h = g.reshape(h, &[n, ch, gh, gw]);
        let last = self.arch.dec_convs.len() - 1;
        for (i, (c, up)) in self.arch.dec_convs.iter().enumerate() {
            if *up {
                h = g.upsample2x(h);
            }
            h = g.conv2d(h, p[c.w], p[c.b], c.stride, 1);
            h = if i == last { g.sigmoid(h) } else { g.silu(h) };
        }
        h
    }

    fn g_sample(g: &mut Graph, (mean, ls): (Var, Var), eps: Option<Tensor>) -> Var {
        match eps {
            None => mean,
            Some(e) => {
                let e = g.constant(e);
                let s = g.exp(ls);
                let se = g.mul(s, e);
                g.add(mean, se)
            }
        }
    }

    /// Summed closed-form `KL(q ‖ p)` over all entries.
    fn g_kl(g: &mut Graph, (mq, lq): (Var, Var), (mp, lp): (Var, Var)) -> Var {
        let dl = g.sub(lp, lq);
        let r = g.sub(lq, lp);
        let r = g.scale(r, 2.0);
        let r = g.exp(r);
        let dm = g.sub(mq, mp);
        let dm2 = g.square(dm);
        let ip = g.scale(lp, -2.0);
        let ip = g.exp(ip);
        let t = g.mul(dm2, ip);
        let rt = g.add(r, t);
        let rt = g.scale(rt, 0.5);
        let kl = g.add(dl, rt);
        let kl = g.add_scalar(kl, -0.5);
        g.sum(kl)
    }

    /// Rows `t*b .. (t+1)*b` of a time-major tensor.
    fn step_rows(g: &mut Graph, x: Var, t: usize, b: usize) -> Var {
        let idx: Vec<usize> = (t * b..(t + 1) * b).collect();
        g.select_rows(x, &idx)
    }

    /// Posterior pass over time-major encodings `[frames * b, enc_dim]`.
    fn g_infer(&self, g: &mut Graph, p: &BoundParams, enc: Var, b: usize, frames: usize) -> Inferred {
        let (k, c, e) = (self.cfg.k, self.cfg.content_frames, self.cfg.enc_dim);
        let idx: Vec<usize> = (0..b).flat_map(|s| (0..c).map(move |t| t * b + s)).collect();
        let content_rows = g.select_rows(enc, &idx);
        let w = self.g_content(g, p, content_rows, c);

        let idx: Vec<usize> = (0..b).flat_map(|s| (0..k).map(move |t| t * b + s)).collect();
        let cond = g.select_rows(enc, &idx);
        let cond = g.reshape(cond, &[b, k * e]);
        let y1 = self.g_initial(g, p, cond);

        let hd = self.cfg.hidden_dim;
        let mut h = g.constant(Tensor::zeros(vec![b, hd]));
        let mut cell = g.constant(Tensor::zeros(vec![b, hd]));
        let mut z = Vec::with_capacity(frames.saturating_sub(1));
        for t in 0..frames {
            let x = Self::step_rows(g, enc, t, b);
            (h, cell) = self.g_lstm(g, p, x, h, cell);
            if t >= 1 {
                z.push(self.g_post_head(g, p, h));
            }
        }
        Inferred { w, y1, z }
    }

    /// Negative ELBO on a time-major batch `x: [frames * b, 1, h, w]`.
    pub(crate) fn g_elbo(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        x: Var,
        b: usize,
        frames: usize,
        noise: &ElboNoise,
    ) -> ElboVars {
        let cfg = &self.cfg;
        let enc = self.g_encode(g, p, x);
        let inf = self.g_infer(g, p, enc, b, frames);

        let zero_y = g.constant(Tensor::zeros(vec![b, cfg.d_y]));
        let kl_y = Self::g_kl(g, inf.y1, (zero_y, zero_y));
        let mut y = Self::g_sample(g, inf.y1, Some(noise.eps_y.clone()));
        let mut ys = vec![y];
        let mut kl_z = Vec::with_capacity(inf.z.len());
        for (i, q) in inf.z.iter().enumerate() {
            let prior = self.g_prior(g, p, y);
            kl_z.push(Self::g_kl(g, *q, prior));
            let z = Self::g_sample(g, *q, Some(noise.eps_z[i].clone()));
            let r = self.g_residual(g, p, z);
            y = g.add(y, r);
            ys.push(y);
        }
        let y_all = g.concat_rows(&ys);
        let rep: Vec<usize> = (0..frames).flat_map(|_| 0..b).collect();
        let w_all = g.select_rows(inf.w, &rep);
        let recon = self.g_decode(g, p, w_all, y_all);

        let sigma = cfg.obs_std;
        let n_pix = (frames * b * cfg.image_size.0 * cfg.image_size.1) as f64;
        let inv_b = 1.0 / b as f64;
        let diff = g.sub(recon, x);
        let sq = g.sum_sq(diff);
        let nll = g.scale(sq, 0.5 / (sigma * sigma));
        let nll = g.add_scalar(nll, n_pix * (sigma.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln()));
        let nll = g.scale(nll, inv_b);
        let kl_y = g.scale(kl_y, inv_b);
        let kl_z: Vec<Var> = kl_z.into_iter().map(|v| g.scale(v, inv_b)).collect();

        let norms: Vec<Var> = p.vars().iter().map(|&v| g.sum_sq(v)).collect();
        let l2 = g.add_scalars(&norms);

        let mut kl_parts = vec![kl_y];
        kl_parts.extend(&kl_z);
        let kl = g.add_scalars(&kl_parts);
        let kl = g.scale(kl, cfg.kl_weight);
        let l2w = g.scale(l2, cfg.l2_weight);
        let total = g.add_scalars(&[nll, kl, l2w]);
        ElboVars {
            total,
            nll,
            kl_y,
            kl_z,
            l2,
        }
    }

    fn batch_tensor(&self, seqs: &[FrameSequence]) -> Result<(Tensor, usize, usize)> {
        let frames = self.cfg.seq_len();
        check_sequences(&self.cfg, seqs, frames)?;
        if seqs.is_empty() {
            return Err(Error::EmptySplit("batch"));
        }
        let b = seqs.len();
        let ordered: Vec<&Frame> = (0..frames).flat_map(|t| seqs.iter().map(move |s| &s.frames()[t])).collect();
        Ok((frames_tensor(&ordered), b, frames))
    }

    fn check_noise(&self, noise: &ElboNoise, b: usize, frames: usize) -> Result<()> {
        let ok = noise.eps_y.shape() == [b, self.cfg.d_y]
            && noise.eps_z.len() == frames - 1
            && noise.eps_z.iter().all(|e| e.shape() == [b, self.cfg.d_z]);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("noise shapes do not match the batch"))
        }
    }

    fn breakdown(g: &Graph, v: &ElboVars) -> LossBreakdown {
        let s = |x: Var| g.value(x).data()[0];
        LossBreakdown {
            total: s(v.total),
            nll: s(v.nll),
            kl_y: s(v.kl_y),
            kl_z: v.kl_z.iter().map(|&x| s(x)).collect(),
            l2: s(v.l2),
        }
    }

    /// Negative ELBO of a batch of `k + horizon`-frame sequences.
    pub fn elbo_loss(&self, seqs: &[FrameSequence], noise: &ElboNoise) -> Result<LossBreakdown> {
        let (x, b, frames) = self.batch_tensor(seqs)?;
        self.check_noise(noise, b, frames)?;
        let mut g = Graph::new();
        let p = self.store.bind_frozen(&mut g);
        let x = g.constant(x);
        let v = self.g_elbo(&mut g, &p, x, b, frames, noise);
        Ok(Self::breakdown(&g, &v))
    }

    /// Loss and its gradient with respect to every parameter, in store order.
    pub fn elbo_with_grads(&self, seqs: &[FrameSequence], noise: &ElboNoise) -> Result<(LossBreakdown, Vec<Tensor>)> {
        let (x, b, frames) = self.batch_tensor(seqs)?;
        self.check_noise(noise, b, frames)?;
        Ok(self.elbo_with_grads_tensor(x, b, frames, noise))
    }

    pub(crate) fn elbo_with_grads_tensor(
        &self,
        x: Tensor,
        b: usize,
        frames: usize,
        noise: &ElboNoise,
    ) -> (LossBreakdown, Vec<Tensor>) {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let x = g.constant(x);
        let v = self.g_elbo(&mut g, &p, x, b, frames, noise);
        let mut grads = g.backward(v.total);
        let grads = p.collect_grads(&mut grads, &self.store);
        (Self::breakdown(&g, &v), grads)
    }

    pub(crate) fn elbo_tensor(&self, x: Tensor, b: usize, frames: usize, noise: &ElboNoise) -> LossBreakdown {
        let mut g = Graph::new();
        let p = self.store.bind_frozen(&mut g);
        let x = g.constant(x);
        let v = self.g_elbo(&mut g, &p, x, b, frames, noise);
        Self::breakdown(&g, &v)
    }

    // ---- single-item operations ----

    fn frozen(&self) -> (Graph, BoundParams) {
        let mut g = Graph::new();
        let p = self.store.bind_frozen(&mut g);
        (g, p)
    }

    fn check_frame(&self, f: &Frame) -> Result<()> {
        if f.size() != self.cfg.image_size {
            return Err(Error::invalid(format!(
                "frame is {:?} but the model expects {:?}",
                f.size(),
                self.cfg.image_size
            )));
        }
        Ok(())
    }

    fn check_dim(v: &[f64], expected: usize) -> Result<()> {
        if v.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                found: v.len(),
            });
        }
        Ok(())
    }

    fn rows_tensor(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).expect("rows validated by caller")
    }

    fn gaussian_rows(g: &Graph, (m, l): (Var, Var)) -> Vec<GaussianParams> {
        let (m, l) = (g.value(m), g.value(l));
        (0..m.rows())
            .map(|r| GaussianParams {
                mean: m.row(r).to_vec(),
                log_std: l.row(r).to_vec(),
            })
            .collect()
    }

    pub fn encode_frame(&self, frame: &Frame) -> Result<Vec<f64>> {
        Ok(self.encode_frames(std::slice::from_ref(frame))?.remove(0))
    }

    pub fn encode_frames(&self, frames: &[Frame]) -> Result<Vec<Vec<f64>>> {
        if frames.is_empty() {
            return Ok(Vec::new());
        }
        for f in frames {
            self.check_frame(f)?;
        }
        let (mut g, p) = self.frozen();
        let refs: Vec<&Frame> = frames.iter().collect();
        let x = g.constant(frames_tensor(&refs));
        let e = self.g_encode(&mut g, &p, x);
        let t = g.value(e);
        Ok((0..t.rows()).map(|r| t.row(r).to_vec()).collect())
    }

    /// Content vector from any non-empty set of encodings.
    pub fn infer_content(&self, encoded: &[Vec<f64>]) -> Result<Vec<f64>> {
        if encoded.is_empty() {
            return Err(Error::invalid("content inference needs at least one frame"));
        }
        for e in encoded {
            Self::check_dim(e, self.cfg.enc_dim)?;
        }
        let (mut g, p) = self.frozen();
        let x = g.constant(Self::rows_tensor(encoded));
        let w = self.g_content(&mut g, &p, x, encoded.len());
        Ok(g.value(w).data().to_vec())
    }

    /// Posterior over `y_1` from exactly `k` encodings.
    pub fn infer_initial_state(&self, encoded: &[Vec<f64>]) -> Result<GaussianParams> {
        if encoded.len() != self.cfg.k {
            return Err(Error::LengthMismatch {
                expected: self.cfg.k,
                found: encoded.len(),
            });
        }
        for e in encoded {
            Self::check_dim(e, self.cfg.enc_dim)?;
        }
        let (mut g, p) = self.frozen();
        let flat: Vec<f64> = encoded.concat();
        let x = g.constant(Self::rows_tensor(&[flat]));
        let q = self.g_initial(&mut g, &p, x);
        Ok(Self::gaussian_rows(&g, q).remove(0))
    }

    /// Posterior over `z_2 .. z_T` from `T >= 2` encodings in time order.
    pub fn posterior_dynamics(&self, encoded: &[Vec<f64>]) -> Result<Vec<GaussianParams>> {
        if encoded.len() < 2 {
            return Err(Error::TooFewRows {
                needed: 2,
                found: encoded.len(),
            });
        }
        for e in encoded {
            Self::check_dim(e, self.cfg.enc_dim)?;
        }
        let (mut g, p) = self.frozen();
        let hd = self.cfg.hidden_dim;
        let mut h = g.constant(Tensor::zeros(vec![1, hd]));
        let mut c = g.constant(Tensor::zeros(vec![1, hd]));
        let mut out = Vec::new();
        for (t, e) in encoded.iter().enumerate() {
            let x = g.constant(Self::rows_tensor(std::slice::from_ref(e)));
            (h, c) = self.g_lstm(&mut g, &p, x, h, c);
            if t >= 1 {
                let q = self.g_post_head(&mut g, &p, h);
                out.extend(Self::gaussian_rows(&g, q));
            }
        }
        Ok(out)
    }

    pub fn prior_dynamics(&self, y_prev: &[f64]) -> Result<GaussianParams> {
        Self::check_dim(y_prev, self.cfg.d_y)?;
        let (mut g, p) = self.frozen();
        let y = g.constant(Self::rows_tensor(&[y_prev.to_vec()]));
        let q = self.g_prior(&mut g, &p, y);
        Ok(Self::gaussian_rows(&g, q).remove(0))
    }

    /// `f(z)`, the residual added to the state.
    pub fn residual(&self, z: &[f64]) -> Result<Vec<f64>> {
        Self::check_dim(z, self.cfg.d_z)?;
        let (mut g, p) = self.frozen();
        let z = g.constant(Self::rows_tensor(&[z.to_vec()]));
        let r = self.g_residual(&mut g, &p, z);
        Ok(g.value(r).data().to_vec())
    }

    /// `y_t + f(z_next)`.
    pub fn transition(&self, y: &[f64], z_next: &[f64]) -> Result<Vec<f64>> {
        Self::check_dim(y, self.cfg.d_y)?;
        let r = self.residual(z_next)?;
        Ok(y.iter().zip(&r).map(|(a, b)| a + b).collect())
    }

    pub fn decode_latent(&self, w: &[f64], y: &[f64]) -> Result<Frame> {
        Self::check_dim(w, self.cfg.content_dim)?;
        Self::check_dim(y, self.cfg.d_y)?;
        let (mut g, p) = self.frozen();
        let wv = g.constant(Self::rows_tensor(&[w.to_vec()]));
        let yv = g.constant(Self::rows_tensor(&[y.to_vec()]));
        let x = self.g_decode(&mut g, &p, wv, yv);
        let (h, wd) = self.cfg.image_size;
        Frame::new(h, wd, to_pixels(g.value(x).data()))
    }

    // ---- prediction ----

    /// Latent trajectory in mean mode: `k` inferred states then `horizon`
    /// prior-mean rollout states.
    pub fn rollout(&self, conditioning: &FrameSequence, horizon: usize) -> Result<Vec<LatentState>> {
        check_sequences(&self.cfg, std::slice::from_ref(conditioning), self.cfg.k)?;
        let enc = self.encode_frames(conditioning.frames())?;
        let w = self.infer_content(&enc[..self.cfg.content_frames])?;
        let mut y = self.infer_initial_state(&enc)?.mean;
        let mut out = vec![LatentState {
            y: y.clone(),
            z: vec![0.0; self.cfg.d_z],
            w: w.clone(),
        }];
        let post = if self.cfg.k >= 2 { self.posterior_dynamics(&enc)? } else { Vec::new() };
        for q in post {
            y = self.transition(&y, &q.mean)?;
            out.push(LatentState {
                y: y.clone(),
                z: q.mean,
                w: w.clone(),
            });
        }
        for _ in 0..horizon {
            let z = self.prior_dynamics(&y)?.mean;
            y = self.transition(&y, &z)?;
            out.push(LatentState {
                y: y.clone(),
                z,
                w: w.clone(),
            });
        }
        Ok(out)
    }

    pub fn predict(
        &self,
        conditioning: &FrameSequence,
        horizon: usize,
        mode: PredictMode,
        n_samples: usize,
        seed: u64,
    ) -> Result<FrameSequence> {
        Ok(self
            .predict_batch(std::slice::from_ref(conditioning), horizon, mode, n_samples, seed)?
            .remove(0))
    }

    /// Predicts `horizon` frames after each `k`-frame conditioning sequence.
    pub fn predict_batch(
        &self,
        conditioning: &[FrameSequence],
        horizon: usize,
        mode: PredictMode,
        n_samples: usize,
        seed: u64,
    ) -> Result<Vec<FrameSequence>> {
        check_sequences(&self.cfg, conditioning, self.cfg.k)?;
        if mode == PredictMode::Sample && n_samples == 0 {
            return Err(Error::invalid("sample mode needs n_samples >= 1"));
        }
        let mut rng = seed::rng(seed, "predict");
        let mut out = Vec::with_capacity(conditioning.len());
        for chunk in conditioning.chunks(PREDICT_CHUNK) {
            out.extend(self.predict_chunk(chunk, horizon, mode, n_samples, &mut rng)?);
        }
        Ok(out)
    }

    fn predict_chunk(
        &self,
        cond: &[FrameSequence],
        horizon: usize,
        mode: PredictMode,
        n_samples: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<FrameSequence>> {
        let cfg = &self.cfg;
        let (b, k) = (cond.len(), cfg.k);
        let (h, wd) = cfg.image_size;
        let npix = h * wd;
        if horizon == 0 {
            return cond.iter().map(|_| FrameSequence::new(Vec::new(), None)).collect();
        }
        let (mut g, p) = self.frozen();
        let ordered: Vec<&Frame> = (0..k).flat_map(|t| cond.iter().map(move |s| &s.frames()[t])).collect();
        let x = g.constant(frames_tensor(&ordered));
        let enc = self.g_encode(&mut g, &p, x);
        let inf = self.g_infer(&mut g, &p, enc, b, k);
        let rep: Vec<usize> = (0..horizon).flat_map(|_| 0..b).collect();
        let w_all = g.select_rows(inf.w, &rep);

        let (runs, stochastic) = match mode {
            PredictMode::Mean => (1, false),
            PredictMode::Sample => (n_samples, true),
        };
        let mut acc = vec![0.0; horizon * b * npix];
        for _ in 0..runs {
            let mut draw = |d: usize| {
                stochastic.then(|| {
                    let data = (0..b * d).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
                    Tensor::new(vec![b, d], data).expect("shape matches data")
                })
            };
            let mut y = Self::g_sample(&mut g, inf.y1, draw(cfg.d_y));
            for q in &inf.z {
                let z = Self::g_sample(&mut g, *q, draw(cfg.d_z));
                let r = self.g_residual(&mut g, &p, z);
                y = g.add(y, r);
            }
            let mut ys = Vec::with_capacity(horizon);
            for _ in 0..horizon {
                let prior = self.g_prior(&mut g, &p, y);
                let z = Self::g_sample(&mut g, prior, draw(cfg.d_z));
                let r = self.g_residual(&mut g, &p, z);
                y = g.add(y, r);
                ys.push(y);
            }
            let y_all = g.concat_rows(&ys);
            let frames = self.g_decode(&mut g, &p, w_all, y_all);
            for (a, v) in acc.iter_mut().zip(g.value(frames).data()) {
                *a += v;
            }
        }
        let scale = 1.0 / runs as f64;
        acc.iter_mut().for_each(|v| *v *= scale);
        // acc is time-major: step t of sequence s starts at (t * b + s) * npix.
        (0..b)
            .map(|s| {
                let frames = (0..horizon)
                    .map(|t| {
                        let start = (t * b + s) * npix;
                        Frame::new(h, wd, to_pixels(&acc[start..start + npix]))
                    })
                    .collect::<Result<Vec<_>>>()?;
                FrameSequence::new(frames, None)
            })
            .collect()
    }
}

fn to_pixels(unit: &[f64]) -> Vec<f64> {
    unit.iter().map(|v| (v * MAX_PIXEL).clamp(0.0, MAX_PIXEL)).collect()
}
