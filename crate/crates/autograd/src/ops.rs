//! Differentiable operations recorded on a [`Graph`].
//!
//! Shape mismatches are programming errors and panic, the same way slice
//! indexing does. Callers validate external inputs before building a graph.

use crate::graph::{BackwardCtx, Graph, Var};
use crate::Tensor;

/// `C (+)= op(A) · op(B)` for row-major buffers, where `op(A)` is `m × k`
/// and `op(B)` is `k × n`. A transposed operand is stored in its untransposed
/// layout (`k × m` for A, `n × k` for B).
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(0.0);
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above guarantee every index the kernel touches is
    // inside the three buffers for the given dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn ckk(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.n * self.ho * self.wo
    }

    /// Output columns `lo..hi` whose tap at kernel offset `k` lands inside
    /// an input axis of length `len`.
    fn valid_range(&self, k: usize, len: usize, out_len: usize) -> (usize, usize) {
        let (s, pad) = (self.stride, self.pad);
        let lo = if pad > k { (pad - k).div_ceil(s) } else { 0 };
        let hi = if len + pad > k { ((len + pad - k - 1) / s + 1).min(out_len) } else { 0 };
        (lo, hi.max(lo))
    }

    /// Calls `f(col_offset, input_offset, count)` for every run of in-bounds
    /// taps, where run element `i` pairs `col_offset + i` with
    /// `input_offset + i * stride`.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize)) {
        let ncols = self.cols();
        let hw_out = self.ho * self.wo;
        for ci in 0..self.c {
            for ki in 0..self.kh {
                let (oy_lo, oy_hi) = self.valid_range(ki, self.h, self.ho);
                for kj in 0..self.kw {
                    let (ox_lo, ox_hi) = self.valid_range(kj, self.w, self.wo);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    let r = (ci * self.kh + ki) * self.kw + kj;
                    for ni in 0..self.n {
                        let in_base = (ni * self.c + ci) * self.h * self.w;
                        let col_base = r * ncols + ni * hw_out;
                        for oy in oy_lo..oy_hi {
                            let iy = oy * self.stride + ki - self.pad;
                            let ix = ox_lo * self.stride + kj - self.pad;
                            f(col_base + oy * self.wo + ox_lo, in_base + iy * self.w + ix, ox_hi - ox_lo);
                        }
                    }
                }
            }
        }
    }

    fn im2col(&self, input: &[f64]) -> Vec<f64> {
        let mut cols = vec![0.0; self.ckk() * self.cols()];
        let s = self.stride;
        self.for_each_run(|c, i, len| {
            let dst = &mut cols[c..c + len];
            if s == 1 {
                dst.copy_from_slice(&input[i..i + len]);
            } else {
                for (j, d) in dst.iter_mut().enumerate() {
                    *d = input[i + j * s];
                }
            }
        });
        cols
    }

    fn col2im(&self, cols: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n * self.c * self.h * self.w];
        let s = self.stride;
        self.for_each_run(|c, i, len| {
            let src = &cols[c..c + len];
            if s == 1 {
                for (o, v) in out[i..i + len].iter_mut().zip(src) {
                    *o += v;
                }
            } else {
                for (j, v) in src.iter().enumerate() {
                    out[i + j * s] += v;
                }
            }
        });
        out
    }
}

impl Graph {
    /// `x · w + b` with `x: [n, i]`, `w: [i, o]`, `b: [o]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        assert_eq!(xs.len(), 2, "linear input must be rank 2, got {xs:?}");
        assert_eq!(ws.len(), 2);
        assert_eq!(xs[1], ws[0], "linear: input {xs:?} vs weight {ws:?}");
        assert_eq!(bs, [ws[1]]);
        let (n, i, o) = (xs[0], xs[1], ws[1]);
        let mut out = vec![0.0; n * o];
        for row in out.chunks_exact_mut(o) {
            row.copy_from_slice(self.value(b).data());
        }
        gemm(n, i, o, self.value(x).data(), false, self.value(w).data(), false, &mut out, true);
        self.push_op(
            Tensor::from_parts(vec![n, o], out),
            &[x, w, b],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let dy = ctx.grad.data();
                let (xv, wv) = (ctx.parents[0].data(), ctx.parents[1].data());
                let dx = ctx.need[0].then(|| {
                    let mut dx = vec![0.0; n * i];
                    gemm(n, o, i, dy, false, wv, true, &mut dx, false);
                    Tensor::from_parts(vec![n, i], dx)
                });
                let dw = ctx.need[1].then(|| {
                    let mut dw = vec![0.0; i * o];
                    gemm(i, n, o, xv, true, dy, false, &mut dw, false);
                    Tensor::from_parts(vec![i, o], dw)
                });
                let db = ctx.need[2].then(|| {
                    let mut db = vec![0.0; o];
                    for row in dy.chunks_exact(o) {
                        for (acc, g) in db.iter_mut().zip(row) {
                            *acc += g;
                        }
                    }
                    Tensor::from_parts(vec![o], db)
                });
                vec![dx, dw, db]
            }),
        )
    }

    /// 2-D convolution, `x: [n, c, h, w]`, `w: [o, c, kh, kw]`, `b: [o]`.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(weight).to_vec();
        assert_eq!(xs.len(), 4, "conv2d input must be NCHW, got {xs:?}");
        assert_eq!(ws.len(), 4);
        assert_eq!(xs[1], ws[1], "conv2d: input {xs:?} vs weight {ws:?}");
        assert_eq!(self.shape(bias), [ws[0]]);
        assert!(stride > 0);
        assert!(xs[2] + 2 * pad >= ws[2] && xs[3] + 2 * pad >= ws[3]);
        let g = ConvGeom {
            n: xs[0],
            c: xs[1],
            h: xs[2],
            w: xs[3],
            o: ws[0],
            kh: ws[2],
            kw: ws[3],
            stride,
            pad,
            ho: (xs[2] + 2 * pad - ws[2]) / stride + 1,
            wo: (xs[3] + 2 * pad - ws[3]) / stride + 1,
        };
        let cols = g.im2col(self.value(x).data());
        let ncols = g.cols();
        let mut y2 = vec![0.0; g.o * ncols];
        gemm(g.o, g.ckk(), ncols, self.value(weight).data(), false, &cols, false, &mut y2, false);
        // [o, n*hw] -> [n, o, hw] plus bias
        let hw = g.ho * g.wo;
        let bv = self.value(bias).data();
        let mut out = vec![0.0; g.n * g.o * hw];
        for oi in 0..g.o {
            for ni in 0..g.n {
                let src = &y2[oi * ncols + ni * hw..oi * ncols + (ni + 1) * hw];
                let dst = &mut out[(ni * g.o + oi) * hw..(ni * g.o + oi + 1) * hw];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = s + bv[oi];
                }
            }
        }
        self.push_op(
            Tensor::from_parts(vec![g.n, g.o, g.ho, g.wo], out),
            &[x, weight, bias],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let dy = ctx.grad.data();
                let mut dy2 = vec![0.0; g.o * ncols];
                for oi in 0..g.o {
                    for ni in 0..g.n {
                        dy2[oi * ncols + ni * hw..oi * ncols + (ni + 1) * hw]
                            .copy_from_slice(&dy[(ni * g.o + oi) * hw..(ni * g.o + oi + 1) * hw]);
                    }
                }
                let dx = ctx.need[0].then(|| {
                    let mut dcols = vec![0.0; g.ckk() * ncols];
                    gemm(g.ckk(), g.o, ncols, ctx.parents[1].data(), true, &dy2, false, &mut dcols, false);
                    Tensor::from_parts(vec![g.n, g.c, g.h, g.w], g.col2im(&dcols))
                });
                let dw = ctx.need[1].then(|| {
                    let mut dw = vec![0.0; g.o * g.ckk()];
                    gemm(g.o, ncols, g.ckk(), &dy2, false, &cols, true, &mut dw, false);
                    Tensor::from_parts(vec![g.o, g.c, g.kh, g.kw], dw)
                });
                let db = ctx.need[2].then(|| {
                    let db = dy2.chunks_exact(ncols).map(|r| r.iter().sum()).collect();
                    Tensor::from_parts(vec![g.o], db)
                });
                vec![dx, dw, db]
            }),
        )
    }

    /// Nearest-neighbour 2x upsampling of an NCHW tensor.
    pub fn upsample2x(&mut self, x: Var) -> Var {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 4, "upsample2x input must be NCHW, got {xs:?}");
        let (planes, h, w) = (xs[0] * xs[1], xs[2], xs[3]);
        let (h2, w2) = (2 * h, 2 * w);
        let src = self.value(x).data();
        let mut out = vec![0.0; planes * h2 * w2];
        for p in 0..planes {
            for y in 0..h2 {
                for xx in 0..w2 {
                    out[(p * h2 + y) * w2 + xx] = src[(p * h + y / 2) * w + xx / 2];
                }
            }
        }
        self.push_op(
            Tensor::from_parts(vec![xs[0], xs[1], h2, w2], out),
            &[x],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let dy = ctx.grad.data();
                let mut dx = vec![0.0; planes * h * w];
                for p in 0..planes {
                    for y in 0..h2 {
                        for xx in 0..w2 {
                            dx[(p * h + y / 2) * w + xx / 2] += dy[(p * h2 + y) * w2 + xx];
                        }
                    }
                }
                vec![Some(Tensor::from_parts(vec![xs[0], xs[1], h, w], dx))]
            }),
        )
    }

    /// Elementwise map with derivative `df(x, y)` where `y = f(x)`.
    fn unary(
        &mut self,
        x: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var {
        let out = self.value(x).map(f);
        self.push_op(
            out,
            &[x],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let data = ctx
                    .grad
                    .data()
                    .iter()
                    .zip(ctx.parents[0].data())
                    .zip(ctx.out.data())
                    .map(|((g, &xv), &yv)| g * df(xv, yv))
                    .collect();
                vec![Some(Tensor::from_parts(ctx.grad.shape().to_vec(), data))]
            }),
        )
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * sigmoid(v), |xv, _| silu_grad(xv))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, |_, y| y)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, |xv, _| 2.0 * xv)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, move |v| c * v, move |_, _| c)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, move |v| v + c, |_, _| 1.0)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(
            x,
            move |v| v.clamp(lo, hi),
            move |xv, _| if (lo..=hi).contains(&xv) { 1.0 } else { 0.0 },
        )
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        da: impl Fn(f64, f64) -> f64 + 'static,
        db: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "elementwise shape mismatch");
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_parts(av.shape().to_vec(), data);
        self.push_op(
            out,
            &[a, b],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let (x, y, g) = (ctx.parents[0].data(), ctx.parents[1].data(), ctx.grad.data());
                let shape = ctx.grad.shape().to_vec();
                let side = |need: bool, d: &dyn Fn(f64, f64) -> f64| {
                    need.then(|| {
                        let data = g
                            .iter()
                            .zip(x.iter().zip(y))
                            .map(|(gi, (&xi, &yi))| gi * d(xi, yi))
                            .collect();
                        Tensor::from_parts(shape.clone(), data)
                    })
                };
                vec![side(ctx.need[0], &da), side(ctx.need[1], &db)]
            }),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, |_, _| 1.0, |_, _| 1.0)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, |_, _| 1.0, |_, _| -1.0)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, |_, y| y, |x, _| x)
    }

    /// Concatenates rank-2 tensors along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let n = self.shape(parts[0])[0];
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let s = self.shape(p);
                assert_eq!(s.len(), 2, "concat_cols expects rank 2, got {s:?}");
                assert_eq!(s[0], n, "concat_cols row mismatch");
                s[1]
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for r in 0..n {
            for (&p, &wd) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * wd..(r + 1) * wd]);
            }
        }
        self.push_op(
            Tensor::from_parts(vec![n, total], out),
            parts,
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let g = ctx.grad.data();
                let mut offset = 0;
                widths
                    .iter()
                    .zip(&ctx.need)
                    .map(|(&wd, &need)| {
                        let start = offset;
                        offset += wd;
                        need.then(|| {
                            let mut d = Vec::with_capacity(n * wd);
                            for r in 0..n {
                                d.extend_from_slice(&g[r * total + start..r * total + start + wd]);
                            }
                            Tensor::from_parts(vec![n, wd], d)
                        })
                    })
                    .collect()
            }),
        )
    }

    /// Columns `start..start + len` of a rank-2 tensor.
    pub fn narrow_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 2, "narrow_cols expects rank 2, got {s:?}");
        assert!(start + len <= s[1]);
        let (n, wd) = (s[0], s[1]);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * len);
        for r in 0..n {
            out.extend_from_slice(&src[r * wd + start..r * wd + start + len]);
        }
        self.push_op(
            Tensor::from_parts(vec![n, len], out),
            &[x],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let g = ctx.grad.data();
                let mut d = vec![0.0; n * wd];
                for r in 0..n {
                    d[r * wd + start..r * wd + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                vec![Some(Tensor::from_parts(vec![n, wd], d))]
            }),
        )
    }

    /// Concatenates along the leading axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let tail: Vec<usize> = self.shape(parts[0])[1..].to_vec();
        let mut rows = Vec::with_capacity(parts.len());
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            assert_eq!(&v.shape()[1..], &tail[..], "concat_rows trailing shape mismatch");
            rows.push(v.shape()[0]);
            data.extend_from_slice(v.data());
        }
        let mut shape = vec![rows.iter().sum()];
        shape.extend_from_slice(&tail);
        let row_len: usize = tail.iter().product();
        self.push_op(
            Tensor::from_parts(shape, data),
            parts,
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let g = ctx.grad.data();
                let mut offset = 0;
                rows.iter()
                    .zip(&ctx.need)
                    .map(|(&r, &need)| {
                        let start = offset;
                        offset += r * row_len;
                        need.then(|| {
                            let mut shape = vec![r];
                            shape.extend_from_slice(&tail);
                            Tensor::from_parts(shape, g[start..start + r * row_len].to_vec())
                        })
                    })
                    .collect()
            }),
        )
    }

    /// Gathers rows (leading-axis slices) by index; indices may repeat.
    pub fn select_rows(&mut self, x: Var, indices: &[usize]) -> Var {
        let v = self.value(x);
        let in_shape = v.shape().to_vec();
        assert!(!in_shape.is_empty());
        let row_len = v.row_len();
        let mut data = Vec::with_capacity(indices.len() * row_len);
        for &i in indices {
            data.extend_from_slice(v.row(i));
        }
        let mut shape = in_shape.clone();
        shape[0] = indices.len();
        let indices = indices.to_vec();
        self.push_op(
            Tensor::from_parts(shape, data),
            &[x],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let g = ctx.grad.data();
                let mut d = vec![0.0; in_shape.iter().product()];
                for (k, &i) in indices.iter().enumerate() {
                    let dst = &mut d[i * row_len..(i + 1) * row_len];
                    for (a, b) in dst.iter_mut().zip(&g[k * row_len..(k + 1) * row_len]) {
                        *a += b;
                    }
                }
                vec![Some(Tensor::from_parts(in_shape.clone(), d))]
            }),
        )
    }

    /// Averages consecutive groups of `group` rows: `[n*group, ..] -> [n, ..]`.
    pub fn mean_row_groups(&mut self, x: Var, group: usize) -> Var {
        let v = self.value(x);
        let in_shape = v.shape().to_vec();
        assert!(group > 0 && in_shape[0].is_multiple_of(group), "mean_row_groups: {in_shape:?} by {group}");
        let n = in_shape[0] / group;
        let row_len = v.row_len();
        let inv = 1.0 / group as f64;
        let mut data = vec![0.0; n * row_len];
        for r in 0..in_shape[0] {
            let dst = &mut data[(r / group) * row_len..(r / group + 1) * row_len];
            for (a, b) in dst.iter_mut().zip(v.row(r)) {
                *a += b * inv;
            }
        }
        let mut shape = in_shape.clone();
        shape[0] = n;
        self.push_op(
            Tensor::from_parts(shape, data),
            &[x],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let g = ctx.grad.data();
                let mut d = vec![0.0; in_shape.iter().product()];
                for r in 0..in_shape[0] {
                    let src = &g[(r / group) * row_len..(r / group + 1) * row_len];
                    for (a, b) in d[r * row_len..(r + 1) * row_len].iter_mut().zip(src) {
                        *a = b * inv;
                    }
                }
                vec![Some(Tensor::from_parts(in_shape.clone(), d))]
            }),
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let v = self.value(x);
        let in_shape = v.shape().to_vec();
        let out = v
            .clone()
            .reshape(shape.to_vec())
            .unwrap_or_else(|e| panic!("reshape {in_shape:?} -> {shape:?}: {e}"));
        self.push_op(
            out,
            &[x],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                vec![Some(Tensor::from_parts(in_shape.clone(), ctx.grad.data().to_vec()))]
            }),
        )
    }

    /// Sum of all elements as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).sum();
        self.push_op(
            Tensor::scalar(total),
            &[x],
            Box::new(|ctx: &BackwardCtx<'_>| {
                let g = ctx.grad.data()[0];
                vec![Some(Tensor::full(ctx.parents[0].shape().to_vec(), g))]
            }),
        )
    }

    /// Sum of squared elements as a one-element tensor.
    pub fn sum_sq(&mut self, x: Var) -> Var {
        let total = self.value(x).sum_sq();
        self.push_op(
            Tensor::scalar(total),
            &[x],
            Box::new(|ctx: &BackwardCtx<'_>| {
                let g = ctx.grad.data()[0];
                vec![Some(ctx.parents[0].map(|v| 2.0 * g * v))]
            }),
        )
    }

    /// Adds any number of one-element tensors.
    pub fn add_scalars(&mut self, parts: &[Var]) -> Var {
        let total = parts
            .iter()
            .map(|&p| {
                let v = self.value(p);
                assert_eq!(v.numel(), 1, "add_scalars expects one-element tensors");
                v.data()[0]
            })
            .sum();
        self.push_op(
            Tensor::scalar(total),
            parts,
            Box::new(|ctx: &BackwardCtx<'_>| {
                let g = ctx.grad.data()[0];
                ctx.parents
                    .iter()
                    .zip(&ctx.need)
                    .map(|(p, &need)| need.then(|| Tensor::full(p.shape().to_vec(), g)))
                    .collect()
            }),
        )
    }
}
