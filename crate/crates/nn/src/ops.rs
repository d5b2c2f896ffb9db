//! Differentiable operations on [`Var`].
//!
//! Shape errors in this module are programming errors and panic with the
//! offending shapes; model-level entry points validate user input first.

use crate::autograd::Var;
use crate::kernels::{col2im, gemm, im2col, ConvGeom, MatRef};
use crate::tensor::Tensor;

fn same_shape(op: &str, a: &Var, b: &Var) {
    assert_eq!(a.shape(), b.shape(), "{op}: shape mismatch {:?} vs {:?}", a.shape(), b.shape());
}

fn need(v: &Var) -> bool {
    v.requires_grad()
}

impl Var {
    fn unary(&self, f: impl Fn(f32) -> f32, df: impl Fn(f32, f32) -> f32 + 'static) -> Var {
        let y = self.value().map(f);
        let x = self.clone();
        let y_saved = y.clone();
        Var::from_op(
            y,
            vec![self.clone()],
            Box::new(move |g| {
                let xs = x.value().data();
                let ys = y_saved.data();
                let data = g.data().iter().enumerate().map(|(i, &gi)| gi * df(xs[i], ys[i])).collect();
                vec![Some(Tensor::new(g.shape(), data).unwrap())]
            }),
        )
    }

    pub fn add(&self, other: &Var) -> Var {
        same_shape("add", self, other);
        let y = self.value().zip_map(other.value(), |a, b| a + b);
        Var::from_op(y, vec![self.clone(), other.clone()], Box::new(|g| vec![Some(g.clone()), Some(g.clone())]))
    }

    pub fn sub(&self, other: &Var) -> Var {
        same_shape("sub", self, other);
        let y = self.value().zip_map(other.value(), |a, b| a - b);
        Var::from_op(y, vec![self.clone(), other.clone()], Box::new(|g| vec![Some(g.clone()), Some(g.map(|v| -v))]))
    }

    pub fn mul(&self, other: &Var) -> Var {
        same_shape("mul", self, other);
        let y = self.value().zip_map(other.value(), |a, b| a * b);
        let (a, b) = (self.clone(), other.clone());
        Var::from_op(
            y,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                vec![
                    need(&a).then(|| g.zip_map(b.value(), |gi, bi| gi * bi)),
                    need(&b).then(|| g.zip_map(a.value(), |gi, ai| gi * ai)),
                ]
            }),
        )
    }

    pub fn div(&self, other: &Var) -> Var {
        same_shape("div", self, other);
        let y = self.value().zip_map(other.value(), |a, b| a / b);
        let (a, b) = (self.clone(), other.clone());
        Var::from_op(
            y,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                let ga = need(&a).then(|| g.zip_map(b.value(), |gi, bi| gi / bi));
                let gb = need(&b).then(|| {
                    let (av, bv) = (a.value().data(), b.value().data());
                    let data = g.data().iter().enumerate().map(|(i, &gi)| -gi * av[i] / (bv[i] * bv[i])).collect();
                    Tensor::new(g.shape(), data).unwrap()
                });
                vec![ga, gb]
            }),
        )
    }

    pub fn add_scalar(&self, s: f32) -> Var {
        let y = self.value().map(|v| v + s);
        Var::from_op(y, vec![self.clone()], Box::new(|g| vec![Some(g.clone())]))
    }

    pub fn mul_scalar(&self, s: f32) -> Var {
        let y = self.value().map(|v| v * s);
        Var::from_op(y, vec![self.clone()], Box::new(move |g| vec![Some(g.map(|v| v * s))]))
    }

    /// Multiplies every element by a single-element variable.
    pub fn scale_by(&self, s: &Var) -> Var {
        assert_eq!(s.value().numel(), 1, "scale_by expects a scalar, got {:?}", s.shape());
        let sv = s.item();
        let y = self.value().map(|v| v * sv);
        let (x, sc) = (self.clone(), s.clone());
        Var::from_op(
            y,
            vec![self.clone(), s.clone()],
            Box::new(move |g| {
                let gx = need(&x).then(|| g.map(|v| v * sv));
                let gs = need(&sc).then(|| {
                    let dot: f64 = g.data().iter().zip(x.value().data()).map(|(&a, &b)| a as f64 * b as f64).sum();
                    Tensor::new(sc.shape(), vec![dot as f32]).unwrap()
                });
                vec![gx, gs]
            }),
        )
    }

    pub fn sqr(&self) -> Var {
        self.unary(|x| x * x, |x, _| 2.0 * x)
    }

    pub fn relu(&self) -> Var {
        self.unary(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(&self, slope: f32) -> Var {
        self.unary(move |x| if x > 0.0 { x } else { slope * x }, move |x, _| if x > 0.0 { 1.0 } else { slope })
    }

    pub fn sigmoid(&self) -> Var {
        self.unary(|x| 1.0 / (1.0 + (-x).exp()), |_, y| y * (1.0 - y))
    }

    pub fn tanh(&self) -> Var {
        self.unary(|x| x.tanh(), |_, y| 1.0 - y * y)
    }

    /// `x^p` for `x > 0` and `0` elsewhere; the gradient is zero on the clamped side.
    pub fn pow_pos(&self, p: f32) -> Var {
        self.unary(
            move |x| if x > 0.0 { x.powf(p) } else { 0.0 },
            move |x, _| if x > 0.0 { p * x.powf(p - 1.0) } else { 0.0 },
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Var {
        let y = self.value().clone().reshape(shape).expect("reshape");
        let in_shape = self.shape().to_vec();
        Var::from_op(
            y,
            vec![self.clone()],
            Box::new(move |g| vec![Some(g.clone().reshape(&in_shape).unwrap())]),
        )
    }

    /// Swaps the last two axes of a rank-3 tensor.
    pub fn transpose12(&self) -> Var {
        let y = transpose_last2(self.value());
        Var::from_op(y, vec![self.clone()], Box::new(|g| vec![Some(transpose_last2(g))]))
    }

    pub fn cat_channels(items: &[&Var]) -> Var {
        let values: Vec<&Tensor> = items.iter().map(|v| v.value()).collect();
        let y = Tensor::cat_channels(&values).expect("cat_channels");
        let splits: Vec<usize> = items.iter().map(|v| v.shape()[1]).collect();
        let parents: Vec<Var> = items.iter().map(|v| (*v).clone()).collect();
        Var::from_op(
            y,
            parents,
            Box::new(move |g| {
                let n = g.shape()[0];
                let total: usize = splits.iter().sum();
                let inner = g.numel() / (n * total);
                let mut out: Vec<Vec<f32>> = splits.iter().map(|c| Vec::with_capacity(n * c * inner)).collect();
                for b in 0..n {
                    let mut off = b * total * inner;
                    for (k, &c) in splits.iter().enumerate() {
                        out[k].extend_from_slice(&g.data()[off..off + c * inner]);
                        off += c * inner;
                    }
                }
                out.into_iter()
                    .zip(&splits)
                    .map(|(d, &c)| {
                        let mut shape = g.shape().to_vec();
                        shape[1] = c;
                        Some(Tensor::new(&shape, d).unwrap())
                    })
                    .collect()
            }),
        )
    }

    /// Batched matrix product `[B, M, K] x [B, K, N] -> [B, M, N]`.
    pub fn bmm(&self, other: &Var) -> Var {
        let (sa, sb) = (self.shape(), other.shape());
        assert!(sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0] && sa[2] == sb[1], "bmm: {sa:?} x {sb:?}");
        let (bn, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut y = vec![0.0; bn * m * n];
        for b in 0..bn {
            gemm(
                m,
                k,
                n,
                1.0,
                MatRef::row_major(&self.value().data()[b * m * k..(b + 1) * m * k], k),
                MatRef::row_major(&other.value().data()[b * k * n..(b + 1) * k * n], n),
                0.0,
                &mut y[b * m * n..(b + 1) * m * n],
            );
        }
        let (a, bv) = (self.clone(), other.clone());
        Var::from_op(
            Tensor::new(&[bn, m, n], y).unwrap(),
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                let gd = g.data();
                let ga = need(&a).then(|| {
                    let mut out = vec![0.0; bn * m * k];
                    for b in 0..bn {
                        // dA = dY * B^T
                        gemm(
                            m,
                            n,
                            k,
                            1.0,
                            MatRef::row_major(&gd[b * m * n..(b + 1) * m * n], n),
                            MatRef::transposed(&bv.value().data()[b * k * n..(b + 1) * k * n], n),
                            0.0,
                            &mut out[b * m * k..(b + 1) * m * k],
                        );
                    }
                    Tensor::new(&[bn, m, k], out).unwrap()
                });
                let gb = need(&bv).then(|| {
                    let mut out = vec![0.0; bn * k * n];
                    for b in 0..bn {
                        // dB = A^T * dY
                        gemm(
                            k,
                            m,
                            n,
                            1.0,
                            MatRef::transposed(&a.value().data()[b * m * k..(b + 1) * m * k], k),
                            MatRef::row_major(&gd[b * m * n..(b + 1) * m * n], n),
                            0.0,
                            &mut out[b * k * n..(b + 1) * k * n],
                        );
                    }
                    Tensor::new(&[bn, k, n], out).unwrap()
                });
                vec![ga, gb]
            }),
        )
    }

    /// Softmax over the last axis.
    pub fn softmax_last(&self) -> Var {
        let shape = self.shape().to_vec();
        let width = *shape.last().expect("softmax on rank-0");
        let mut y = self.value().data().to_vec();
        for row in y.chunks_mut(width) {
            let mx = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0f32;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let y = Tensor::new(&shape, y).unwrap();
        let saved = y.clone();
        Var::from_op(
            y,
            vec![self.clone()],
            Box::new(move |g| {
                let mut out = vec![0.0; g.numel()];
                for ((o, gr), yr) in out.chunks_mut(width).zip(g.data().chunks(width)).zip(saved.data().chunks(width)) {
                    let dot: f32 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for i in 0..width {
                        o[i] = yr[i] * (gr[i] - dot);
                    }
                }
                vec![Some(Tensor::new(g.shape(), out).unwrap())]
            }),
        )
    }

    pub fn sum_all(&self) -> Var {
        let s = self.value().sum() as f32;
        let shape = self.shape().to_vec();
        Var::from_op(
            Tensor::scalar(s),
            vec![self.clone()],
            Box::new(move |g| vec![Some(Tensor::full(&shape, g.data()[0]))]),
        )
    }

    pub fn mean_all(&self) -> Var {
        let n = self.value().numel() as f32;
        self.sum_all().mul_scalar(1.0 / n)
    }

    /// Mean over the spatial axes of an NCHW tensor, giving `[N, C]`.
    pub fn mean_spatial(&self) -> Var {
        let (n, c, h, w) = self.value().dims4();
        let hw = h * w;
        let y: Vec<f32> = self
            .value()
            .data()
            .chunks(hw)
            .map(|p| (p.iter().map(|&v| v as f64).sum::<f64>() / hw as f64) as f32)
            .collect();
        Var::from_op(
            Tensor::new(&[n, c], y).unwrap(),
            vec![self.clone()],
            Box::new(move |g| {
                let mut out = Vec::with_capacity(n * c * hw);
                for &gv in g.data() {
                    out.extend(std::iter::repeat_n(gv / hw as f32, hw));
                }
                vec![Some(Tensor::new(&[n, c, h, w], out).unwrap())]
            }),
        )
    }

    /// Mean squared error against `target`, as a one-element variable.
    pub fn mse(&self, target: &Var) -> Var {
        same_shape("mse", self, target);
        let n = self.value().numel() as f64;
        let s: f64 = self
            .value()
            .data()
            .iter()
            .zip(target.value().data())
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum();
        let (a, b) = (self.clone(), target.clone());
        Var::from_op(
            Tensor::scalar((s / n) as f32),
            vec![self.clone(), target.clone()],
            Box::new(move |g| {
                let k = 2.0 * g.data()[0] / n as f32;
                let diff = a.value().zip_map(b.value(), |x, y| k * (x - y));
                let gb = need(&b).then(|| diff.map(|v| -v));
                vec![need(&a).then_some(diff), gb]
            }),
        )
    }

    /// Mean absolute error against `target`. The subgradient at zero is zero.
    pub fn l1(&self, target: &Var) -> Var {
        same_shape("l1", self, target);
        let n = self.value().numel() as f64;
        let s: f64 = self
            .value()
            .data()
            .iter()
            .zip(target.value().data())
            .map(|(&a, &b)| (a as f64 - b as f64).abs())
            .sum();
        let (a, b) = (self.clone(), target.clone());
        Var::from_op(
            Tensor::scalar((s / n) as f32),
            vec![self.clone(), target.clone()],
            Box::new(move |g| {
                let k = g.data()[0] / n as f32;
                let sign = a.value().zip_map(b.value(), |x, y| {
                    if x > y {
                        k
                    } else if x < y {
                        -k
                    } else {
                        0.0
                    }
                });
                let gb = need(&b).then(|| sign.map(|v| -v));
                vec![need(&a).then_some(sign), gb]
            }),
        )
    }

    /// Mean binary cross-entropy of probabilities against a constant target,
    /// with probabilities clamped to `[eps, 1 - eps]` before the logarithm.
    pub fn bce_const(&self, target: f32, eps: f32) -> Var {
        let n = self.value().numel() as f64;
        let clamp = |p: f32| p.clamp(eps, 1.0 - eps);
        let s: f64 = self
            .value()
            .data()
            .iter()
            .map(|&p| {
                let p = clamp(p) as f64;
                -(target as f64 * p.ln() + (1.0 - target as f64) * (1.0 - p).ln())
            })
            .sum();
        let x = self.clone();
        Var::from_op(
            Tensor::scalar((s / n) as f32),
            vec![self.clone()],
            Box::new(move |g| {
                let k = g.data()[0] / n as f32;
                let grad = x.value().map(|p| {
                    if p < eps || p > 1.0 - eps {
                        0.0
                    } else {
                        k * (-(target / p) + (1.0 - target) / (1.0 - p))
                    }
                });
                vec![Some(grad)]
            }),
        )
    }

    /// Mean per-pixel binary cross-entropy against a target probability map.
    pub fn bce(&self, target: &Var, eps: f32) -> Var {
        same_shape("bce", self, target);
        let n = self.value().numel() as f64;
        let s: f64 = self
            .value()
            .data()
            .iter()
            .zip(target.value().data())
            .map(|(&p, &t)| {
                let p = p.clamp(eps, 1.0 - eps) as f64;
                let t = t as f64;
                -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
            })
            .sum();
        let (x, tv) = (self.clone(), target.clone());
        Var::from_op(
            Tensor::scalar((s / n) as f32),
            vec![self.clone()],
            Box::new(move |g| {
                let k = g.data()[0] / n as f32;
                let grad = x.value().zip_map(tv.value(), |p, t| {
                    if p < eps || p > 1.0 - eps {
                        0.0
                    } else {
                        k * (-(t / p) + (1.0 - t) / (1.0 - p))
                    }
                });
                vec![Some(grad)]
            }),
        )
    }

    /// 2-D convolution, weights `[Cout, Cin, k, k]`, optional bias `[Cout]`.
    pub fn conv2d(&self, weight: &Var, bias: Option<&Var>, stride: usize, pad: usize) -> Var {
        let (n, cin, h, w) = self.value().dims4();
        let ws = weight.shape();
        assert!(ws.len() == 4 && ws[1] == cin && ws[2] == ws[3], "conv2d: input {:?} weight {:?}", self.shape(), ws);
        let cout = ws[0];
        let g = ConvGeom::new(cin, h, w, ws[2], stride, pad);
        let (kdim, l) = (g.col_rows(), g.col_cols());
        let mut y = vec![0.0; n * cout * l];
        let mut col = if g.is_pointwise() { Vec::new() } else { vec![0.0; kdim * l] };
        let xd = self.value().data();
        let wd = weight.value().data();
        for b in 0..n {
            let xb = &xd[b * cin * h * w..(b + 1) * cin * h * w];
            let colb: &[f32] = if g.is_pointwise() {
                xb
            } else {
                im2col(xb, &g, &mut col);
                &col
            };
            let yb = &mut y[b * cout * l..(b + 1) * cout * l];
            gemm(cout, kdim, l, 1.0, MatRef::row_major(wd, kdim), MatRef::row_major(colb, l), 0.0, yb);
            if let Some(bias) = bias {
                for (co, &bv) in bias.value().data().iter().enumerate() {
                    for v in &mut yb[co * l..(co + 1) * l] {
                        *v += bv;
                    }
                }
            }
        }
        let y = Tensor::new(&[n, cout, g.out_h, g.out_w], y).unwrap();
        let (x, wt, bs) = (self.clone(), weight.clone(), bias.cloned());
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Var::from_op(
            y,
            parents,
            Box::new(move |gy| {
                let gd = gy.data();
                let xd = x.value().data();
                let wd = wt.value().data();
                let mut gx = need(&x).then(|| vec![0.0; xd.len()]);
                let mut gw = need(&wt).then(|| vec![0.0; wd.len()]);
                let mut col = vec![0.0; if g.is_pointwise() { 0 } else { kdim * l }];
                let mut dcol = vec![0.0; if gx.is_some() && !g.is_pointwise() { kdim * l } else { 0 }];
                for b in 0..n {
                    let gyb = &gd[b * cout * l..(b + 1) * cout * l];
                    let xb = &xd[b * cin * h * w..(b + 1) * cin * h * w];
                    if let Some(gw) = gw.as_mut() {
                        let colb: &[f32] = if g.is_pointwise() {
                            xb
                        } else {
                            im2col(xb, &g, &mut col);
                            &col
                        };
                        gemm(cout, l, kdim, 1.0, MatRef::row_major(gyb, l), MatRef::transposed(colb, l), 1.0, gw);
                    }
                    if let Some(gx) = gx.as_mut() {
                        let gxb = &mut gx[b * cin * h * w..(b + 1) * cin * h * w];
                        if g.is_pointwise() {
                            gemm(kdim, cout, l, 1.0, MatRef::transposed(wd, kdim), MatRef::row_major(gyb, l), 0.0, gxb);
                        } else {
                            gemm(kdim, cout, l, 1.0, MatRef::transposed(wd, kdim), MatRef::row_major(gyb, l), 0.0, &mut dcol);
                            col2im(&dcol, &g, gxb);
                        }
                    }
                }
                let mut out = vec![
                    gx.map(|d| Tensor::new(x.shape(), d).unwrap()),
                    gw.map(|d| Tensor::new(wt.shape(), d).unwrap()),
                ];
                if let Some(bv) = &bs {
                    out.push(need(bv).then(|| {
                        let mut gb = vec![0.0f32; cout];
                        for b in 0..n {
                            for (co, acc) in gb.iter_mut().enumerate() {
                                let s = b * cout * l + co * l;
                                *acc += gd[s..s + l].iter().sum::<f32>();
                            }
                        }
                        Tensor::new(&[cout], gb).unwrap()
                    }));
                }
                out
            }),
        )
    }

    /// Transposed 2-D convolution, weights `[Cin, Cout, k, k]` (no bias).
    pub fn conv_transpose2d(&self, weight: &Var, stride: usize, pad: usize) -> Var {
        let (n, cin, hi, wi) = self.value().dims4();
        let ws = weight.shape();
        assert!(ws.len() == 4 && ws[0] == cin && ws[2] == ws[3], "conv_transpose2d: input {:?} weight {:?}", self.shape(), ws);
        let (cout, k) = (ws[1], ws[2]);
        let ho = (hi - 1) * stride + k - 2 * pad;
        let wo = (wi - 1) * stride + k - 2 * pad;
        let g = ConvGeom::new(cout, ho, wo, k, stride, pad);
        assert_eq!((g.out_h, g.out_w), (hi, wi), "conv_transpose2d geometry");
        let (kdim, li) = (g.col_rows(), hi * wi);
        let xd = self.value().data();
        let wd = weight.value().data();
        let mut y = vec![0.0; n * cout * ho * wo];
        let mut col = vec![0.0; kdim * li];
        for b in 0..n {
            let xb = &xd[b * cin * li..(b + 1) * cin * li];
            gemm(kdim, cin, li, 1.0, MatRef::transposed(wd, kdim), MatRef::row_major(xb, li), 0.0, &mut col);
            col2im(&col, &g, &mut y[b * cout * ho * wo..(b + 1) * cout * ho * wo]);
        }
        let y = Tensor::new(&[n, cout, ho, wo], y).unwrap();
        let (x, wt) = (self.clone(), weight.clone());
        Var::from_op(
            y,
            vec![self.clone(), weight.clone()],
            Box::new(move |gy| {
                let gd = gy.data();
                let xd = x.value().data();
                let wd = wt.value().data();
                let mut gx = need(&x).then(|| vec![0.0; xd.len()]);
                let mut gw = need(&wt).then(|| vec![0.0; wd.len()]);
                let mut col = vec![0.0; kdim * li];
                for b in 0..n {
                    im2col(&gd[b * cout * ho * wo..(b + 1) * cout * ho * wo], &g, &mut col);
                    if let Some(gx) = gx.as_mut() {
                        gemm(cin, kdim, li, 1.0, MatRef::row_major(wd, kdim), MatRef::row_major(&col, li), 0.0, &mut gx[b * cin * li..(b + 1) * cin * li]);
                    }
                    if let Some(gw) = gw.as_mut() {
                        let xb = &xd[b * cin * li..(b + 1) * cin * li];
                        gemm(cin, li, kdim, 1.0, MatRef::row_major(xb, li), MatRef::transposed(&col, li), 1.0, gw);
                    }
                }
                vec![gx.map(|d| Tensor::new(x.shape(), d).unwrap()), gw.map(|d| Tensor::new(wt.shape(), d).unwrap())]
            }),
        )
    }

    /// Batch normalisation over `(N, H, W)` per channel.
    ///
    /// In [`BatchNormMode::Train`] the batch statistics are used and returned
    /// (mean, unbiased variance) so the caller can update running averages.
    pub fn batch_norm(&self, gamma: &Var, beta: &Var, mode: BatchNormMode<'_>) -> (Var, Option<BatchStats>) {
        let (n, c, h, w) = self.value().dims4();
        assert!(gamma.shape() == [c] && beta.shape() == [c], "batch_norm: channels {c} vs {:?}", gamma.shape());
        let hw = h * w;
        let count = n * hw;
        let xd = self.value().data();
        let (mean, var, stats) = match mode {
            BatchNormMode::Train { eps: _ } => {
                let mut mean = vec![0.0f64; c];
                let mut var = vec![0.0f64; c];
                for b in 0..n {
                    for ch in 0..c {
                        let p = &xd[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                        mean[ch] += p.iter().map(|&v| v as f64).sum::<f64>();
                    }
                }
                for m in mean.iter_mut() {
                    *m /= count as f64;
                }
                for b in 0..n {
                    for ch in 0..c {
                        let p = &xd[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                        var[ch] += p.iter().map(|&v| (v as f64 - mean[ch]).powi(2)).sum::<f64>();
                    }
                }
                let unbiased: Vec<f32> =
                    var.iter().map(|&v| (v / (count.max(2) - 1) as f64) as f32).collect();
                for v in var.iter_mut() {
                    *v /= count as f64;
                }
                let stats = BatchStats { mean: mean.iter().map(|&m| m as f32).collect(), var: unbiased };
                (mean, var, Some(stats))
            }
            BatchNormMode::Eval { running_mean, running_var, eps: _ } => (
                running_mean.iter().map(|&v| v as f64).collect(),
                running_var.iter().map(|&v| v as f64).collect(),
                None,
            ),
        };
        let eps = mode.eps() as f64;
        let inv_std: Vec<f32> = var.iter().map(|&v| (1.0 / (v + eps).sqrt()) as f32).collect();
        let mean: Vec<f32> = mean.iter().map(|&m| m as f32).collect();
        let gd = gamma.value().data();
        let bd = beta.value().data();
        let mut xhat = vec![0.0f32; xd.len()];
        let mut y = vec![0.0f32; xd.len()];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * hw;
                for i in off..off + hw {
                    let xh = (xd[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = xh;
                    y[i] = gd[ch] * xh + bd[ch];
                }
            }
        }
        let train = matches!(mode, BatchNormMode::Train { .. });
        let (x, gm, bt) = (self.clone(), gamma.clone(), beta.clone());
        let out = Var::from_op(
            Tensor::new(self.shape(), y).unwrap(),
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |gy| {
                let gyd = gy.data();
                let gdat = gm.value().data();
                let mut sum_dy = vec![0.0f64; c];
                let mut sum_dy_xhat = vec![0.0f64; c];
                for b in 0..n {
                    for ch in 0..c {
                        let off = (b * c + ch) * hw;
                        for i in off..off + hw {
                            sum_dy[ch] += gyd[i] as f64;
                            sum_dy_xhat[ch] += gyd[i] as f64 * xhat[i] as f64;
                        }
                    }
                }
                let gx = need(&x).then(|| {
                    let mut gx = vec![0.0f32; gyd.len()];
                    for b in 0..n {
                        for ch in 0..c {
                            let off = (b * c + ch) * hw;
                            let k = gdat[ch] * inv_std[ch];
                            if train {
                                let m_dy = (sum_dy[ch] / count as f64) as f32;
                                let m_dyx = (sum_dy_xhat[ch] / count as f64) as f32;
                                for i in off..off + hw {
                                    gx[i] = k * (gyd[i] - m_dy - xhat[i] * m_dyx);
                                }
                            } else {
                                for i in off..off + hw {
                                    gx[i] = k * gyd[i];
                                }
                            }
                        }
                    }
                    Tensor::new(x.shape(), gx).unwrap()
                });
                let ggamma = need(&gm).then(|| Tensor::new(&[c], sum_dy_xhat.iter().map(|&v| v as f32).collect()).unwrap());
                let gbeta = need(&bt).then(|| Tensor::new(&[c], sum_dy.iter().map(|&v| v as f32).collect()).unwrap());
                vec![gx, ggamma, gbeta]
            }),
        );
        (out, stats)
    }

    /// 2×2 average pooling with stride 2 (odd trailing rows/columns are dropped).
    pub fn avg_pool2(&self) -> Var {
        let (n, c, h, w) = self.value().dims4();
        let (ho, wo) = (h / 2, w / 2);
        let xd = self.value().data();
        let mut y = vec![0.0; n * c * ho * wo];
        for p in 0..n * c {
            let src = &xd[p * h * w..(p + 1) * h * w];
            let dst = &mut y[p * ho * wo..(p + 1) * ho * wo];
            for oy in 0..ho {
                for ox in 0..wo {
                    let i = 2 * oy * w + 2 * ox;
                    dst[oy * wo + ox] = 0.25 * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]);
                }
            }
        }
        Var::from_op(
            Tensor::new(&[n, c, ho, wo], y).unwrap(),
            vec![self.clone()],
            Box::new(move |g| {
                let mut gx = vec![0.0; n * c * h * w];
                for p in 0..n * c {
                    let src = &g.data()[p * ho * wo..(p + 1) * ho * wo];
                    let dst = &mut gx[p * h * w..(p + 1) * h * w];
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let v = 0.25 * src[oy * wo + ox];
                            let i = 2 * oy * w + 2 * ox;
                            dst[i] += v;
                            dst[i + 1] += v;
                            dst[i + w] += v;
                            dst[i + w + 1] += v;
                        }
                    }
                }
                vec![Some(Tensor::new(&[n, c, h, w], gx).unwrap())]
            }),
        )
    }

    /// 2×2 max pooling with stride 2. Ties route the gradient to the first maximum.
    pub fn max_pool2(&self) -> Var {
        let (n, c, h, w) = self.value().dims4();
        let (ho, wo) = (h / 2, w / 2);
        let xd = self.value().data();
        let mut y = vec![0.0; n * c * ho * wo];
        let mut arg = vec![0usize; n * c * ho * wo];
        for p in 0..n * c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let base = p * h * w + 2 * oy * w + 2 * ox;
                    let mut best = base;
                    for &i in &[base + 1, base + w, base + w + 1] {
                        if xd[i] > xd[best] {
                            best = i;
                        }
                    }
                    let o = p * ho * wo + oy * wo + ox;
                    y[o] = xd[best];
                    arg[o] = best;
                }
            }
        }
        let numel = xd.len();
        Var::from_op(
            Tensor::new(&[n, c, ho, wo], y).unwrap(),
            vec![self.clone()],
            Box::new(move |g| {
                let mut gx = vec![0.0; numel];
                for (o, &i) in arg.iter().enumerate() {
                    gx[i] += g.data()[o];
                }
                vec![Some(Tensor::new(&[n, c, h, w], gx).unwrap())]
            }),
        )
    }

    /// Bilinear ×2 upsampling with half-pixel centres (`align_corners = false`).
    pub fn upsample_bilinear2(&self) -> Var {
        let (n, c, h, w) = self.value().dims4();
        let (ho, wo) = (2 * h, 2 * w);
        let ytaps = bilinear_taps(h, ho);
        let xtaps = bilinear_taps(w, wo);
        let xd = self.value().data();
        let mut y = vec![0.0; n * c * ho * wo];
        for p in 0..n * c {
            let src = &xd[p * h * w..(p + 1) * h * w];
            let dst = &mut y[p * ho * wo..(p + 1) * ho * wo];
            for (oy, &(y0, y1, fy)) in ytaps.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in xtaps.iter().enumerate() {
                    let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                    let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                    dst[oy * wo + ox] = top * (1.0 - fy) + bot * fy;
                }
            }
        }
        Var::from_op(
            Tensor::new(&[n, c, ho, wo], y).unwrap(),
            vec![self.clone()],
            Box::new(move |g| {
                let mut gx = vec![0.0; n * c * h * w];
                for p in 0..n * c {
                    let src = &g.data()[p * ho * wo..(p + 1) * ho * wo];
                    let dst = &mut gx[p * h * w..(p + 1) * h * w];
                    for (oy, &(y0, y1, fy)) in ytaps.iter().enumerate() {
                        for (ox, &(x0, x1, fx)) in xtaps.iter().enumerate() {
                            let v = src[oy * wo + ox];
                            dst[y0 * w + x0] += v * (1.0 - fy) * (1.0 - fx);
                            dst[y0 * w + x1] += v * (1.0 - fy) * fx;
                            dst[y1 * w + x0] += v * fy * (1.0 - fx);
                            dst[y1 * w + x1] += v * fy * fx;
                        }
                    }
                }
                vec![Some(Tensor::new(&[n, c, h, w], gx).unwrap())]
            }),
        )
    }

    /// Separable "valid" filtering of every channel with the same 1-D kernel
    /// along both spatial axes (output shrinks by `k - 1` per axis).
    pub fn separable_filter_valid(&self, kernel: &[f32]) -> Var {
        let (n, c, h, w) = self.value().dims4();
        let k = kernel.len();
        assert!(h >= k && w >= k, "separable_filter_valid: {h}x{w} smaller than kernel {k}");
        let (ho, wo) = (h - k + 1, w - k + 1);
        let kern = kernel.to_vec();
        let xd = self.value().data();
        let mut y = vec![0.0; n * c * ho * wo];
        let mut tmp = vec![0.0; h * wo];
        for p in 0..n * c {
            let src = &xd[p * h * w..(p + 1) * h * w];
            for r in 0..h {
                for ox in 0..wo {
                    let row = &src[r * w + ox..r * w + ox + k];
                    tmp[r * wo + ox] = row.iter().zip(&kern).map(|(a, b)| a * b).sum();
                }
            }
            let dst = &mut y[p * ho * wo..(p + 1) * ho * wo];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = 0.0;
                    for (i, &kv) in kern.iter().enumerate() {
                        s += tmp[(oy + i) * wo + ox] * kv;
                    }
                    dst[oy * wo + ox] = s;
                }
            }
        }
        Var::from_op(
            Tensor::new(&[n, c, ho, wo], y).unwrap(),
            vec![self.clone()],
            Box::new(move |g| {
                let mut gx = vec![0.0; n * c * h * w];
                let mut tmp = vec![0.0; h * wo];
                for p in 0..n * c {
                    let src = &g.data()[p * ho * wo..(p + 1) * ho * wo];
                    tmp.fill(0.0);
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let v = src[oy * wo + ox];
                            for (i, &kv) in kern.iter().enumerate() {
                                tmp[(oy + i) * wo + ox] += v * kv;
                            }
                        }
                    }
                    let dst = &mut gx[p * h * w..(p + 1) * h * w];
                    for r in 0..h {
                        for ox in 0..wo {
                            let v = tmp[r * wo + ox];
                            for (j, &kv) in kern.iter().enumerate() {
                                dst[r * w + ox + j] += v * kv;
                            }
                        }
                    }
                }
                vec![Some(Tensor::new(&[n, c, h, w], gx).unwrap())]
            }),
        )
    }
}

/// Source rows/cols and weight for half-pixel bilinear resampling.
fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    let scale = src as f32 / dst as f32;
    (0..dst)
        .map(|o| {
            let s = ((o as f32 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, s - i0 as f32)
        })
        .collect()
}

fn transpose_last2(t: &Tensor) -> Tensor {
    let s = t.shape();
    assert_eq!(s.len(), 3, "transpose12 expects rank 3, got {s:?}");
    let (b, m, n) = (s[0], s[1], s[2]);
    let d = t.data();
    let mut out = vec![0.0; d.len()];
    for bi in 0..b {
        let src = &d[bi * m * n..(bi + 1) * m * n];
        let dst = &mut out[bi * m * n..(bi + 1) * m * n];
        for i in 0..m {
            for j in 0..n {
                dst[j * m + i] = src[i * n + j];
            }
        }
    }
    Tensor::new(&[b, n, m], out).unwrap()
}

#[derive(Clone, Copy, Debug)]
pub enum BatchNormMode<'a> {
    Train { eps: f32 },
    Eval { running_mean: &'a [f32], running_var: &'a [f32], eps: f32 },
}

impl BatchNormMode<'_> {
    fn eps(&self) -> f32 {
        match self {
            BatchNormMode::Train { eps } | BatchNormMode::Eval { eps, .. } => *eps,
        }
    }
}

/// Per-channel batch mean and unbiased variance.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}
