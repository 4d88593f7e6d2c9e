//! Forward and backward rules for every primitive the models and losses use.

use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Running statistics of one batch-normalization layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BnState {
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub momentum: f32,
    pub eps: f32,
}

impl BnState {
    pub fn new(channels: usize, momentum: f32, eps: f32) -> Self {
        BnState {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum,
            eps,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    fn update(&mut self, mean: &[f64], var: &[f64]) {
        let m = self.momentum;
        for (r, &b) in self.running_mean.iter_mut().zip(mean) {
            *r = (1.0 - m) * *r + m * b as f32;
        }
        for (r, &b) in self.running_var.iter_mut().zip(var) {
            *r = (1.0 - m) * *r + m * b as f32;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BnMode {
    /// Normalize with batch statistics and update the running statistics.
    Train,
    /// Normalize with the running statistics.
    Eval,
    /// Normalize with the running statistics, then fold the batch into them.
    /// The output is detached: no parameter receives a gradient.
    StatsOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormPenalty {
    /// `(‖f‖ − radius)²`
    Hard { radius: f64 },
    /// `(‖f‖ − (sg(‖f‖) + step))²`, pushing every norm outwards by `step`.
    Stepwise { step: f64 },
}

pub(crate) enum Op<T: Real> {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv2d {
        x: Var,
        k: Var,
        stride: usize,
        padding: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Relu {
        x: Var,
    },
    MaxPool {
        x: Var,
        argmax: Vec<u32>,
    },
    MeanPool {
        x: Var,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Softmax {
        x: Var,
    },
    LogSoftmax {
        x: Var,
    },
    Entropy {
        p: Var,
    },
    FeatureNorm {
        f: Var,
        norms: Vec<T>,
        targets: Vec<T>,
    },
    GradReverse {
        x: Var,
        lambda: T,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        c: T,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatRows {
        a: Var,
        b: Var,
    },
    ConcatCols {
        a: Var,
        b: Var,
    },
    LogSumExpRows {
        x: Var,
    },
    Gather {
        x: Var,
        idx: Vec<usize>,
    },
}

fn matrix_dims(shape: &[usize], op: &'static str) -> Result<(usize, usize)> {
    match shape {
        [r, c] => Ok((*r, *c)),
        _ => Err(Error::dim(op, shape, &[0, 0])),
    }
}

/// Row-wise numerically stable softmax of a `rows × cols` block.
fn softmax_rows<T: Real>(x: &[T], cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (row, dst) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut total = T::zero();
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - max).exp();
            total += *d;
        }
        dst.iter_mut().for_each(|d| *d /= total);
    }
    out
}

fn log_sum_exp<T: Real>(row: &[T]) -> T {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let total: T = row.iter().map(|&v| (v - max).exp()).sum();
    max + total.ln()
}

/// Sum with eight independent accumulators so the loop vectorizes.
fn lane_sum<T: Real>(xs: &[T], f: impl Fn(T) -> T) -> f64 {
    let mut acc = [T::zero(); 8];
    let chunks = xs.chunks_exact(8);
    let rest = chunks.remainder();
    for c in chunks {
        for (a, &v) in acc.iter_mut().zip(c) {
            *a += f(v);
        }
    }
    let tail: f64 = rest.iter().map(|&v| f(v).as_f64()).sum();
    acc.iter().map(|a| a.as_f64()).sum::<f64>() + tail
}

/// Output columns `ow` whose input column `ow·stride + j − pad` lies in `0..w`.
fn valid_cols(wo: usize, w: usize, j: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if j >= pad { 0 } else { (pad - j).div_ceil(stride) };
    let hi = if w + pad > j { ((w + pad - j - 1) / stride + 1).min(wo) } else { 0 };
    (lo.min(hi), hi)
}

/// Lays out the receptive fields of one image as columns: `[C·kh·kw, Ho·Wo]`.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Real>(
    img: &[T],
    (c, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    (ho, wo): (usize, usize),
    stride: usize,
    pad: usize,
    cols: &mut [T],
) {
    let plane = ho * wo;
    for ci in 0..c {
        for i in 0..kh {
            for j in 0..kw {
                let row = (ci * kh + i) * kw + j;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                let (lo, hi) = valid_cols(wo, w, j, stride, pad);
                for oh in 0..ho {
                    let ih = (oh * stride + i) as isize - pad as isize;
                    let line = &mut dst[oh * wo..(oh + 1) * wo];
                    if ih < 0 || ih >= h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &img[(ci * h + ih as usize) * w..(ci * h + ih as usize + 1) * w];
                    line[..lo].fill(T::zero());
                    line[hi..].fill(T::zero());
                    if lo < hi {
                        let first = lo * stride + j - pad;
                        if stride == 1 {
                            line[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                        } else {
                            for (k, d) in line[lo..hi].iter_mut().enumerate() {
                                *d = src[first + k * stride];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Real>(
    cols: &[T],
    (c, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    (ho, wo): (usize, usize),
    stride: usize,
    pad: usize,
    img: &mut [T],
) {
    let plane = ho * wo;
    for ci in 0..c {
        for i in 0..kh {
            for j in 0..kw {
                let row = (ci * kh + i) * kw + j;
                let src = &cols[row * plane..(row + 1) * plane];
                let (lo, hi) = valid_cols(wo, w, j, stride, pad);
                if lo >= hi {
                    continue;
                }
                let first = lo * stride + j - pad;
                for oh in 0..ho {
                    let ih = (oh * stride + i) as isize - pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let base = (ci * h + ih as usize) * w + first;
                    let line = &src[oh * wo + lo..oh * wo + hi];
                    if stride == 1 {
                        for (d, &v) in img[base..base + line.len()].iter_mut().zip(line) {
                            *d += v;
                        }
                    } else {
                        for (k, &v) in line.iter().enumerate() {
                            img[base + k * stride] += v;
                        }
                    }
                }
            }
        }
    }
}

impl<T: Real> Graph<T> {
    /// `x·w + b` for `x: [B, I]`, `w: [I, O]`, `b: [O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (batch, inp) = matrix_dims(self.shape(x), "linear")?;
        let (w_in, out) = matrix_dims(self.shape(w), "linear")?;
        if w_in != inp {
            return Err(Error::dim("linear", self.shape(x), self.shape(w)));
        }
        if self.shape(b) != [out] {
            return Err(Error::dim("linear", self.shape(w), self.shape(b)));
        }
        let mut y = vec![T::zero(); batch * out];
        for row in y.chunks_mut(out) {
            row.copy_from_slice(self.value(b).data());
        }
        T::gemm(
            batch,
            inp,
            out,
            self.value(x).data(),
            false,
            self.value(w).data(),
            false,
            &mut y,
            true,
        );
        let rg = self.any_grad(&[x, w, b]);
        Ok(self.push(
            Tensor::new(vec![batch, out], y)?,
            rg,
            Op::Linear { x, w, b },
        ))
    }

    /// Zero-padded cross-correlation of `x: [B, C, H, W]` with `k: [F, C, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, padding: usize) -> Result<Var> {
        let (xs, ks) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        let (&[b, c, h, w], &[f, kc, kh, kw]) = (&xs[..], &ks[..]) else {
            return Err(Error::dim("conv2d", &xs, &ks));
        };
        if kc != c || stride == 0 || kh > h + 2 * padding || kw > w + 2 * padding {
            return Err(Error::dim("conv2d", &xs, &ks));
        }
        let ho = (h + 2 * padding - kh) / stride + 1;
        let wo = (w + 2 * padding - kw) / stride + 1;
        let (ckk, plane) = (c * kh * kw, ho * wo);
        let mut cols = vec![T::zero(); ckk * plane];
        let mut y = vec![T::zero(); b * f * plane];
        let xd = self.value(x).data();
        let kd = self.value(k).data();
        for bi in 0..b {
            im2col(
                &xd[bi * c * h * w..(bi + 1) * c * h * w],
                (c, h, w),
                (kh, kw),
                (ho, wo),
                stride,
                padding,
                &mut cols,
            );
            T::gemm(
                f,
                ckk,
                plane,
                kd,
                false,
                &cols,
                false,
                &mut y[bi * f * plane..(bi + 1) * f * plane],
                false,
            );
        }
        let rg = self.any_grad(&[x, k]);
        Ok(self.push(
            Tensor::new(vec![b, f, ho, wo], y)?,
            rg,
            Op::Conv2d {
                x,
                k,
                stride,
                padding,
            },
        ))
    }

    /// Batch normalization over every axis except axis 1 (`[B, F]` or `[B, C, H, W]`).
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BnState,
        mode: BnMode,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 {
            return Err(Error::dim("batchnorm", &xs, &[0, state.channels()]));
        }
        let (b, c) = (xs[0], xs[1]);
        let s: usize = xs[2..].iter().product();
        if c != state.channels() || self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::dim("batchnorm", &xs, self.shape(gamma)));
        }
        if mode != BnMode::Eval && b < 2 {
            return Err(Error::BatchSize {
                op: "batchnorm",
                got: b,
                need: 2,
            });
        }
        let xd = self.value(x).data();
        let batch_moments = || {
            let n = (b * s) as f64;
            let mut mean = vec![0.0f64; c];
            let mut var = vec![0.0f64; c];
            for bi in 0..b {
                for ci in 0..c {
                    let off = (bi * c + ci) * s;
                    mean[ci] += lane_sum(&xd[off..off + s], |v| v);
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            for bi in 0..b {
                for ci in 0..c {
                    let off = (bi * c + ci) * s;
                    let m = T::lit(mean[ci]);
                    var[ci] += lane_sum(&xd[off..off + s], |v| (v - m) * (v - m));
                }
            }
            var.iter_mut().for_each(|v| *v /= n);
            (mean, var)
        };
        let running = |st: &BnState| {
            let mean: Vec<T> = st.running_mean.iter().map(|&m| T::lit(m as f64)).collect();
            let inv: Vec<T> = st
                .running_var
                .iter()
                .map(|&v| T::one() / (T::lit(v as f64) + T::lit(st.eps as f64)).sqrt())
                .collect();
            (mean, inv)
        };
        let (mean, inv_std, batch_stats) = match mode {
            BnMode::Train => {
                let (bm, bv) = batch_moments();
                let mean = bm.iter().map(|&m| T::lit(m)).collect();
                let inv = bv
                    .iter()
                    .map(|&v| T::one() / (T::lit(v) + T::lit(state.eps as f64)).sqrt())
                    .collect();
                state.update(&bm, &bv);
                (mean, inv, true)
            }
            BnMode::Eval => {
                let (m, i) = running(state);
                (m, i, false)
            }
            BnMode::StatsOnly => {
                let (m, i) = running(state);
                let (bm, bv) = batch_moments();
                state.update(&bm, &bv);
                (m, i, false)
            }
        };
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut y = vec![T::zero(); xd.len()];
        for bi in 0..b {
            for ci in 0..c {
                let off = (bi * c + ci) * s;
                let (m, is, g, be) = (mean[ci], inv_std[ci], gd[ci], bd[ci]);
                for (o, &v) in y[off..off + s].iter_mut().zip(&xd[off..off + s]) {
                    *o = (v - m) * is * g + be;
                }
            }
        }
        let rg = mode != BnMode::StatsOnly && self.any_grad(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::new(xs, y)?,
            rg,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                batch_stats,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.max(T::zero()));
        let rg = self.any_grad(&[x]);
        self.push(y, rg, Op::Relu { x })
    }

    /// Non-overlapping `size × size` max pooling of `[B, C, H, W]`; ragged edges are dropped.
    pub fn max_pool2d(&mut self, x: Var, size: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let [b, c, h, w] = xs[..] else {
            return Err(Error::dim("max_pool2d", &xs, &[size, size]));
        };
        if size == 0 || h < size || w < size {
            return Err(Error::dim("max_pool2d", &xs, &[size, size]));
        }
        let (ho, wo) = (h / size, w / size);
        let xd = self.value(x).data();
        let mut y = Vec::with_capacity(b * c * ho * wo);
        let mut argmax = Vec::with_capacity(b * c * ho * wo);
        for plane in 0..b * c {
            let base = plane * h * w;
            if size == 2 {
                for oh in 0..ho {
                    let r0 = base + 2 * oh * w;
                    let r1 = r0 + w;
                    for ow in 0..wo {
                        let cands = [r0 + 2 * ow, r0 + 2 * ow + 1, r1 + 2 * ow, r1 + 2 * ow + 1];
                        let mut best = cands[0];
                        for &idx in &cands[1..] {
                            if xd[idx] > xd[best] {
                                best = idx;
                            }
                        }
                        y.push(xd[best]);
                        argmax.push(best as u32);
                    }
                }
                continue;
            }
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut best = base + oh * size * w + ow * size;
                    for i in 0..size {
                        for j in 0..size {
                            let idx = base + (oh * size + i) * w + ow * size + j;
                            if xd[idx] > xd[best] {
                                best = idx;
                            }
                        }
                    }
                    y.push(xd[best]);
                    argmax.push(best as u32);
                }
            }
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            Tensor::new(vec![b, c, ho, wo], y)?,
            rg,
            Op::MaxPool { x, argmax },
        ))
    }

    /// Mean over every axis after the first two: `[B, C, ...] -> [B, C]`.
    pub fn global_mean_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 3 {
            return Err(Error::dim("global_mean_pool", &xs, &[0, 0, 0]));
        }
        let s: usize = xs[2..].iter().product();
        let inv = T::one() / T::lit(s as f64);
        let y = self
            .value(x)
            .data()
            .chunks(s)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            Tensor::new(vec![xs[0], xs[1]], y)?,
            rg,
            Op::MeanPool { x },
        ))
    }

    /// Batch mean of `−log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (b, k) = matrix_dims(self.shape(logits), "softmax_cross_entropy")?;
        if labels.len() != b {
            return Err(Error::dim(
                "softmax_cross_entropy",
                self.shape(logits),
                &[labels.len()],
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Index {
                op: "softmax_cross_entropy",
                index: bad,
                bound: k,
            });
        }
        let xd = self.value(logits).data();
        let probs = softmax_rows(xd, k);
        let mut total = T::zero();
        for (row, &l) in xd.chunks(k).zip(labels) {
            total += log_sum_exp(row) - row[l];
        }
        let loss = total / T::lit(b as f64);
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            rg,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (b, k) = matrix_dims(self.shape(x), "softmax")?;
        let y = softmax_rows(self.value(x).data(), k);
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::new(vec![b, k], y)?, rg, Op::Softmax { x }))
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let (b, k) = matrix_dims(self.shape(x), "log_softmax")?;
        let mut y = self.value(x).data().to_vec();
        for row in y.chunks_mut(k) {
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::new(vec![b, k], y)?, rg, Op::LogSoftmax { x }))
    }

    /// Batch mean of the Shannon entropy `−Σ p ln p` of each row (nats).
    pub fn entropy(&mut self, p: Var) -> Result<Var> {
        let (b, k) = matrix_dims(self.shape(p), "entropy")?;
        let pd = self.value(p).data();
        let mut total = T::zero();
        for (r, row) in pd.chunks(k).enumerate() {
            let sum: f64 = row.iter().map(|v| v.as_f64()).sum();
            if (sum - 1.0).abs() > 1e-5 || row.iter().any(|&v| v < T::zero()) {
                return Err(Error::Normalization { row: r, sum });
            }
            for &v in row {
                if v > T::zero() {
                    total -= v * v.ln();
                }
            }
        }
        let h = total / T::lit(b as f64);
        let rg = self.any_grad(&[p]);
        Ok(self.push(Tensor::scalar(h), rg, Op::Entropy { p }))
    }

    /// Batch mean of the squared gap between each row's L2 norm and its target norm.
    pub fn feature_norm_penalty(&mut self, f: Var, variant: NormPenalty) -> Result<Var> {
        let (b, d) = matrix_dims(self.shape(f), "feature_norm_penalty")?;
        if b == 0 {
            return Err(Error::BatchSize {
                op: "feature_norm_penalty",
                got: 0,
                need: 1,
            });
        }
        let norms: Vec<T> = self
            .value(f)
            .data()
            .chunks(d)
            .map(|row| row.iter().map(|&v| v * v).sum::<T>().sqrt())
            .collect();
        let targets: Vec<T> = match variant {
            NormPenalty::Hard { radius } if radius > 0.0 => vec![T::lit(radius); b],
            NormPenalty::Stepwise { step } if step > 0.0 => {
                norms.iter().map(|&n| n + T::lit(step)).collect()
            }
            other => {
                return Err(Error::Parameter(format!(
                    "feature norm penalty needs a positive radius/step, got {other:?}"
                )))
            }
        };
        let total: T = norms
            .iter()
            .zip(&targets)
            .map(|(&n, &t)| (n - t) * (n - t))
            .sum();
        let loss = total / T::lit(b as f64);
        let rg = self.any_grad(&[f]);
        Ok(self.push(
            Tensor::scalar(loss),
            rg,
            Op::FeatureNorm { f, norms, targets },
        ))
    }

    /// Identity forward; the backward pass multiplies the upstream gradient by `−lambda`.
    pub fn grad_reverse(&mut self, x: Var, lambda: f64) -> Result<Var> {
        if lambda < 0.0 || !lambda.is_finite() {
            return Err(Error::Parameter(format!(
                "gradient reversal weight must be >= 0, got {lambda}"
            )));
        }
        let y = self.value(x).clone();
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            y,
            rg,
            Op::GradReverse {
                x,
                lambda: T::lit(lambda),
            },
        ))
    }

    /// A copy of `x` that blocks gradient flow.
    pub fn detach(&mut self, x: Var) -> Var {
        let y = self.value(x).clone();
        self.constant(y)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("add", self.shape(a), self.shape(b)));
        }
        let y: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&p, &q)| p + q)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(shape, y)?, rg, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("mul", self.shape(a), self.shape(b)));
        }
        let y: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&p, &q)| p * q)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(shape, y)?, rg, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = T::lit(c);
        let y = self.value(x).map(|v| v * c);
        let rg = self.any_grad(&[x]);
        self.push(y, rg, Op::Scale { x, c })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), rg, Op::Sum { x })
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel().max(1);
        let s: T = self.value(x).data().iter().copied().sum();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(s / T::lit(n as f64)), rg, Op::Mean { x })
    }

    /// Rows `start..end` along axis 0.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.is_empty() || start > end || end > xs[0] {
            return Err(Error::dim("slice_rows", &xs, &[start, end]));
        }
        let row: usize = xs[1..].iter().product();
        let y = self.value(x).data()[start * row..end * row].to_vec();
        let mut shape = xs;
        shape[0] = end - start;
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::new(shape, y)?, rg, Op::SliceRows { x, start }))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (b, n) = matrix_dims(self.shape(x), "slice_cols")?;
        if start > end || end > n {
            return Err(Error::dim("slice_cols", &[b, n], &[start, end]));
        }
        let y: Vec<T> = self
            .value(x)
            .data()
            .chunks(n)
            .flat_map(|row| row[start..end].iter().copied())
            .collect();
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            Tensor::new(vec![b, end - start], y)?,
            rg,
            Op::SliceCols { x, start },
        ))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.is_empty() || sa.len() != sb.len() || sa[1..] != sb[1..] {
            return Err(Error::dim("concat_rows", &sa, &sb));
        }
        let mut y = self.value(a).data().to_vec();
        y.extend_from_slice(self.value(b).data());
        let mut shape = sa.clone();
        shape[0] += sb[0];
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(shape, y)?, rg, Op::ConcatRows { a, b }))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = matrix_dims(self.shape(a), "concat_cols")?;
        let (rb, cb) = matrix_dims(self.shape(b), "concat_cols")?;
        if ra != rb {
            return Err(Error::dim("concat_cols", &[ra, ca], &[rb, cb]));
        }
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut y = Vec::with_capacity(ra * (ca + cb));
        for r in 0..ra {
            y.extend_from_slice(&ad[r * ca..(r + 1) * ca]);
            y.extend_from_slice(&bd[r * cb..(r + 1) * cb]);
        }
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(
            Tensor::new(vec![ra, ca + cb], y)?,
            rg,
            Op::ConcatCols { a, b },
        ))
    }

    /// `log Σ_j exp(x[b, j])` per row.
    pub fn logsumexp_rows(&mut self, x: Var) -> Result<Var> {
        let (b, n) = matrix_dims(self.shape(x), "logsumexp_rows")?;
        let y = self.value(x).data().chunks(n).map(log_sum_exp).collect();
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::new(vec![b], y)?, rg, Op::LogSumExpRows { x }))
    }

    /// `x[b, idx[b]]` per row.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (b, n) = matrix_dims(self.shape(x), "gather")?;
        if idx.len() != b {
            return Err(Error::dim("gather", &[b, n], &[idx.len()]));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::Index {
                op: "gather",
                index: bad,
                bound: n,
            });
        }
        let xd = self.value(x).data();
        let y = idx.iter().enumerate().map(|(r, &i)| xd[r * n + i]).collect();
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            Tensor::new(vec![b], y)?,
            rg,
            Op::Gather {
                x,
                idx: idx.to_vec(),
            },
        ))
    }

    /// Pushes the gradient `g` of node `i` onto its inputs.
    pub(crate) fn backprop(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].value.data();
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            &Op::Linear { x, w, b } => {
                let (batch, inp) = (self.shape(x)[0], self.shape(x)[1]);
                let out = self.shape(w)[1];
                if needs(x) {
                    let mut dx = vec![T::zero(); batch * inp];
                    T::gemm(batch, out, inp, g, false, val(w), true, &mut dx, false);
                    self.accumulate(grads, x, dx);
                }
                if needs(w) {
                    let mut dw = vec![T::zero(); inp * out];
                    T::gemm(inp, batch, out, val(x), true, g, false, &mut dw, false);
                    self.accumulate(grads, w, dw);
                }
                if needs(b) {
                    let mut db = vec![T::zero(); out];
                    for row in g.chunks(out) {
                        db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                    }
                    self.accumulate(grads, b, db);
                }
            }
            &Op::Conv2d {
                x,
                k,
                stride,
                padding,
            } => {
                let xs = self.shape(x);
                let ks = self.shape(k);
                let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                let (f, kh, kw) = (ks[0], ks[2], ks[3]);
                let ys = node.value.shape();
                let (ho, wo) = (ys[2], ys[3]);
                let (ckk, plane) = (c * kh * kw, ho * wo);
                let mut cols = vec![T::zero(); ckk * plane];
                let mut dcols = vec![T::zero(); ckk * plane];
                let mut dx = needs(x).then(|| vec![T::zero(); b * c * h * w]);
                let mut dk = needs(k).then(|| vec![T::zero(); f * ckk]);
                for bi in 0..b {
                    let gy = &g[bi * f * plane..(bi + 1) * f * plane];
                    if let Some(dk) = dk.as_mut() {
                        im2col(
                            &val(x)[bi * c * h * w..(bi + 1) * c * h * w],
                            (c, h, w),
                            (kh, kw),
                            (ho, wo),
                            stride,
                            padding,
                            &mut cols,
                        );
                        T::gemm(f, plane, ckk, gy, false, &cols, true, dk, true);
                    }
                    if let Some(dx) = dx.as_mut() {
                        T::gemm(ckk, f, plane, val(k), true, gy, false, &mut dcols, false);
                        col2im(
                            &dcols,
                            (c, h, w),
                            (kh, kw),
                            (ho, wo),
                            stride,
                            padding,
                            &mut dx[bi * c * h * w..(bi + 1) * c * h * w],
                        );
                    }
                }
                if let Some(dx) = dx {
                    self.accumulate(grads, x, dx);
                }
                if let Some(dk) = dk {
                    self.accumulate(grads, k, dk);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                batch_stats,
            } => {
                let xs = self.shape(*x);
                let (b, c) = (xs[0], xs[1]);
                let s: usize = xs[2..].iter().product();
                let xd = val(*x);
                let gd = val(*gamma);
                let mut dgamma = vec![0.0f64; c];
                let mut dbeta = vec![0.0f64; c];
                for bi in 0..b {
                    for ci in 0..c {
                        let off = (bi * c + ci) * s;
                        let (gs, xs) = (&g[off..off + s], &xd[off..off + s]);
                        dbeta[ci] += lane_sum(gs, |v| v);
                        let mut acc = [T::zero(); 8];
                        let mut tail = T::zero();
                        let m = mean[ci];
                        let gc = gs.chunks_exact(8);
                        let xc = xs.chunks_exact(8);
                        let (gr, xr) = (gc.remainder(), xc.remainder());
                        for (g8, x8) in gc.zip(xc) {
                            for l in 0..8 {
                                acc[l] += g8[l] * (x8[l] - m);
                            }
                        }
                        for (&gv, &xv) in gr.iter().zip(xr) {
                            tail += gv * (xv - m);
                        }
                        let dot = acc.iter().map(|a| a.as_f64()).sum::<f64>() + tail.as_f64();
                        dgamma[ci] += dot * inv_std[ci].as_f64();
                    }
                }
                let dgamma: Vec<T> = dgamma.into_iter().map(T::lit).collect();
                let dbeta: Vec<T> = dbeta.into_iter().map(T::lit).collect();
                if needs(*x) {
                    let n = T::lit((b * s) as f64);
                    let mut dx = vec![T::zero(); xd.len()];
                    for bi in 0..b {
                        for ci in 0..c {
                            let off = (bi * c + ci) * s;
                            let scale = gd[ci] * inv_std[ci];
                            let (dst, gs, xs) = (&mut dx[off..off + s], &g[off..off + s], &xd[off..off + s]);
                            if *batch_stats {
                                let (m, is) = (mean[ci], inv_std[ci]);
                                let (db, dg) = (dbeta[ci] / n, dgamma[ci] / n);
                                for ((d, &gv), &xv) in dst.iter_mut().zip(gs).zip(xs) {
                                    *d = scale * (gv - db - (xv - m) * is * dg);
                                }
                            } else {
                                for (d, &gv) in dst.iter_mut().zip(gs) {
                                    *d = scale * gv;
                                }
                            }
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
                self.accumulate(grads, *gamma, dgamma);
                self.accumulate(grads, *beta, dbeta);
            }
            &Op::Relu { x } => {
                let dx = g
                    .iter()
                    .zip(node.value.data())
                    .map(|(&gv, &y)| if y > T::zero() { gv } else { T::zero() })
                    .collect();
                self.accumulate(grads, x, dx);
            }
            Op::MaxPool { x, argmax } => {
                let mut dx = vec![T::zero(); self.value(*x).numel()];
                for (&gv, &src) in g.iter().zip(argmax) {
                    dx[src as usize] += gv;
                }
                self.accumulate(grads, *x, dx);
            }
            &Op::MeanPool { x } => {
                let s: usize = self.shape(x)[2..].iter().product();
                let inv = T::one() / T::lit(s as f64);
                let dx = g
                    .iter()
                    .flat_map(|&gv| std::iter::repeat_n(gv * inv, s))
                    .collect();
                self.accumulate(grads, x, dx);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let k = self.shape(*logits)[1];
                let scale = g[0] / T::lit(labels.len() as f64);
                let mut dx: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (r, &l) in labels.iter().enumerate() {
                    dx[r * k + l] -= scale;
                }
                self.accumulate(grads, *logits, dx);
            }
            &Op::Softmax { x } => {
                let k = self.shape(x)[1];
                let y = node.value.data();
                let mut dx = vec![T::zero(); y.len()];
                for ((yr, gr), dr) in y.chunks(k).zip(g.chunks(k)).zip(dx.chunks_mut(k)) {
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *d = yv * (gv - dot);
                    }
                }
                self.accumulate(grads, x, dx);
            }
            &Op::LogSoftmax { x } => {
                let k = self.shape(x)[1];
                let y = node.value.data();
                let mut dx = vec![T::zero(); y.len()];
                for ((yr, gr), dr) in y.chunks(k).zip(g.chunks(k)).zip(dx.chunks_mut(k)) {
                    let total: T = gr.iter().copied().sum();
                    for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *d = gv - yv.exp() * total;
                    }
                }
                self.accumulate(grads, x, dx);
            }
            &Op::Entropy { p } => {
                let b = self.shape(p)[0];
                let scale = g[0] / T::lit(b as f64);
                let tiny = T::min_positive_value();
                let dx = val(p)
                    .iter()
                    .map(|&v| -(v.max(tiny).ln() + T::one()) * scale)
                    .collect();
                self.accumulate(grads, p, dx);
            }
            Op::FeatureNorm { f, norms, targets } => {
                let (b, d) = (self.shape(*f)[0], self.shape(*f)[1]);
                let scale = g[0] / T::lit(b as f64);
                let mut dx = vec![T::zero(); b * d];
                for (r, row) in val(*f).chunks(d).enumerate() {
                    let n = norms[r];
                    if n > T::zero() {
                        let coef = T::lit(2.0) * (n - targets[r]) * scale / n;
                        for (dv, &fv) in dx[r * d..(r + 1) * d].iter_mut().zip(row) {
                            *dv = coef * fv;
                        }
                    }
                }
                self.accumulate(grads, *f, dx);
            }
            &Op::GradReverse { x, lambda } => {
                let dx = g.iter().map(|&v| -lambda * v).collect();
                self.accumulate(grads, x, dx);
            }
            &Op::Add { a, b } => {
                self.accumulate(grads, a, g.to_vec());
                self.accumulate(grads, b, g.to_vec());
            }
            &Op::Mul { a, b } => {
                if needs(a) {
                    let da = g.iter().zip(val(b)).map(|(&gv, &q)| gv * q).collect();
                    self.accumulate(grads, a, da);
                }
                if needs(b) {
                    let db = g.iter().zip(val(a)).map(|(&gv, &p)| gv * p).collect();
                    self.accumulate(grads, b, db);
                }
            }
            &Op::Scale { x, c } => {
                self.accumulate(grads, x, g.iter().map(|&v| v * c).collect());
            }
            &Op::Sum { x } => {
                self.accumulate(grads, x, vec![g[0]; self.value(x).numel()]);
            }
            &Op::Mean { x } => {
                let n = self.value(x).numel().max(1);
                self.accumulate(grads, x, vec![g[0] / T::lit(n as f64); n]);
            }
            &Op::SliceRows { x, start } => {
                let row: usize = self.shape(x)[1..].iter().product();
                let mut dx = vec![T::zero(); self.value(x).numel()];
                dx[start * row..start * row + g.len()].copy_from_slice(g);
                self.accumulate(grads, x, dx);
            }
            &Op::SliceCols { x, start } => {
                let (b, n) = (self.shape(x)[0], self.shape(x)[1]);
                let w = node.value.shape()[1];
                let mut dx = vec![T::zero(); b * n];
                for r in 0..b {
                    dx[r * n + start..r * n + start + w].copy_from_slice(&g[r * w..(r + 1) * w]);
                }
                self.accumulate(grads, x, dx);
            }
            &Op::ConcatRows { a, b } => {
                let na = self.value(a).numel();
                self.accumulate(grads, a, g[..na].to_vec());
                self.accumulate(grads, b, g[na..].to_vec());
            }
            &Op::ConcatCols { a, b } => {
                let (ca, cb) = (self.shape(a)[1], self.shape(b)[1]);
                let (mut da, mut db) = (Vec::new(), Vec::new());
                for row in g.chunks(ca + cb) {
                    da.extend_from_slice(&row[..ca]);
                    db.extend_from_slice(&row[ca..]);
                }
                self.accumulate(grads, a, da);
                self.accumulate(grads, b, db);
            }
            &Op::LogSumExpRows { x } => {
                let n = self.shape(x)[1];
                let mut dx = softmax_rows(val(x), n);
                for (row, &gv) in dx.chunks_mut(n).zip(g) {
                    row.iter_mut().for_each(|v| *v *= gv);
                }
                self.accumulate(grads, x, dx);
            }
            Op::Gather { x, idx } => {
                let n = self.shape(*x)[1];
                let mut dx = vec![T::zero(); self.value(*x).numel()];
                for (r, (&i, &gv)) in idx.iter().zip(g).enumerate() {
                    dx[r * n + i] = gv;
                }
                self.accumulate(grads, *x, dx);
            }
        }
    }
}
