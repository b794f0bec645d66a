//! Network operations on the tape: convolution, normalization, softmax,
//! bilinear grid sampling and single-head attention.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::array::Array;
use crate::tensor::graph::{mm_nn, mm_nt, mm_tn, Backward, BackwardCtx, Graph, Var};

// ---------------------------------------------------------------------------
// conv2d — cross-correlation semantics, CHW layout
// ---------------------------------------------------------------------------

#[derive(Clone, Copy)]
struct ConvDims {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
}

fn im2col(input: &[f64], d: ConvDims) -> Vec<f64> {
    let ck = d.cin * d.kh * d.kw;
    let out_hw = d.ho * d.wo;
    let mut cols = vec![0.0; ck * out_hw];
    for ci in 0..d.cin {
        let chan = &input[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = ((ci * d.kh + ky) * d.kw + kx) * out_hw;
                for oy in 0..d.ho {
                    let iy = (oy * d.stride + ky) as isize - d.padding as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let base = iy as usize * d.w;
                    for ox in 0..d.wo {
                        let ix = (ox * d.stride + kx) as isize - d.padding as isize;
                        if ix < 0 || ix >= d.w as isize {
                            continue;
                        }
                        cols[row + oy * d.wo + ox] = chan[base + ix as usize];
                    }
                }
            }
        }
    }
    cols
}

fn col2im(dcols: &[f64], d: ConvDims) -> Vec<f64> {
    let out_hw = d.ho * d.wo;
    let mut dinput = vec![0.0; d.cin * d.h * d.w];
    for ci in 0..d.cin {
        let chan = &mut dinput[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = ((ci * d.kh + ky) * d.kw + kx) * out_hw;
                for oy in 0..d.ho {
                    let iy = (oy * d.stride + ky) as isize - d.padding as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let base = iy as usize * d.w;
                    for ox in 0..d.wo {
                        let ix = (ox * d.stride + kx) as isize - d.padding as isize;
                        if ix < 0 || ix >= d.w as isize {
                            continue;
                        }
                        chan[base + ix as usize] += dcols[row + oy * d.wo + ox];
                    }
                }
            }
        }
    }
    dinput
}

struct Conv2dBack {
    input: Var,
    weight: Var,
    bias: Var,
    dims: ConvDims,
}

impl Backward for Conv2dBack {
    fn backward(&self, ctx: &mut BackwardCtx<'_>, _out: &Array, g: &Array) {
        let d = self.dims;
        let ck = d.cin * d.kh * d.kw;
        let out_hw = d.ho * d.wo;
        if ctx.wants(self.bias) {
            let mut db = vec![0.0; d.cout];
            for (co, dbv) in db.iter_mut().enumerate() {
                *dbv = g.data()[co * out_hw..(co + 1) * out_hw].iter().sum();
            }
            ctx.accum(self.bias, Array::from_vec(&[d.cout], db).unwrap());
        }
        if ctx.wants(self.weight) {
            // dW[cout, ck] = g[cout, out_hw] · cols[ck, out_hw]ᵀ
            let cols = im2col(ctx.value(self.input).data(), d);
            let dw = mm_nt(g.data(), &cols, d.cout, out_hw, ck);
            ctx.accum(
                self.weight,
                Array::from_vec(&[d.cout, d.cin, d.kh, d.kw], dw).unwrap(),
            );
        }
        if ctx.wants(self.input) {
            // dcols[ck, out_hw] = W[cout, ck]ᵀ · g[cout, out_hw]
            let w = ctx.value(self.weight);
            let dcols = mm_tn(w.data(), g.data(), d.cout, ck, out_hw);
            let dinput = col2im(&dcols, d);
            ctx.accum(
                self.input,
                Array::from_vec(&[d.cin, d.h, d.w], dinput).unwrap(),
            );
        }
    }
}

impl Graph {
    /// 2-D convolution (cross-correlation): input `Cin×H×W`, weight
    /// `Cout×Cin×kh×kw`, bias `Cout`. Output spatial size is
    /// `floor((H + 2p − k)/s) + 1`.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let si = self.value(input).shape().to_vec();
        let sw = self.value(weight).shape().to_vec();
        let sb = self.value(bias).shape().to_vec();
        if si.len() != 3 {
            return Err(Error::shape(
                "conv2d",
                format!("input must be Cin×H×W, got {:?}", si),
            ));
        }
        if sw.len() != 4 {
            return Err(Error::shape(
                "conv2d",
                format!("weight must be Cout×Cin×kh×kw, got {:?}", sw),
            ));
        }
        if si[0] != sw[1] {
            return Err(Error::shape(
                "conv2d",
                format!("input channels {} vs weight in-channels {}", si[0], sw[1]),
            ));
        }
        if sb != [sw[0]] {
            return Err(Error::shape(
                "conv2d",
                format!("bias shape {:?} vs out-channels {}", sb, sw[0]),
            ));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d", "stride must be ≥ 1".to_string()));
        }
        let (h, w, kh, kw) = (si[1], si[2], sw[2], sw[3]);
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "kernel {kh}×{kw} does not fit padded input {}×{}",
                    h + 2 * padding,
                    w + 2 * padding
                ),
            ));
        }
        let ho = (h + 2 * padding - kh) / stride + 1;
        let wo = (w + 2 * padding - kw) / stride + 1;
        let dims = ConvDims {
            cin: si[0],
            h,
            w,
            cout: sw[0],
            kh,
            kw,
            stride,
            padding,
            ho,
            wo,
        };
        let ck = dims.cin * kh * kw;
        let out_hw = ho * wo;
        let cols = im2col(self.value(input).data(), dims);
        let mut data = mm_nn(self.value(weight).data(), &cols, dims.cout, ck, out_hw);
        let bias_v = self.value(bias).data().to_vec();
        for co in 0..dims.cout {
            let bv = bias_v[co];
            for o in &mut data[co * out_hw..(co + 1) * out_hw] {
                *o += bv;
            }
        }
        let value = Array::from_vec(&[dims.cout, ho, wo], data)?;
        Ok(self.op(
            value,
            &[input, weight, bias],
            Box::new(Conv2dBack {
                input,
                weight,
                bias,
                dims,
            }),
        ))
    }
}

// ---------------------------------------------------------------------------
// Batch normalization (per channel over spatial dims, CHW layout)
// ---------------------------------------------------------------------------

pub enum BnMode<'a> {
    Train,
    Eval {
        running_mean: &'a Array,
        running_var: &'a Array,
    },
}

pub struct BnResult {
    pub out: Var,
    /// Per-channel (mean, biased variance) computed in train mode, for the
    /// caller's running-stat update.
    pub batch_stats: Option<(Array, Array)>,
}

struct BnBack {
    input: Var,
    gamma: Var,
    beta: Var,
    mean: Vec<f64>,
    inv_std: Vec<f64>,
    /// Train mode differentiates through the batch statistics.
    through_stats: bool,
    c: usize,
    n: usize,
}

impl Backward for BnBack {
    fn backward(&self, ctx: &mut BackwardCtx<'_>, _out: &Array, g: &Array) {
        let (c, n) = (self.c, self.n);
        let x = ctx.value(self.input).data().to_vec();
        let gamma = ctx.value(self.gamma).data().to_vec();
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        let mut dx = vec![0.0; c * n];
        for ch in 0..c {
            let (mu, istd) = (self.mean[ch], self.inv_std[ch]);
            let gs = &g.data()[ch * n..(ch + 1) * n];
            let xs = &x[ch * n..(ch + 1) * n];
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for (gi, xi) in gs.iter().zip(xs) {
                let xhat = (xi - mu) * istd;
                sum_g += gi;
                sum_gx += gi * xhat;
            }
            dgamma[ch] = sum_gx;
            dbeta[ch] = sum_g;
            let dxs = &mut dx[ch * n..(ch + 1) * n];
            if self.through_stats {
                let nf = n as f64;
                for ((d, gi), xi) in dxs.iter_mut().zip(gs).zip(xs) {
                    let xhat = (xi - mu) * istd;
                    *d = gamma[ch] * istd * (gi - sum_g / nf - xhat * sum_gx / nf);
                }
            } else {
                for (d, gi) in dxs.iter_mut().zip(gs) {
                    *d = gamma[ch] * istd * gi;
                }
            }
        }
        if ctx.wants(self.input) {
            let shape = ctx.value(self.input).shape().to_vec();
            ctx.accum(self.input, Array::from_vec(&shape, dx).unwrap());
        }
        ctx.accum(self.gamma, Array::from_vec(&[c], dgamma).unwrap());
        ctx.accum(self.beta, Array::from_vec(&[c], dbeta).unwrap());
    }
}

impl Graph {
    /// Per-channel batch normalization of a `C×H×W` map. Train mode
    /// normalizes with the input's own statistics (and reports them);
    /// eval mode uses the provided running statistics.
    pub fn batchnorm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        mode: BnMode<'_>,
    ) -> Result<BnResult> {
        if eps <= 0.0 {
            return Err(Error::InvalidConfig(format!("batchnorm eps {eps} must be > 0")));
        }
        let si = self.value(input).shape().to_vec();
        if si.len() != 3 {
            return Err(Error::shape(
                "batchnorm2d",
                format!("input must be C×H×W, got {:?}", si),
            ));
        }
        let c = si[0];
        let n = si[1] * si[2];
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return Err(Error::shape(
                "batchnorm2d",
                format!(
                    "gamma {:?} / beta {:?} vs channel count {}",
                    self.value(gamma).shape(),
                    self.value(beta).shape(),
                    c
                ),
            ));
        }
        let (mean, var, through_stats) = match mode {
            BnMode::Train => {
                let x = self.value(input).data();
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let xs = &x[ch * n..(ch + 1) * n];
                    let mu = xs.iter().sum::<f64>() / n as f64;
                    let v = xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n as f64;
                    mean[ch] = mu;
                    var[ch] = v;
                }
                (mean, var, true)
            }
            BnMode::Eval {
                running_mean,
                running_var,
            } => {
                if running_mean.shape() != [c] || running_var.shape() != [c] {
                    return Err(Error::shape(
                        "batchnorm2d",
                        format!(
                            "running stats {:?}/{:?} vs channel count {}",
                            running_mean.shape(),
                            running_var.shape(),
                            c
                        ),
                    ));
                }
                (
                    running_mean.data().to_vec(),
                    running_var.data().to_vec(),
                    false,
                )
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let x = self.value(input).data();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let mut data = vec![0.0; c * n];
        for ch in 0..c {
            let (mu, istd, ga, be) = (mean[ch], inv_std[ch], gd[ch], bd[ch]);
            for (o, xi) in data[ch * n..(ch + 1) * n]
                .iter_mut()
                .zip(&x[ch * n..(ch + 1) * n])
            {
                *o = (xi - mu) * istd * ga + be;
            }
        }
        let value = Array::from_vec(&si, data)?;
        let batch_stats = through_stats.then(|| {
            (
                Array::from_vec(&[c], mean.clone()).unwrap(),
                Array::from_vec(&[c], var.clone()).unwrap(),
            )
        });
        let out = self.op(
            value,
            &[input, gamma, beta],
            Box::new(BnBack {
                input,
                gamma,
                beta,
                mean,
                inv_std,
                through_stats,
                c,
                n,
            }),
        );
        Ok(BnResult { out, batch_stats })
    }
}

// ---------------------------------------------------------------------------
// Layer normalization (per row over the last dim of a 2-D token matrix)
// ---------------------------------------------------------------------------

struct LayerNormBack {
    input: Var,
    gamma: Var,
    beta: Var,
    mean: Vec<f64>,
    inv_std: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl Backward for LayerNormBack {
    fn backward(&self, ctx: &mut BackwardCtx<'_>, _out: &Array, g: &Array) {
        let (rows, cols) = (self.rows, self.cols);
        let x = ctx.value(self.input).data().to_vec();
        let gamma = ctx.value(self.gamma).data().to_vec();
        let mut dgamma = vec![0.0; cols];
        let mut dbeta = vec![0.0; cols];
        let mut dx = vec![0.0; rows * cols];
        let nf = cols as f64;
        for r in 0..rows {
            let (mu, istd) = (self.mean[r], self.inv_std[r]);
            let gs = &g.data()[r * cols..(r + 1) * cols];
            let xs = &x[r * cols..(r + 1) * cols];
            let mut sum_h = 0.0;
            let mut sum_hx = 0.0;
            for j in 0..cols {
                let xhat = (xs[j] - mu) * istd;
                let h = gs[j] * gamma[j];
                dgamma[j] += gs[j] * xhat;
                dbeta[j] += gs[j];
                sum_h += h;
                sum_hx += h * xhat;
            }
            let dxs = &mut dx[r * cols..(r + 1) * cols];
            for j in 0..cols {
                let xhat = (xs[j] - mu) * istd;
                let h = gs[j] * gamma[j];
                dxs[j] = istd * (h - sum_h / nf - xhat * sum_hx / nf);
            }
        }
        if ctx.wants(self.input) {
            ctx.accum(self.input, Array::from_vec(&[rows, cols], dx).unwrap());
        }
        ctx.accum(self.gamma, Array::from_vec(&[cols], dgamma).unwrap());
        ctx.accum(self.beta, Array::from_vec(&[cols], dbeta).unwrap());
    }
}

impl Graph {
    /// Layer normalization of `M×C` tokens over the channel dim, with an
    /// affine per-channel (gamma, beta).
    pub fn layer_norm(&mut self, input: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let si = self.value(input).shape().to_vec();
        if si.len() != 2 {
            return Err(Error::shape(
                "layer_norm",
                format!("input must be M×C tokens, got {:?}", si),
            ));
        }
        let (rows, cols) = (si[0], si[1]);
        if self.value(gamma).shape() != [cols] || self.value(beta).shape() != [cols] {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "gamma {:?} / beta {:?} vs channel count {}",
                    self.value(gamma).shape(),
                    self.value(beta).shape(),
                    cols
                ),
            ));
        }
        let x = self.value(input).data();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let mut mean = vec![0.0; rows];
        let mut inv_std = vec![0.0; rows];
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            let xs = &x[r * cols..(r + 1) * cols];
            let mu = xs.iter().sum::<f64>() / cols as f64;
            let var = xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / cols as f64;
            let istd = 1.0 / (var + eps).sqrt();
            mean[r] = mu;
            inv_std[r] = istd;
            for j in 0..cols {
                data[r * cols + j] = (xs[j] - mu) * istd * gd[j] + bd[j];
            }
        }
        let value = Array::from_vec(&si, data)?;
        Ok(self.op(
            value,
            &[input, gamma, beta],
            Box::new(LayerNormBack {
                input,
                gamma,
                beta,
                mean,
                inv_std,
                rows,
                cols,
            }),
        ))
    }
}

// ---------------------------------------------------------------------------
// Softmax over an axis set
// ---------------------------------------------------------------------------

struct SoftmaxBack {
    input: Var,
    inner: usize,
}

impl Backward for SoftmaxBack {
    fn backward(&self, ctx: &mut BackwardCtx<'_>, out: &Array, g: &Array) {
        if !ctx.wants(self.input) {
            return;
        }
        let inner = self.inner;
        let mut dx = vec![0.0; out.numel()];
        for (slice_i, chunk) in out.data().chunks(inner).enumerate() {
            let gs = &g.data()[slice_i * inner..(slice_i + 1) * inner];
            let dot: f64 = chunk.iter().zip(gs).map(|(y, gy)| y * gy).sum();
            let dxs = &mut dx[slice_i * inner..(slice_i + 1) * inner];
            for ((d, &y), &gy) in dxs.iter_mut().zip(chunk).zip(gs) {
                *d = y * (gy - dot);
            }
        }
        let shape = out.shape().to_vec();
        ctx.accum(self.input, Array::from_vec(&shape, dx).unwrap());
    }
}

impl Graph {
    /// Softmax normalized jointly over `axes`. Each slice over the remaining
    /// axes sums to 1. Stabilized by max subtraction.
    pub fn softmax(&mut self, input: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.value(input).shape().to_vec();
        let rank = shape.len();
        if axes.is_empty() {
            return Err(Error::shape("softmax", "empty axis set".to_string()));
        }
        let mut sorted: Vec<usize> = axes.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != axes.len() {
            return Err(Error::shape("softmax", format!("duplicate axes in {:?}", axes)));
        }
        if let Some(&bad) = sorted.iter().find(|&&a| a >= rank) {
            return Err(Error::shape(
                "softmax",
                format!("axis {bad} out of range for rank {rank}"),
            ));
        }
        // Trailing contiguous axes normalize in place; everything else is
        // routed through a permutation.
        let trailing = sorted
            .iter()
            .rev()
            .enumerate()
            .all(|(i, &a)| a == rank - 1 - i);
        if trailing {
            let inner: usize = sorted.iter().map(|&a| shape[a]).product();
            return self.softmax_trailing(input, inner);
        }
        let mut perm: Vec<usize> = (0..rank).filter(|a| !sorted.contains(a)).collect();
        perm.extend(sorted.iter().copied());
        let (perm_shape, map) = super::graph::permute_map(&shape, &perm);
        let permuted = self.gather(input, Arc::new(map), &perm_shape)?;
        let inner: usize = perm_shape[rank - axes.len()..].iter().product();
        let soft = self.softmax_trailing(permuted, inner)?;
        // invert the permutation
        let mut inv = vec![0usize; rank];
        for (j, &p) in perm.iter().enumerate() {
            inv[p] = j;
        }
        let (back_shape, back_map) = super::graph::permute_map(&perm_shape, &inv);
        debug_assert_eq!(back_shape, shape);
        self.gather(soft, Arc::new(back_map), &back_shape)
    }

    fn softmax_trailing(&mut self, input: Var, inner: usize) -> Result<Var> {
        let shape = self.value(input).shape().to_vec();
        let x = self.value(input).data();
        let mut data = vec![0.0; x.len()];
        for (chunk_i, xs) in x.chunks(inner).enumerate() {
            let maxv = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let outs = &mut data[chunk_i * inner..(chunk_i + 1) * inner];
            let mut sum = 0.0;
            for (o, &xi) in outs.iter_mut().zip(xs) {
                let e = (xi - maxv).exp();
                *o = e;
                sum += e;
            }
            for o in outs.iter_mut() {
                *o /= sum;
            }
        }
        let value = Array::from_vec(&shape, data)?;
        Ok(self.op(value, &[input], Box::new(SoftmaxBack { input, inner })))
    }

    /// Single-head scaled dot-product attention:
    /// `softmax(q·kᵀ/√d [+ mask]) · v` with q `Lq×d`, k `Lk×d`, v `Lk×dv`.
    pub fn scaled_dot_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        mask: Option<Var>,
    ) -> Result<Var> {
        let (sq, sk, sv) = (
            self.value(q).shape().to_vec(),
            self.value(k).shape().to_vec(),
            self.value(v).shape().to_vec(),
        );
        if sq.len() != 2 || sk.len() != 2 || sv.len() != 2 {
            return Err(Error::shape(
                "scaled_dot_attention",
                format!("expected rank-2 q/k/v, got {:?}/{:?}/{:?}", sq, sk, sv),
            ));
        }
        if sq[1] != sk[1] {
            return Err(Error::shape(
                "scaled_dot_attention",
                format!("q feature dim {} vs k feature dim {}", sq[1], sk[1]),
            ));
        }
        if sk[0] != sv[0] {
            return Err(Error::shape(
                "scaled_dot_attention",
                format!("k length {} vs v length {}", sk[0], sv[0]),
            ));
        }
        let scale = 1.0 / (sq[1] as f64).sqrt();
        let scores = self.matmul_nt(q, k)?;
        let mut scaled = self.mul_scalar(scores, scale);
        if let Some(m) = mask {
            scaled = self.add(scaled, m)?;
        }
        let attn = self.softmax(scaled, &[1])?;
        self.matmul(attn, v)
    }
}

// ---------------------------------------------------------------------------
// Bilinear grid sampling
// ---------------------------------------------------------------------------

/// How the fill tensor maps onto out-of-range outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum FillKind {
    /// fill is C×M: per channel and point.
    Full,
    /// fill is C×1: per channel.
    PerChannel,
    /// fill is a single value.
    Scalar,
}

struct GridSampleBack {
    input: Var,
    points: Var,
    fill: Var,
    kind: FillKind,
    c: usize,
    h: usize,
    w: usize,
    m: usize,
}

#[inline]
fn corner(data: &[f64], h: usize, w: usize, y: isize, x: isize) -> f64 {
    if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
        0.0
    } else {
        data[y as usize * w + x as usize]
    }
}

impl Backward for GridSampleBack {
    fn backward(&self, ctx: &mut BackwardCtx<'_>, _out: &Array, g: &Array) {
        let (c, h, w, m) = (self.c, self.h, self.w, self.m);
        let points = ctx.value(self.points).data().to_vec();
        let input = ctx.value(self.input).data().to_vec();
        let mut dinput = vec![0.0; c * h * w];
        let mut dpoints = vec![0.0; 2 * m];
        let mut dfill = vec![
            0.0;
            match self.kind {
                FillKind::Full => c * m,
                FillKind::PerChannel => c,
                FillKind::Scalar => 1,
            }
        ];
        let gd = g.data();
        for i in 0..m {
            let (px, py) = (points[i], points[m + i]);
            let inside =
                px >= 0.0 && py >= 0.0 && px <= (w - 1) as f64 && py <= (h - 1) as f64;
            if !inside {
                for ch in 0..c {
                    let gv = gd[ch * m + i];
                    match self.kind {
                        FillKind::Full => dfill[ch * m + i] += gv,
                        FillKind::PerChannel => dfill[ch] += gv,
                        FillKind::Scalar => dfill[0] += gv,
                    }
                }
                continue;
            }
            let x0 = px.floor();
            let y0 = py.floor();
            let fx = px - x0;
            let fy = py - y0;
            let (x0i, y0i) = (x0 as isize, y0 as isize);
            let (x1i, y1i) = (x0i + 1, y0i + 1);
            let w00 = (1.0 - fx) * (1.0 - fy);
            let w01 = fx * (1.0 - fy);
            let w10 = (1.0 - fx) * fy;
            let w11 = fx * fy;
            let (mut dpx, mut dpy) = (0.0, 0.0);
            for ch in 0..c {
                let gv = gd[ch * m + i];
                let chan = &input[ch * h * w..(ch + 1) * h * w];
                let v00 = corner(chan, h, w, y0i, x0i);
                let v01 = corner(chan, h, w, y0i, x1i);
                let v10 = corner(chan, h, w, y1i, x0i);
                let v11 = corner(chan, h, w, y1i, x1i);
                dpx += gv * ((1.0 - fy) * (v01 - v00) + fy * (v11 - v10));
                dpy += gv * ((1.0 - fx) * (v10 - v00) + fx * (v11 - v01));
                let dchan = &mut dinput[ch * h * w..(ch + 1) * h * w];
                let mut scatter = |y: isize, x: isize, wgt: f64| {
                    if y >= 0 && x >= 0 && y < h as isize && x < w as isize {
                        dchan[y as usize * w + x as usize] += gv * wgt;
                    }
                };
                scatter(y0i, x0i, w00);
                scatter(y0i, x1i, w01);
                scatter(y1i, x0i, w10);
                scatter(y1i, x1i, w11);
            }
            dpoints[i] = dpx;
            dpoints[m + i] = dpy;
        }
        if ctx.wants(self.input) {
            ctx.accum(self.input, Array::from_vec(&[c, h, w], dinput).unwrap());
        }
        if ctx.wants(self.points) {
            ctx.accum(self.points, Array::from_vec(&[2, m], dpoints).unwrap());
        }
        if ctx.wants(self.fill) {
            let shape = ctx.value(self.fill).shape().to_vec();
            ctx.accum(self.fill, Array::from_vec(&shape, dfill).unwrap());
        }
    }
}

impl Graph {
    /// Bilinear sampling of a `C×H×W` map at continuous points `2×M`
    /// (row 0 = x/column, row 1 = y/row, cell-center convention). Points
    /// outside `[0,W−1]×[0,H−1]` take the fill value — defined behavior,
    /// not an error. Fill may be `C×M`, `C×1` or scalar.
    pub fn grid_sample_bilinear(&mut self, input: Var, points: Var, fill: Var) -> Result<Var> {
        let si = self.value(input).shape().to_vec();
        let sp = self.value(points).shape().to_vec();
        if si.len() != 3 {
            return Err(Error::shape(
                "grid_sample",
                format!("input must be C×H×W, got {:?}", si),
            ));
        }
        if sp.len() != 2 || sp[0] != 2 {
            return Err(Error::shape(
                "grid_sample",
                format!("points must be 2×M, got {:?}", sp),
            ));
        }
        let (c, h, w, m) = (si[0], si[1], si[2], sp[1]);
        let sf = self.value(fill).shape().to_vec();
        let kind = if sf == [c, m] {
            FillKind::Full
        } else if sf == [c, 1] {
            FillKind::PerChannel
        } else if sf == [1] || sf.is_empty() {
            FillKind::Scalar
        } else {
            return Err(Error::shape(
                "grid_sample",
                format!("fill shape {:?} not broadcastable to {}×{}", sf, c, m),
            ));
        };
        let input_d = self.value(input).data();
        let points_d = self.value(points).data();
        let fill_d = self.value(fill).data();
        let mut data = vec![0.0; c * m];
        for i in 0..m {
            let (px, py) = (points_d[i], points_d[m + i]);
            let inside =
                px >= 0.0 && py >= 0.0 && px <= (w - 1) as f64 && py <= (h - 1) as f64;
            if !inside {
                for ch in 0..c {
                    data[ch * m + i] = match kind {
                        FillKind::Full => fill_d[ch * m + i],
                        FillKind::PerChannel => fill_d[ch],
                        FillKind::Scalar => fill_d[0],
                    };
                }
                continue;
            }
            let x0 = px.floor();
            let y0 = py.floor();
            let fx = px - x0;
            let fy = py - y0;
            let (x0i, y0i) = (x0 as isize, y0 as isize);
            for ch in 0..c {
                let chan = &input_d[ch * h * w..(ch + 1) * h * w];
                let v00 = corner(chan, h, w, y0i, x0i);
                let v01 = corner(chan, h, w, y0i, x0i + 1);
                let v10 = corner(chan, h, w, y0i + 1, x0i);
                let v11 = corner(chan, h, w, y0i + 1, x0i + 1);
                data[ch * m + i] = (1.0 - fx) * (1.0 - fy) * v00
                    + fx * (1.0 - fy) * v01
                    + (1.0 - fx) * fy * v10
                    + fx * fy * v11;
            }
        }
        let value = Array::from_vec(&[c, m], data)?;
        Ok(self.op(
            value,
            &[input, points, fill],
            Box::new(GridSampleBack {
                input,
                points,
                fill,
                kind,
                c,
                h,
                w,
                m,
            }),
        ))
    }
}
