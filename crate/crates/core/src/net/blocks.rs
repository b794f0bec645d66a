//! Reusable layers: named linear/conv wrappers, pre-LN attention and
//! feed-forward sublayers with layer-scale residuals.

use crate::error::Result;
use crate::net::forward::Forward;
use crate::tensor::{Init, Var};

/// `x · Wᵀ + b` with parameters under `prefix`.
pub fn linear(fx: &mut Forward, prefix: &str, x: Var, out_dim: usize) -> Result<Var> {
    let in_dim = fx.g.value(x).shape()[1];
    let w = fx.p(
        &format!("{prefix}.weight"),
        &[out_dim, in_dim],
        Init::FanIn(in_dim),
    );
    let b = fx.p(&format!("{prefix}.bias"), &[out_dim], Init::Zero);
    fx.g.linear(x, w, b)
}

/// Layer norm over token channels with parameters under `prefix`.
pub fn layer_norm(fx: &mut Forward, prefix: &str, x: Var, eps: f64) -> Result<Var> {
    let c = fx.g.value(x).shape()[1];
    let gamma = fx.p(&format!("{prefix}.gamma"), &[c], Init::One);
    let beta = fx.p(&format!("{prefix}.beta"), &[c], Init::Zero);
    fx.g.layer_norm(x, gamma, beta, eps)
}

/// Residual add scaled by a learned per-channel vector under `prefix`.
pub fn layer_scale(fx: &mut Forward, prefix: &str, x: Var, branch: Var) -> Result<Var> {
    let c = fx.g.value(x).shape()[1];
    let s = fx.p(prefix, &[c], Init::One);
    fx.g.layer_scale_add(x, branch, s)
}

/// Pre-LN single-head attention sublayer with a layer-scale residual.
/// `memory = None` is self-attention; otherwise keys/values come from the
/// memory stream (with its own normalization).
pub fn attention_sublayer(
    fx: &mut Forward,
    prefix: &str,
    x: Var,
    memory: Option<Var>,
    ln_eps: f64,
) -> Result<Var> {
    let q_in = layer_norm(fx, &format!("{prefix}.norm_q"), x, ln_eps)?;
    let kv_in = match memory {
        Some(m) => layer_norm(fx, &format!("{prefix}.norm_kv"), m, ln_eps)?,
        None => q_in,
    };
    let q = linear(fx, &format!("{prefix}.q"), q_in, fx.g.value(q_in).shape()[1])?;
    let k = linear(fx, &format!("{prefix}.k"), kv_in, fx.g.value(kv_in).shape()[1])?;
    let v = linear(fx, &format!("{prefix}.v"), kv_in, fx.g.value(kv_in).shape()[1])?;
    let attended = fx.g.scaled_dot_attention(q, k, v, None)?;
    let out = linear(fx, &format!("{prefix}.o"), attended, fx.g.value(x).shape()[1])?;
    layer_scale(fx, &format!("{prefix}.ls"), x, out)
}

/// Pre-LN feed-forward sublayer (linear → ReLU → linear) with a layer-scale
/// residual.
pub fn ffn_sublayer(
    fx: &mut Forward,
    prefix: &str,
    x: Var,
    hidden_mult: usize,
    ln_eps: f64,
) -> Result<Var> {
    let c = fx.g.value(x).shape()[1];
    let y = layer_norm(fx, &format!("{prefix}.norm"), x, ln_eps)?;
    let h = linear(fx, &format!("{prefix}.fc1"), y, c * hidden_mult)?;
    let h = fx.g.relu(h);
    let out = linear(fx, &format!("{prefix}.fc2"), h, c)?;
    layer_scale(fx, &format!("{prefix}.ls"), x, out)
}

/// 3×3 (or 1×1) convolution with parameters under `prefix`.
pub fn conv(
    fx: &mut Forward,
    prefix: &str,
    x: Var,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<Var> {
    let in_ch = fx.g.value(x).shape()[0];
    let w = fx.p(
        &format!("{prefix}.weight"),
        &[out_ch, in_ch, kernel, kernel],
        Init::FanIn(in_ch * kernel * kernel),
    );
    let b = fx.p(&format!("{prefix}.bias"), &[out_ch], Init::Zero);
    fx.g.conv2d(x, w, b, stride, padding)
}
