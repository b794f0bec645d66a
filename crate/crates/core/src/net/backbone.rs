//! Small convolutional backbone: stride-4 encoder plus a 1×1 neck.

use crate::error::{Error, Result};
use crate::net::blocks::conv;
use crate::net::config::{NetConfig, STRIDE};
use crate::net::forward::Forward;
use crate::tensor::Var;

/// Residual stage: two 3×3 convs with batch norm; 1×1 projection on the skip
/// when shape changes.
fn residual_stage(
    fx: &mut Forward,
    cfg: &NetConfig,
    prefix: &str,
    x: Var,
    out_ch: usize,
    stride: usize,
) -> Result<Var> {
    let in_ch = fx.g.value(x).shape()[0];
    let y = conv(fx, &format!("{prefix}.conv1"), x, out_ch, 3, stride, 1)?;
    let y = fx.batchnorm(&format!("{prefix}.bn1"), y, cfg.bn_eps, cfg.bn_momentum)?;
    let y = fx.g.relu(y);
    let y = conv(fx, &format!("{prefix}.conv2"), y, out_ch, 3, 1, 1)?;
    let y = fx.batchnorm(&format!("{prefix}.bn2"), y, cfg.bn_eps, cfg.bn_momentum)?;
    let skip = if stride != 1 || in_ch != out_ch {
        let s = conv(fx, &format!("{prefix}.skip"), x, out_ch, 1, stride, 0)?;
        fx.batchnorm(&format!("{prefix}.skip_bn"), s, cfg.bn_eps, cfg.bn_momentum)?
    } else {
        x
    };
    let sum = fx.g.add(y, skip)?;
    Ok(fx.g.relu(sum))
}

/// Encode a `1×H×W` image into `cf×hf×wf` features. Expects
/// `H = stride × hf`, `W = stride × wf`.
pub fn backbone_neck(fx: &mut Forward, cfg: &NetConfig, image: Var) -> Result<Var> {
    let shape = fx.g.value(image).shape().to_vec();
    let (want_h, want_w) = (cfg.hf * STRIDE, cfg.wf * STRIDE);
    if shape != [1, want_h, want_w] {
        return Err(Error::shape(
            "backbone_neck",
            format!("input {:?} vs expected [1, {want_h}, {want_w}]", shape),
        ));
    }
    let c4 = cfg.cf / 4;
    let x = conv(fx, "backbone.stem.conv", image, c4, 3, 2, 1)?;
    let x = fx.batchnorm("backbone.stem.bn", x, cfg.bn_eps, cfg.bn_momentum)?;
    let x = fx.g.relu(x);
    let x = residual_stage(fx, cfg, "backbone.stage1", x, cfg.cf / 2, 2)?;
    let x = residual_stage(fx, cfg, "backbone.stage2", x, cfg.cf, 1)?;
    conv(fx, "backbone.neck", x, cfg.cf, 1, 1, 0)
}
