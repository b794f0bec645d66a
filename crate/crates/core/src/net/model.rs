//! The detection pipeline: feature enhancement, flow estimation, flow-guided
//! propagation, center heatmap and query refinement, plus the multi-frame
//! cascade. All flow/propagation parameters are shared across cascade steps.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::eval::iou::OrientedBox;
use crate::geometry::{align_to_current, grid_coords, GridSpec, Pose2};
use crate::net::backbone::backbone_neck;
use crate::net::blocks::{attention_sublayer, conv, ffn_sublayer, layer_norm, layer_scale, linear};
use crate::net::config::NetConfig;
use crate::net::forward::Forward;
use crate::tensor::{transpose_map, Array, Graph, Init, ParameterStore, Var};

/// Decoded oriented detection in feature-grid cells.
#[derive(Clone, Copy, Debug)]
pub struct Detection {
    pub cx: f64,
    pub cy: f64,
    pub h: f64,
    pub w: f64,
    /// Wrapped to (−π/2, π/2].
    pub theta: f64,
    /// Heatmap peak value in [0, 1].
    pub score: f64,
}

impl Detection {
    pub fn rect(&self) -> OrientedBox {
        OrientedBox::new(self.cx, self.cy, self.w, self.h, self.theta)
    }
}

/// Wrap an angle into (−π/2, π/2] (rectangles are π-symmetric).
pub fn wrap_half_pi(theta: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let mut t = theta % pi;
    if t > pi / 2.0 {
        t -= pi;
    } else if t <= -pi / 2.0 {
        t += pi;
    }
    t
}

/// A heatmap peak feeding the refinement head.
#[derive(Clone, Copy, Debug)]
pub struct Query {
    /// Row-major cell index.
    pub cell: usize,
    pub score: f64,
}

/// 3×3 max-pool non-maximum suppression then top-k by score; suppressed
/// cells keep score 0 so exactly `k` queries always come back. Ties break
/// in row-major cell order.
pub fn topk_queries(heatmap: &Array, k: usize) -> Result<Vec<Query>> {
    let shape = heatmap.shape();
    if shape.len() != 3 || shape[0] != 1 {
        return Err(Error::shape(
            "topk_queries",
            format!("heatmap must be 1×H×W, got {:?}", shape),
        ));
    }
    let (h, w) = (shape[1], shape[2]);
    if k > h * w {
        return Err(Error::shape(
            "topk_queries",
            format!("k {} exceeds cell count {}", k, h * w),
        ));
    }
    let d = heatmap.data();
    let mut masked = vec![0.0f64; h * w];
    for i in 0..h {
        for j in 0..w {
            let v = d[i * w + j];
            let mut is_max = true;
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    let (ni, nj) = (i as i64 + di, j as i64 + dj);
                    if ni < 0 || nj < 0 || ni >= h as i64 || nj >= w as i64 {
                        continue;
                    }
                    if d[ni as usize * w + nj as usize] > v {
                        is_max = false;
                    }
                }
            }
            if is_max {
                masked[i * w + j] = v;
            }
        }
    }
    let mut order: Vec<usize> = (0..h * w).collect();
    order.sort_by(|&a, &b| masked[b].partial_cmp(&masked[a]).unwrap().then(a.cmp(&b)));
    Ok(order[..k]
        .iter()
        .map(|&cell| Query {
            cell,
            score: masked[cell],
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Precomputed gather maps
// ---------------------------------------------------------------------------

pub struct NetMaps {
    m: usize,
    win_rows: usize,
    tokens_from_chw_cf: Arc<Vec<usize>>,
    chw_from_tokens_cf: Arc<Vec<usize>>,
    tokens_from_chw_half: Arc<Vec<usize>>,
    win_part: Arc<Vec<usize>>,
    win_unpart: Arc<Vec<usize>>,
    win_part_shift: Arc<Vec<usize>>,
    win_unpart_shift: Arc<Vec<usize>>,
    /// Per deformable point p: `[2,M]` (x,y offsets of point p) from `[M,2P]`.
    offset_pair: Vec<Arc<Vec<usize>>>,
    /// Per deformable point p: `[M,cf]` broadcast of weight column p.
    weight_expand: Vec<Arc<Vec<usize>>>,
    /// `[M,cf]` from sampled `[cf,M]`.
    transpose_cf_m: Arc<Vec<usize>>,
    /// Angle-head helpers: pick column 0/1 of `[K,2]`, expand `[K,1]` to `[K,2]`.
    col0: Arc<Vec<usize>>,
    col1: Arc<Vec<usize>>,
    expand2: Arc<Vec<usize>>,
    grid_tokens: Array,
    grid_2m: Array,
}

/// tokens[m, c] = chw[c, m]
fn tokens_from_chw_map(c: usize, m: usize) -> Vec<usize> {
    let mut map = Vec::with_capacity(m * c);
    for mm in 0..m {
        for ch in 0..c {
            map.push(ch * m + mm);
        }
    }
    map
}

fn invert(map: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; map.len()];
    for (dst, &src) in map.iter().enumerate() {
        inv[src] = dst;
    }
    inv
}

impl NetMaps {
    pub fn new(cfg: &NetConfig) -> NetMaps {
        let (hf, wf, cf) = (cfg.hf, cfg.wf, cfg.cf);
        let m = hf * wf;
        let (win_h, win_w) = cfg.window();
        let win_rows = win_h * win_w;
        let (shift_i, shift_j) = (hf / 4, wf / 4);

        // window partition: rows reordered so each window is contiguous
        let mut part = Vec::with_capacity(m * cf);
        let mut part_shift = Vec::with_capacity(m * cf);
        for wi in 0..2 {
            for wj in 0..2 {
                for li in 0..win_h {
                    for lj in 0..win_w {
                        let i = wi * win_h + li;
                        let j = wj * win_w + lj;
                        let token = i * wf + j;
                        let token_shifted = ((i + shift_i) % hf) * wf + ((j + shift_j) % wf);
                        for ch in 0..cf {
                            part.push(token * cf + ch);
                        }
                        for ch in 0..cf {
                            part_shift.push(token_shifted * cf + ch);
                        }
                    }
                }
            }
        }
        let unpart = invert(&part);
        let unpart_shift = invert(&part_shift);

        let p = cfg.n_deform_points;
        let mut offset_pair = Vec::with_capacity(p);
        let mut weight_expand = Vec::with_capacity(p);
        for pp in 0..p {
            let mut om = Vec::with_capacity(2 * m);
            for mm in 0..m {
                om.push(mm * 2 * p + 2 * pp);
            }
            for mm in 0..m {
                om.push(mm * 2 * p + 2 * pp + 1);
            }
            offset_pair.push(Arc::new(om));
            let mut wm = Vec::with_capacity(m * cf);
            for mm in 0..m {
                for _ in 0..cf {
                    wm.push(mm * p + pp);
                }
            }
            weight_expand.push(Arc::new(wm));
        }

        let k = cfg.k_queries;
        let col0: Vec<usize> = (0..k).map(|q| 2 * q).collect();
        let col1: Vec<usize> = (0..k).map(|q| 2 * q + 1).collect();
        let mut expand2 = Vec::with_capacity(2 * k);
        for q in 0..k {
            expand2.push(q);
            expand2.push(q);
        }

        let spec = GridSpec::new(hf, wf, crate::net::config::STRIDE).expect("validated");
        let grid_2m = grid_coords(&spec).reshaped(&[2, m]).unwrap();
        let mut gt = vec![0.0; m * 2];
        for mm in 0..m {
            gt[mm * 2] = grid_2m.data()[mm];
            gt[mm * 2 + 1] = grid_2m.data()[m + mm];
        }
        let grid_tokens = Array::from_vec(&[m, 2], gt).unwrap();

        NetMaps {
            m,
            win_rows,
            tokens_from_chw_cf: Arc::new(tokens_from_chw_map(cf, m)),
            chw_from_tokens_cf: Arc::new(invert(&tokens_from_chw_map(cf, m))),
            tokens_from_chw_half: Arc::new(tokens_from_chw_map(cf / 2, m)),
            win_part: Arc::new(part),
            win_unpart: Arc::new(unpart),
            win_part_shift: Arc::new(part_shift),
            win_unpart_shift: Arc::new(unpart_shift),
            offset_pair,
            weight_expand,
            transpose_cf_m: Arc::new(transpose_map(cf, m)),
            col0: Arc::new(col0),
            col1: Arc::new(col1),
            expand2: Arc::new(expand2),
            grid_tokens,
            grid_2m,
        }
    }
}

// ---------------------------------------------------------------------------
// Pipeline stages
// ---------------------------------------------------------------------------

/// Spatial context enhancement: learned positional embedding, then blocks of
/// regular-window and shifted-window (cyclic shift by half a window)
/// single-head self-attention with feed-forward sublayers.
fn enhance(fx: &mut Forward, cfg: &NetConfig, maps: &NetMaps, f_chw: Var) -> Result<Var> {
    let m = maps.m;
    let tokens = fx.g.gather(f_chw, maps.tokens_from_chw_cf.clone(), &[m, cfg.cf])?;
    let pos = fx.p("enhance.pos", &[m, cfg.cf], Init::Uniform(0.02));
    let mut x = fx.g.add(tokens, pos)?;
    for b in 0..cfg.n_enhance_blocks {
        x = windowed_sublayer(fx, cfg, maps, &format!("enhance.b{b}.w"), x, false)?;
        x = windowed_sublayer(fx, cfg, maps, &format!("enhance.b{b}.sw"), x, true)?;
    }
    fx.g.gather(x, maps.chw_from_tokens_cf.clone(), &[cfg.cf, cfg.hf, cfg.wf])
}

fn windowed_sublayer(
    fx: &mut Forward,
    cfg: &NetConfig,
    maps: &NetMaps,
    prefix: &str,
    tokens: Var,
    shifted: bool,
) -> Result<Var> {
    let m = maps.m;
    let (part_map, unpart_map) = if shifted {
        (maps.win_part_shift.clone(), maps.win_unpart_shift.clone())
    } else {
        (maps.win_part.clone(), maps.win_unpart.clone())
    };
    let part = fx.g.gather(tokens, part_map, &[m, cfg.cf])?;
    let mut windows = Vec::with_capacity(4);
    for w in 0..4 {
        let win = fx.g.slice_rows(part, w * maps.win_rows, maps.win_rows)?;
        // window attention shares parameters across windows
        let win = attention_sublayer(fx, &format!("{prefix}.attn"), win, None, cfg.ln_eps)?;
        windows.push(win);
    }
    let cat = fx.g.concat_rows(&windows)?;
    let back = fx.g.gather(cat, unpart_map, &[m, cfg.cf])?;
    ffn_sublayer(fx, &format!("{prefix}.ffn"), back, cfg.ffn_mult, cfg.ln_eps)
}

/// Flow features: two weight-shared convolutions with batch norm,
/// `cf → cf/2`.
fn flow_feat(fx: &mut Forward, cfg: &NetConfig, s_chw: Var) -> Result<Var> {
    let x = conv(fx, "flow.feat.conv1", s_chw, cfg.cf / 2, 3, 1, 1)?;
    let x = fx.batchnorm("flow.feat.bn1", x, cfg.bn_eps, cfg.bn_momentum)?;
    let x = fx.g.relu(x);
    let x = conv(fx, "flow.feat.conv2", x, cfg.cf / 2, 3, 1, 1)?;
    fx.batchnorm("flow.feat.bn2", x, cfg.bn_eps, cfg.bn_momentum)
}

/// Global cross-attention blocks over the aligned flow features. Each block
/// first updates the previous-frame stream from the current one, then the
/// current stream from the just-updated previous stream.
fn cross_attend(
    fx: &mut Forward,
    cfg: &NetConfig,
    maps: &NetMaps,
    e_prev_chw: Var,
    e_t_chw: Var,
) -> Result<(Var, Var)> {
    let (m, c) = (maps.m, cfg.cf / 2);
    let pos = fx.p("flow.pos", &[m, c], Init::Uniform(0.02));
    let prev_tok = fx.g.gather(e_prev_chw, maps.tokens_from_chw_half.clone(), &[m, c])?;
    let t_tok = fx.g.gather(e_t_chw, maps.tokens_from_chw_half.clone(), &[m, c])?;
    let mut prev = fx.g.add(prev_tok, pos)?;
    let mut curr = fx.g.add(t_tok, pos)?;
    for b in 0..cfg.n_cross_blocks {
        let p1 = attention_sublayer(
            fx,
            &format!("flow.cross.b{b}.prev"),
            prev,
            Some(curr),
            cfg.ln_eps,
        )?;
        let p1 = ffn_sublayer(fx, &format!("flow.cross.b{b}.prev_ffn"), p1, cfg.ffn_mult, cfg.ln_eps)?;
        let c1 = attention_sublayer(
            fx,
            &format!("flow.cross.b{b}.curr"),
            curr,
            Some(p1),
            cfg.ln_eps,
        )?;
        let c1 = ffn_sublayer(fx, &format!("flow.cross.b{b}.curr_ffn"), c1, cfg.ffn_mult, cfg.ln_eps)?;
        prev = p1;
        curr = c1;
    }
    Ok((prev, curr))
}

/// Pairwise feature-similarity volume as a `(Hf·Wf) × (Hf·Wf)` matrix:
/// `C[q, r] = ⟨E_t[q], E_prev[r]⟩ / √channels`.
fn cost_volume_mm(g: &mut Graph, e_t_tokens: Var, e_prev_tokens: Var) -> Result<Var> {
    let c = g.value(e_t_tokens).shape()[1];
    let raw = g.matmul_nt(e_t_tokens, e_prev_tokens)?;
    Ok(g.mul_scalar(raw, 1.0 / (c as f64).sqrt()))
}

/// Public 4-D cost volume: features `c×Hf×Wf` → volume `Hf×Wf×Hf×Wf`.
pub fn cost_volume(g: &mut Graph, e_t_chw: Var, e_prev_chw: Var) -> Result<Var> {
    let shape = g.value(e_t_chw).shape().to_vec();
    if shape != g.value(e_prev_chw).shape() {
        return Err(Error::shape(
            "cost_volume",
            format!("{:?} vs {:?}", shape, g.value(e_prev_chw).shape()),
        ));
    }
    if shape.len() != 3 {
        return Err(Error::shape(
            "cost_volume",
            format!("features must be c×Hf×Wf, got {:?}", shape),
        ));
    }
    let (c, hf, wf) = (shape[0], shape[1], shape[2]);
    let m = hf * wf;
    let tok_map = Arc::new(tokens_from_chw_map(c, m));
    let t_tok = g.gather(e_t_chw, tok_map.clone(), &[m, c])?;
    let p_tok = g.gather(e_prev_chw, tok_map, &[m, c])?;
    let mm = cost_volume_mm(g, t_tok, p_tok)?;
    g.reshape(mm, &[hf, wf, hf, wf])
}

/// Soft correspondence: softmax the volume over its last two axes, take the
/// expected matched coordinate, and return `G − expectation` as a
/// `2×Hf×Wf` flow field (x, y channels).
pub fn flow_from_cost(g: &mut Graph, cost4d: Var, grid_chw: &Array) -> Result<Var> {
    let shape = g.value(cost4d).shape().to_vec();
    if shape.len() != 4 || shape[0] != shape[2] || shape[1] != shape[3] {
        return Err(Error::shape(
            "flow_from_cost",
            format!("cost volume must be Hf×Wf×Hf×Wf, got {:?}", shape),
        ));
    }
    let (hf, wf) = (shape[0], shape[1]);
    let m = hf * wf;
    if grid_chw.shape() != [2, hf, wf] {
        return Err(Error::shape(
            "flow_from_cost",
            format!("grid {:?} vs cost {:?}", grid_chw.shape(), shape),
        ));
    }
    let mut gt = vec![0.0; m * 2];
    for mm in 0..m {
        gt[mm * 2] = grid_chw.data()[mm];
        gt[mm * 2 + 1] = grid_chw.data()[m + mm];
    }
    let grid_tokens = Array::from_vec(&[m, 2], gt).unwrap();
    let cost_mm = g.reshape(cost4d, &[m, m])?;
    flow_from_cost_mm(g, cost_mm, &grid_tokens, hf, wf)
}

fn flow_from_cost_mm(
    g: &mut Graph,
    cost_mm: Var,
    grid_tokens: &Array,
    hf: usize,
    wf: usize,
) -> Result<Var> {
    let m = hf * wf;
    let dist = g.softmax(cost_mm, &[1])?;
    let grid_const = g.constant(grid_tokens.clone());
    let matched = g.matmul(dist, grid_const)?;
    let v_tokens = g.sub(grid_const, matched)?;
    let v_2m = g.gather(v_tokens, Arc::new(transpose_map(m, 2)), &[2, m])?;
    g.reshape(v_2m, &[2, hf, wf])
}

/// Deformable reference points: `refs = G − V̂`, flattened to `2×M`.
pub fn flow_guided_refs(g: &mut Graph, v_hat: Var, grid_2m: &Array) -> Result<Var> {
    let shape = g.value(v_hat).shape().to_vec();
    if shape.len() != 3 || shape[0] != 2 {
        return Err(Error::shape(
            "flow_guided_refs",
            format!("flow must be 2×Hf×Wf, got {:?}", shape),
        ));
    }
    let m = shape[1] * shape[2];
    let flow_2m = g.reshape(v_hat, &[2, m])?;
    let grid_const = g.constant(grid_2m.clone());
    g.sub(grid_const, flow_2m)
}

/// One deformable cross-attention sublayer: per query, learned offsets around
/// its reference point, softmax weights over points, bilinear value sampling
/// (zero fill out of range), then value/output projections and a layer-scale
/// residual.
fn deform_sublayer(
    fx: &mut Forward,
    cfg: &NetConfig,
    maps: &NetMaps,
    prefix: &str,
    x_tokens: Var,
    value_chw: Var,
    refs_2m: Var,
) -> Result<Var> {
    let p = cfg.n_deform_points;
    let y = layer_norm(fx, &format!("{prefix}.norm"), x_tokens, cfg.ln_eps)?;
    let offsets = linear(fx, &format!("{prefix}.offsets"), y, 2 * p)?;
    let logits = linear(fx, &format!("{prefix}.weights"), y, p)?;
    let weights = fx.g.softmax(logits, &[1])?;
    let zero_fill = fx.g.constant(Array::zeros(&[1]));
    let mut acc: Option<Var> = None;
    for pp in 0..p {
        let off = fx
            .g
            .gather(offsets, maps.offset_pair[pp].clone(), &[2, maps.m])?;
        let points = fx.g.add(refs_2m, off)?;
        let sampled = fx.g.grid_sample_bilinear(value_chw, points, zero_fill)?;
        let sampled_t = fx
            .g
            .gather(sampled, maps.transpose_cf_m.clone(), &[maps.m, cfg.cf])?;
        let w_exp = fx
            .g
            .gather(weights, maps.weight_expand[pp].clone(), &[maps.m, cfg.cf])?;
        let term = fx.g.mul(w_exp, sampled_t)?;
        acc = Some(match acc {
            Some(a) => fx.g.add(a, term)?,
            None => term,
        });
    }
    let gathered = acc.expect("n_deform_points ≥ 1");
    let v = linear(fx, &format!("{prefix}.v"), gathered, cfg.cf)?;
    let o = linear(fx, &format!("{prefix}.o"), v, cfg.cf)?;
    layer_scale(fx, &format!("{prefix}.ls"), x_tokens, o)
}

/// Stacked deformable blocks propagating the aligned previous features into
/// the current frame.
fn propagate(
    fx: &mut Forward,
    cfg: &NetConfig,
    maps: &NetMaps,
    s_t_chw: Var,
    s_prev_aligned_chw: Var,
    refs_2m: Var,
) -> Result<Var> {
    let mut q = fx
        .g
        .gather(s_t_chw, maps.tokens_from_chw_cf.clone(), &[maps.m, cfg.cf])?;
    for b in 0..cfg.n_prop_blocks {
        q = deform_sublayer(
            fx,
            cfg,
            maps,
            &format!("prop.b{b}"),
            q,
            s_prev_aligned_chw,
            refs_2m,
        )?;
        q = ffn_sublayer(fx, &format!("prop.b{b}.ffn"), q, cfg.ffn_mult, cfg.ln_eps)?;
    }
    fx.g
        .gather(q, maps.chw_from_tokens_cf.clone(), &[cfg.cf, cfg.hf, cfg.wf])
}

/// Flow-guided propagation with references `G − V̂`. Standalone entry point
/// (the cascade uses the same internals with cached maps).
pub fn flow_guided_propagation(
    fx: &mut Forward,
    cfg: &NetConfig,
    s_t_chw: Var,
    s_prev_aligned_chw: Var,
    v_hat: Var,
) -> Result<Var> {
    let maps = NetMaps::new(cfg);
    let refs = flow_guided_refs(&mut fx.g, v_hat, &maps.grid_2m)?;
    propagate(fx, cfg, &maps, s_t_chw, s_prev_aligned_chw, refs)
}

/// Vanilla deformable attention: references stay at the grid.
pub fn vanilla_propagation(
    fx: &mut Forward,
    cfg: &NetConfig,
    s_t_chw: Var,
    s_prev_aligned_chw: Var,
) -> Result<Var> {
    let maps = NetMaps::new(cfg);
    let refs = fx.g.constant(maps.grid_2m.clone());
    propagate(fx, cfg, &maps, s_t_chw, s_prev_aligned_chw, refs)
}

/// sigmoid(0.1/0.9): the heatmap starts near 0.1 so the focal background
/// term does not swamp early training.
const HEATMAP_BIAS_INIT: f64 = -2.197_224_577_336_22;

fn center_heatmap(fx: &mut Forward, cfg: &NetConfig, t_hat_chw: Var) -> Result<Var> {
    let x = conv(fx, "head.heat.conv1", t_hat_chw, cfg.cf, 3, 1, 1)?;
    let x = fx.g.relu(x);
    let w = fx.p(
        "head.heat.conv2.weight",
        &[1, cfg.cf, 1, 1],
        Init::FanIn(cfg.cf),
    );
    let b = fx.p("head.heat.conv2.bias", &[1], Init::Const(HEATMAP_BIAS_INIT));
    let x = fx.g.conv2d(x, w, b, 1, 0)?;
    Ok(fx.g.sigmoid(x))
}

/// Query refinement heads: per-query offsets in (−1,1), log sizes, and a
/// normalized (sin, cos) orientation pair.
struct RefineOut {
    offsets: Var,
    log_sizes: Var,
    sincos: Var,
}

fn detr_refine(
    fx: &mut Forward,
    cfg: &NetConfig,
    maps: &NetMaps,
    t_hat_tokens: Var,
    queries: &[Query],
) -> Result<RefineOut> {
    let k = cfg.k_queries;
    debug_assert_eq!(queries.len(), k);
    let mut qmap = Vec::with_capacity(k * cfg.cf);
    for q in queries {
        for ch in 0..cfg.cf {
            qmap.push(q.cell * cfg.cf + ch);
        }
    }
    let qfeat = fx.g.gather(t_hat_tokens, Arc::new(qmap), &[k, cfg.cf])?;
    let qemb = fx.p("head.detr.query_emb", &[k, cfg.cf], Init::Uniform(0.02));
    let mut q = fx.g.add(qfeat, qemb)?;
    for l in 0..2 {
        q = attention_sublayer(
            fx,
            &format!("head.detr.l{l}.cross"),
            q,
            Some(t_hat_tokens),
            cfg.ln_eps,
        )?;
        q = ffn_sublayer(fx, &format!("head.detr.l{l}.ffn"), q, cfg.ffn_mult, cfg.ln_eps)?;
    }
    let off_raw = linear(fx, "head.detr.offset", q, 2)?;
    let offsets = fx.g.tanh(off_raw);
    let log_sizes = linear(fx, "head.detr.size", q, 2)?;
    let angle_raw = linear(fx, "head.detr.angle", q, 2)?;
    let sq = fx.g.mul(angle_raw, angle_raw)?;
    let s2 = fx.g.gather(sq, maps.col0.clone(), &[k, 1])?;
    let c2 = fx.g.gather(sq, maps.col1.clone(), &[k, 1])?;
    let n2 = fx.g.add(s2, c2)?;
    let n2 = fx.g.add_scalar(n2, 1e-12);
    let norm = fx.g.sqrt(n2);
    let norm2 = fx.g.gather(norm, maps.expand2.clone(), &[k, 2])?;
    let sincos = fx.g.div(angle_raw, norm2)?;
    Ok(RefineOut {
        offsets,
        log_sizes,
        sincos,
    })
}

// ---------------------------------------------------------------------------
// Full model
// ---------------------------------------------------------------------------

/// Everything the losses and decoding need from one forward pass. The `Var`s
/// live on the graph held by the associated [`Forward`].
pub struct NetOutput {
    /// Estimated flow per consecutive pair, oldest first; `2×hf×wf` each.
    pub flows: Vec<Var>,
    pub heatmap: Var,
    pub queries: Vec<Query>,
    /// `K×2` predicted center offsets, in (−1, 1) cells.
    pub offsets: Var,
    /// `K×2` (log h, log w) in cells.
    pub log_sizes: Var,
    /// `K×2` normalized (sin θ, cos θ).
    pub sincos: Var,
    pub detections: Vec<Detection>,
}

pub struct RafdNet {
    pub cfg: NetConfig,
    pub store: ParameterStore,
    maps: NetMaps,
}

impl RafdNet {
    pub fn new(cfg: NetConfig, seed: u64) -> Result<RafdNet> {
        cfg.validate()?;
        let maps = NetMaps::new(&cfg);
        Ok(RafdNet {
            cfg,
            store: ParameterStore::new(seed),
            maps,
        })
    }

    /// Restore a model around an existing parameter store.
    pub fn with_store(cfg: NetConfig, store: ParameterStore) -> Result<RafdNet> {
        cfg.validate()?;
        let maps = NetMaps::new(&cfg);
        Ok(RafdNet { cfg, maps, store })
    }

    /// Run the cascade over `n ≥ 2` frames (oldest first) with `n − 1`
    /// poses; `poses[i]` maps frame `i+1` cells to frame `i` cells.
    pub fn forward_multiframe(
        &mut self,
        images: &[Array],
        poses: &[Pose2],
        train: bool,
    ) -> Result<(Forward<'_>, NetOutput)> {
        let RafdNet { cfg, store, maps } = self;
        forward_impl(cfg, maps, store, images, poses, train)
    }

    /// Two-frame entry point: delegates to the multi-frame cascade with
    /// `n = 2`, which degenerates to exactly the pair pipeline.
    pub fn forward_pair(
        &mut self,
        frame_prev: &Array,
        frame_t: &Array,
        pose_t_to_prev: &Pose2,
        train: bool,
    ) -> Result<(Forward<'_>, NetOutput)> {
        let RafdNet { cfg, store, maps } = self;
        forward_impl(
            cfg,
            maps,
            store,
            &[frame_prev.clone(), frame_t.clone()],
            std::slice::from_ref(pose_t_to_prev),
            train,
        )
    }

    pub fn grid_coords_chw(&self) -> Array {
        self.maps
            .grid_2m
            .clone()
            .reshaped(&[2, self.cfg.hf, self.cfg.wf])
            .unwrap()
    }
}

fn forward_impl<'s>(
    cfg: &NetConfig,
    maps: &NetMaps,
    store: &'s mut ParameterStore,
    images: &[Array],
    poses: &[Pose2],
    train: bool,
) -> Result<(Forward<'s>, NetOutput)> {
    if images.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 frames, got {}",
            images.len()
        )));
    }
    if poses.len() + 1 != images.len() {
        return Err(Error::shape(
            "forward_multiframe",
            format!("{} frames need {} poses, got {}", images.len(), images.len() - 1, poses.len()),
        ));
    }
    let spec = cfg.grid()?;
    let mut fx = Forward::new(store, train);

    let mut enhanced = Vec::with_capacity(images.len());
    for image in images {
        let img = fx.g.constant(image.clone());
        let f = backbone_neck(&mut fx, cfg, img)?;
        enhanced.push(enhance(&mut fx, cfg, maps, f)?);
    }

    let mut prev_feat = enhanced[0];
    let mut flows = Vec::with_capacity(poses.len());
    for (step, pose) in poses.iter().enumerate() {
        let curr = enhanced[step + 1];
        let e_prev = flow_feat(&mut fx, cfg, prev_feat)?;
        let e_curr = flow_feat(&mut fx, cfg, curr)?;
        let e_prev_aligned = align_to_current(&mut fx.g, e_prev, pose, e_curr, &spec)?;
        let (prev_tok, curr_tok) = cross_attend(&mut fx, cfg, maps, e_prev_aligned, e_curr)?;
        let cost = cost_volume_mm(&mut fx.g, curr_tok, prev_tok)?;
        let v_hat = flow_from_cost_mm(&mut fx.g, cost, &maps.grid_tokens, cfg.hf, cfg.wf)?;
        flows.push(v_hat);

        let s_prev_aligned = align_to_current(&mut fx.g, prev_feat, pose, curr, &spec)?;
        let refs = if cfg.flow_guided {
            flow_guided_refs(&mut fx.g, v_hat, &maps.grid_2m)?
        } else {
            fx.g.constant(maps.grid_2m.clone())
        };
        prev_feat = propagate(&mut fx, cfg, maps, curr, s_prev_aligned, refs)?;
    }

    let heatmap = center_heatmap(&mut fx, cfg, prev_feat)?;
    let queries = topk_queries(fx.g.value(heatmap), cfg.k_queries)?;
    let t_tokens = fx
        .g
        .gather(prev_feat, maps.tokens_from_chw_cf.clone(), &[maps.m, cfg.cf])?;
    let refine = detr_refine(&mut fx, cfg, maps, t_tokens, &queries)?;

    let detections = decode_detections(
        cfg,
        &queries,
        fx.g.value(refine.offsets),
        fx.g.value(refine.log_sizes),
        fx.g.value(refine.sincos),
    );

    let out = NetOutput {
        flows,
        heatmap,
        queries,
        offsets: refine.offsets,
        log_sizes: refine.log_sizes,
        sincos: refine.sincos,
        detections,
    };
    Ok((fx, out))
}

fn decode_detections(
    cfg: &NetConfig,
    queries: &[Query],
    offsets: &Array,
    log_sizes: &Array,
    sincos: &Array,
) -> Vec<Detection> {
    queries
        .iter()
        .enumerate()
        .map(|(qi, q)| {
            let (cy, cx) = (q.cell / cfg.wf, q.cell % cfg.wf);
            let theta = sincos.data()[qi * 2].atan2(sincos.data()[qi * 2 + 1]);
            Detection {
                cx: cx as f64 + offsets.data()[qi * 2],
                cy: cy as f64 + offsets.data()[qi * 2 + 1],
                h: log_sizes.data()[qi * 2].exp(),
                w: log_sizes.data()[qi * 2 + 1].exp(),
                theta: wrap_half_pi(theta),
                score: q.score,
            }
        })
        .collect()
}
