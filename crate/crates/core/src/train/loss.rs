//! Training losses: L1 flow supervision and the center-based detection loss
//! (penalty-reduced focal on the heatmap plus L1 regression for matched
//! queries).

use crate::error::Result;
use crate::eval::iou::OrientedBox;
use crate::flowgt::{gaussian_radius, FlowField};
use crate::net::model::wrap_half_pi;
use crate::net::{NetConfig, NetOutput};
use crate::tensor::{Array, Graph, Var};

/// Mean absolute error per flow field, summed over all consecutive pairs.
pub fn flow_loss(g: &mut Graph, flows: &[Var], gts: &[FlowField]) -> Result<Var> {
    assert_eq!(flows.len(), gts.len(), "one ground truth per estimated flow");
    let mut total: Option<Var> = None;
    for (&flow, gt) in flows.iter().zip(gts) {
        let target = g.constant(gt.vectors.clone());
        let l = g.l1_loss(flow, target)?;
        total = Some(match total {
            Some(t) => g.add(t, l)?,
            None => l,
        });
    }
    Ok(total.expect("at least one flow pair"))
}

/// Gaussian-splatted center heatmap target: peak 1 at each rounded ground
/// truth center, stamped with max-combination over a disk of integer radius
/// from [`gaussian_radius`].
pub fn heatmap_target(gt_cells: &[OrientedBox], hf: usize, wf: usize, gamma: f64) -> Array {
    let mut target = Array::zeros(&[1, hf, wf]);
    for b in gt_cells {
        let sigma = gaussian_radius(b.h, b.w, gamma);
        let radius = sigma.round().max(1.0) as i64;
        // Sharp stamp (sigma/4): keeps the focal penalty of a perfect
        // prediction against its own soft ring below 1e-2.
        let sig = sigma / 4.0;
        let (cx, cy) = (b.cx.round() as i64, b.cy.round() as i64);
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                let (x, y) = (cx + dx, cy + dy);
                if x < 0 || y < 0 || x >= wf as i64 || y >= hf as i64 {
                    continue;
                }
                let value =
                    (-((dx * dx + dy * dy) as f64) / (2.0 * sig * sig)).exp();
                let cell = y as usize * wf + x as usize;
                let cur = target.data()[cell];
                if value > cur {
                    target.data_mut()[cell] = value;
                }
            }
        }
    }
    target
}

const FOCAL_ALPHA: i32 = 2;
const FOCAL_BETA: i32 = 4;
const CLAMP_LO: f64 = 1e-4;
const CLAMP_HI: f64 = 1.0 - 1e-4;

/// Penalty-reduced focal loss between a predicted heatmap (values in (0,1))
/// and a Gaussian target, normalized by the positive count:
///
/// `−1/N · Σ [ t==1 ] (1−p)^α ln p  +  [ t<1 ] (1−t)^β p^α ln(1−p)`
pub fn focal_loss(g: &mut Graph, heatmap: Var, target: &Array, n_pos: usize) -> Result<Var> {
    let numel = target.numel();
    let mut pos_mask = vec![0.0; numel];
    let mut neg_weight = vec![0.0; numel];
    for (i, &t) in target.data().iter().enumerate() {
        if t == 1.0 {
            pos_mask[i] = 1.0;
        } else {
            neg_weight[i] = (1.0 - t).powi(FOCAL_BETA);
        }
    }
    let shape = target.shape().to_vec();
    let pos_mask = g.constant(Array::from_vec(&shape, pos_mask)?);
    let neg_weight = g.constant(Array::from_vec(&shape, neg_weight)?);

    let p = g.clamp(heatmap, CLAMP_LO, CLAMP_HI);
    let neg_p = g.mul_scalar(p, -1.0);
    let one_minus_p = g.add_scalar(neg_p, 1.0);
    let ln_p = g.ln(p);
    let ln_1mp = g.ln(one_minus_p);

    let omp_sq = g.mul(one_minus_p, one_minus_p)?;
    let pos_core = g.mul(omp_sq, ln_p)?;
    let pos_term = g.mul(pos_core, pos_mask)?;

    let p_sq = g.mul(p, p)?;
    let neg_core = g.mul(p_sq, ln_1mp)?;
    let neg_term = g.mul(neg_core, neg_weight)?;

    let both = g.add(pos_term, neg_term)?;
    let summed = g.sum_all(both);
    debug_assert_eq!(FOCAL_ALPHA, 2);
    Ok(g.mul_scalar(summed, -1.0 / n_pos.max(1) as f64))
}

/// Regression targets for queries matched to ground-truth centers
/// (nearest center within that object's sigma).
struct Matches {
    query_rows: Vec<usize>,
    offsets: Vec<f64>,
    log_sizes: Vec<f64>,
    sincos: Vec<f64>,
}

fn match_queries(
    out: &NetOutput,
    gt_cells: &[OrientedBox],
    cfg: &NetConfig,
    gamma: f64,
) -> Matches {
    let mut m = Matches {
        query_rows: Vec::new(),
        offsets: Vec::new(),
        log_sizes: Vec::new(),
        sincos: Vec::new(),
    };
    let sigmas: Vec<f64> = gt_cells
        .iter()
        .map(|b| gaussian_radius(b.h, b.w, gamma))
        .collect();
    for (qi, q) in out.queries.iter().enumerate() {
        let (qy, qx) = ((q.cell / cfg.wf) as f64, (q.cell % cfg.wf) as f64);
        let mut best: Option<(usize, f64)> = None;
        for (gi, b) in gt_cells.iter().enumerate() {
            let d = ((qx - b.cx).powi(2) + (qy - b.cy).powi(2)).sqrt();
            if d <= sigmas[gi] && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((gi, d));
            }
        }
        if let Some((gi, _)) = best {
            let b = &gt_cells[gi];
            m.query_rows.push(qi);
            m.offsets.push(b.cx - qx);
            m.offsets.push(b.cy - qy);
            m.log_sizes.push(b.h.ln());
            m.log_sizes.push(b.w.ln());
            let th = wrap_half_pi(b.theta);
            m.sincos.push(th.sin());
            m.sincos.push(th.cos());
        }
    }
    m
}

pub struct DetLoss {
    pub total: Var,
    pub focal: Var,
    pub regression: Option<Var>,
    pub n_matched: usize,
}

/// Detection loss: focal heatmap term plus L1 over (offset, log-size,
/// sin θ, cos θ) of matched queries, weighted 1:1.
pub fn det_loss(
    g: &mut Graph,
    out: &NetOutput,
    gt_cells: &[OrientedBox],
    cfg: &NetConfig,
    gamma: f64,
) -> Result<DetLoss> {
    let target = heatmap_target(gt_cells, cfg.hf, cfg.wf, gamma);
    let focal = focal_loss(g, out.heatmap, &target, gt_cells.len())?;

    let matches = match_queries(out, gt_cells, cfg, gamma);
    let n_matched = matches.query_rows.len();
    let (total, regression) = if n_matched == 0 {
        (focal, None)
    } else {
        // gather matched rows from each K×2 head output
        let mut row_map = Vec::with_capacity(n_matched * 2);
        for &qi in &matches.query_rows {
            row_map.push(qi * 2);
            row_map.push(qi * 2 + 1);
        }
        let row_map = std::sync::Arc::new(row_map);
        let shape = [n_matched, 2];
        let pred_off = g.gather(out.offsets, row_map.clone(), &shape)?;
        let pred_size = g.gather(out.log_sizes, row_map.clone(), &shape)?;
        let pred_angle = g.gather(out.sincos, row_map, &shape)?;
        let t_off = g.constant(Array::from_vec(&shape, matches.offsets)?);
        let t_size = g.constant(Array::from_vec(&shape, matches.log_sizes)?);
        let t_angle = g.constant(Array::from_vec(&shape, matches.sincos)?);
        let l_off = g.l1_loss(pred_off, t_off)?;
        let l_size = g.l1_loss(pred_size, t_size)?;
        let l_angle = g.l1_loss(pred_angle, t_angle)?;
        let s1 = g.add(l_off, l_size)?;
        let s2 = g.add(s1, l_angle)?;
        let reg = g.mul_scalar(s2, 1.0 / 3.0);
        (g.add(focal, reg)?, Some(reg))
    };
    Ok(DetLoss {
        total,
        focal,
        regression,
        n_matched,
    })
}
