//! Pseudo ground-truth flow from box annotations with instance IDs.
//!
//! Objects present in both frames define a constant displacement inside a
//! disk of radius sigma around their current center; everything else is zero.
//! Ego motion is cancelled by mapping the previous center through the
//! inter-frame pose, so world-static objects get exactly zero flow.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geometry::{GridSpec, Pose2};
use crate::sim::BoxAnnotation;
use crate::tensor::Array;

/// Per-cell 2-vector field on the feature grid, channel order (x, y), plus a
/// foreground mask. Background vectors are exactly zero.
#[derive(Clone, Debug)]
pub struct FlowField {
    pub vectors: Array,
    pub foreground_mask: Vec<bool>,
}

impl FlowField {
    pub fn zeros(spec: &GridSpec) -> FlowField {
        FlowField {
            vectors: Array::zeros(&[2, spec.hf, spec.wf]),
            foreground_mask: vec![false; spec.cells()],
        }
    }
}

const MIN_OVERLAP: f64 = 0.7;

/// Largest displacement radius keeping IoU ≥ `min_overlap` between a `h×w`
/// box and its perturbed copy: minimum over the three quadratic cases
/// (diagonal shift, per-side shrink, per-side grow).
pub fn center_radius(h: f64, w: f64, min_overlap: f64) -> f64 {
    // shifted diagonally by (r, r): IoU = (w−r)(h−r) / (2wh − (w−r)(h−r))
    let b1 = h + w;
    let c1 = w * h * (1.0 - min_overlap) / (1.0 + min_overlap);
    let r1 = (b1 - (b1 * b1 - 4.0 * c1).sqrt()) / 2.0;
    // shrunk by r per side: IoU = (w−2r)(h−2r) / (wh)
    let b2 = 2.0 * (h + w);
    let c2 = (1.0 - min_overlap) * w * h;
    let r2 = (b2 - (b2 * b2 - 16.0 * c2).sqrt()) / 8.0;
    // grown by r per side: IoU = wh / ((w+2r)(h+2r))
    let b3 = 2.0 * min_overlap * (h + w);
    let c3 = (min_overlap - 1.0) * w * h;
    let r3 = (-b3 + (b3 * b3 - 16.0 * min_overlap * c3).sqrt()) / (8.0 * min_overlap);
    r1.min(r2).min(r3)
}

/// Gaussian-region radius for a box of `h×w` cells: the min-overlap-0.7
/// center radius, clamped below by `gamma`.
pub fn gaussian_radius(h_cells: f64, w_cells: f64, gamma: f64) -> f64 {
    center_radius(h_cells, w_cells, MIN_OVERLAP).max(gamma)
}

struct MatchedObject {
    id: u64,
    center: [f64; 2],
    sigma: f64,
    displacement: [f64; 2],
}

/// Build the pseudo ground-truth flow for a frame pair.
///
/// Boxes are in input-pixel coordinates and carry instance IDs;
/// `pose_t_to_prev` maps current-frame cells to previous-frame cells. For
/// each ID present in both frames the previous center is brought into the
/// current frame through the inverse pose and the displacement
/// `center_t − aligned_center_prev` is stamped on all cells within
/// `sigma` of the current center. Overlaps resolve to the nearest center,
/// ties to the smaller ID.
pub fn build_gt_flow(
    boxes_t: &[BoxAnnotation],
    boxes_prev: &[BoxAnnotation],
    pose_t_to_prev: &Pose2,
    spec: &GridSpec,
    gamma: f64,
) -> Result<FlowField> {
    let prev_by_id = index_by_id(boxes_prev)?;
    let curr_by_id = index_by_id(boxes_t)?;
    let inv_pose = pose_t_to_prev.inverse();
    let grid_center = spec.center();

    let mut objects: Vec<MatchedObject> = Vec::new();
    for (&id, curr) in &curr_by_id {
        let Some(prev) = prev_by_id.get(&id) else {
            continue;
        };
        let center_t = spec.px_to_cell([curr.rect.cx, curr.rect.cy]);
        let center_prev = spec.px_to_cell([prev.rect.cx, prev.rect.cy]);
        let aligned_prev = inv_pose.apply(center_prev, grid_center);
        let h_cells = spec.px_len_to_cells(curr.rect.h);
        let w_cells = spec.px_len_to_cells(curr.rect.w);
        objects.push(MatchedObject {
            id,
            center: center_t,
            sigma: gaussian_radius(h_cells, w_cells, gamma),
            displacement: [center_t[0] - aligned_prev[0], center_t[1] - aligned_prev[1]],
        });
    }
    // ascending id: on exact distance ties the smaller id wins below
    objects.sort_by_key(|o| o.id);

    let mut field = FlowField::zeros(spec);
    let m = spec.cells();
    // per-cell best distance for overlap resolution
    let mut best = vec![f64::INFINITY; m];
    for obj in &objects {
        let r = obj.sigma;
        let x_lo = ((obj.center[0] - r).floor().max(0.0)) as usize;
        let x_hi = ((obj.center[0] + r).ceil()).min(spec.wf as f64 - 1.0).max(0.0) as usize;
        let y_lo = ((obj.center[1] - r).floor().max(0.0)) as usize;
        let y_hi = ((obj.center[1] + r).ceil()).min(spec.hf as f64 - 1.0).max(0.0) as usize;
        if obj.center[0] + r < 0.0 || obj.center[1] + r < 0.0 {
            continue;
        }
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                let d = ((x as f64 - obj.center[0]).powi(2)
                    + (y as f64 - obj.center[1]).powi(2))
                .sqrt();
                if d > obj.sigma {
                    continue;
                }
                let cell = y * spec.wf + x;
                if d < best[cell] {
                    best[cell] = d;
                    field.foreground_mask[cell] = true;
                    field.vectors.data_mut()[cell] = obj.displacement[0];
                    field.vectors.data_mut()[m + cell] = obj.displacement[1];
                }
            }
        }
    }
    Ok(field)
}

fn index_by_id(boxes: &[BoxAnnotation]) -> Result<BTreeMap<u64, &BoxAnnotation>> {
    let mut map = BTreeMap::new();
    for b in boxes {
        if map.insert(b.id, b).is_some() {
            return Err(Error::DuplicateId { id: b.id });
        }
    }
    Ok(map)
}
