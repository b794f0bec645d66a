//! Average precision for single-class oriented detection.

use crate::eval::iou::{rotated_iou, OrientedBox};

/// A scored detection attributed to a frame.
#[derive(Clone, Debug)]
pub struct ScoredBox {
    pub frame: usize,
    pub rect: OrientedBox,
    pub score: f64,
}

/// Average precision at one IoU threshold over pooled frames.
///
/// Detections are sorted by descending score (ties by frame, then row-major
/// center) and greedily matched to the highest-IoU unmatched ground truth of
/// the same frame; a match requires IoU ≥ `iou_threshold`. AP integrates the
/// precision envelope over all recall points. Single class, so mAP = AP.
pub fn map_at(detections: &[ScoredBox], gts: &[Vec<OrientedBox>], iou_threshold: f64) -> f64 {
    let n_gt: usize = gts.iter().map(Vec::len).sum();
    if n_gt == 0 {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        let (da, db) = (&detections[a], &detections[b]);
        db.score
            .partial_cmp(&da.score)
            .unwrap()
            .then(da.frame.cmp(&db.frame))
            .then(da.rect.cy.partial_cmp(&db.rect.cy).unwrap())
            .then(da.rect.cx.partial_cmp(&db.rect.cx).unwrap())
    });

    let mut matched: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let mut tp_flags = Vec::with_capacity(order.len());
    for &di in &order {
        let det = &detections[di];
        let frame_gts = match gts.get(det.frame) {
            Some(g) => g,
            None => {
                tp_flags.push(false);
                continue;
            }
        };
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in frame_gts.iter().enumerate() {
            if matched[det.frame][gi] {
                continue;
            }
            let iou = rotated_iou(&det.rect, gt);
            if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        match best {
            Some((gi, _)) => {
                matched[det.frame][gi] = true;
                tp_flags.push(true);
            }
            None => tp_flags.push(false),
        }
    }

    // precision/recall at each detection, then all-point interpolation
    let mut precisions = Vec::with_capacity(tp_flags.len());
    let mut recalls = Vec::with_capacity(tp_flags.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &is_tp in &tp_flags {
        if is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        precisions.push(tp as f64 / (tp + fp) as f64);
        recalls.push(tp as f64 / n_gt as f64);
    }
    // envelope from the right
    for i in (0..precisions.len().saturating_sub(1)).rev() {
        precisions[i] = precisions[i].max(precisions[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..precisions.len() {
        if recalls[i] > prev_recall {
            ap += (recalls[i] - prev_recall) * precisions[i];
            prev_recall = recalls[i];
        }
    }
    ap
}
