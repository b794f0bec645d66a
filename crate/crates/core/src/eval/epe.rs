//! Flow end-point error.

use crate::error::{Error, Result};
use crate::flowgt::FlowField;
use crate::tensor::Array;

/// Mean per-cell Euclidean distance between predicted and ground-truth flow.
/// Returns `(epe_all, epe_fg)`: averaged over all cells and over foreground
/// cells only (0 if the mask is empty). `epe_all` is the headline number.
pub fn epe(v_hat: &Array, gt: &FlowField) -> Result<(f64, f64)> {
    if v_hat.shape() != gt.vectors.shape() {
        return Err(Error::shape(
            "epe",
            format!(
                "predicted {:?} vs ground truth {:?}",
                v_hat.shape(),
                gt.vectors.shape()
            ),
        ));
    }
    let shape = v_hat.shape();
    if shape.len() != 3 || shape[0] != 2 {
        return Err(Error::shape(
            "epe",
            format!("flow must be 2×H×W, got {:?}", shape),
        ));
    }
    let m = shape[1] * shape[2];
    let (vh, vg) = (v_hat.data(), gt.vectors.data());
    let mut sum_all = 0.0;
    let mut sum_fg = 0.0;
    let mut n_fg = 0usize;
    for cell in 0..m {
        let dx = vh[cell] - vg[cell];
        let dy = vh[m + cell] - vg[m + cell];
        let e = (dx * dx + dy * dy).sqrt();
        sum_all += e;
        if gt.foreground_mask[cell] {
            sum_fg += e;
            n_fg += 1;
        }
    }
    let epe_all = sum_all / m as f64;
    let epe_fg = if n_fg == 0 { 0.0 } else { sum_fg / n_fg as f64 };
    Ok((epe_all, epe_fg))
}
