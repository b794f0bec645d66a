//! Run a trained model over a dataset split and reduce to an [`EvalReport`].

use crate::error::Result;
use crate::eval::epe::epe;
use crate::eval::{EvalAccumulator, EvalReport};
use crate::flowgt::build_gt_flow;
use crate::geometry::relative_grid_pose;
use crate::net::RafdNet;
use crate::sim::{DatasetMeta, LoadedSequence};
use crate::train::trainer::{assemble_tuple, boxes_to_cells, enumerate_tuples};

#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    pub n_frames: usize,
    pub tau: usize,
    pub gt_gamma: f64,
    /// Feed ground-truth boxes as detections (mAP upper bound check).
    pub oracle: bool,
}

/// Evaluate every tuple of the split. Detections come from the final frame,
/// flow error from every consecutive pair. Deterministic for a fixed
/// checkpoint and dataset.
pub fn run_eval(
    net: &mut RafdNet,
    sequences: &[LoadedSequence],
    meta: &DatasetMeta,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let spec = net.cfg.grid()?;
    let mut acc = EvalAccumulator::new();
    for tuple in enumerate_tuples(sequences, opts.n_frames, opts.tau) {
        let data = assemble_tuple(
            sequences,
            tuple,
            opts.n_frames,
            opts.tau,
            meta,
            &spec,
            opts.gt_gamma,
        )?;
        let (fx, out) = net.forward_multiframe(&data.images, &data.poses, false)?;
        for (flow_var, gt) in out.flows.iter().zip(&data.gt_flows) {
            let (all, fg) = epe(fx.g.value(*flow_var), gt)?;
            acc.push_flow_error(all, fg);
        }
        let detections = if opts.oracle {
            data.gt_cells.iter().map(|b| (*b, 1.0)).collect()
        } else {
            out.detections.iter().map(|d| (d.rect(), d.score)).collect()
        };
        acc.push_frame(data.gt_cells.clone(), detections);
    }
    Ok(acc.report())
}

/// Ground truth of one frame as cell-space boxes (used by rendering too).
pub fn frame_gt_cells(
    frame: &crate::sim::LoadedFrame,
    spec: &crate::geometry::GridSpec,
) -> Vec<crate::eval::OrientedBox> {
    boxes_to_cells(&frame.boxes, spec)
}

/// Pseudo-GT flow between the last two frames of a tuple (for rendering).
pub fn tuple_gt_flow(
    sequences: &[LoadedSequence],
    seq: usize,
    end: usize,
    tau: usize,
    meta: &DatasetMeta,
    spec: &crate::geometry::GridSpec,
    gamma: f64,
) -> Result<crate::flowgt::FlowField> {
    let curr = &sequences[seq].frames[end];
    let prev = &sequences[seq].frames[end - tau];
    let pose = relative_grid_pose(
        &curr.ego_pose_world,
        &prev.ego_pose_world,
        meta.cell_size_m,
        spec,
    );
    build_gt_flow(&curr.boxes, &prev.boxes, &pose, spec, gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetConfig;
    use crate::sim::{simulate_sequence, LoadedFrame, SequenceSpec};

    fn tiny_data() -> (DatasetMeta, Vec<LoadedSequence>) {
        let spec = SequenceSpec {
            image_size: 16,
            num_frames: 3,
            n_objects: 1,
            noise_sigma: 0.01,
            ghost_prob: 0.0,
            blur_azimuth_cells: 0,
            size_range: (4.0, 6.0),
            seed: 5,
            ..SequenceSpec::default()
        };
        let frames = simulate_sequence(&spec).unwrap();
        let seqs = vec![LoadedSequence {
            name: "seq_0000".into(),
            frames: frames
                .into_iter()
                .map(|f| LoadedFrame {
                    image: f.image,
                    ego_pose_world: f.ego_pose_world,
                    boxes: f.boxes,
                    frame_index: f.frame_index,
                })
                .collect(),
        }];
        let meta = DatasetMeta {
            image_size: 16,
            stride: 4,
            tau: 1,
            cell_size_m: 1.0,
            splits: Default::default(),
        };
        (meta, seqs)
    }

    #[test]
    fn oracle_mode_reaches_unit_map() {
        let (meta, seqs) = tiny_data();
        let mut net = RafdNet::new(NetConfig::toy(), 1).unwrap();
        let opts = EvalOptions {
            n_frames: 2,
            tau: 1,
            gt_gamma: 2.0,
            oracle: true,
        };
        let report = run_eval(&mut net, &seqs, &meta, &opts).unwrap();
        assert_eq!(report.map_03, 1.0);
        assert_eq!(report.map_05, 1.0);
        assert_eq!(report.map_07, 1.0);
        assert!(report.n_gt > 0);
        assert_eq!(report.n_frames, 2);
    }

    #[test]
    fn evaluation_is_deterministic() {
        let (meta, seqs) = tiny_data();
        let opts = EvalOptions {
            n_frames: 2,
            tau: 1,
            gt_gamma: 2.0,
            oracle: false,
        };
        let run = || {
            let mut net = RafdNet::new(NetConfig::toy(), 9).unwrap();
            run_eval(&mut net, &seqs, &meta, &opts).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.map_03.to_bits(), b.map_03.to_bits());
        assert_eq!(a.epe_all.to_bits(), b.epe_all.to_bits());
    }
}
