//! Training loop over synthetic sequences.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::iou::OrientedBox;
use crate::flowgt::{build_gt_flow, FlowField};
use crate::geometry::{relative_grid_pose, GridSpec, Pose2};
use crate::net::{save_checkpoint, RafdNet};
use crate::rng::Rng;
use crate::sim::{DatasetMeta, LoadedFrame, LoadedSequence};
use crate::tensor::Array;
use crate::train::adam::{adam_step, AdamConfig, AdamState};
use crate::train::loss::{det_loss, flow_loss};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Hard stop after this many optimizer steps; 0 = run all epochs.
    pub max_steps: u64,
    pub seed: u64,
    /// Frames per training tuple.
    pub n_frames: usize,
    /// Frame gap inside a tuple.
    pub tau: usize,
    /// Minimum Gaussian-region radius for targets, in cells.
    pub gt_gamma: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2e-4,
            weight_decay: 1e-2,
            batch_size: 2,
            epochs: 10,
            max_steps: 0,
            seed: 7,
            n_frames: 2,
            tau: 1,
            gt_gamma: 2.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 || self.weight_decay < 0.0 {
            return Err(Error::InvalidConfig("lr/weight_decay must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidConfig("batch_size and epochs must be ≥ 1".into()));
        }
        if self.n_frames != 2 && self.n_frames != 4 {
            return Err(Error::InvalidConfig(format!(
                "n_frames {} must be 2 or 4",
                self.n_frames
            )));
        }
        if self.tau == 0 {
            return Err(Error::InvalidConfig("tau must be ≥ 1".into()));
        }
        if self.gt_gamma <= 0.0 {
            return Err(Error::InvalidConfig("gt_gamma must be > 0".into()));
        }
        Ok(())
    }
}

/// One optimizer step's logged losses.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub l_det: f64,
    pub l_flow: f64,
    pub l_total: f64,
}

pub struct TrainRun {
    pub final_step: u64,
    pub records: Vec<LossRecord>,
}

/// A training tuple: `n_frames` consecutive frames with gap `tau`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TupleRef {
    pub seq: usize,
    pub end: usize,
}

pub fn enumerate_tuples(
    sequences: &[LoadedSequence],
    n_frames: usize,
    tau: usize,
) -> Vec<TupleRef> {
    let span = (n_frames - 1) * tau;
    let mut tuples = Vec::new();
    for (si, s) in sequences.iter().enumerate() {
        for end in span..s.frames.len() {
            tuples.push(TupleRef { seq: si, end });
        }
    }
    tuples
}

pub struct TupleData {
    pub images: Vec<Array>,
    /// `poses[i]` maps frame `i+1` cells into frame `i` cells.
    pub poses: Vec<Pose2>,
    /// Ground-truth flow per consecutive pair.
    pub gt_flows: Vec<FlowField>,
    /// Final-frame ground truth boxes in cells.
    pub gt_cells: Vec<OrientedBox>,
}

/// Convert one tuple to model inputs and targets.
pub fn assemble_tuple(
    sequences: &[LoadedSequence],
    tuple: TupleRef,
    n_frames: usize,
    tau: usize,
    meta: &DatasetMeta,
    spec: &GridSpec,
    gamma: f64,
) -> Result<TupleData> {
    let frames: Vec<&LoadedFrame> = (0..n_frames)
        .map(|i| &sequences[tuple.seq].frames[tuple.end - (n_frames - 1 - i) * tau])
        .collect();
    let images = frames.iter().map(|f| f.image.clone()).collect();
    let mut poses = Vec::with_capacity(n_frames - 1);
    let mut gt_flows = Vec::with_capacity(n_frames - 1);
    for i in 1..n_frames {
        let pose = relative_grid_pose(
            &frames[i].ego_pose_world,
            &frames[i - 1].ego_pose_world,
            meta.cell_size_m,
            spec,
        );
        gt_flows.push(build_gt_flow(
            &frames[i].boxes,
            &frames[i - 1].boxes,
            &pose,
            spec,
            gamma,
        )?);
        poses.push(pose);
    }
    let gt_cells = boxes_to_cells(&frames[n_frames - 1].boxes, spec);
    Ok(TupleData {
        images,
        poses,
        gt_flows,
        gt_cells,
    })
}

/// Annotation boxes (input pixels) → oriented boxes in feature cells.
pub fn boxes_to_cells(boxes: &[crate::sim::BoxAnnotation], spec: &GridSpec) -> Vec<OrientedBox> {
    boxes
        .iter()
        .map(|b| {
            let c = spec.px_to_cell([b.rect.cx, b.rect.cy]);
            OrientedBox::new(
                c[0],
                c[1],
                spec.px_len_to_cells(b.rect.w),
                spec.px_len_to_cells(b.rect.h),
                b.rect.theta,
            )
        })
        .collect()
}

/// Run training. Tuples are shuffled per epoch from the seed; every optimizer
/// step logs one loss record with `l_total = l_det + l_flow` exactly.
/// Checkpoints are written per epoch (and at the end) when `checkpoint_dir`
/// is given. Aborts with [`Error::NanLoss`] on a non-finite loss.
pub fn train_loop(
    net: &mut RafdNet,
    adam: &mut AdamState,
    sequences: &[LoadedSequence],
    meta: &DatasetMeta,
    tc: &TrainConfig,
    start_step: u64,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainRun> {
    tc.validate()?;
    let spec = net.cfg.grid()?;
    if meta.stride != spec.stride || meta.image_size != net.cfg.hf * spec.stride {
        return Err(Error::InvalidConfig(format!(
            "dataset geometry (image {}, stride {}) does not match net config ({}×{} grid at stride {})",
            meta.image_size, meta.stride, net.cfg.hf, net.cfg.wf, spec.stride
        )));
    }
    let tuples = enumerate_tuples(sequences, tc.n_frames, tc.tau);
    if tuples.is_empty() {
        return Err(Error::InvalidConfig(
            "no training tuples: sequences shorter than the tuple span".into(),
        ));
    }
    let adam_cfg = AdamConfig::new(tc.lr, tc.weight_decay);
    let net_cfg = net.cfg.clone();
    let mut step = start_step;
    let mut records = Vec::new();

    'epochs: for epoch in 0..tc.epochs {
        let mut order = tuples.clone();
        Rng::derive(tc.seed, &format!("epoch/{epoch}")).shuffle(&mut order);
        for batch in order.chunks(tc.batch_size) {
            let mut grad_accum: BTreeMap<String, Array> = BTreeMap::new();
            let scale = 1.0 / batch.len() as f64;
            let (mut det_sum, mut flow_sum) = (0.0, 0.0);
            for &tuple in batch {
                let data =
                    assemble_tuple(sequences, tuple, tc.n_frames, tc.tau, meta, &spec, tc.gt_gamma)?;
                let (mut fx, out) = net.forward_multiframe(&data.images, &data.poses, true)?;
                let l_flow = flow_loss(&mut fx.g, &out.flows, &data.gt_flows)?;
                let det = det_loss(&mut fx.g, &out, &data.gt_cells, &net_cfg, tc.gt_gamma)?;
                det_sum += fx.g.value(det.total).item();
                flow_sum += fx.g.value(l_flow).item();
                let total = fx.g.add(det.total, l_flow)?;
                let scaled = fx.g.mul_scalar(total, scale);
                fx.g.backward(scaled)?;
                for (name, grad) in fx.collect_grads() {
                    match grad_accum.get_mut(&name) {
                        Some(acc) => {
                            for (a, b) in acc.data_mut().iter_mut().zip(grad.data()) {
                                *a += b;
                            }
                        }
                        None => {
                            grad_accum.insert(name, grad);
                        }
                    }
                }
            }
            let l_det = det_sum * scale;
            let l_flow = flow_sum * scale;
            let l_total = l_det + l_flow;
            if !l_total.is_finite() {
                return Err(Error::NanLoss { step });
            }
            adam_step(&mut net.store, &grad_accum, adam, &adam_cfg);
            step += 1;
            records.push(LossRecord {
                step,
                l_det,
                l_flow,
                l_total,
            });
            if tc.max_steps > 0 && step - start_step >= tc.max_steps {
                break 'epochs;
            }
        }
        if let Some(dir) = checkpoint_dir {
            let path = dir.join(format!("ckpt_epoch_{epoch:03}.ckpt"));
            save_checkpoint(&path, &net.cfg, &net.store, adam, step)?;
        }
    }
    if let Some(dir) = checkpoint_dir {
        save_checkpoint(&dir.join("ckpt_final.ckpt"), &net.cfg, &net.store, adam, step)?;
    }
    Ok(TrainRun {
        final_step: step,
        records,
    })
}
