//! Subcommand implementations.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rafd_core::error::{Error, Result};
use rafd_core::eval::{run_eval, EvalOptions};
use rafd_core::flowgt::FlowField;
use rafd_core::geometry::GridSpec;
use rafd_core::net::{load_checkpoint, Detection, RafdNet, STRIDE};
use rafd_core::sim::{
    load_dataset, sequence_dir_name, simulate_sequence, write_dataset, DatasetMeta,
    LoadedSequence, RadarFrame,
};
use rafd_core::tensor::snapshot;
use rafd_core::train::{train_loop, AdamState};

use crate::config::RunConfig;
use crate::ppm::{flow_wheel, Canvas, GREEN, RED};

/// Worker cap from `RAFD_THREADS` (default 1).
pub fn worker_count() -> usize {
    std::env::var("RAFD_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

fn ensure_empty_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = std::fs::read_dir(dir)?.next().is_some();
        if non_empty && !force {
            return Err(Error::InvalidConfig(format!(
                "{} is not empty (pass --force to overwrite)",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}

/// Generate the dataset: `n_sequences` seeded scenes split into train/val.
pub fn cmd_generate(cfg: &RunConfig, force: bool) -> Result<()> {
    let root = PathBuf::from(&cfg.dataset_dir);
    ensure_empty_dir(&root, force)?;
    let base = cfg.sequence_spec();
    let n = cfg.n_sequences;
    let n_val = ((n as f64) * cfg.val_fraction).round() as usize;
    let n_train = n - n_val;

    let specs: Vec<_> = (0..n).map(|i| base.for_sequence(i as u64)).collect();
    let frames = simulate_all(&specs, worker_count())?;
    let sequences: Vec<(String, Vec<RadarFrame>)> = frames
        .into_iter()
        .enumerate()
        .map(|(i, f)| (sequence_dir_name(i), f))
        .collect();

    let mut splits = BTreeMap::new();
    splits.insert(
        "train".to_string(),
        (0..n_train).map(sequence_dir_name).collect::<Vec<_>>(),
    );
    splits.insert(
        "val".to_string(),
        (n_train..n).map(sequence_dir_name).collect::<Vec<_>>(),
    );
    let meta = DatasetMeta {
        image_size: cfg.image_size,
        stride: STRIDE,
        tau: cfg.tau,
        cell_size_m: cfg.cell_size_m,
        splits,
    };
    write_dataset(&root, &meta, &sequences)?;
    println!(
        "generated {n} sequences ({n_train} train / {n_val} val, seed {}) to {}",
        cfg.seed,
        root.display()
    );
    Ok(())
}

/// Render sequences, optionally on several worker threads. Output order is
/// by sequence index regardless of worker count.
fn simulate_all(
    specs: &[rafd_core::sim::SequenceSpec],
    workers: usize,
) -> Result<Vec<Vec<RadarFrame>>> {
    if workers <= 1 || specs.len() <= 1 {
        return specs.iter().map(simulate_sequence).collect();
    }
    let mut results: Vec<Option<Result<Vec<RadarFrame>>>> = Vec::new();
    results.resize_with(specs.len(), || None);
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results = std::sync::Mutex::new(&mut results);
    std::thread::scope(|scope| {
        for _ in 0..workers.min(specs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= specs.len() {
                    break;
                }
                let out = simulate_sequence(&specs[i]);
                results.lock().unwrap()[i] = Some(out);
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .iter_mut()
        .map(|slot| slot.take().expect("all sequences rendered"))
        .collect()
}

/// Train on the train split; writes `log.jsonl` and per-epoch checkpoints
/// under `out_dir`.
pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let out_dir = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&out_dir)?;
    let (meta, sequences) = load_dataset(Path::new(&cfg.dataset_dir), "train")?;
    let tc = cfg.train_config();

    let (mut net, mut adam, start_step) = if cfg.checkpoint.is_empty() {
        (
            RafdNet::new(cfg.net_config(), cfg.seed)?,
            AdamState::new(),
            0,
        )
    } else {
        let ck = load_checkpoint(Path::new(&cfg.checkpoint))?;
        if ck.config != cfg.net_config() {
            return Err(Error::InvalidConfig(format!(
                "checkpoint config {:?} differs from requested {:?}",
                ck.config,
                cfg.net_config()
            )));
        }
        (RafdNet::with_store(ck.config, ck.store)?, ck.adam, ck.step)
    };

    let run = train_loop(
        &mut net,
        &mut adam,
        &sequences,
        &meta,
        &tc,
        start_step,
        Some(&out_dir),
    )?;

    let mut log = std::fs::File::create(out_dir.join("log.jsonl"))?;
    for r in &run.records {
        writeln!(log, "{}", serde_json::to_string(r)?)?;
    }
    println!(
        "trained {} steps ({} new); checkpoint at {}",
        run.final_step,
        run.records.len(),
        out_dir.join("ckpt_final.ckpt").display()
    );
    Ok(())
}

fn load_net_for_eval(cfg: &RunConfig) -> Result<RafdNet> {
    if cfg.checkpoint.is_empty() {
        return Err(Error::InvalidConfig(
            "eval/infer need checkpoint=PATH".into(),
        ));
    }
    let ck = load_checkpoint(Path::new(&cfg.checkpoint))?;
    let wanted = cfg.net_config();
    if ck.config != wanted {
        return Err(Error::InvalidConfig(format!(
            "checkpoint was trained with a different net config: {:?} vs requested {:?}",
            ck.config, wanted
        )));
    }
    RafdNet::with_store(ck.config, ck.store)
}

/// Evaluate a checkpoint on a dataset split; writes `report.json`.
pub fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let out_dir = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&out_dir)?;
    let (meta, sequences) = load_dataset(Path::new(&cfg.dataset_dir), &cfg.split)?;
    let mut net = load_net_for_eval(cfg)?;
    let opts = EvalOptions {
        n_frames: cfg.n_frames,
        tau: cfg.tau,
        gt_gamma: cfg.gt_gamma,
        oracle: cfg.oracle,
    };
    let report = run_eval(&mut net, &sequences, &meta, &opts)?;
    let json = serde_json::to_string_pretty(&report)?;
    std::fs::write(out_dir.join("report.json"), &json)?;
    println!("{json}");
    Ok(())
}

fn detection_json(d: &Detection) -> serde_json::Value {
    serde_json::json!({
        "cx": d.cx, "cy": d.cy, "h": d.h, "w": d.w, "theta": d.theta, "score": d.score,
    })
}

/// Run one tuple through a checkpoint; writes detections JSON and the
/// estimated flow as a tensor snapshot.
pub fn cmd_infer(cfg: &RunConfig) -> Result<()> {
    let out_dir = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&out_dir)?;
    let (meta, sequences) = load_dataset(Path::new(&cfg.dataset_dir), &cfg.split)?;
    let mut net = load_net_for_eval(cfg)?;
    let spec = net.cfg.grid()?;
    let (images, poses) = tuple_inputs(&sequences, &meta, cfg, &spec)?;
    let (fx, out) = net.forward_multiframe(&images, &poses, false)?;

    let dets: Vec<serde_json::Value> = out.detections.iter().map(detection_json).collect();
    let payload = serde_json::json!({
        "seq": cfg.seq,
        "frame": cfg.frame,
        "n_frames": cfg.n_frames,
        "detections": dets,
    });
    std::fs::write(
        out_dir.join("detections.json"),
        serde_json::to_string_pretty(&payload)?,
    )?;
    let flow_value = fx.g.value(out.flows[out.flows.len() - 1]);
    let mut buf = Vec::new();
    snapshot::write_snapshot(&mut buf, flow_value)?;
    std::fs::write(out_dir.join("flow.rftn"), buf)?;
    println!(
        "inferred seq {} frame {}: {} detections, flow snapshot written to {}",
        cfg.seq,
        cfg.frame,
        out.detections.len(),
        out_dir.join("flow.rftn").display()
    );
    Ok(())
}

fn tuple_inputs(
    sequences: &[LoadedSequence],
    meta: &DatasetMeta,
    cfg: &RunConfig,
    spec: &GridSpec,
) -> Result<(Vec<rafd_core::tensor::Array>, Vec<rafd_core::geometry::Pose2>)> {
    let seq = sequences.get(cfg.seq).ok_or_else(|| {
        Error::InvalidConfig(format!(
            "seq {} out of range ({} sequences in split {:?})",
            cfg.seq,
            sequences.len(),
            cfg.split
        ))
    })?;
    let span = (cfg.n_frames - 1) * cfg.tau;
    if cfg.frame < span || cfg.frame >= seq.frames.len() {
        return Err(Error::InvalidConfig(format!(
            "frame {} out of range (need {}..{})",
            cfg.frame,
            span,
            seq.frames.len()
        )));
    }
    let frames: Vec<_> = (0..cfg.n_frames)
        .map(|i| &seq.frames[cfg.frame - (cfg.n_frames - 1 - i) * cfg.tau])
        .collect();
    let images = frames.iter().map(|f| f.image.clone()).collect();
    let poses = (1..cfg.n_frames)
        .map(|i| {
            rafd_core::geometry::relative_grid_pose(
                &frames[i].ego_pose_world,
                &frames[i - 1].ego_pose_world,
                meta.cell_size_m,
                spec,
            )
        })
        .collect();
    Ok((images, poses))
}

/// Render a dataset frame with ground truth (green) and optional predicted
/// boxes (red), plus a flow color-wheel image.
pub fn cmd_render(cfg: &RunConfig) -> Result<()> {
    let out_dir = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&out_dir)?;
    let (meta, sequences) = load_dataset(Path::new(&cfg.dataset_dir), &cfg.split)?;
    let seq = sequences.get(cfg.seq).ok_or_else(|| {
        Error::InvalidConfig(format!("seq {} out of range", cfg.seq))
    })?;
    let frame = seq.frames.get(cfg.frame).ok_or_else(|| {
        Error::InvalidConfig(format!("frame {} out of range", cfg.frame))
    })?;
    let spec = GridSpec::new(
        meta.image_size / meta.stride,
        meta.image_size / meta.stride,
        meta.stride,
    )?;

    let mut canvas = Canvas::from_gray(&frame.image);
    for b in &frame.boxes {
        canvas.draw_box(&b.rect, &GREEN);
    }
    if !cfg.detections.is_empty() {
        let text = std::fs::read_to_string(&cfg.detections)?;
        let parsed: serde_json::Value = serde_json::from_str(&text)?;
        let dets = parsed["detections"].as_array().cloned().unwrap_or_default();
        for d in dets {
            // detections are in cells; draw in pixels
            let cell = [
                d["cx"].as_f64().unwrap_or(0.0),
                d["cy"].as_f64().unwrap_or(0.0),
            ];
            let px = spec.cell_to_px(cell);
            let rect = rafd_core::eval::OrientedBox::new(
                px[0],
                px[1],
                d["w"].as_f64().unwrap_or(1.0) * meta.stride as f64,
                d["h"].as_f64().unwrap_or(1.0) * meta.stride as f64,
                d["theta"].as_f64().unwrap_or(0.0),
            );
            canvas.draw_box(&rect, &RED);
        }
    }
    let scene_path = out_dir.join("scene.ppm");
    canvas.write_ppm(&scene_path)?;

    let flow = if cfg.flow.is_empty() {
        // fall back to the pseudo ground-truth flow for this frame pair
        if cfg.frame >= meta.tau {
            rafd_core::eval::runner::tuple_gt_flow(
                &sequences,
                cfg.seq,
                cfg.frame,
                meta.tau,
                &meta,
                &spec,
                cfg.gt_gamma,
            )?
            .vectors
        } else {
            FlowField::zeros(&spec).vectors
        }
    } else {
        let bytes = std::fs::read(&cfg.flow)?;
        snapshot::read_snapshot(&mut bytes.as_slice())?
    };
    let flow_path = out_dir.join("flow.ppm");
    flow_wheel(&flow, meta.stride).write_ppm(&flow_path)?;
    println!(
        "rendered {} and {}",
        scene_path.display(),
        flow_path.display()
    );
    Ok(())
}
