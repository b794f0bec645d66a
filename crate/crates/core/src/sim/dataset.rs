//! On-disk dataset layout.
//!
//! ```text
//! dataset_root/meta.json                  {image_size, stride, tau, cell_size_m, splits}
//! dataset_root/seq_0000/frame_000.pgm     binary PGM (P5), 16-bit big-endian
//! dataset_root/seq_0000/frame_000.json    {frame_index, ego_pose_world, boxes}
//! ```
//!
//! Gray values are `round(pixel × 65535)`. Writing is byte-deterministic for
//! a given configuration and seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::iou::OrientedBox;
use crate::geometry::Pose2;
use crate::sim::{BoxAnnotation, RadarFrame};
use crate::tensor::Array;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub image_size: usize,
    pub stride: usize,
    pub tau: usize,
    pub cell_size_m: f64,
    /// Split name → sequence directory names, e.g. `"train" → ["seq_0000"]`.
    pub splits: BTreeMap<String, Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct PoseJson {
    tx: f64,
    ty: f64,
    theta: f64,
}

#[derive(Serialize, Deserialize)]
struct BoxJson {
    id: u64,
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    theta: f64,
}

#[derive(Serialize, Deserialize)]
struct FrameJson {
    frame_index: usize,
    ego_pose_world: PoseJson,
    boxes: Vec<BoxJson>,
}

/// A frame loaded back from disk.
#[derive(Clone, Debug)]
pub struct LoadedFrame {
    pub image: Array,
    pub ego_pose_world: Pose2,
    pub boxes: Vec<BoxAnnotation>,
    pub frame_index: usize,
}

#[derive(Clone, Debug)]
pub struct LoadedSequence {
    pub name: String,
    pub frames: Vec<LoadedFrame>,
}

fn write_pgm16(path: &Path, image: &Array) -> Result<()> {
    let shape = image.shape();
    let (h, w) = (shape[1], shape[2]);
    let mut bytes = Vec::with_capacity(32 + 2 * h * w);
    bytes.extend_from_slice(format!("P5\n{w} {h}\n65535\n").as_bytes());
    for &v in image.data() {
        let g = (v * 65535.0).round().clamp(0.0, 65535.0) as u16;
        bytes.extend_from_slice(&g.to_be_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn read_pgm16(path: &Path) -> Result<Array> {
    let bad = |detail: &str| Error::dataset(path.display().to_string(), detail);
    let bytes = fs::read(path).map_err(|e| bad(&format!("read failed: {e}")))?;
    // header: "P5" <ws> width <ws> height <ws> maxval <single ws> data
    let mut fields = Vec::new();
    let mut pos = 0usize;
    while fields.len() < 4 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start < pos {
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("bad header"))?);
        }
    }
    if fields.len() != 4 || fields[0] != "P5" {
        return Err(bad("not a binary PGM (P5)"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    let maxval: u32 = fields[3].parse().map_err(|_| bad("bad maxval"))?;
    if maxval != 65535 {
        return Err(bad(&format!("expected 16-bit maxval 65535, got {maxval}")));
    }
    pos += 1; // single whitespace after maxval
    let need = 2 * w * h;
    if bytes.len() < pos + need {
        return Err(bad(&format!(
            "truncated payload: have {}, need {need}",
            bytes.len().saturating_sub(pos)
        )));
    }
    let mut data = Vec::with_capacity(w * h);
    for i in 0..w * h {
        let g = u16::from_be_bytes([bytes[pos + 2 * i], bytes[pos + 2 * i + 1]]);
        data.push(f64::from(g) / 65535.0);
    }
    Array::from_vec(&[1, h, w], data)
}

pub fn sequence_dir_name(index: usize) -> String {
    format!("seq_{index:04}")
}

/// Write sequences under `root`. Frames go to `seq_%04d/frame_%03d.{pgm,json}`.
pub fn write_dataset(
    root: &Path,
    meta: &DatasetMeta,
    sequences: &[(String, Vec<RadarFrame>)],
) -> Result<()> {
    fs::create_dir_all(root)?;
    let meta_json = serde_json::to_string_pretty(meta)?;
    fs::write(root.join("meta.json"), meta_json)?;
    for (name, frames) in sequences {
        let dir = root.join(name);
        fs::create_dir_all(&dir)?;
        for frame in frames {
            let stem = format!("frame_{:03}", frame.frame_index);
            write_pgm16(&dir.join(format!("{stem}.pgm")), &frame.image)?;
            let fj = FrameJson {
                frame_index: frame.frame_index,
                ego_pose_world: PoseJson {
                    tx: frame.ego_pose_world.tx,
                    ty: frame.ego_pose_world.ty,
                    theta: frame.ego_pose_world.theta,
                },
                boxes: frame
                    .boxes
                    .iter()
                    .map(|b| BoxJson {
                        id: b.id,
                        cx: b.rect.cx,
                        cy: b.rect.cy,
                        w: b.rect.w,
                        h: b.rect.h,
                        theta: b.rect.theta,
                    })
                    .collect(),
            };
            fs::write(
                dir.join(format!("{stem}.json")),
                serde_json::to_string_pretty(&fj)?,
            )?;
        }
    }
    Ok(())
}

pub fn load_meta(root: &Path) -> Result<DatasetMeta> {
    let path = root.join("meta.json");
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::dataset(path.display().to_string(), format!("read failed: {e}")))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::dataset(path.display().to_string(), format!("parse failed: {e}")))
}

/// Load one split. Frames come back sorted by frame index.
pub fn load_dataset(root: &Path, split: &str) -> Result<(DatasetMeta, Vec<LoadedSequence>)> {
    let meta = load_meta(root)?;
    let names = meta.splits.get(split).ok_or_else(|| {
        Error::dataset(
            root.join("meta.json").display().to_string(),
            format!("split {split:?} not present"),
        )
    })?;
    let mut sequences = Vec::with_capacity(names.len());
    for name in names {
        let dir = root.join(name);
        let mut stems: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Error::dataset(dir.display().to_string(), format!("read failed: {e}")))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().map(|x| x == "pgm").unwrap_or(false))
            .collect();
        stems.sort();
        let mut frames = Vec::with_capacity(stems.len());
        for pgm_path in stems {
            let image = read_pgm16(&pgm_path)?;
            let json_path = pgm_path.with_extension("json");
            let text = fs::read_to_string(&json_path).map_err(|e| {
                Error::dataset(json_path.display().to_string(), format!("read failed: {e}"))
            })?;
            let fj: FrameJson = serde_json::from_str(&text).map_err(|e| {
                Error::dataset(json_path.display().to_string(), format!("parse failed: {e}"))
            })?;
            frames.push(LoadedFrame {
                image,
                ego_pose_world: Pose2::new(
                    fj.ego_pose_world.tx,
                    fj.ego_pose_world.ty,
                    fj.ego_pose_world.theta,
                ),
                boxes: fj
                    .boxes
                    .into_iter()
                    .map(|b| BoxAnnotation {
                        id: b.id,
                        rect: OrientedBox::new(b.cx, b.cy, b.w, b.h, b.theta),
                    })
                    .collect(),
                frame_index: fj.frame_index,
            });
        }
        frames.sort_by_key(|f| f.frame_index);
        sequences.push(LoadedSequence {
            name: name.clone(),
            frames,
        });
    }
    Ok((meta, sequences))
}
