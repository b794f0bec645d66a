//! Flat `key = value` run configuration.
//!
//! One file merges the simulator, network and training settings plus paths.
//! `#` starts a comment; unknown keys are rejected; every key has a default.
//! `parse(serialize(c)) == c` holds exactly.

use rafd_core::error::{Error, Result};
use rafd_core::net::NetConfig;
use rafd_core::sim::{EgoMotion, SequenceSpec};
use rafd_core::train::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    // simulator / dataset
    pub image_size: usize,
    pub n_sequences: usize,
    pub num_frames: usize,
    pub tau: usize,
    pub n_objects: usize,
    pub noise_sigma: f64,
    pub ghost_prob: f64,
    pub ghost_offset_min: f64,
    pub ghost_offset_max: f64,
    pub blur_azimuth_cells: usize,
    pub ego_motion: String,
    pub ego_speed: f64,
    pub ego_yaw_rate: f64,
    pub max_speed: f64,
    pub min_size: f64,
    pub max_size: f64,
    pub reflect_min: f64,
    pub reflect_max: f64,
    pub cell_size_m: f64,
    pub val_fraction: f64,
    pub seed: u64,
    // network
    pub cf: usize,
    pub k_queries: usize,
    pub n_deform_points: usize,
    pub n_enhance_blocks: usize,
    pub n_cross_blocks: usize,
    pub n_prop_blocks: usize,
    pub flow_guided: bool,
    // training
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_steps: u64,
    pub n_frames: usize,
    pub gt_gamma: f64,
    // paths and command inputs
    pub dataset_dir: String,
    pub out_dir: String,
    pub checkpoint: String,
    pub split: String,
    pub oracle: bool,
    pub seq: usize,
    pub frame: usize,
    pub detections: String,
    pub flow: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            image_size: 128,
            n_sequences: 16,
            num_frames: 8,
            tau: 1,
            n_objects: 3,
            noise_sigma: 0.03,
            ghost_prob: 0.3,
            ghost_offset_min: 6.0,
            ghost_offset_max: 14.0,
            blur_azimuth_cells: 3,
            ego_motion: "linear".into(),
            ego_speed: 1.5,
            ego_yaw_rate: 0.02,
            max_speed: 2.5,
            min_size: 8.0,
            max_size: 16.0,
            reflect_min: 0.55,
            reflect_max: 1.0,
            cell_size_m: 1.0,
            val_fraction: 0.25,
            seed: 7,
            cf: 64,
            k_queries: 16,
            n_deform_points: 4,
            n_enhance_blocks: 2,
            n_cross_blocks: 2,
            n_prop_blocks: 2,
            flow_guided: true,
            lr: 2e-4,
            weight_decay: 1e-2,
            batch_size: 2,
            epochs: 10,
            max_steps: 0,
            n_frames: 2,
            gt_gamma: 2.0,
            dataset_dir: "data/synth".into(),
            out_dir: "runs/default".into(),
            checkpoint: String::new(),
            split: "val".into(),
            oracle: false,
            seq: 0,
            frame: 1,
            detections: String::new(),
            flow: String::new(),
        }
    }
}

macro_rules! config_keys {
    ($($key:ident : $kind:ident # $doc:literal),+ $(,)?) => {
        impl RunConfig {
            pub fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $(stringify!($key) => {
                        self.$key = parse_value!($kind, key, value)?;
                        Ok(())
                    })+
                    _ => Err(Error::InvalidConfig(format!("unknown key {key:?}"))),
                }
            }

            pub fn serialize(&self) -> String {
                let mut out = String::from("# run configuration\n");
                $(
                    out.push_str(&format!("{} = {}  # {}\n", stringify!($key), serialize_value!($kind, self.$key), $doc));
                )+
                out
            }
        }
    };
}

macro_rules! parse_value {
    (usize, $key:ident, $v:expr) => {
        $v.parse::<usize>()
            .map_err(|_| Error::InvalidConfig(format!("{}: expected integer, got {:?}", $key, $v)))
    };
    (u64, $key:ident, $v:expr) => {
        $v.parse::<u64>()
            .map_err(|_| Error::InvalidConfig(format!("{}: expected integer, got {:?}", $key, $v)))
    };
    (f64, $key:ident, $v:expr) => {
        $v.parse::<f64>()
            .map_err(|_| Error::InvalidConfig(format!("{}: expected number, got {:?}", $key, $v)))
    };
    (bool, $key:ident, $v:expr) => {
        match $v {
            "true" => Ok(true),
            "false" => Ok(false),
            other => Err(Error::InvalidConfig(format!(
                "{}: expected true/false, got {:?}",
                $key, other
            ))),
        }
    };
    (string, $key:ident, $v:expr) => {
        Ok::<String, Error>($v.to_string())
    };
}

macro_rules! serialize_value {
    (string, $v:expr) => {
        &$v
    };
    ($kind:ident, $v:expr) => {
        $v
    };
}

config_keys! {
    image_size: usize      # "input image side; must be a multiple of 16",
    n_sequences: usize     # "sequences to generate",
    num_frames: usize      # "frames per generated sequence",
    tau: usize             # "frame gap inside training/eval tuples",
    n_objects: usize       # "objects per scene",
    noise_sigma: f64       # "speckle noise standard deviation",
    ghost_prob: f64        # "per-object ghost echo probability",
    ghost_offset_min: f64  # "ghost radial offset lower bound, px",
    ghost_offset_max: f64  # "ghost radial offset upper bound, px",
    blur_azimuth_cells: usize # "tangential smear width, px (0/1 = off)",
    ego_motion: string     # "static | linear | turning",
    ego_speed: f64         # "ego speed, px/frame",
    ego_yaw_rate: f64      # "ego yaw rate, rad/frame (turning only)",
    max_speed: f64         # "object speed bound, px/frame",
    min_size: f64          # "box side lower bound, px",
    max_size: f64          # "box side upper bound, px",
    reflect_min: f64       # "reflectivity lower bound",
    reflect_max: f64       # "reflectivity upper bound",
    cell_size_m: f64       # "meters per pixel",
    val_fraction: f64      # "fraction of sequences in the val split",
    seed: u64              # "master seed for everything",
    cf: usize              # "feature channels",
    k_queries: usize       # "detection queries",
    n_deform_points: usize # "deformable sampling points per query",
    n_enhance_blocks: usize # "enhancement blocks",
    n_cross_blocks: usize  # "flow cross-attention blocks",
    n_prop_blocks: usize   # "propagation blocks",
    flow_guided: bool      # "false = vanilla deformable propagation",
    lr: f64                # "learning rate",
    weight_decay: f64      # "decoupled weight decay",
    batch_size: usize      # "tuples per optimizer step",
    epochs: usize          # "training epochs",
    max_steps: u64         # "hard step cap; 0 = run all epochs",
    n_frames: usize        # "frames per tuple (2 or 4)",
    gt_gamma: f64          # "minimum Gaussian-region radius, cells",
    dataset_dir: string    # "dataset root",
    out_dir: string        # "run output directory",
    checkpoint: string     # "checkpoint path (train resume / eval / infer)",
    split: string          # "dataset split for eval",
    oracle: bool           # "eval feeds ground truth as detections",
    seq: usize             # "sequence index for infer/render",
    frame: usize           # "end frame index for infer/render",
    detections: string     # "detections JSON for render",
    flow: string           # "flow snapshot for render",
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::InvalidConfig(format!(
                    "line {}: expected key = value, got {raw:?}",
                    lineno + 1
                )));
            };
            cfg.set_key(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.image_size.is_multiple_of(16) {
            return Err(Error::InvalidConfig(format!(
                "image_size {} must be a multiple of 16 (stride 4 grid, windows of half the grid)",
                self.image_size
            )));
        }
        if !(0.0..=1.0).contains(&self.val_fraction) {
            return Err(Error::InvalidConfig("val_fraction must be in [0,1]".into()));
        }
        match self.ego_motion.as_str() {
            "static" | "linear" | "turning" => {}
            other => {
                return Err(Error::InvalidConfig(format!(
                    "ego_motion {other:?} must be static | linear | turning"
                )))
            }
        }
        self.net_config().validate()?;
        self.train_config().validate()?;
        self.sequence_spec().validate()?;
        Ok(())
    }

    pub fn sequence_spec(&self) -> SequenceSpec {
        SequenceSpec {
            num_frames: self.num_frames,
            tau: self.tau,
            n_objects: self.n_objects,
            noise_sigma: self.noise_sigma,
            ghost_prob: self.ghost_prob,
            ghost_offset_range: (self.ghost_offset_min, self.ghost_offset_max),
            blur_azimuth_cells: self.blur_azimuth_cells,
            ego_motion: match self.ego_motion.as_str() {
                "static" => EgoMotion::Static,
                "turning" => EgoMotion::Turning {
                    speed_px: self.ego_speed,
                    yaw_rate: self.ego_yaw_rate,
                },
                _ => EgoMotion::Linear {
                    speed_px: self.ego_speed,
                },
            },
            seed: self.seed,
            image_size: self.image_size,
            cell_size_m: self.cell_size_m,
            max_speed: self.max_speed,
            size_range: (self.min_size, self.max_size),
            reflect_range: (self.reflect_min, self.reflect_max),
        }
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            cf: self.cf,
            hf: self.image_size / rafd_core::net::STRIDE,
            wf: self.image_size / rafd_core::net::STRIDE,
            k_queries: self.k_queries,
            n_deform_points: self.n_deform_points,
            n_enhance_blocks: self.n_enhance_blocks,
            n_cross_blocks: self.n_cross_blocks,
            n_prop_blocks: self.n_prop_blocks,
            flow_guided: self.flow_guided,
            ..NetConfig::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            epochs: self.epochs,
            max_steps: self.max_steps,
            seed: self.seed,
            n_frames: self.n_frames,
            tau: self.tau,
            gt_gamma: self.gt_gamma,
        }
    }
}
