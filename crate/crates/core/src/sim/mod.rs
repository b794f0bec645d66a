//! Deterministic synthetic BEV radar sequence generator.
//!
//! Produces grayscale BEV frames with exact ego poses and instance-ID'd
//! oriented-box annotations. Rendering models the qualitative degradations of
//! scanning radar: azimuthal blur, multipath-style ghost echoes and speckle
//! noise. Everything is a pure function of the recipe, including its seed.

mod dataset;
mod render;

pub use dataset::{
    load_dataset, sequence_dir_name, write_dataset, DatasetMeta, LoadedFrame, LoadedSequence,
};
pub use render::render_frame;

use crate::error::{Error, Result};
use crate::eval::iou::{clip_convex, polygon_area, OrientedBox};
use crate::geometry::Pose2;
use crate::rng::Rng;
use crate::tensor::Array;

/// Oriented box annotation with a stable instance id.
#[derive(Clone, Debug)]
pub struct BoxAnnotation {
    pub id: u64,
    pub rect: OrientedBox,
}

/// One rendered BEV radar frame with its ground truth.
#[derive(Clone, Debug)]
pub struct RadarFrame {
    /// 1×H×W grayscale image, values in [0, 1].
    pub image: Array,
    /// Ego pose in world coordinates (meters / radians).
    pub ego_pose_world: Pose2,
    /// Annotations in image-pixel coordinates; every box intersects the image.
    pub boxes: Vec<BoxAnnotation>,
    pub frame_index: usize,
}

/// A simulated object: world-frame trajectory plus its per-frame image-space
/// center and heading.
#[derive(Clone, Debug)]
pub struct ObjectTrack {
    pub id: u64,
    /// Per-frame center in input pixels (image frame of that time step).
    pub centers_px: Vec<[f64; 2]>,
    /// Per-frame heading in the image frame.
    pub headings: Vec<f64>,
    /// (h, w) in pixels.
    pub size: (f64, f64),
    /// In [0, 1].
    pub reflectivity: f64,
    pub world_centers: Vec<[f64; 2]>,
    pub world_heading: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EgoMotion {
    Static,
    /// Constant velocity along world +x, in pixels per frame.
    Linear { speed_px: f64 },
    /// Constant speed (px/frame) with constant yaw rate (rad/frame).
    Turning { speed_px: f64, yaw_rate: f64 },
}

/// Scene recipe. All randomness derives from `seed`.
#[derive(Clone, Debug)]
pub struct SequenceSpec {
    pub num_frames: usize,
    /// Frame gap used by downstream training/eval tuples.
    pub tau: usize,
    pub n_objects: usize,
    pub noise_sigma: f64,
    pub ghost_prob: f64,
    /// Radial offset of ghost echoes, in pixels (min, max).
    pub ghost_offset_range: (f64, f64),
    pub blur_azimuth_cells: usize,
    pub ego_motion: EgoMotion,
    pub seed: u64,
    /// H = W.
    pub image_size: usize,
    /// Meters per pixel.
    pub cell_size_m: f64,
    /// Upper bound on object speed, px/frame.
    pub max_speed: f64,
    /// Box side lengths in pixels (min, max).
    pub size_range: (f64, f64),
    pub reflect_range: (f64, f64),
}

impl Default for SequenceSpec {
    fn default() -> Self {
        SequenceSpec {
            num_frames: 8,
            tau: 1,
            n_objects: 3,
            noise_sigma: 0.03,
            ghost_prob: 0.3,
            ghost_offset_range: (6.0, 14.0),
            blur_azimuth_cells: 3,
            ego_motion: EgoMotion::Linear { speed_px: 1.5 },
            seed: 7,
            image_size: 128,
            cell_size_m: 1.0,
            max_speed: 2.5,
            size_range: (8.0, 16.0),
            reflect_range: (0.55, 1.0),
        }
    }
}

impl SequenceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_frames < 2 {
            return Err(Error::InvalidConfig(format!(
                "num_frames {} must be ≥ 2",
                self.num_frames
            )));
        }
        if self.tau == 0 {
            return Err(Error::InvalidConfig("tau must be ≥ 1".into()));
        }
        if !(0.0..=1.0).contains(&self.ghost_prob) {
            return Err(Error::InvalidConfig(format!(
                "ghost_prob {} must be within [0,1]",
                self.ghost_prob
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::InvalidConfig("noise_sigma must be ≥ 0".into()));
        }
        if self.image_size < 16 {
            return Err(Error::InvalidConfig("image_size must be ≥ 16".into()));
        }
        if self.size_range.0 <= 0.0 || self.size_range.1 < self.size_range.0 {
            return Err(Error::InvalidConfig("invalid size_range".into()));
        }
        if self.cell_size_m <= 0.0 {
            return Err(Error::InvalidConfig("cell_size_m must be > 0".into()));
        }
        Ok(())
    }

    /// Same scene with the seed offset by the sequence index, so sequence
    /// generation can run concurrently and stay reproducible.
    pub fn for_sequence(&self, index: u64) -> SequenceSpec {
        let mut spec = self.clone();
        spec.seed = self.seed.wrapping_add(index);
        spec
    }
}

/// Ego pose in world coordinates at a frame index.
fn ego_pose_at(motion: EgoMotion, cell_size_m: f64, frame: usize) -> Pose2 {
    match motion {
        EgoMotion::Static => Pose2::identity(),
        EgoMotion::Linear { speed_px } => {
            Pose2::new(speed_px * cell_size_m * frame as f64, 0.0, 0.0)
        }
        EgoMotion::Turning { speed_px, yaw_rate } => {
            // integrate heading step by step
            let (mut x, mut y) = (0.0, 0.0);
            for f in 0..frame {
                let heading = yaw_rate * f as f64;
                x += speed_px * cell_size_m * heading.cos();
                y += speed_px * cell_size_m * heading.sin();
            }
            Pose2::new(x, y, yaw_rate * frame as f64)
        }
    }
}

/// World point → image-pixel point under an ego pose.
pub fn world_to_image(
    p_world: [f64; 2],
    ego: &Pose2,
    cell_size_m: f64,
    image_size: usize,
) -> [f64; 2] {
    let (s, c) = (-ego.theta).sin_cos();
    let (dx, dy) = (p_world[0] - ego.tx, p_world[1] - ego.ty);
    let ex = c * dx - s * dy;
    let ey = s * dx + c * dy;
    let center = (image_size as f64 - 1.0) / 2.0;
    [ex / cell_size_m + center, ey / cell_size_m + center]
}

/// Image-pixel point → world point under an ego pose.
pub fn image_to_world(
    p_img: [f64; 2],
    ego: &Pose2,
    cell_size_m: f64,
    image_size: usize,
) -> [f64; 2] {
    let center = (image_size as f64 - 1.0) / 2.0;
    let ex = (p_img[0] - center) * cell_size_m;
    let ey = (p_img[1] - center) * cell_size_m;
    let (s, c) = ego.theta.sin_cos();
    [c * ex - s * ey + ego.tx, s * ex + c * ey + ego.ty]
}

const PLACEMENT_RETRIES: usize = 200;

/// Simulate frames and return the tracks as well.
pub fn simulate(spec: &SequenceSpec) -> Result<(Vec<RadarFrame>, Vec<ObjectTrack>)> {
    spec.validate()?;
    let mut rng = Rng::derive(spec.seed, "scene");
    let size = spec.image_size as f64;

    // Spawn objects in the frame-0 view with non-overlapping clearance.
    let mut tracks: Vec<ObjectTrack> = Vec::with_capacity(spec.n_objects);
    let mut placed: Vec<([f64; 2], f64)> = Vec::new(); // (center, clearance radius)
    for id in 0..spec.n_objects as u64 {
        let h = rng.range(spec.size_range.0, spec.size_range.1);
        let w = rng.range(spec.size_range.0, spec.size_range.1);
        let clearance = 0.5 * (h * h + w * w).sqrt() + 2.0;
        let mut center = None;
        for _ in 0..PLACEMENT_RETRIES {
            let cand = [
                rng.range(0.18 * size, 0.82 * size),
                rng.range(0.18 * size, 0.82 * size),
            ];
            let ok = placed.iter().all(|(p, r)| {
                let d = ((cand[0] - p[0]).powi(2) + (cand[1] - p[1]).powi(2)).sqrt();
                d >= r + clearance
            });
            if ok {
                center = Some(cand);
                break;
            }
        }
        let Some(center_px) = center else {
            return Err(Error::Placement {
                placed: tracks.len(),
                requested: spec.n_objects,
            });
        };
        placed.push((center_px, clearance));

        let speed = rng.range(0.0, spec.max_speed);
        let dir = rng.range(0.0, std::f64::consts::TAU);
        let heading = if speed > 0.2 {
            dir
        } else {
            rng.range(0.0, std::f64::consts::TAU)
        };
        let vel = [
            speed * dir.cos() * spec.cell_size_m,
            speed * dir.sin() * spec.cell_size_m,
        ];
        let reflectivity = rng.range(spec.reflect_range.0, spec.reflect_range.1);

        // frame-0 ego pose is the identity, so spawning in image space is
        // spawning in world space
        let world0 = image_to_world(
            center_px,
            &ego_pose_at(spec.ego_motion, spec.cell_size_m, 0),
            spec.cell_size_m,
            spec.image_size,
        );
        let world_centers: Vec<[f64; 2]> = (0..spec.num_frames)
            .map(|f| [world0[0] + vel[0] * f as f64, world0[1] + vel[1] * f as f64])
            .collect();
        tracks.push(ObjectTrack {
            id,
            centers_px: Vec::new(),
            headings: Vec::new(),
            size: (h, w),
            reflectivity,
            world_centers,
            world_heading: heading,
        });
    }

    // Per-frame image-space state, rendering and annotation.
    let mut frames = Vec::with_capacity(spec.num_frames);
    for f in 0..spec.num_frames {
        let ego = ego_pose_at(spec.ego_motion, spec.cell_size_m, f);
        for t in tracks.iter_mut() {
            let c = world_to_image(t.world_centers[f], &ego, spec.cell_size_m, spec.image_size);
            t.centers_px.push(c);
            t.headings.push(t.world_heading - ego.theta);
        }
        let mut frame_rng = Rng::derive(spec.seed, &format!("render/{f}"));
        let image = render_frame(&tracks, f, spec, &mut frame_rng);
        let boxes = annotate(&tracks, f, spec.image_size);
        frames.push(RadarFrame {
            image,
            ego_pose_world: ego,
            boxes,
            frame_index: f,
        });
    }
    Ok((frames, tracks))
}

/// Fully reproducible frame sequence for a scene recipe.
pub fn simulate_sequence(spec: &SequenceSpec) -> Result<Vec<RadarFrame>> {
    simulate(spec).map(|(frames, _)| frames)
}

/// Boxes whose footprint intersects the image rectangle.
fn annotate(tracks: &[ObjectTrack], frame: usize, image_size: usize) -> Vec<BoxAnnotation> {
    let s = image_size as f64;
    let image_rect = [
        [-0.5, -0.5],
        [s - 0.5, -0.5],
        [s - 0.5, s - 0.5],
        [-0.5, s - 0.5],
    ];
    let mut out = Vec::new();
    for t in tracks {
        let rect = OrientedBox::new(
            t.centers_px[frame][0],
            t.centers_px[frame][1],
            t.size.1,
            t.size.0,
            t.headings[frame],
        );
        let overlap = polygon_area(&clip_convex(&rect.corners(), &image_rect));
        if overlap > 1e-9 {
            out.push(BoxAnnotation { id: t.id, rect });
        }
    }
    out
}
