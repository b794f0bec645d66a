//! Grid coordinate conventions, SE(2) ego-pose transforms and feature-map
//! alignment between frames.
//!
//! Conventions fixed here and asserted in tests:
//! * coordinate/flow channel order is (x, y) = (column, row) everywhere;
//! * rotation is counterclockwise (math convention on (x, y)) about the grid
//!   center, which is where the sensor sits;
//! * feature cell (row i, col j) corresponds to the input-pixel point
//!   `stride * j + (stride − 1)/2` — cell centers, so the grid center maps
//!   exactly onto the image center.

use crate::error::{Error, Result};
use crate::tensor::{Array, Graph, Var};

/// SE(2) rigid transform between frames, in feature-grid cells, rotating
/// about the grid center.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose2 {
    pub tx: f64,
    pub ty: f64,
    /// Radians, counterclockwise.
    pub theta: f64,
}

impl Pose2 {
    pub fn identity() -> Pose2 {
        Pose2 {
            tx: 0.0,
            ty: 0.0,
            theta: 0.0,
        }
    }

    pub fn new(tx: f64, ty: f64, theta: f64) -> Pose2 {
        Pose2 { tx, ty, theta }
    }

    pub fn is_identity(&self) -> bool {
        self.tx == 0.0 && self.ty == 0.0 && self.theta == 0.0
    }

    /// Row-major 2×2 rotation matrix.
    pub fn rot(&self) -> [f64; 4] {
        let (s, c) = self.theta.sin_cos();
        [c, -s, s, c]
    }

    /// Apply to a point, rotating about `center`: `R(p − c) + c + t`.
    pub fn apply(&self, p: [f64; 2], center: [f64; 2]) -> [f64; 2] {
        let [r00, r01, r10, r11] = self.rot();
        let (dx, dy) = (p[0] - center[0], p[1] - center[1]);
        [
            r00 * dx + r01 * dy + center[0] + self.tx,
            r10 * dx + r11 * dy + center[1] + self.ty,
        ]
    }

    /// `self ∘ other`: apply `other` first, then `self`. Independent of the
    /// rotation center as long as both poses share it.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let [r00, r01, r10, r11] = self.rot();
        Pose2 {
            theta: self.theta + other.theta,
            tx: r00 * other.tx + r01 * other.ty + self.tx,
            ty: r10 * other.tx + r11 * other.ty + self.ty,
        }
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = (-self.theta).sin_cos();
        Pose2 {
            theta: -self.theta,
            tx: -(c * self.tx - s * self.ty),
            ty: -(s * self.tx + c * self.ty),
        }
    }
}

/// Feature-grid geometry: `hf × wf` cells, `stride` input pixels per cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridSpec {
    pub hf: usize,
    pub wf: usize,
    pub stride: usize,
}

impl GridSpec {
    /// Window partitioning of the enhancement blocks needs dimensions
    /// divisible by 4 (half-window shift of a half-size window).
    pub fn new(hf: usize, wf: usize, stride: usize) -> Result<GridSpec> {
        if hf < 4 || wf < 4 || !hf.is_multiple_of(4) || !wf.is_multiple_of(4) {
            return Err(Error::InvalidConfig(format!(
                "grid {hf}×{wf} must be at least 4×4 and divisible by 4"
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidConfig("stride must be ≥ 1".into()));
        }
        Ok(GridSpec { hf, wf, stride })
    }

    pub fn cells(&self) -> usize {
        self.hf * self.wf
    }

    /// Grid center in cells: ((wf−1)/2, (hf−1)/2).
    pub fn center(&self) -> [f64; 2] {
        [(self.wf as f64 - 1.0) / 2.0, (self.hf as f64 - 1.0) / 2.0]
    }

    /// Input-pixel coordinate → feature-cell coordinate (cell centers).
    pub fn px_to_cell(&self, p: [f64; 2]) -> [f64; 2] {
        let off = (self.stride as f64 - 1.0) / 2.0;
        [
            (p[0] - off) / self.stride as f64,
            (p[1] - off) / self.stride as f64,
        ]
    }

    pub fn cell_to_px(&self, c: [f64; 2]) -> [f64; 2] {
        let off = (self.stride as f64 - 1.0) / 2.0;
        [
            c[0] * self.stride as f64 + off,
            c[1] * self.stride as f64 + off,
        ]
    }

    /// Length in input pixels → length in cells.
    pub fn px_len_to_cells(&self, len: f64) -> f64 {
        len / self.stride as f64
    }
}

/// Cell-center coordinates of the feature grid: channel 0 holds x (column
/// index), channel 1 holds y (row index).
pub fn grid_coords(spec: &GridSpec) -> Array {
    let (hf, wf) = (spec.hf, spec.wf);
    let mut data = vec![0.0; 2 * hf * wf];
    for i in 0..hf {
        for j in 0..wf {
            data[i * wf + j] = j as f64;
            data[hf * wf + i * wf + j] = i as f64;
        }
    }
    Array::from_vec(&[2, hf, wf], data).unwrap()
}

/// Rigid transform of a `2×M` point set on the tape, rotating about the grid
/// center. Differentiable w.r.t. the points.
pub fn transform_points(g: &mut Graph, points: Var, pose: &Pose2, spec: &GridSpec) -> Result<Var> {
    let rot = pose.rot();
    let c = spec.center();
    let offset = [
        c[0] + pose.tx - (rot[0] * c[0] + rot[1] * c[1]),
        c[1] + pose.ty - (rot[2] * c[0] + rot[3] * c[1]),
    ];
    g.rigid_points(points, rot, offset)
}

/// Inter-frame alignment pose in feature-grid cells from two metric world
/// poses: rotation is the heading change, translation is the ego displacement
/// expressed in the previous frame, divided by the metric cell size and the
/// feature stride.
pub fn relative_grid_pose(
    curr_world: &Pose2,
    prev_world: &Pose2,
    cell_size_m: f64,
    spec: &GridSpec,
) -> Pose2 {
    let theta = curr_world.theta - prev_world.theta;
    let (s, c) = (-prev_world.theta).sin_cos();
    let dx = curr_world.tx - prev_world.tx;
    let dy = curr_world.ty - prev_world.ty;
    let tx_px = (c * dx - s * dy) / cell_size_m;
    let ty_px = (s * dx + c * dy) / cell_size_m;
    Pose2::new(
        tx_px / spec.stride as f64,
        ty_px / spec.stride as f64,
        theta,
    )
}

/// Warp the previous frame's feature map into the current frame.
///
/// Each current-frame cell's coordinates are transformed by
/// `pose_t_to_prev` and `prev_feat` is bilinearly sampled there;
/// out-of-range cells keep `curr_feat`'s value at that cell. The current
/// frame's own "aligned" map is `curr_feat` unchanged.
pub fn align_to_current(
    g: &mut Graph,
    prev_feat: Var,
    pose_t_to_prev: &Pose2,
    curr_feat: Var,
    spec: &GridSpec,
) -> Result<Var> {
    let sp = g.value(prev_feat).shape().to_vec();
    let sc = g.value(curr_feat).shape().to_vec();
    if sp != sc {
        return Err(Error::shape(
            "align_to_current",
            format!("prev {:?} vs curr {:?}", sp, sc),
        ));
    }
    if sp.len() != 3 || sp[1] != spec.hf || sp[2] != spec.wf {
        return Err(Error::shape(
            "align_to_current",
            format!("features {:?} vs grid {}×{}", sp, spec.hf, spec.wf),
        ));
    }
    let c = sp[0];
    let m = spec.cells();
    let coords = grid_coords(spec).reshaped(&[2, m])?;
    let points = g.constant(coords);
    let warped_points = transform_points(g, points, pose_t_to_prev, spec)?;
    let fill = g.reshape(curr_feat, &[c, m])?;
    let sampled = g.grid_sample_bilinear(prev_feat, warped_points, fill)?;
    g.reshape(sampled, &[c, spec.hf, spec.wf])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn spec4() -> GridSpec {
        GridSpec::new(4, 4, 4).unwrap()
    }

    #[test]
    fn grid_spec_validation() {
        assert!(GridSpec::new(4, 4, 1).is_ok());
        assert!(GridSpec::new(3, 4, 1).is_err());
        assert!(GridSpec::new(4, 6, 1).is_err());
        assert!(GridSpec::new(8, 8, 0).is_err());
    }

    #[test]
    fn grid_coords_2x2_values() {
        // hf=wf must be ≥4; check the documented 2×2 pattern on the top-left
        // corner of a 4×4 grid plus the definition on every cell.
        let spec = spec4();
        let gc = grid_coords(&spec);
        assert_eq!(gc.at(&[0, 0, 0]), 0.0);
        assert_eq!(gc.at(&[0, 0, 1]), 1.0);
        assert_eq!(gc.at(&[0, 1, 0]), 0.0);
        assert_eq!(gc.at(&[1, 0, 0]), 0.0);
        assert_eq!(gc.at(&[1, 0, 1]), 0.0);
        assert_eq!(gc.at(&[1, 1, 0]), 1.0);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(gc.at(&[0, i, j]), j as f64);
                assert_eq!(gc.at(&[1, i, j]), i as f64);
            }
        }
    }

    #[test]
    fn grid_coords_centroid_is_grid_center() {
        let spec = GridSpec::new(8, 12, 4).unwrap();
        let gc = grid_coords(&spec);
        let m = spec.cells() as f64;
        let cx: f64 = gc.data()[..spec.cells()].iter().sum::<f64>() / m;
        let cy: f64 = gc.data()[spec.cells()..].iter().sum::<f64>() / m;
        assert_eq!([cx, cy], spec.center());
    }

    #[test]
    fn pose_compose_inverse_is_identity() {
        let p = Pose2::new(1.75, -2.5, 0.41);
        let id = p.compose(&p.inverse());
        assert!(id.tx.abs() < 1e-12 && id.ty.abs() < 1e-12 && id.theta.abs() < 1e-12);
        let id2 = p.inverse().compose(&p);
        assert!(id2.tx.abs() < 1e-12 && id2.ty.abs() < 1e-12 && id2.theta.abs() < 1e-12);
    }

    #[test]
    fn rotation_matrix_orthonormal() {
        let p = Pose2::new(0.0, 0.0, 1.234);
        let [a, b, c, d] = p.rot();
        assert!((a * a + c * c - 1.0).abs() < 1e-15);
        assert!((b * b + d * d - 1.0).abs() < 1e-15);
        assert!((a * b + c * d).abs() < 1e-15);
    }

    #[test]
    fn transform_points_identity_and_translation() {
        let spec = spec4();
        let mut g = Graph::new();
        let pts = g.constant(Array::from_vec(&[2, 2], vec![0.5, 3.0, 1.0, 2.0]).unwrap());
        let same = transform_points(&mut g, pts, &Pose2::identity(), &spec).unwrap();
        assert_eq!(g.value(same).data(), &[0.5, 3.0, 1.0, 2.0]);
        let shifted = transform_points(&mut g, pts, &Pose2::new(2.0, 0.0, 0.0), &spec).unwrap();
        assert_eq!(g.value(shifted).data(), &[2.5, 5.0, 1.0, 2.0]);
    }

    #[test]
    fn quarter_turn_about_center_of_3x3() {
        // (2,1) rotated π/2 CCW about (1,1) lands on (1,2); hand-derived.
        let pose = Pose2::new(0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let out = pose.apply([2.0, 1.0], [1.0, 1.0]);
        assert!((out[0] - 1.0).abs() < 1e-12);
        assert!((out[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn transform_roundtrip_within_1e10() {
        let spec = GridSpec::new(8, 8, 4).unwrap();
        let pose = Pose2::new(1.3, -0.7, 0.23);
        let mut rng = Rng::new(17);
        let pts: Vec<f64> = (0..32).map(|_| rng.range(-3.0, 10.0)).collect();
        let mut g = Graph::new();
        let p = g.constant(Array::from_vec(&[2, 16], pts.clone()).unwrap());
        let fwd = transform_points(&mut g, p, &pose, &spec).unwrap();
        let back = transform_points(&mut g, fwd, &pose.inverse(), &spec).unwrap();
        for (a, b) in g.value(back).data().iter().zip(&pts) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn align_identity_pose_returns_prev_exactly() {
        let spec = spec4();
        let mut rng = Rng::new(3);
        let prev = Array::from_vec(&[2, 4, 4], (0..32).map(|_| rng.uniform()).collect()).unwrap();
        let curr = Array::from_vec(&[2, 4, 4], (0..32).map(|_| rng.uniform()).collect()).unwrap();
        let mut g = Graph::new();
        let pv = g.constant(prev.clone());
        let cv = g.constant(curr);
        let out = align_to_current(&mut g, pv, &Pose2::identity(), cv, &spec).unwrap();
        assert_eq!(g.value(out).data(), prev.data());
    }

    #[test]
    fn align_unit_translation_shifts_and_reveals() {
        let spec = spec4();
        let mut rng = Rng::new(5);
        let prev = Array::from_vec(&[1, 4, 4], (0..16).map(|_| rng.uniform()).collect()).unwrap();
        let curr = Array::from_vec(&[1, 4, 4], (0..16).map(|_| rng.uniform()).collect()).unwrap();
        let mut g = Graph::new();
        let pv = g.constant(prev.clone());
        let cv = g.constant(curr.clone());
        let pose = Pose2::new(1.0, 0.0, 0.0);
        let out = align_to_current(&mut g, pv, &pose, cv, &spec).unwrap();
        let od = g.value(out).data();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if j + 1 < 4 {
                    prev.at(&[0, i, j + 1])
                } else {
                    curr.at(&[0, i, j])
                };
                assert_eq!(od[i * 4 + j], expect, "cell ({i},{j})");
            }
        }
    }

    #[test]
    fn align_roundtrip_on_smooth_map_interior() {
        let spec = GridSpec::new(16, 16, 4).unwrap();
        // Bilinear sampling reproduces affine maps exactly, so a plane is the
        // smooth case where the round trip must close to interpolation noise.
        let mut data = vec![0.0; 16 * 16];
        for i in 0..16 {
            for j in 0..16 {
                data[i * 16 + j] = 0.3 + 0.05 * j as f64 + 0.08 * i as f64;
            }
        }
        let feat = Array::from_vec(&[1, 16, 16], data).unwrap();
        let pose = Pose2::new(0.6, -0.4, 0.05);
        let mut g = Graph::new();
        let f = g.constant(feat.clone());
        let zero_fill = g.constant(Array::zeros(&[1, 16, 16]));
        let warped = align_to_current(&mut g, f, &pose, zero_fill, &spec).unwrap();
        let zf2 = g.constant(Array::zeros(&[1, 16, 16]));
        let back = align_to_current(&mut g, warped, &pose.inverse(), zf2, &spec).unwrap();
        let bd = g.value(back).data();
        for i in 4..12 {
            for j in 4..12 {
                let diff = (bd[i * 16 + j] - feat.at(&[0, i, j])).abs();
                assert!(diff < 1e-6, "interior ({i},{j}) diff {diff}");
            }
        }
    }

    #[test]
    fn align_constant_map_stays_constant() {
        let spec = spec4();
        let mut g = Graph::new();
        let prev = g.constant(Array::filled(&[3, 4, 4], 0.37));
        let curr = g.constant(Array::filled(&[3, 4, 4], 0.37));
        let pose = Pose2::new(1.7, -2.3, 0.8);
        let out = align_to_current(&mut g, prev, &pose, curr, &spec).unwrap();
        for &v in g.value(out).data() {
            assert!((v - 0.37).abs() < 1e-12);
        }
    }

    #[test]
    fn relative_grid_pose_consistent_with_projection() {
        // A world-static point seen from two ego poses: mapping its
        // current-frame cell through the relative pose must land on its
        // previous-frame cell.
        let spec = GridSpec::new(32, 32, 4).unwrap();
        let cell_m = 0.5;
        let image_size = 128;
        let prev_world = Pose2::new(3.0, -1.0, 0.2);
        let curr_world = Pose2::new(3.9, -0.4, 0.27);
        let pose = relative_grid_pose(&curr_world, &prev_world, cell_m, &spec);
        let world_point = [7.3, 2.1];
        let px_prev = crate::sim::world_to_image(world_point, &prev_world, cell_m, image_size);
        let px_curr = crate::sim::world_to_image(world_point, &curr_world, cell_m, image_size);
        let cell_prev = spec.px_to_cell(px_prev);
        let cell_curr = spec.px_to_cell(px_curr);
        let mapped = pose.apply(cell_curr, spec.center());
        assert!((mapped[0] - cell_prev[0]).abs() < 1e-10, "{mapped:?} vs {cell_prev:?}");
        assert!((mapped[1] - cell_prev[1]).abs() < 1e-10);
    }

    #[test]
    fn align_preserves_shape() {
        let spec = GridSpec::new(8, 4, 2).unwrap();
        let mut g = Graph::new();
        let prev = g.constant(Array::zeros(&[5, 8, 4]));
        let curr = g.constant(Array::zeros(&[5, 8, 4]));
        let out = align_to_current(&mut g, prev, &Pose2::new(0.3, 0.1, 0.02), curr, &spec).unwrap();
        assert_eq!(g.value(out).shape(), &[5, 8, 4]);
    }
}
