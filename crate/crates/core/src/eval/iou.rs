//! Rotated-box intersection over union via convex polygon clipping.

/// Oriented rectangle: center, size, rotation. `w` extends along the local
/// x-axis before rotation, `h` along local y. A rectangle is symmetric under
/// a half-turn, so `theta` and `theta + π` describe the same region.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientedBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
}

impl OrientedBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> OrientedBox {
        OrientedBox { cx, cy, w, h, theta }
    }

    /// Corners in counterclockwise order.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.theta.sin_cos();
        let (hw, hh) = (self.w / 2.0, self.h / 2.0);
        let rot = |x: f64, y: f64| [self.cx + c * x - s * y, self.cy + s * x + c * y];
        [
            rot(-hw, -hh),
            rot(hw, -hh),
            rot(hw, hh),
            rot(-hw, hh),
        ]
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// True when the point lies inside (or on the boundary of) the box.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (p[0] - self.cx, p[1] - self.cy);
        // rotate into the box frame
        let lx = c * dx + s * dy;
        let ly = -s * dx + c * dy;
        lx.abs() <= self.w / 2.0 && ly.abs() <= self.h / 2.0
    }
}

/// Signed polygon area (shoelace); positive for counterclockwise winding.
pub fn signed_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let [x0, y0] = poly[i];
        let [x1, y1] = poly[(i + 1) % poly.len()];
        acc += x0 * y1 - x1 * y0;
    }
    acc / 2.0
}

pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    signed_area(poly).abs()
}

/// Sutherland–Hodgman: clip `subject` against a convex `clip` polygon.
/// The clip polygon may have either winding.
pub fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut clip_ccw: Vec<[f64; 2]> = clip.to_vec();
    if signed_area(&clip_ccw) < 0.0 {
        clip_ccw.reverse();
    }
    let mut output = subject.to_vec();
    for i in 0..clip_ccw.len() {
        if output.is_empty() {
            break;
        }
        let a = clip_ccw[i];
        let b = clip_ccw[(i + 1) % clip_ccw.len()];
        let input = std::mem::take(&mut output);
        // inside = left of directed edge a→b
        let inside =
            |p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= 0.0;
        let intersect = |p: [f64; 2], q: [f64; 2]| -> [f64; 2] {
            let d1 = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
            let d2 = (b[0] - a[0]) * (q[1] - a[1]) - (b[1] - a[1]) * (q[0] - a[0]);
            let t = d1 / (d1 - d2);
            [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
        };
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let (cur_in, prev_in) = (inside(cur), inside(prev));
            if cur_in {
                if !prev_in {
                    output.push(intersect(prev, cur));
                }
                output.push(cur);
            } else if prev_in {
                output.push(intersect(prev, cur));
            }
        }
    }
    output
}

/// IoU of two oriented boxes. Degenerate (near-zero area) boxes yield 0.
pub fn rotated_iou(a: &OrientedBox, b: &OrientedBox) -> f64 {
    const DEGENERATE: f64 = 1e-12;
    let (area_a, area_b) = (a.area(), b.area());
    if area_a < DEGENERATE || area_b < DEGENERATE {
        return 0.0;
    }
    let inter = polygon_area(&clip_convex(&a.corners(), &b.corners()));
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}
