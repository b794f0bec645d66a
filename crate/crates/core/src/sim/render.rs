//! Frame rasterization: boxes, azimuthal blur, ghost echoes, speckle noise.

use crate::eval::iou::OrientedBox;
use crate::rng::Rng;
use crate::sim::{ObjectTrack, SequenceSpec};
use crate::tensor::Array;

/// Render one frame. Pipeline order: rasterize boxes, azimuthal blur, ghost
/// echoes, additive clipped Gaussian noise, clamp to [0, 1].
pub fn render_frame(
    tracks: &[ObjectTrack],
    frame: usize,
    spec: &SequenceSpec,
    rng: &mut Rng,
) -> Array {
    let s = spec.image_size;
    let mut img = vec![0.0f64; s * s];

    for t in tracks {
        let rect = OrientedBox::new(
            t.centers_px[frame][0],
            t.centers_px[frame][1],
            t.size.1,
            t.size.0,
            t.headings[frame],
        );
        rasterize(&mut img, s, &rect, t.reflectivity);
    }

    if spec.blur_azimuth_cells >= 2 {
        img = azimuth_blur(&img, s, spec.blur_azimuth_cells);
    }

    for t in tracks {
        if rng.uniform() < spec.ghost_prob {
            let c = t.centers_px[frame];
            let center = (s as f64 - 1.0) / 2.0;
            let (mut dx, mut dy) = (c[0] - center, c[1] - center);
            let norm = (dx * dx + dy * dy).sqrt();
            if norm < 1e-9 {
                let ang = rng.range(0.0, std::f64::consts::TAU);
                dx = ang.cos();
                dy = ang.sin();
            } else {
                dx /= norm;
                dy /= norm;
            }
            let dist = rng.range(spec.ghost_offset_range.0, spec.ghost_offset_range.1);
            let ghost = OrientedBox::new(
                c[0] + dx * dist,
                c[1] + dy * dist,
                t.size.1,
                t.size.0,
                t.headings[frame],
            );
            rasterize(&mut img, s, &ghost, 0.5 * t.reflectivity);
        }
    }

    if spec.noise_sigma > 0.0 {
        for v in img.iter_mut() {
            *v += spec.noise_sigma * rng.normal();
        }
    }

    for v in img.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Array::from_vec(&[1, s, s], img).unwrap()
}

/// Max-composite a filled oriented rectangle.
fn rasterize(img: &mut [f64], size: usize, rect: &OrientedBox, value: f64) {
    let corners = rect.corners();
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for c in &corners {
        x0 = x0.min(c[0]);
        y0 = y0.min(c[1]);
        x1 = x1.max(c[0]);
        y1 = y1.max(c[1]);
    }
    let xi0 = x0.floor().max(0.0) as usize;
    let yi0 = y0.floor().max(0.0) as usize;
    let xi1 = (x1.ceil() as isize).min(size as isize - 1).max(0) as usize;
    let yi1 = (y1.ceil() as isize).min(size as isize - 1).max(0) as usize;
    if x1 < 0.0 || y1 < 0.0 || x0 > size as f64 - 1.0 || y0 > size as f64 - 1.0 {
        return;
    }
    for y in yi0..=yi1 {
        for x in xi0..=xi1 {
            if rect.contains([x as f64, y as f64]) {
                let p = &mut img[y * size + x];
                *p = p.max(value);
            }
        }
    }
}

/// 1-D smear along the tangential direction about the image center:
/// each pixel averages `width` bilinear samples spaced one pixel apart
/// along the local tangent.
fn azimuth_blur(img: &[f64], size: usize, width: usize) -> Vec<f64> {
    let center = (size as f64 - 1.0) / 2.0;
    let mut out = vec![0.0; size * size];
    let half = (width as f64 - 1.0) / 2.0;
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = (x as f64 - center, y as f64 - center);
            let norm = (dx * dx + dy * dy).sqrt();
            if norm < 1e-9 {
                out[y * size + x] = img[y * size + x];
                continue;
            }
            // unit tangent (perpendicular to the radius)
            let (tx, ty) = (-dy / norm, dx / norm);
            let mut acc = 0.0;
            for k in 0..width {
                let o = k as f64 - half;
                acc += sample_bilinear(img, size, x as f64 + o * tx, y as f64 + o * ty);
            }
            out[y * size + x] = acc / width as f64;
        }
    }
    out
}

fn sample_bilinear(img: &[f64], size: usize, px: f64, py: f64) -> f64 {
    if px < 0.0 || py < 0.0 || px > size as f64 - 1.0 || py > size as f64 - 1.0 {
        return 0.0;
    }
    let x0 = px.floor();
    let y0 = py.floor();
    let (fx, fy) = (px - x0, py - y0);
    let (x0, y0) = (x0 as usize, y0 as usize);
    let get = |y: usize, x: usize| -> f64 {
        if y < size && x < size {
            img[y * size + x]
        } else {
            0.0
        }
    };
    (1.0 - fx) * (1.0 - fy) * get(y0, x0)
        + fx * (1.0 - fy) * get(y0, x0 + 1)
        + (1.0 - fx) * fy * get(y0 + 1, x0)
        + fx * fy * get(y0 + 1, x0 + 1)
}
