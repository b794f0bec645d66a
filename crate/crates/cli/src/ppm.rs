//! PPM (P6) rendering: radar frames with box overlays and flow color wheels.

use std::path::Path;

use rafd_core::error::Result;
use rafd_core::eval::OrientedBox;
use rafd_core::tensor::Array;

pub struct Rgb(pub [u8; 3]);

pub const GREEN: Rgb = Rgb([40, 220, 60]);
pub const RED: Rgb = Rgb([230, 40, 40]);

pub struct Canvas {
    pub w: usize,
    pub h: usize,
    data: Vec<u8>,
}

impl Canvas {
    pub fn from_gray(image: &Array) -> Canvas {
        let shape = image.shape();
        let (h, w) = (shape[1], shape[2]);
        let mut data = Vec::with_capacity(3 * h * w);
        for &v in image.data() {
            let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            data.extend_from_slice(&[g, g, g]);
        }
        Canvas { w, h, data }
    }

    pub fn set(&mut self, x: i64, y: i64, color: &Rgb) {
        if x < 0 || y < 0 || x >= self.w as i64 || y >= self.h as i64 {
            return;
        }
        let i = 3 * (y as usize * self.w + x as usize);
        self.data[i..i + 3].copy_from_slice(&color.0);
    }

    /// Sub-pixel-stepped line segment.
    pub fn line(&mut self, a: [f64; 2], b: [f64; 2], color: &Rgb) {
        let steps = ((b[0] - a[0]).abs().max((b[1] - a[1]).abs()).ceil() as usize).max(1) * 2;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let x = a[0] + t * (b[0] - a[0]);
            let y = a[1] + t * (b[1] - a[1]);
            self.set(x.round() as i64, y.round() as i64, color);
        }
    }

    pub fn draw_box(&mut self, rect: &OrientedBox, color: &Rgb) {
        let c = rect.corners();
        for i in 0..4 {
            self.line(c[i], c[(i + 1) % 4], color);
        }
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(32 + self.data.len());
        bytes.extend_from_slice(format!("P6\n{} {}\n255\n", self.w, self.h).as_bytes());
        bytes.extend_from_slice(&self.data);
        std::fs::write(path, bytes)?;
        Ok(())
    }
}

/// Flow color wheel: hue from direction, saturation from magnitude (relative
/// to the field's own maximum), full value. Zero flow renders white.
/// Upscaled by `scale` with nearest-neighbor so feature cells are visible.
pub fn flow_wheel(flow: &Array, scale: usize) -> Canvas {
    let shape = flow.shape();
    let (h, w) = (shape[1], shape[2]);
    let m = h * w;
    let d = flow.data();
    let max_mag = (0..m)
        .map(|i| (d[i] * d[i] + d[m + i] * d[m + i]).sqrt())
        .fold(0.0f64, f64::max);
    let mut canvas = Canvas {
        w: w * scale,
        h: h * scale,
        data: vec![255; 3 * w * scale * h * scale],
    };
    if max_mag <= 1e-12 {
        return canvas; // uniform white
    }
    for i in 0..h {
        for j in 0..w {
            let (fx, fy) = (d[i * w + j], d[m + i * w + j]);
            let mag = (fx * fx + fy * fy).sqrt();
            let hue = fy.atan2(fx); // [-π, π]
            let sat = (mag / max_mag).clamp(0.0, 1.0);
            let rgb = hsv_to_rgb(hue, sat, 1.0);
            for dy in 0..scale {
                for dx in 0..scale {
                    canvas.set((j * scale + dx) as i64, (i * scale + dy) as i64, &rgb);
                }
            }
        }
    }
    canvas
}

fn hsv_to_rgb(hue_rad: f64, s: f64, v: f64) -> Rgb {
    let h = (hue_rad.rem_euclid(std::f64::consts::TAU)) / std::f64::consts::TAU * 6.0;
    let i = h.floor() as i64 % 6;
    let f = h - h.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    let (r, g, b) = match i {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    Rgb([
        (r * 255.0).round() as u8,
        (g * 255.0).round() as u8,
        (b * 255.0).round() as u8,
    ])
}
