//! Frame rasterizer: inverse-maps every pixel through the camera homography
//! onto the rink plane to paint ice and markings, then forward-projects the
//! puck and occluders. Motion blur averages several sub-instant renders.

use image::RgbImage;

use super::camera::{CameraState, Projection};
use crate::error::Result;
use crate::rink::{RINK_LENGTH_FT, RINK_WIDTH_FT};

const SKY: [f64; 3] = [82.0, 86.0, 100.0];
const STANDS: [f64; 3] = [70.0, 74.0, 88.0];
const BOARDS: [f64; 3] = [196.0, 188.0, 150.0];
const ICE: [f64; 3] = [235.0, 242.0, 248.0];
const RED: [f64; 3] = [198.0, 58.0, 58.0];
const BLUE: [f64; 3] = [52.0, 82.0, 196.0];
const PUCK: [f64; 3] = [14.0, 14.0, 18.0];
const JERSEY_A: [f64; 3] = [170.0, 60.0, 40.0];
const JERSEY_B: [f64; 3] = [60.0, 120.0, 170.0];

const FACEOFF_CIRCLES: [(f64, f64); 5] = [
    (100.0, 42.5),
    (31.0, 20.5),
    (31.0, 64.5),
    (169.0, 20.5),
    (169.0, 64.5),
];

/// An ellipse in image space standing in for a player.
#[derive(Debug, Clone, Copy)]
pub struct Occluder {
    pub u: f64,
    pub v: f64,
    pub semi_u: f64,
    pub semi_v: f64,
    pub team: usize,
}

impl Occluder {
    pub fn covers(&self, u: f64, v: f64) -> bool {
        let du = (u - self.u) / self.semi_u;
        let dv = (v - self.v) / self.semi_v;
        du * du + dv * dv <= 1.0
    }
}

fn plane_color(x: f64, y: f64) -> [f64; 3] {
    let inside =
        (0.0..=RINK_LENGTH_FT).contains(&x) && (0.0..=RINK_WIDTH_FT).contains(&y);
    if !inside {
        let apron = (-4.0..=RINK_LENGTH_FT + 4.0).contains(&x)
            && (-4.0..=RINK_WIDTH_FT + 4.0).contains(&y);
        return if apron { BOARDS } else { STANDS };
    }
    // Perimeter kick plate.
    if x < 0.7 || x > RINK_LENGTH_FT - 0.7 || y < 0.7 || y > RINK_WIDTH_FT - 0.7 {
        return BOARDS;
    }
    // Center red line and the two blue lines.
    if (x - 100.0).abs() <= 0.5 {
        return RED;
    }
    if (x - 75.0).abs() <= 0.5 || (x - 125.0).abs() <= 0.5 {
        return BLUE;
    }
    // Goal lines.
    if (x - 11.0).abs() <= 0.17 || (x - 189.0).abs() <= 0.17 {
        return RED;
    }
    // Face-off circles (rings and dots).
    for (cx, cy) in FACEOFF_CIRCLES {
        let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
        if (d - 15.0).abs() <= 0.35 || d <= 1.0 {
            return RED;
        }
    }
    ICE
}

/// One sub-instant scene: camera, optional puck pixel disc, occluders.
pub struct Subframe<'a> {
    pub camera: &'a CameraState,
    /// `(u, v, radius_px)` when the puck is in view.
    pub puck: Option<(f64, f64, f64)>,
    pub occluders: &'a [Occluder],
}

/// Renders the average of `subframes` into an 8-bit RGB image.
pub fn render_frame(size: usize, subframes: &[Subframe<'_>]) -> Result<RgbImage> {
    assert!(!subframes.is_empty());
    let mut acc = vec![0.0f64; size * size * 3];
    for sub in subframes {
        let inv = sub.camera.inverse_homography()?;
        for py in 0..size {
            for px in 0..size {
                let u = px as f64 + 0.5;
                let v = py as f64 + 0.5;
                let qx = inv[0][0] * u + inv[0][1] * v + inv[0][2];
                let qy = inv[1][0] * u + inv[1][1] * v + inv[1][2];
                let qw = inv[2][0] * u + inv[2][1] * v + inv[2][2];
                // qw <= 0 means this pixel looks past the horizon.
                let mut color = if qw.abs() < 1e-12 || qw < 0.0 {
                    SKY
                } else {
                    plane_color(qx / qw, qy / qw)
                };
                if let Some((pu, pv, pr)) = sub.puck {
                    let d2 = (u - pu).powi(2) + (v - pv).powi(2);
                    if d2 <= pr * pr {
                        color = PUCK;
                    }
                }
                for occ in sub.occluders {
                    if occ.covers(u, v) {
                        color = if occ.team % 2 == 0 { JERSEY_A } else { JERSEY_B };
                    }
                }
                let base = (py * size + px) * 3;
                acc[base] += color[0];
                acc[base + 1] += color[1];
                acc[base + 2] += color[2];
            }
        }
    }
    let scale = 1.0 / subframes.len() as f64;
    let mut img = RgbImage::new(size as u32, size as u32);
    for py in 0..size {
        for px in 0..size {
            let base = (py * size + px) * 3;
            img.put_pixel(
                px as u32,
                py as u32,
                image::Rgb([
                    (acc[base] * scale).round().clamp(0.0, 255.0) as u8,
                    (acc[base + 1] * scale).round().clamp(0.0, 255.0) as u8,
                    (acc[base + 2] * scale).round().clamp(0.0, 255.0) as u8,
                ]),
            );
        }
    }
    Ok(img)
}

/// Detects the centroid of dark (puck-colored) pixels; the label-fidelity
/// oracle for generated clips.
pub fn dark_centroid(img: &RgbImage) -> Option<(f64, f64)> {
    let mut sum_u = 0.0;
    let mut sum_v = 0.0;
    let mut n = 0usize;
    for (x, y, px) in img.enumerate_pixels() {
        if px.0.iter().all(|&c| c < 60) {
            sum_u += x as f64 + 0.5;
            sum_v += y as f64 + 0.5;
            n += 1;
        }
    }
    if n == 0 {
        None
    } else {
        Some((sum_u / n as f64, sum_v / n as f64))
    }
}
