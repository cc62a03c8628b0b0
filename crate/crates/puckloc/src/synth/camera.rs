//! Broadcast camera model: an elevated pinhole camera on one side of the
//! rink that pans horizontally. Because the rink is a plane, the full
//! projection collapses to a 3x3 homography from rink coordinates to image
//! pixels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rink::{RinkPoint, RINK_WIDTH_FT};

/// Camera placement and motion behavior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraParams {
    /// Distance from the near boards to the camera, in feet.
    pub distance_ft: f64,
    /// Camera height above the ice, in feet.
    pub height_ft: f64,
    /// Exponential follow factor per frame toward the puck's x.
    pub pan_lag: f64,
    pub zoom_min: f64,
    pub zoom_max: f64,
    /// Std-dev of per-frame pan jitter, in feet.
    pub jitter_std: f64,
    /// Std-dev of the per-frame zoom random walk.
    pub zoom_walk_std: f64,
}

impl Default for CameraParams {
    fn default() -> Self {
        Self {
            distance_ft: 45.0,
            height_ft: 25.0,
            pan_lag: 0.15,
            zoom_min: 0.9,
            zoom_max: 1.3,
            jitter_std: 0.35,
            zoom_walk_std: 0.01,
        }
    }
}

/// Camera state for one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraState {
    /// Rink x the camera is aimed at, in feet.
    pub pan_center_x: f64,
    pub zoom: f64,
    pub frame_size: usize,
    /// Rink plane `(x, y, 1)` to image `(u, v, w)`.
    pub homography: [[f64; 3]; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Visible { u: f64, v: f64 },
    OutOfView,
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

impl CameraState {
    /// A camera at `(pan_x, -distance, height)` looking at the width
    /// midline. Focal length is `zoom * frame_size` pixels.
    pub fn broadcast(pan_x: f64, zoom: f64, frame_size: usize, params: &CameraParams) -> Self {
        let pos = [pan_x, -params.distance_ft, params.height_ft];
        let target = [pan_x, RINK_WIDTH_FT / 2.0, 0.0];
        let forward = normalize([
            target[0] - pos[0],
            target[1] - pos[1],
            target[2] - pos[2],
        ]);
        let right = normalize(cross(forward, [0.0, 0.0, 1.0]));
        let down = cross(forward, right);
        let rows = [right, down, forward];
        let t = [-dot(rows[0], pos), -dot(rows[1], pos), -dot(rows[2], pos)];
        // M maps plane (x, y, 1) to camera coordinates.
        let m = [
            [rows[0][0], rows[0][1], t[0]],
            [rows[1][0], rows[1][1], t[1]],
            [rows[2][0], rows[2][1], t[2]],
        ];
        let focal = zoom * frame_size as f64;
        let center = frame_size as f64 / 2.0;
        let mut h = [[0.0; 3]; 3];
        for col in 0..3 {
            h[0][col] = focal * m[0][col] + center * m[2][col];
            h[1][col] = focal * m[1][col] + center * m[2][col];
            h[2][col] = m[2][col];
        }
        Self {
            pan_center_x: pan_x,
            zoom,
            frame_size,
            homography: h,
        }
    }

    /// Directly wraps a homography (diagnostics and tests).
    pub fn from_homography(h: [[f64; 3]; 3], frame_size: usize) -> Self {
        Self {
            pan_center_x: 0.0,
            zoom: 1.0,
            frame_size,
            homography: h,
        }
    }

    pub fn determinant(&self) -> f64 {
        let h = &self.homography;
        h[0][0] * (h[1][1] * h[2][2] - h[1][2] * h[2][1])
            - h[0][1] * (h[1][0] * h[2][2] - h[1][2] * h[2][0])
            + h[0][2] * (h[1][0] * h[2][1] - h[1][1] * h[2][0])
    }

    pub fn inverse_homography(&self) -> Result<[[f64; 3]; 3]> {
        let h = &self.homography;
        let det = self.determinant();
        if det.abs() < 1e-12 {
            return Err(Error::Domain("degenerate homography".into()));
        }
        let inv_det = 1.0 / det;
        let mut inv = [[0.0; 3]; 3];
        inv[0][0] = (h[1][1] * h[2][2] - h[1][2] * h[2][1]) * inv_det;
        inv[0][1] = (h[0][2] * h[2][1] - h[0][1] * h[2][2]) * inv_det;
        inv[0][2] = (h[0][1] * h[1][2] - h[0][2] * h[1][1]) * inv_det;
        inv[1][0] = (h[1][2] * h[2][0] - h[1][0] * h[2][2]) * inv_det;
        inv[1][1] = (h[0][0] * h[2][2] - h[0][2] * h[2][0]) * inv_det;
        inv[1][2] = (h[0][2] * h[1][0] - h[0][0] * h[1][2]) * inv_det;
        inv[2][0] = (h[1][0] * h[2][1] - h[1][1] * h[2][0]) * inv_det;
        inv[2][1] = (h[0][1] * h[2][0] - h[0][0] * h[2][1]) * inv_det;
        inv[2][2] = (h[0][0] * h[1][1] - h[0][1] * h[1][0]) * inv_det;
        Ok(inv)
    }

    /// Projects a plane point without rink-bounds restrictions.
    pub(crate) fn project_xy(&self, x: f64, y: f64) -> Projection {
        let h = &self.homography;
        let w = h[2][0] * x + h[2][1] * y + h[2][2];
        if w <= 1e-9 {
            return Projection::OutOfView;
        }
        let u = (h[0][0] * x + h[0][1] * y + h[0][2]) / w;
        let v = (h[1][0] * x + h[1][1] * y + h[1][2]) / w;
        let s = self.frame_size as f64;
        if !(0.0..=s).contains(&u) || !(0.0..=s).contains(&v) {
            return Projection::OutOfView;
        }
        Projection::Visible { u, v }
    }
}

/// Homogeneous projection of a rink point through the camera, with a
/// perspective divide. Points behind the camera plane or outside the frame
/// report out-of-view. Errors on a degenerate homography.
pub fn project_point(cam: &CameraState, p: &RinkPoint) -> Result<Projection> {
    if cam.determinant().abs() < 1e-12 {
        return Err(Error::Domain("degenerate homography".into()));
    }
    Ok(cam.project_xy(p.x(), p.y()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rink::{RINK_LENGTH_FT, RINK_WIDTH_FT};

    #[test]
    fn scaled_identity_maps_corners_to_frame_corners() {
        let s = 256.0;
        let h = [
            [s / RINK_LENGTH_FT, 0.0, 0.0],
            [0.0, s / RINK_WIDTH_FT, 0.0],
            [0.0, 0.0, 1.0],
        ];
        let cam = CameraState::from_homography(h, 256);
        for (x, y, eu, ev) in [
            (0.0, 0.0, 0.0, 0.0),
            (200.0, 0.0, s, 0.0),
            (0.0, 85.0, 0.0, s),
            (200.0, 85.0, s, s),
        ] {
            let p = RinkPoint::new(x, y).unwrap();
            match project_point(&cam, &p).unwrap() {
                Projection::Visible { u, v } => {
                    assert!((u - eu).abs() < 1e-12 && (v - ev).abs() < 1e-12)
                }
                Projection::OutOfView => panic!("corner ({x},{y}) out of view"),
            }
        }
    }

    #[test]
    fn matches_hand_multiplication() {
        let h = [[1.5, 0.2, 30.0], [-0.1, 2.0, 40.0], [0.001, 0.002, 1.0]];
        let cam = CameraState::from_homography(h, 1024);
        let p = RinkPoint::new(120.0, 60.0).unwrap();
        let w = 0.001 * 120.0 + 0.002 * 60.0 + 1.0;
        let eu = (1.5 * 120.0 + 0.2 * 60.0 + 30.0) / w;
        let ev = (-0.1 * 120.0 + 2.0 * 60.0 + 40.0) / w;
        match project_point(&cam, &p).unwrap() {
            Projection::Visible { u, v } => {
                assert!((u - eu).abs() < 1e-9);
                assert!((v - ev).abs() < 1e-9);
            }
            Projection::OutOfView => panic!("expected visible"),
        }
    }

    #[test]
    fn point_behind_camera_is_out_of_view() {
        // Negative w for every rink point.
        let h = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]];
        let cam = CameraState::from_homography(h, 256);
        let p = RinkPoint::new(10.0, 10.0).unwrap();
        assert_eq!(project_point(&cam, &p).unwrap(), Projection::OutOfView);
    }

    #[test]
    fn degenerate_homography_is_an_error() {
        let h = [[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
        let cam = CameraState::from_homography(h, 256);
        let p = RinkPoint::new(10.0, 10.0).unwrap();
        assert!(project_point(&cam, &p).is_err());
        assert!(cam.inverse_homography().is_err());
    }

    #[test]
    fn broadcast_camera_sees_its_pan_target() {
        let params = CameraParams::default();
        let cam = CameraState::broadcast(100.0, 1.0, 256, &params);
        let center = RinkPoint::new(100.0, RINK_WIDTH_FT / 2.0).unwrap();
        match project_point(&cam, &center).unwrap() {
            Projection::Visible { u, v } => {
                // The aim point lands on the vertical centerline of the frame.
                assert!((u - 128.0).abs() < 1e-6, "u = {u}");
                assert!(v > 0.0 && v < 256.0);
            }
            Projection::OutOfView => panic!("pan target must be visible"),
        }
        // Inverse composes to identity.
        let inv = cam.inverse_homography().unwrap();
        let h = cam.homography;
        for r in 0..3 {
            for c in 0..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += h[r][k] * inv[k][c];
                }
                let want = if r == c { 1.0 } else { 0.0 };
                assert!((acc - want).abs() < 1e-9, "H*H^-1 [{r}][{c}] = {acc}");
            }
        }
    }

    #[test]
    fn wide_rink_span_visible_from_broadcast_position() {
        let params = CameraParams::default();
        let cam = CameraState::broadcast(100.0, 0.9, 256, &params);
        let mut visible = 0;
        for x in (40..=160).step_by(10) {
            for y in (5..=80).step_by(15) {
                let p = RinkPoint::new(x as f64, y as f64).unwrap();
                if matches!(project_point(&cam, &p).unwrap(), Projection::Visible { .. }) {
                    visible += 1;
                }
            }
        }
        assert!(visible > 50, "only {visible} sample points visible");
    }
}
