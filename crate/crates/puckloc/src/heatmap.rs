//! Gaussian target heatmaps and argmax decoding.
//!
//! Targets are unnormalized Gaussians (peak 1) evaluated at cell centers,
//! isotropic in heatmap space by default. `sigma` is expressed in heatmap
//! cells unless a feet-based spec is constructed, in which case the transform
//! scales make the Gaussian anisotropic in grid units. Decoding is a hard
//! argmax at cell centers with a total tie-break.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::rink::{HeatmapPoint, RinkPoint, ScalingTransform};

/// A `H` x `W` grid of non-negative values over rink space. Row 0 is the top
/// row (`v = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    values: Array2<f64>,
}

impl Heatmap {
    /// Wraps a grid, rejecting empty or negative-valued input.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("empty heatmap".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain(
                "heatmap entries must be finite and non-negative".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    pub fn height(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// 8-bit grayscale export: values scaled by 255 and clamped, row 0 at the
    /// top of the image.
    pub fn to_gray_image(&self) -> image::GrayImage {
        let (h, w) = self.values.dim();
        let mut img = image::GrayImage::new(w as u32, h as u32);
        for ((r, c), v) in self.values.indexed_iter() {
            let px = (v * 255.0).round().clamp(0.0, 255.0) as u8;
            img.put_pixel(c as u32, r as u32, image::Luma([px]));
        }
        img
    }

    /// Plain-text grid (rows newline-separated, cells space-separated) for
    /// golden tests.
    pub fn to_text_grid(&self) -> String {
        let mut out = String::new();
        for row in self.values.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.12e}")).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text_grid(text: &str) -> Result<Self> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: std::result::Result<Vec<f64>, _> =
                line.split_whitespace().map(str::parse::<f64>).collect();
            let row = row.map_err(|e| {
                Error::InvalidArgument(format!("text grid line {}: {e}", i + 1))
            })?;
            if let Some(first) = rows.first() {
                if row.len() != first.len() {
                    return Err(Error::InvalidArgument(format!(
                        "text grid line {}: ragged row", i + 1
                    )));
                }
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::InvalidArgument("empty text grid".into()));
        }
        let h = rows.len();
        let w = rows[0].len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let values = Array2::from_shape_vec((h, w), flat)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Heatmap::new(values)
    }
}

/// Shape of the Gaussian targets: per-axis standard deviations in heatmap
/// cells plus the grid dimensions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetSpec {
    sigma_u: f64,
    sigma_v: f64,
    width: usize,
    height: usize,
    normalize: bool,
}

impl TargetSpec {
    /// Sigma in heatmap-cell units (the default convention), isotropic on the
    /// grid.
    pub fn cells(sigma: f64, width: usize, height: usize) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sigma must be positive, got {sigma}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("empty target grid".into()));
        }
        Ok(Self {
            sigma_u: sigma,
            sigma_v: sigma,
            width,
            height,
            normalize: false,
        })
    }

    /// Sigma in feet, isotropic on the rink; the transform's anisotropic
    /// scales turn it into per-axis grid sigmas.
    pub fn feet(sigma_ft: f64, transform: &ScalingTransform) -> Result<Self> {
        if !(sigma_ft.is_finite() && sigma_ft > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sigma must be positive, got {sigma_ft}"
            )));
        }
        Ok(Self {
            sigma_u: sigma_ft * transform.sx(),
            sigma_v: sigma_ft * transform.sy(),
            width: transform.width(),
            height: transform.height(),
            normalize: false,
        })
    }

    /// Normalize targets to unit sum instead of unit peak.
    pub fn with_normalization(mut self, on: bool) -> Self {
        self.normalize = on;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }
}

/// Renders the Gaussian target for a mean in heatmap coordinates. Cell
/// `(r, c)` is evaluated at its center `(c + 0.5, r + 0.5)`.
pub fn render_target(spec: &TargetSpec, mean: &HeatmapPoint) -> Result<Heatmap> {
    if !mean.u.is_finite()
        || !mean.v.is_finite()
        || mean.u < 0.0
        || mean.u > spec.width as f64
        || mean.v < 0.0
        || mean.v > spec.height as f64
    {
        return Err(Error::Domain(format!(
            "target mean ({}, {}) outside [0, {}] x [0, {}]",
            mean.u, mean.v, spec.width, spec.height
        )));
    }
    // The Gaussian is separable; evaluate per-axis factors once.
    let col_factors: Vec<f64> = (0..spec.width)
        .map(|c| {
            let d = c as f64 + 0.5 - mean.u;
            (-d * d / (2.0 * spec.sigma_u * spec.sigma_u)).exp()
        })
        .collect();
    let row_factors: Vec<f64> = (0..spec.height)
        .map(|r| {
            let d = r as f64 + 0.5 - mean.v;
            (-d * d / (2.0 * spec.sigma_v * spec.sigma_v)).exp()
        })
        .collect();
    let mut values = Array2::zeros((spec.height, spec.width));
    for (r, rf) in row_factors.iter().enumerate() {
        for (c, cf) in col_factors.iter().enumerate() {
            values[(r, c)] = rf * cf;
        }
    }
    if spec.normalize {
        let sum: f64 = values.iter().sum();
        values.mapv_inplace(|v| v / sum);
    }
    Heatmap::new(values)
}

/// Argmax decode result. `low_confidence` is set when the heatmap carries no
/// peak (all entries equal, e.g. all-zero output).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decoded {
    pub point: HeatmapPoint,
    pub low_confidence: bool,
}

/// Hard argmax at cell centers. Ties break to the lowest row, then the lowest
/// column, so identical heatmaps always decode identically.
pub fn decode_argmax(h: &Heatmap) -> Decoded {
    let values = h.values();
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut best = (0usize, 0usize);
    for ((r, c), &v) in values.indexed_iter() {
        if v < min {
            min = v;
        }
        if v > max {
            max = v;
            best = (r, c);
        }
    }
    if max == min {
        return Decoded {
            point: HeatmapPoint::new(h.width() as f64 / 2.0, h.height() as f64 / 2.0),
            low_confidence: true,
        };
    }
    Decoded {
        point: HeatmapPoint::new(best.1 as f64 + 0.5, best.0 as f64 + 0.5),
        low_confidence: false,
    }
}

/// Decoded rink-plane prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RinkDecoded {
    pub point: RinkPoint,
    pub low_confidence: bool,
}

/// Argmax decode followed by the inverse scaling transform. Worst-case
/// quantization error is half a cell per axis: `(0.5 * 200/W, 0.5 * 85/H)`
/// ft.
pub fn decode_to_rink(h: &Heatmap, transform: &ScalingTransform) -> Result<RinkDecoded> {
    if h.width() != transform.width() || h.height() != transform.height() {
        return Err(Error::Shape(format!(
            "heatmap is {}x{} but transform expects {}x{}",
            h.width(),
            h.height(),
            transform.width(),
            transform.height()
        )));
    }
    let decoded = decode_argmax(h);
    let point = transform.heatmap_to_rink(&decoded.point)?;
    Ok(RinkDecoded {
        point,
        low_confidence: decoded.low_confidence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rink::make_scaling_transform;
    use ndarray::Array2;

    #[test]
    fn gaussian_peak_and_sigma_distance_values() {
        // Mean at a cell center so the peak is exactly 1 and a cell whose
        // center sits exactly sigma away reads exp(-1/2).
        let spec = TargetSpec::cells(25.0, 64, 64).unwrap();
        let mean = HeatmapPoint::new(31.5, 31.5);
        let h = render_target(&spec, &mean).unwrap();
        assert!((h.values()[(31, 31)] - 1.0).abs() < 1e-15);
        // (56.5, 31.5) is 25 cells away along u.
        assert!((h.values()[(31, 56)] - (-0.5f64).exp()).abs() < 1e-9);
        // 3-4-5 triangle scaled by 5: (15, 20) offset has length 25.
        assert!((h.values()[(51, 46)] - (-0.5f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn gaussian_center_peak_near_one_at_half_cell() {
        let spec = TargetSpec::cells(25.0, 64, 64).unwrap();
        let h = render_target(&spec, &HeatmapPoint::new(32.0, 32.0)).unwrap();
        let peak = h.values().iter().cloned().fold(f64::MIN, f64::max);
        // Peak cell center is at most half a cell away per axis, so the
        // squared distance to the mean is at most 0.5.
        assert!(peak >= (-0.5f64 / (2.0 * 625.0)).exp() - 1e-12);
        assert!(peak <= 1.0);
    }

    #[test]
    fn near_degenerate_sigma_is_peaked() {
        let spec = TargetSpec::cells(0.25, 64, 64).unwrap();
        let h = render_target(&spec, &HeatmapPoint::new(10.5, 20.5)).unwrap();
        assert!((h.values()[(20, 10)] - 1.0).abs() < 1e-12);
        for ((r, c), &v) in h.values().indexed_iter() {
            let d2 = (c as f64 - 10.0).powi(2) + (r as f64 - 20.0).powi(2);
            if d2 >= 4.0 {
                assert!(v < 1e-3, "cell ({r},{c}) = {v}");
            }
        }
    }

    #[test]
    fn centered_target_is_flip_symmetric() {
        let spec = TargetSpec::cells(10.0, 32, 32).unwrap();
        let h = render_target(&spec, &HeatmapPoint::new(16.0, 16.0)).unwrap();
        let v = h.values();
        for r in 0..32 {
            for c in 0..32 {
                assert_eq!(v[(r, c)], v[(31 - r, c)]);
                assert_eq!(v[(r, c)], v[(r, 31 - c)]);
            }
        }
    }

    #[test]
    fn out_of_range_mean_rejected() {
        let spec = TargetSpec::cells(5.0, 16, 16).unwrap();
        assert!(render_target(&spec, &HeatmapPoint::new(-0.5, 8.0)).is_err());
        assert!(render_target(&spec, &HeatmapPoint::new(8.0, 16.5)).is_err());
    }

    #[test]
    fn normalized_target_sums_to_one() {
        let spec = TargetSpec::cells(5.0, 32, 32)
            .unwrap()
            .with_normalization(true);
        let h = render_target(&spec, &HeatmapPoint::new(16.0, 16.0)).unwrap();
        let sum: f64 = h.values().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn decode_one_hot() {
        let mut grid = Array2::zeros((64, 64));
        grid[(10, 20)] = 1.0;
        let h = Heatmap::new(grid).unwrap();
        let d = decode_argmax(&h);
        assert_eq!(d.point, HeatmapPoint::new(20.5, 10.5));
        assert!(!d.low_confidence);
    }

    #[test]
    fn decode_rendered_center() {
        let spec = TargetSpec::cells(25.0, 64, 64).unwrap();
        let h = render_target(&spec, &HeatmapPoint::new(32.0, 32.0)).unwrap();
        let d = decode_argmax(&h);
        assert!((d.point.u - 32.0).abs() <= 0.5);
        assert!((d.point.v - 32.0).abs() <= 0.5);
    }

    #[test]
    fn decode_flat_heatmaps() {
        let h = Heatmap::new(Array2::zeros((64, 64))).unwrap();
        let d = decode_argmax(&h);
        assert!(d.low_confidence);
        assert_eq!(d.point, HeatmapPoint::new(32.0, 32.0));

        let uniform = Heatmap::new(Array2::from_elem((16, 16), 0.25)).unwrap();
        let d = decode_argmax(&uniform);
        assert!(d.low_confidence);
        assert_eq!(d.point, HeatmapPoint::new(8.0, 8.0));
    }

    #[test]
    fn encode_decode_quantization_bound() {
        let t = make_scaling_transform(64, 64).unwrap();
        let spec = TargetSpec::cells(15.0, 64, 64).unwrap();
        for &(x, y) in &[(100.0, 42.5), (0.0, 0.0), (200.0, 85.0), (13.7, 81.2)] {
            let p = RinkPoint::new(x, y).unwrap();
            let h = render_target(&spec, &t.rink_to_heatmap(&p)).unwrap();
            let d = decode_to_rink(&h, &t).unwrap();
            assert!(
                (d.point.x() - x).abs() <= 0.5 * 200.0 / 64.0 + 1e-9,
                "x err for ({x},{y})"
            );
            assert!(
                (d.point.y() - y).abs() <= 0.5 * 85.0 / 64.0 + 1e-9,
                "y err for ({x},{y})"
            );
        }
    }

    #[test]
    fn decode_transform_shape_mismatch() {
        let t = make_scaling_transform(32, 32).unwrap();
        let h = Heatmap::new(Array2::zeros((64, 64))).unwrap();
        assert!(decode_to_rink(&h, &t).is_err());
    }

    #[test]
    fn text_grid_round_trip() {
        let spec = TargetSpec::cells(3.0, 8, 8).unwrap();
        let h = render_target(&spec, &HeatmapPoint::new(2.5, 5.5)).unwrap();
        let text = h.to_text_grid();
        let back = Heatmap::from_text_grid(&text).unwrap();
        for (a, b) in h.values().iter().zip(back.values().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gray_image_export() {
        let mut grid = Array2::zeros((4, 6));
        grid[(1, 2)] = 1.0;
        grid[(3, 5)] = 0.5;
        let img = Heatmap::new(grid).unwrap().to_gray_image();
        assert_eq!(img.dimensions(), (6, 4));
        assert_eq!(img.get_pixel(2, 1).0[0], 255);
        assert_eq!(img.get_pixel(5, 3).0[0], 128);
        assert_eq!(img.get_pixel(0, 0).0[0], 0);
    }
}
