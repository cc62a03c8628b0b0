//! Rink coordinate frame, heatmap coordinate frame, the diagonal scaling
//! transform between them, and zone partitions of the rink length.
//!
//! Conventions: the rink plane is 200 ft long (`x`) by 85 ft wide (`y`) with
//! the origin at one corner, so the transform to heatmap space is a pure
//! scale with no offset. `x = 0` is the defending end as seen from the
//! broadcast camera side; evaluation only ever compares labels, so the
//! orientation is internal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rink length in feet (the `x` axis).
pub const RINK_LENGTH_FT: f64 = 200.0;
/// Rink width in feet (the `y` axis).
pub const RINK_WIDTH_FT: f64 = 85.0;

/// A location on the rink plane, in feet. Valid by construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPoint")]
pub struct RinkPoint {
    x: f64,
    y: f64,
}

#[derive(Deserialize)]
struct RawPoint {
    x: f64,
    y: f64,
}

impl TryFrom<RawPoint> for RinkPoint {
    type Error = Error;
    fn try_from(raw: RawPoint) -> Result<Self> {
        RinkPoint::new(raw.x, raw.y)
    }
}

impl RinkPoint {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        if !x.is_finite()
            || !y.is_finite()
            || !(0.0..=RINK_LENGTH_FT).contains(&x)
            || !(0.0..=RINK_WIDTH_FT).contains(&y)
        {
            return Err(Error::Domain(format!(
                "rink point ({x}, {y}) lies outside the {RINK_LENGTH_FT}x{RINK_WIDTH_FT} ft surface"
            )));
        }
        Ok(Self { x, y })
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    /// Euclidean distance to `other`, in feet.
    pub fn distance(&self, other: &RinkPoint) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }

    /// Center ice.
    pub fn center() -> Self {
        Self {
            x: RINK_LENGTH_FT / 2.0,
            y: RINK_WIDTH_FT / 2.0,
        }
    }
}

/// A continuous location in heatmap coordinates: `u` along columns, `v` along
/// rows. Validity depends on the heatmap dimensions, so it is checked by the
/// operations that consume one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatmapPoint {
    pub u: f64,
    pub v: f64,
}

impl HeatmapPoint {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

/// The diagonal scaling transform between rink coordinates and a `W`x`H`
/// heatmap grid: `u = x * W/200`, `v = y * H/85`, zero offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingTransform {
    sx: f64,
    sy: f64,
    width: usize,
    height: usize,
}

/// Builds the transform for a `width` x `height` heatmap.
pub fn make_scaling_transform(width: usize, height: usize) -> Result<ScalingTransform> {
    ScalingTransform::new(width, height)
}

impl ScalingTransform {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "heatmap dimensions must be positive, got {width}x{height}"
            )));
        }
        Ok(Self {
            sx: width as f64 / RINK_LENGTH_FT,
            sy: height as f64 / RINK_WIDTH_FT,
            width,
            height,
        })
    }

    pub fn sx(&self) -> f64 {
        self.sx
    }

    pub fn sy(&self) -> f64 {
        self.sy
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Maps a rink point into heatmap coordinates.
    pub fn rink_to_heatmap(&self, p: &RinkPoint) -> HeatmapPoint {
        HeatmapPoint {
            u: p.x() * self.sx,
            v: p.y() * self.sy,
        }
    }

    /// Maps a heatmap point back onto the rink. Errors when the point lies
    /// outside the `[0, W] x [0, H]` grid.
    pub fn heatmap_to_rink(&self, q: &HeatmapPoint) -> Result<RinkPoint> {
        if !q.u.is_finite()
            || !q.v.is_finite()
            || q.u < 0.0
            || q.u > self.width as f64
            || q.v < 0.0
            || q.v > self.height as f64
        {
            return Err(Error::Domain(format!(
                "heatmap point ({}, {}) outside [0, {}] x [0, {}]",
                q.u, q.v, self.width, self.height
            )));
        }
        // Dividing by W (exact) instead of multiplying by 1/sx keeps the
        // corners exact and the round trip below 1e-9 ft.
        let x = q.u * RINK_LENGTH_FT / self.width as f64;
        let y = q.v * RINK_WIDTH_FT / self.height as f64;
        RinkPoint::new(x.clamp(0.0, RINK_LENGTH_FT), y.clamp(0.0, RINK_WIDTH_FT))
    }
}

/// A partition of the rink length into labelled zones by ascending x cuts.
/// `mirrored` records whether the end zones are split in two (the five-zone
/// layout); it is descriptive metadata used when rendering zone diagrams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZonePartition {
    cuts: Vec<f64>,
    labels: Vec<String>,
    mirrored: bool,
}

impl ZonePartition {
    pub fn new(cuts: Vec<f64>, labels: Vec<String>, mirrored: bool) -> Result<Self> {
        if labels.len() != cuts.len() + 1 {
            return Err(Error::InvalidArgument(format!(
                "{} cuts require {} labels, got {}",
                cuts.len(),
                cuts.len() + 1,
                labels.len()
            )));
        }
        for pair in cuts.windows(2) {
            if pair[0] >= pair[1] {
                return Err(Error::InvalidArgument(format!(
                    "zone cuts must be strictly ascending, got {} then {}",
                    pair[0], pair[1]
                )));
            }
        }
        if cuts
            .iter()
            .any(|c| !c.is_finite() || *c <= 0.0 || *c >= RINK_LENGTH_FT)
        {
            return Err(Error::InvalidArgument(
                "zone cuts must lie strictly inside (0, 200) ft".into(),
            ));
        }
        Ok(Self {
            cuts,
            labels,
            mirrored,
        })
    }

    /// Standard NHL blue-line geometry: defensive / neutral / offensive with
    /// cuts at 75 and 125 ft.
    pub fn three_zone() -> Self {
        Self::new(
            vec![75.0, 125.0],
            vec!["defensive".into(), "neutral".into(), "offensive".into()],
            false,
        )
        .expect("static partition")
    }

    /// Five-zone layout with the end zones halved at 37.5 and 162.5 ft.
    pub fn five_zone() -> Self {
        Self::new(
            vec![37.5, 75.0, 125.0, 162.5],
            vec![
                "defensive-deep".into(),
                "defensive".into(),
                "neutral".into(),
                "offensive".into(),
                "offensive-deep".into(),
            ],
            true,
        )
        .expect("static partition")
    }

    /// Index of the zone containing `p`. A point exactly on a cut belongs to
    /// the higher-x zone.
    pub fn zone_index(&self, p: &RinkPoint) -> usize {
        self.cuts.partition_point(|c| *c <= p.x())
    }

    /// Label of the zone containing `p`.
    pub fn zone_of(&self, p: &RinkPoint) -> &str {
        &self.labels[self.zone_index(p)]
    }

    pub fn num_zones(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn cuts(&self) -> &[f64] {
        &self.cuts
    }

    pub fn mirrored(&self) -> bool {
        self.mirrored
    }

    /// Zone interval `[lo, hi)` in feet for the given zone index (the last
    /// interval is closed at 200).
    pub fn interval(&self, index: usize) -> (f64, f64) {
        let lo = if index == 0 {
            0.0
        } else {
            self.cuts[index - 1]
        };
        let hi = if index == self.cuts.len() {
            RINK_LENGTH_FT
        } else {
            self.cuts[index]
        };
        (lo, hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64, y: f64) -> RinkPoint {
        RinkPoint::new(x, y).unwrap()
    }

    #[test]
    fn transform_scales_match_heatmap_dims() {
        let t = make_scaling_transform(64, 64).unwrap();
        assert!((t.sx() - 0.32).abs() < 1e-12);
        assert!((t.sy() - 64.0 / 85.0).abs() < 1e-12);

        let id = make_scaling_transform(200, 85).unwrap();
        assert_eq!(id.sx(), 1.0);
        assert_eq!(id.sy(), 1.0);

        let t128 = make_scaling_transform(128, 128).unwrap();
        assert!((t128.sx() - 0.64).abs() < 1e-12);
        assert!((t128.sy() - 128.0 / 85.0).abs() < 1e-12);
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(make_scaling_transform(0, 64).is_err());
        assert!(make_scaling_transform(64, 0).is_err());
    }

    #[test]
    fn forward_examples() {
        let t = make_scaling_transform(64, 64).unwrap();
        let origin = t.rink_to_heatmap(&p(0.0, 0.0));
        assert_eq!((origin.u, origin.v), (0.0, 0.0));

        let center = t.rink_to_heatmap(&p(100.0, 42.5));
        assert!((center.u - 32.0).abs() < 1e-12);
        assert!((center.v - 32.0).abs() < 1e-12);

        let q = t.rink_to_heatmap(&p(150.0, 20.0));
        assert!((q.u - 48.0).abs() < 1e-12);
        assert!((q.v - 1280.0 / 85.0).abs() < 1e-12);
    }

    #[test]
    fn inverse_examples() {
        let t = make_scaling_transform(64, 64).unwrap();
        let center = t.heatmap_to_rink(&HeatmapPoint::new(32.0, 32.0)).unwrap();
        assert!((center.x() - 100.0).abs() < 1e-12);
        assert!((center.y() - 42.5).abs() < 1e-12);

        let corner = t.heatmap_to_rink(&HeatmapPoint::new(64.0, 64.0)).unwrap();
        assert!((corner.x() - 200.0).abs() < 1e-12);
        assert!((corner.y() - 85.0).abs() < 1e-12);

        let back = t
            .heatmap_to_rink(&HeatmapPoint::new(48.0, 1280.0 / 85.0))
            .unwrap();
        assert!((back.x() - 150.0).abs() < 1e-9);
        assert!((back.y() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn out_of_range_heatmap_point_rejected() {
        let t = make_scaling_transform(64, 64).unwrap();
        assert!(t.heatmap_to_rink(&HeatmapPoint::new(-0.1, 2.0)).is_err());
        assert!(t.heatmap_to_rink(&HeatmapPoint::new(64.5, 2.0)).is_err());
        assert!(t.heatmap_to_rink(&HeatmapPoint::new(2.0, f64::NAN)).is_err());
    }

    #[test]
    fn rink_point_validation() {
        assert!(RinkPoint::new(210.0, 40.0).is_err());
        assert!(RinkPoint::new(40.0, -0.001).is_err());
        assert!(RinkPoint::new(f64::INFINITY, 1.0).is_err());
        assert!(RinkPoint::new(200.0, 85.0).is_ok());
    }

    #[test]
    fn zone_examples() {
        let three = ZonePartition::three_zone();
        assert_eq!(three.zone_of(&p(10.0, 40.0)), "defensive");
        assert_eq!(three.zone_of(&p(100.0, 40.0)), "neutral");
        assert_eq!(three.zone_of(&p(190.0, 40.0)), "offensive");

        let five = ZonePartition::five_zone();
        assert_eq!(five.zone_of(&p(190.0, 40.0)), "offensive-deep");
        assert_eq!(five.zone_of(&p(10.0, 40.0)), "defensive-deep");
    }

    #[test]
    fn boundary_points_go_to_higher_zone() {
        let three = ZonePartition::three_zone();
        assert_eq!(three.zone_of(&p(75.0, 10.0)), "neutral");
        assert_eq!(three.zone_of(&p(125.0, 10.0)), "offensive");
        let five = ZonePartition::five_zone();
        assert_eq!(five.zone_of(&p(37.5, 10.0)), "defensive");
        assert_eq!(five.zone_of(&p(162.5, 10.0)), "offensive-deep");
    }

    #[test]
    fn invalid_partitions_rejected() {
        assert!(ZonePartition::new(vec![75.0, 75.0], vec!["a".into(), "b".into(), "c".into()], false).is_err());
        assert!(ZonePartition::new(vec![125.0, 75.0], vec!["a".into(), "b".into(), "c".into()], false).is_err());
        assert!(ZonePartition::new(vec![75.0], vec!["a".into()], false).is_err());
        assert!(ZonePartition::new(vec![0.0], vec!["a".into(), "b".into()], false).is_err());
        assert!(ZonePartition::new(vec![200.0], vec!["a".into(), "b".into()], false).is_err());
    }
}
