//! Accuracy metrics: tolerance curves, their normalized area (AUC), and
//! zone-wise accuracy.
//!
//! A prediction is correct at tolerance `t` when its distance to the truth
//! is strictly below `t` feet (Euclidean overall, absolute difference per
//! axis). The AUC integrates the tolerance curve from 5 to 50 ft with a
//! 1-ft trapezoid rule, normalized by the 45-ft range and reported as a
//! percentage; a 5-ft step variant is available for comparison.

use std::io::Write;
use std::path::Path;

use crate::error::{io_err, Error, Result};
use crate::rink::{RinkPoint, ZonePartition};

/// Ground truth and prediction for one test clip.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionPair {
    pub clip_id: String,
    pub predicted: RinkPoint,
    pub truth: RinkPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Both,
    X,
    Y,
}

impl Axis {
    fn name(&self) -> &'static str {
        match self {
            Axis::Both => "overall",
            Axis::X => "x",
            Axis::Y => "y",
        }
    }
}

/// Error magnitude of a pair along the chosen axis, in feet.
pub fn pair_error(pair: &PredictionPair, axis: Axis) -> f64 {
    match axis {
        Axis::Both => pair.truth.distance(&pair.predicted),
        Axis::X => (pair.truth.x() - pair.predicted.x()).abs(),
        Axis::Y => (pair.truth.y() - pair.predicted.y()).abs(),
    }
}

/// Strict tolerance test: the error must be less than `t`.
pub fn correct_at(pair: &PredictionPair, t: f64, axis: Axis) -> bool {
    pair_error(pair, axis) < t
}

/// Fraction of pairs correct at each tolerance of an ascending grid.
pub fn phi_curve(
    pairs: &[PredictionPair],
    t_grid: &[f64],
    axis: Axis,
) -> Result<Vec<(f64, f64)>> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument(
            "tolerance curve of an empty prediction set".into(),
        ));
    }
    if t_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "tolerance grid must be strictly ascending".into(),
        ));
    }
    // One pass over sorted errors.
    let mut errors: Vec<f64> = pairs.iter().map(|p| pair_error(p, axis)).collect();
    errors.sort_by(|a, b| a.partial_cmp(b).expect("finite errors"));
    let n = errors.len() as f64;
    Ok(t_grid
        .iter()
        .map(|&t| {
            let correct = errors.partition_point(|e| *e < t);
            (t, correct as f64 / n)
        })
        .collect())
}

/// Normalized trapezoid area under the tolerance curve between `t_min` and
/// `t_max` at the given step, in percent.
pub fn auc_with(
    pairs: &[PredictionPair],
    t_min: f64,
    t_max: f64,
    step: f64,
    axis: Axis,
) -> Result<f64> {
    if !(t_min < t_max) {
        return Err(Error::InvalidArgument(format!(
            "tolerance range [{t_min}, {t_max}] is empty"
        )));
    }
    if step <= 0.0 {
        return Err(Error::InvalidArgument("step must be positive".into()));
    }
    let spans = (t_max - t_min) / step;
    if (spans - spans.round()).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "step {step} does not divide the range [{t_min}, {t_max}]"
        )));
    }
    let n = spans.round() as usize;
    let grid: Vec<f64> = (0..=n).map(|i| t_min + i as f64 * step).collect();
    let curve = phi_curve(pairs, &grid, axis)?;
    let mut area = 0.0;
    for w in curve.windows(2) {
        area += 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0);
    }
    Ok(area / (t_max - t_min) * 100.0)
}

/// The headline metric: 1-ft trapezoid AUC from 5 to 50 ft.
pub fn auc(pairs: &[PredictionPair], axis: Axis) -> Result<f64> {
    auc_with(pairs, 5.0, 50.0, 1.0, axis)
}

/// Accuracy of one populated zone.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneAccuracyRow {
    pub zone_index: usize,
    pub label: String,
    pub n: usize,
    pub accuracy: f64,
}

/// Per-zone fraction of pairs whose prediction lands in the truth's zone.
/// Zones without truth samples are absent from the table, not zero.
pub fn zone_accuracy(
    pairs: &[PredictionPair],
    partition: &ZonePartition,
) -> Result<Vec<ZoneAccuracyRow>> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument(
            "zone accuracy of an empty prediction set".into(),
        ));
    }
    let z = partition.num_zones();
    let mut totals = vec![0usize; z];
    let mut hits = vec![0usize; z];
    for pair in pairs {
        let truth_zone = partition.zone_index(&pair.truth);
        totals[truth_zone] += 1;
        if partition.zone_index(&pair.predicted) == truth_zone {
            hits[truth_zone] += 1;
        }
    }
    Ok((0..z)
        .filter(|&i| totals[i] > 0)
        .map(|i| ZoneAccuracyRow {
            zone_index: i,
            label: partition.labels()[i].clone(),
            n: totals[i],
            accuracy: hits[i] as f64 / totals[i] as f64,
        })
        .collect())
}

/// Everything the evaluation stage reports for one prediction set.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub phi_overall: Vec<(f64, f64)>,
    pub phi_x: Vec<(f64, f64)>,
    pub phi_y: Vec<(f64, f64)>,
    pub auc_overall: f64,
    pub auc_x: f64,
    pub auc_y: f64,
    /// Zone tables keyed by partition name.
    pub zones: Vec<(String, Vec<ZoneAccuracyRow>)>,
    pub sample_count: usize,
}

/// The tolerance grid used for emitted curves: 1..=50 ft at 1-ft steps.
pub fn default_tolerance_grid() -> Vec<f64> {
    (1..=50).map(|t| t as f64).collect()
}

/// Computes the full report over the given zone partitions.
pub fn evaluate(
    pairs: &[PredictionPair],
    partitions: &[(String, ZonePartition)],
) -> Result<EvalReport> {
    let grid = default_tolerance_grid();
    let report = EvalReport {
        phi_overall: phi_curve(pairs, &grid, Axis::Both)?,
        phi_x: phi_curve(pairs, &grid, Axis::X)?,
        phi_y: phi_curve(pairs, &grid, Axis::Y)?,
        auc_overall: auc(pairs, Axis::Both)?,
        auc_x: auc(pairs, Axis::X)?,
        auc_y: auc(pairs, Axis::Y)?,
        zones: partitions
            .iter()
            .map(|(name, zp)| Ok((name.clone(), zone_accuracy(pairs, zp)?)))
            .collect::<Result<Vec<_>>>()?,
        sample_count: pairs.len(),
    };
    // Per-axis correctness dominates overall correctness, so the per-axis
    // areas can never fall below the overall area.
    debug_assert!(report.auc_x >= report.auc_overall - 1e-9);
    debug_assert!(report.auc_y >= report.auc_overall - 1e-9);
    Ok(report)
}

/// The standard pair of partitions reports are emitted for.
pub fn default_partitions() -> Vec<(String, ZonePartition)> {
    vec![
        ("zones_3".to_string(), ZonePartition::three_zone()),
        ("zones_5".to_string(), ZonePartition::five_zone()),
    ]
}

/// Computes the report and writes its files: one `tolerance_ft,fraction`
/// CSV per curve, an `axis,auc_percent` summary, and one
/// `zone,label,n,accuracy` table per partition. Identical pairs produce
/// byte-identical files.
pub fn emit_report(
    pairs: &[PredictionPair],
    partitions: &[(String, ZonePartition)],
    out_dir: &Path,
) -> Result<EvalReport> {
    let report = evaluate(pairs, partitions)?;
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let curves = [
        ("phi_overall.csv", &report.phi_overall),
        ("phi_x.csv", &report.phi_x),
        ("phi_y.csv", &report.phi_y),
    ];
    for (file, curve) in curves {
        let path = out_dir.join(file);
        let mut w = std::fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        writeln!(w, "tolerance_ft,fraction").map_err(|e| io_err(&path, e))?;
        for (t, frac) in curve.iter() {
            writeln!(w, "{t},{frac}").map_err(|e| io_err(&path, e))?;
        }
    }
    {
        let path = out_dir.join("auc.csv");
        let mut w = std::fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        writeln!(w, "axis,auc_percent").map_err(|e| io_err(&path, e))?;
        for (axis, value) in [
            (Axis::Both, report.auc_overall),
            (Axis::X, report.auc_x),
            (Axis::Y, report.auc_y),
        ] {
            writeln!(w, "{},{}", axis.name(), value).map_err(|e| io_err(&path, e))?;
        }
    }
    for (name, rows) in &report.zones {
        let path = out_dir.join(format!("{name}.csv"));
        let mut w = std::fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        writeln!(w, "zone,label,n,accuracy").map_err(|e| io_err(&path, e))?;
        for row in rows {
            writeln!(w, "{},{},{},{}", row.zone_index, row.label, row.n, row.accuracy)
                .map_err(|e| io_err(&path, e))?;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(px: f64, py: f64, tx: f64, ty: f64) -> PredictionPair {
        PredictionPair {
            clip_id: "c".into(),
            predicted: RinkPoint::new(px, py).unwrap(),
            truth: RinkPoint::new(tx, ty).unwrap(),
        }
    }

    #[test]
    fn strict_inequality_at_tolerance() {
        // 3-4-5 triangle: distance is exactly 5, so t = 5 is NOT correct.
        let p = pair(103.0, 44.0, 100.0, 40.0);
        assert!(!correct_at(&p, 5.0, Axis::Both));
        assert!(correct_at(&p, 5.0 + 1e-9, Axis::Both));
        assert!(correct_at(&pair(1.0, 1.0, 1.0, 1.0), 1e-12, Axis::Both));
    }

    #[test]
    fn axis_decomposition() {
        let p = pair(6.0, 0.0, 0.0, 0.0);
        assert!(correct_at(&p, 5.0, Axis::Y));
        assert!(!correct_at(&p, 5.0, Axis::X));
        assert!(!correct_at(&p, 5.0, Axis::Both));
    }

    #[test]
    fn phi_is_a_step_for_one_pair() {
        let pairs = vec![pair(110.0, 40.0, 100.0, 40.0)]; // error 10 ft
        let grid: Vec<f64> = (1..=50).map(|t| t as f64).collect();
        let curve = phi_curve(&pairs, &grid, Axis::Both).unwrap();
        for (t, frac) in curve {
            if t <= 10.0 {
                assert_eq!(frac, 0.0, "t = {t}");
            } else {
                assert_eq!(frac, 1.0, "t = {t}");
            }
        }
    }

    #[test]
    fn phi_all_perfect() {
        let pairs: Vec<PredictionPair> =
            (0..7).map(|i| pair(i as f64, 2.0, i as f64, 2.0)).collect();
        let curve = phi_curve(&pairs, &[1.0, 5.0, 50.0], Axis::Both).unwrap();
        assert!(curve.iter().all(|(_, f)| *f == 1.0));
    }

    #[test]
    fn phi_rejects_empty_or_bad_grid() {
        assert!(phi_curve(&[], &[1.0], Axis::Both).is_err());
        let pairs = vec![pair(0.0, 0.0, 0.0, 0.0)];
        assert!(phi_curve(&pairs, &[2.0, 1.0], Axis::Both).is_err());
    }

    #[test]
    fn auc_of_perfect_predictor_is_100() {
        let pairs: Vec<PredictionPair> =
            (0..5).map(|i| pair(40.0 + i as f64, 10.0, 40.0 + i as f64, 10.0)).collect();
        assert_eq!(auc(&pairs, Axis::Both).unwrap(), 100.0);
    }

    #[test]
    fn auc_single_pair_ten_foot_error_closed_form() {
        // Brute-force verified: phi jumps 0 -> 1 between t = 10 and t = 11,
        // the trapezoid rule collects (0.5 + 39) / 45.
        let pairs = vec![pair(110.0, 40.0, 100.0, 40.0)];
        let got = auc(&pairs, Axis::Both).unwrap();
        let want = (0.5 + 39.0) / 45.0 * 100.0;
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn auc_error_beyond_range_is_zero() {
        let pairs = vec![pair(160.0, 40.0, 100.0, 40.0)]; // 60 ft
        assert_eq!(auc(&pairs, Axis::Both).unwrap(), 0.0);
    }

    #[test]
    fn auc_five_foot_step_mode() {
        let pairs = vec![pair(110.0, 40.0, 100.0, 40.0)];
        // Grid 5,10,...,50: phi = 0 at 10, 1 at 15: trapezoid (2.5 + 35)/45.
        let got = auc_with(&pairs, 5.0, 50.0, 5.0, Axis::Both).unwrap();
        let want = (2.5 + 35.0) / 45.0 * 100.0;
        assert!((got - want).abs() < 1e-12);
        assert!(auc_with(&pairs, 5.0, 50.0, 7.0, Axis::Both).is_err());
    }

    #[test]
    fn zone_accuracy_identity_and_cross_zone() {
        let three = ZonePartition::three_zone();
        let perfect: Vec<PredictionPair> = vec![
            pair(10.0, 40.0, 10.0, 40.0),
            pair(100.0, 40.0, 100.0, 40.0),
            pair(190.0, 40.0, 190.0, 40.0),
        ];
        let rows = zone_accuracy(&perfect, &three).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.accuracy == 1.0 && r.n == 1));

        // Truth defensive, prediction offensive: a miss for the defensive
        // zone's row.
        let cross = vec![pair(180.0, 40.0, 10.0, 40.0)];
        let rows = zone_accuracy(&cross, &three).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].label, "defensive");
        assert_eq!(rows[0].accuracy, 0.0);
    }

    #[test]
    fn unpopulated_zones_are_absent() {
        let three = ZonePartition::three_zone();
        let pairs = vec![pair(10.0, 40.0, 12.0, 40.0)];
        let rows = zone_accuracy(&pairs, &three).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].zone_index, 0);
    }

    #[test]
    fn constructed_confusion_matrix_reproduced() {
        let three = ZonePartition::three_zone();
        // 300 pairs: defensive 100 (80 correct), neutral 120 (90 correct),
        // offensive 80 (80 correct).
        let mut pairs = Vec::new();
        let zone_point = |z: usize| match z {
            0 => (10.0, 40.0),
            1 => (100.0, 40.0),
            _ => (190.0, 40.0),
        };
        let mut add = |truth_zone: usize, pred_zone: usize, n: usize| {
            let (tx, ty) = zone_point(truth_zone);
            let (px, py) = zone_point(pred_zone);
            for _ in 0..n {
                pairs.push(pair(px, py, tx, ty));
            }
        };
        add(0, 0, 80);
        add(0, 2, 20);
        add(1, 1, 90);
        add(1, 0, 30);
        add(2, 2, 80);
        let rows = zone_accuracy(&pairs, &three).unwrap();
        assert_eq!(rows[0].n, 100);
        assert!((rows[0].accuracy - 0.8).abs() < 1e-12);
        assert_eq!(rows[1].n, 120);
        assert!((rows[1].accuracy - 0.75).abs() < 1e-12);
        assert_eq!(rows[2].n, 80);
        assert!((rows[2].accuracy - 1.0).abs() < 1e-12);
    }

    #[test]
    fn report_files_are_deterministic() {
        let pairs: Vec<PredictionPair> = (0..20)
            .map(|i| {
                pair(
                    5.0 + 9.0 * i as f64,
                    40.0,
                    (5.0 + 9.0 * i as f64 + 7.0).min(200.0),
                    42.0,
                )
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        let report = emit_report(&pairs, &default_partitions(), &a).unwrap();
        emit_report(&pairs, &default_partitions(), &b).unwrap();
        for file in [
            "phi_overall.csv",
            "phi_x.csv",
            "phi_y.csv",
            "auc.csv",
            "zones_3.csv",
            "zones_5.csv",
        ] {
            let fa = std::fs::read(a.join(file)).unwrap();
            let fb = std::fs::read(b.join(file)).unwrap();
            assert!(!fa.is_empty());
            assert_eq!(fa, fb, "{file}");
        }
        assert!(report.auc_x >= report.auc_overall);
        assert!(report.auc_y >= report.auc_overall);
    }
}
