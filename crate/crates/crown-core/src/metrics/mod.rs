//! Point-set and grid similarity metrics, with exact nearest-neighbor
//! matching and a hand-written derivative for the squared variant.
//!
//! Conventions (all symmetric in the two clouds where noted):
//! - `chamfer_l2(a, b)`: mean **squared** Euclidean nearest distance
//!   from `a` to `b` plus the same from `b` to `a` (no ½ factor):
//!   two unit-separated singletons score 2.0 exactly.
//! - `chamfer_l1(a, b)`: half the sum of mean **Euclidean** (not
//!   per-axis) nearest distances in both directions: the same pair
//!   scores 1.0.
//! - `f_score(pred, gt, tau)`: harmonic mean of precision (fraction of
//!   predicted points within `tau` of the reference, inclusive) and
//!   recall (vice versa); 0 when both are 0.
//! - `grid_mse`: mean squared difference over co-resolved grids.

mod kdtree;

pub use kdtree::{brute_force_nearest, KdTree3};

use crate::dpsr::IndicatorGrid;
use crate::geom::PointCloud;
use crate::{Error, Result};
use rayon::prelude::*;

fn validate_pair(a: &PointCloud, b: &PointCloud) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("chamfer distance of an empty cloud"));
    }
    a.validate()?;
    b.validate()?;
    Ok(())
}

/// Nearest squared distances and matched indices from each point of `from`
/// into `into`.
fn nearest_all(from: &[[f64; 3]], into: &[[f64; 3]]) -> (Vec<usize>, Vec<f64>) {
    let tree = KdTree3::build(into);
    let pairs: Vec<(usize, f64)> = from.par_iter().map(|&p| tree.nearest(p)).collect();
    let mut idx = Vec::with_capacity(pairs.len());
    let mut d2 = Vec::with_capacity(pairs.len());
    for (i, d) in pairs {
        idx.push(i);
        d2.push(d);
    }
    (idx, d2)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Squared-distance chamfer: `mean_a min‖a−b‖² + mean_b min‖b−a‖²`.
pub fn chamfer_l2(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    Ok(chamfer_l2_with_matches(a, b)?.0)
}

/// Nearest-neighbor assignments underlying the chamfer terms.
#[derive(Debug, Clone)]
pub struct ChamferMatches {
    /// For each point of `a`, the index of its nearest point in `b`.
    pub a_to_b: Vec<usize>,
    /// For each point of `b`, the index of its nearest point in `a`.
    pub b_to_a: Vec<usize>,
}

pub fn chamfer_l2_with_matches(
    a: &PointCloud,
    b: &PointCloud,
) -> Result<(f64, ChamferMatches)> {
    validate_pair(a, b)?;
    let (a_to_b, d2_ab) = nearest_all(&a.points, &b.points);
    let (b_to_a, d2_ba) = nearest_all(&b.points, &a.points);
    Ok((
        mean(&d2_ab) + mean(&d2_ba),
        ChamferMatches { a_to_b, b_to_a },
    ))
}

/// Euclidean-distance chamfer: `½(mean_a min‖a−b‖ + mean_b min‖b−a‖)`.
pub fn chamfer_l1(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    validate_pair(a, b)?;
    let (_, d2_ab) = nearest_all(&a.points, &b.points);
    let (_, d2_ba) = nearest_all(&b.points, &a.points);
    let m_ab = d2_ab.iter().map(|d| d.sqrt()).sum::<f64>() / d2_ab.len() as f64;
    let m_ba = d2_ba.iter().map(|d| d.sqrt()).sum::<f64>() / d2_ba.len() as f64;
    Ok(0.5 * (m_ab + m_ba))
}

/// Gradient of `upstream · chamfer_l2(a, b)` with respect to both
/// clouds. Each match contributes `2(x − y)/n` to its own side and the
/// negation to the matched point; ties follow the lowest-index rule of
/// the forward pass, making this an exact subgradient of the computed
/// value.
pub fn chamfer_l2_adjoint(
    a: &PointCloud,
    b: &PointCloud,
    upstream: f64,
) -> Result<(Vec<[f64; 3]>, Vec<[f64; 3]>)> {
    let (_, matches) = chamfer_l2_with_matches(a, b)?;
    let mut grad_a = vec![[0.0; 3]; a.len()];
    let mut grad_b = vec![[0.0; 3]; b.len()];

    let ca = 2.0 * upstream / a.len() as f64;
    for (i, &j) in matches.a_to_b.iter().enumerate() {
        let (p, q) = (a.points[i], b.points[j]);
        for d in 0..3 {
            let g = ca * (p[d] - q[d]);
            grad_a[i][d] += g;
            grad_b[j][d] -= g;
        }
    }
    let cb = 2.0 * upstream / b.len() as f64;
    for (j, &i) in matches.b_to_a.iter().enumerate() {
        let (q, p) = (b.points[j], a.points[i]);
        for d in 0..3 {
            let g = cb * (q[d] - p[d]);
            grad_b[j][d] += g;
            grad_a[i][d] -= g;
        }
    }
    Ok((grad_a, grad_b))
}

/// F-score at threshold `tau` (inclusive) between a predicted and a
/// reference cloud.
pub fn f_score(pred: &PointCloud, gt: &PointCloud, tau: f64) -> Result<f64> {
    if !tau.is_finite() || tau <= 0.0 {
        return Err(Error::invalid(format!(
            "f-score threshold {tau} must be finite and positive"
        )));
    }
    validate_pair(pred, gt)?;
    let t2 = tau * tau;
    let (_, d2_pg) = nearest_all(&pred.points, &gt.points);
    let (_, d2_gp) = nearest_all(&gt.points, &pred.points);
    let precision = d2_pg.iter().filter(|&&d| d <= t2).count() as f64 / d2_pg.len() as f64;
    let recall = d2_gp.iter().filter(|&&d| d <= t2).count() as f64 / d2_gp.len() as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Mean squared difference between two grids of equal resolution.
pub fn grid_mse(a: &IndicatorGrid, b: &IndicatorGrid) -> Result<f64> {
    if a.resolution() != b.resolution() {
        return Err(Error::invalid(format!(
            "grid resolutions differ: {} vs {}",
            a.resolution(),
            b.resolution()
        )));
    }
    let n = a.data.len() as f64;
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
}

/// One row of evaluation metrics. `grid_mse` is absent for evaluations
/// that never build a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub cd_l1: f64,
    pub cd_l2: f64,
    pub f_score: f64,
    pub grid_mse: Option<f64>,
    /// Threshold used for `f_score`.
    pub tau: f64,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "cd_l1,cd_l2,f_score,grid_mse,tau";

    pub fn to_csv_row(&self) -> String {
        let mse = self
            .grid_mse
            .map(|v| format!("{v:.9e}"))
            .unwrap_or_default();
        format!(
            "{:.9e},{:.9e},{:.6},{},{}",
            self.cd_l1, self.cd_l2, self.f_score, mse, self.tau
        )
    }

    pub fn to_kv(&self) -> String {
        let mut s = format!(
            "cd_l1 = {:.9e}\ncd_l2 = {:.9e}\nf_score = {:.6} (tau = {})\n",
            self.cd_l1, self.cd_l2, self.f_score, self.tau
        );
        if let Some(m) = self.grid_mse {
            s.push_str(&format!("grid_mse = {m:.9e}\n"));
        }
        s
    }
}

/// Computes all point metrics between two clouds (grid term optional).
pub fn evaluate_clouds(
    pred: &PointCloud,
    gt: &PointCloud,
    tau: f64,
    grids: Option<(&IndicatorGrid, &IndicatorGrid)>,
) -> Result<MetricReport> {
    Ok(MetricReport {
        cd_l1: chamfer_l1(pred, gt)?,
        cd_l2: chamfer_l2(pred, gt)?,
        f_score: f_score(pred, gt, tau)?,
        grid_mse: match grids {
            Some((a, b)) => Some(grid_mse(a, b)?),
            None => None,
        },
        tau,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::rng::Rng;

    fn cloud(points: Vec<[f64; 3]>) -> PointCloud {
        PointCloud::new(points)
    }

    fn random_cloud(n: usize, rng: &mut Rng) -> PointCloud {
        cloud(
            (0..n)
                .map(|_| {
                    [
                        rng.uniform(-1.0, 1.0),
                        rng.uniform(-1.0, 1.0),
                        rng.uniform(-1.0, 1.0),
                    ]
                })
                .collect(),
        )
    }

    /// Independent quadratic-time references.
    mod brute {
        use super::super::PointCloud;

        fn min_d2(p: [f64; 3], cloud: &PointCloud) -> f64 {
            cloud
                .points
                .iter()
                .map(|q| {
                    (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)
                })
                .fold(f64::INFINITY, f64::min)
        }

        pub fn chamfer_l2(a: &PointCloud, b: &PointCloud) -> f64 {
            let t1 = a.points.iter().map(|&p| min_d2(p, b)).sum::<f64>() / a.len() as f64;
            let t2 = b.points.iter().map(|&q| min_d2(q, a)).sum::<f64>() / b.len() as f64;
            t1 + t2
        }

        pub fn chamfer_l1(a: &PointCloud, b: &PointCloud) -> f64 {
            let t1 =
                a.points.iter().map(|&p| min_d2(p, b).sqrt()).sum::<f64>() / a.len() as f64;
            let t2 =
                b.points.iter().map(|&q| min_d2(q, a).sqrt()).sum::<f64>() / b.len() as f64;
            0.5 * (t1 + t2)
        }

        pub fn f_score(pred: &PointCloud, gt: &PointCloud, tau: f64) -> f64 {
            let p = pred
                .points
                .iter()
                .filter(|&&x| min_d2(x, gt).sqrt() <= tau)
                .count() as f64
                / pred.len() as f64;
            let r = gt
                .points
                .iter()
                .filter(|&&x| min_d2(x, pred).sqrt() <= tau)
                .count() as f64
                / gt.len() as f64;
            if p + r == 0.0 {
                0.0
            } else {
                2.0 * p * r / (p + r)
            }
        }
    }

    #[test]
    fn unit_separation_scores_exactly() {
        let a = cloud(vec![[0.0, 0.0, 0.0]]);
        let b = cloud(vec![[1.0, 0.0, 0.0]]);
        assert_eq!(chamfer_l2(&a, &b).unwrap(), 2.0);
        assert_eq!(chamfer_l1(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn chamfer_l1_uses_euclidean_not_per_axis_distance() {
        // Witness pair: nearest offset (3,4,0). Euclidean reading gives
        // ½(5+5) = 5; a per-axis (Manhattan) reading would give 7.
        let a = cloud(vec![[0.0, 0.0, 0.0]]);
        let b = cloud(vec![[3.0, 4.0, 0.0]]);
        let got = chamfer_l1(&a, &b).unwrap();
        assert!((got - 5.0).abs() < 1e-12, "got {got}");
        assert!((got - 7.0).abs() > 1.0, "must not be the per-axis reading");
    }

    #[test]
    fn identical_clouds_score_zero() {
        let mut rng = Rng::new(10);
        for _ in 0..5 {
            let a = random_cloud(64, &mut rng);
            assert_eq!(chamfer_l2(&a, &a).unwrap(), 0.0);
            assert_eq!(chamfer_l1(&a, &a).unwrap(), 0.0);
            assert_eq!(f_score(&a, &a, 0.1).unwrap(), 1.0);
        }
    }

    #[test]
    fn matches_brute_force_oracles() {
        let mut rng = Rng::new(12);
        for _ in 0..10 {
            let a = random_cloud(1 + rng.below(100), &mut rng);
            let b = random_cloud(1 + rng.below(100), &mut rng);
            assert_eq!(chamfer_l2(&a, &b).unwrap(), brute::chamfer_l2(&a, &b));
            assert_eq!(chamfer_l1(&a, &b).unwrap(), brute::chamfer_l1(&a, &b));
            let tau = rng.uniform(0.05, 0.8);
            assert_eq!(f_score(&a, &b, tau).unwrap(), brute::f_score(&a, &b, tau));
        }
    }

    #[test]
    fn chamfer_is_symmetric_bitwise() {
        let mut rng = Rng::new(14);
        for _ in 0..10 {
            let a = random_cloud(1 + rng.below(80), &mut rng);
            let b = random_cloud(1 + rng.below(80), &mut rng);
            assert_eq!(chamfer_l2(&a, &b).unwrap(), chamfer_l2(&b, &a).unwrap());
            assert_eq!(chamfer_l1(&a, &b).unwrap(), chamfer_l1(&b, &a).unwrap());
        }
    }

    #[test]
    fn single_pair_gradient_is_analytic() {
        // d/da [‖a−b‖² + ‖b−a‖²] at a=0, b=(1,0,0) is (−4, 0, 0).
        let a = cloud(vec![[0.0, 0.0, 0.0]]);
        let b = cloud(vec![[1.0, 0.0, 0.0]]);
        let (ga, gb) = chamfer_l2_adjoint(&a, &b, 1.0).unwrap();
        assert_eq!(ga[0], [-4.0, 0.0, 0.0]);
        assert_eq!(gb[0], [4.0, 0.0, 0.0]);

        // Upstream scaling.
        let (ga, _) = chamfer_l2_adjoint(&a, &b, 0.5).unwrap();
        assert_eq!(ga[0], [-2.0, 0.0, 0.0]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = Rng::new(16);
        let a = random_cloud(20, &mut rng);
        let b = random_cloud(25, &mut rng);
        let (ga, gb) = chamfer_l2_adjoint(&a, &b, 1.0).unwrap();

        let h = 1e-6;
        for &(side_a, i, d) in &[(true, 0usize, 0usize), (true, 7, 2), (false, 3, 1), (false, 24, 0)] {
            let eval = |delta: f64| -> f64 {
                let mut aa = a.clone();
                let mut bb = b.clone();
                if side_a {
                    aa.points[i][d] += delta;
                } else {
                    bb.points[i][d] += delta;
                }
                chamfer_l2(&aa, &bb).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let analytic = if side_a { ga[i][d] } else { gb[i][d] };
            assert!(
                (fd - analytic).abs() < 1e-6 * analytic.abs().max(1.0),
                "side_a={side_a} i={i} d={d}: fd {fd} vs {analytic}"
            );
        }
    }

    #[test]
    fn f_score_threshold_is_inclusive() {
        let a = cloud(vec![[0.0, 0.0, 0.0]]);
        let b = cloud(vec![[0.3, 0.0, 0.0]]);
        // Exactly at the default threshold counts as within.
        assert_eq!(f_score(&a, &b, 0.3).unwrap(), 1.0);
        assert_eq!(f_score(&a, &b, 0.2999).unwrap(), 0.0);
        assert!(f_score(&a, &b, 0.0).is_err());
        assert!(f_score(&a, &b, -1.0).is_err());
    }

    #[test]
    fn grid_mse_basics() {
        let mut a = IndicatorGrid::zeros(4);
        let b = IndicatorGrid::zeros(4);
        assert_eq!(grid_mse(&a, &b).unwrap(), 0.0);
        a.data[0] = 8.0;
        assert!((grid_mse(&a, &b).unwrap() - 64.0 / 64.0).abs() < 1e-15);
        let c = IndicatorGrid::zeros(8);
        assert!(grid_mse(&a, &c).is_err());
    }

    #[test]
    fn empty_clouds_are_rejected() {
        let e = cloud(vec![]);
        let a = cloud(vec![[0.0, 0.0, 0.0]]);
        assert!(chamfer_l2(&e, &a).is_err());
        assert!(chamfer_l1(&a, &e).is_err());
        assert!(f_score(&e, &a, 0.1).is_err());
    }

    #[test]
    fn csv_row_shape_matches_header() {
        let r = MetricReport {
            cd_l1: 0.1,
            cd_l2: 0.02,
            f_score: 0.9,
            grid_mse: None,
            tau: 0.3,
        };
        let header_cols = MetricReport::CSV_HEADER.split(',').count();
        assert_eq!(r.to_csv_row().split(',').count(), header_cols);
        let with_mse = MetricReport {
            grid_mse: Some(1e-4),
            ..r
        };
        assert_eq!(with_mse.to_csv_row().split(',').count(), header_cols);
    }
}
