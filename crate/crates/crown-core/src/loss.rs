//! Training objective: squared-distance Chamfer terms on the dense and
//! coarse predictions plus a grid MSE through the differentiable
//! reconstruction of the predicted oriented points.
//!
//! The grid term sees predicted positions modulo the unit cell
//! (wrapped with `rem_euclid(1)`), so points that drift outside the
//! cube early in training stay differentiable instead of erroring; the
//! wrap has unit derivative, so position cotangents pass through it
//! unchanged. The Chamfer terms use the raw coordinates.

use crate::data::ContextSample;
use crate::dpsr::{dpsr_adjoint_cached, dpsr_forward_cached, DpsrConfig, IndicatorGrid};
use crate::geom::{OrientedPointCloud, PointCloud};
use crate::metrics::{chamfer_l2, chamfer_l2_adjoint, grid_mse};
use crate::net::{NetOutputs, OutputCotangents};
use crate::{Error, Result};

/// Objective weights. `use_mse = false` drops the grid term entirely
/// (the reconstruction adjoint is never run and normals get no
/// gradient), which is the point-only ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    /// Weight of the indicator-grid MSE term.
    pub lambda_mse: f64,
    /// Weight of the coarse-point Chamfer term; 0 trains on the dense
    /// term (and grid term) alone.
    pub coarse_cd_weight: f64,
    pub use_mse: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { lambda_mse: 1.0, coarse_cd_weight: 0.5, use_mse: true }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("lambda_mse", self.lambda_mse), ("coarse_cd_weight", self.coarse_cd_weight)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

/// The three objective terms (unweighted) and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub dense_cd: f64,
    pub coarse_cd: f64,
    /// `None` when the grid term is disabled.
    pub grid_mse: Option<f64>,
    /// `dense_cd + coarse_cd_weight·coarse_cd + lambda_mse·grid_mse`.
    pub total: f64,
}

/// Maps positions into `[0,1)` per coordinate; the reconstruction grid
/// is periodic over the unit cell, and `rem_euclid` has unit derivative
/// almost everywhere so cotangents pass straight through.
pub fn wrap_unit(points: &[[f64; 3]]) -> Vec<[f64; 3]> {
    points.iter().map(|p| p.map(|c| c.rem_euclid(1.0))).collect()
}

/// Evaluates the objective on one sample and returns, along with the
/// breakdown, the cotangents of every network output needed to start
/// the backward pass.
pub fn total_loss(
    outputs: &NetOutputs,
    sample: &ContextSample,
    dpsr_cfg: &DpsrConfig,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, OutputCotangents)> {
    cfg.validate()?;
    let dense = PointCloud::new(outputs.dense.clone());
    let coarse = PointCloud::new(outputs.coarse.clone());

    let dense_cd = chamfer_l2(&dense, &sample.gt_points)?;
    let (d_dense, _) = chamfer_l2_adjoint(&dense, &sample.gt_points, 1.0)?;
    let coarse_cd = chamfer_l2(&coarse, &sample.gt_points)?;
    let (d_coarse, _) = chamfer_l2_adjoint(&coarse, &sample.gt_points, cfg.coarse_cd_weight)?;

    let mut total = dense_cd + cfg.coarse_cd_weight * coarse_cd;
    let mut mse = None;
    let (d_points, d_normals) = if cfg.use_mse {
        if sample.gt_grid.resolution() != dpsr_cfg.resolution {
            return Err(Error::invalid(format!(
                "ground-truth grid resolution {} does not match the reconstruction resolution {}",
                sample.gt_grid.resolution(),
                dpsr_cfg.resolution
            )));
        }
        let wrapped = OrientedPointCloud::new(
            wrap_unit(&outputs.oriented.points),
            outputs.oriented.normals.clone(),
        )?;
        let run = dpsr_forward_cached(&wrapped, dpsr_cfg)?;
        let value = grid_mse(&run.indicator, &sample.gt_grid)?;
        total += cfg.lambda_mse * value;
        mse = Some(value);

        // d(mse)/dχ_i = 2(χ_i − g_i)/r³, scaled by the term weight.
        let n_nodes = run.indicator.data.len() as f64;
        let upstream: Vec<f64> = run
            .indicator
            .data
            .iter()
            .zip(&sample.gt_grid.data)
            .map(|(chi, g)| cfg.lambda_mse * 2.0 * (chi - g) / n_nodes)
            .collect();
        let upstream = IndicatorGrid::from_data(dpsr_cfg.resolution, upstream)?;
        let cot = dpsr_adjoint_cached(&run, &wrapped, dpsr_cfg, &upstream)?;
        (cot.positions, Some(cot.normals))
    } else {
        (vec![[0.0; 3]; outputs.oriented.len()], None)
    };

    Ok((
        LossBreakdown { dense_cd, coarse_cd, grid_mse: mse, total },
        OutputCotangents { coarse: d_coarse, dense: d_dense, points: d_points, normals: d_normals },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_sample, GenConfig};
    use crate::geom::rng::Rng;
    use crate::geom::vec3;

    fn test_sample() -> ContextSample {
        let cfg = GenConfig { grid_resolution: 16, ..GenConfig::default() };
        make_sample(&cfg, &mut Rng::new(17)).unwrap()
    }

    fn sample_dpsr_cfg(s: &ContextSample) -> DpsrConfig {
        DpsrConfig { resolution: s.meta.grid_resolution, sigma: s.meta.dpsr_sigma }
    }

    /// Hand-built outputs; the loss only reads the four output fields.
    fn outputs_from(
        coarse: Vec<[f64; 3]>,
        dense: Vec<[f64; 3]>,
        oriented: OrientedPointCloud,
    ) -> NetOutputs {
        NetOutputs { coarse, dense, oriented, normal_fallbacks: 0 }
    }

    /// Small predicted cloud near the crown: a jittered subset of the
    /// ground truth, with normals tilted off the stored ones so the
    /// grid term has signal.
    fn generic_outputs(s: &ContextSample, n: usize) -> NetOutputs {
        let mut rng = Rng::new(99);
        let mut points = Vec::with_capacity(n);
        let mut normals = Vec::with_capacity(n);
        for _ in 0..n {
            let i = rng.below(s.gt_points.len());
            let p = s.gt_points.points[i];
            points.push([
                p[0] + rng.uniform(-5e-3, 5e-3),
                p[1] + rng.uniform(-5e-3, 5e-3),
                p[2] + rng.uniform(-5e-3, 5e-3),
            ]);
            let tilt = rng.unit_vector();
            let n0 = s.gt_normals[i];
            normals.push(
                vec3::normalized(vec3::add(n0, vec3::scale(tilt, 0.3)), 1e-12).unwrap(),
            );
        }
        let coarse = points[..n / 4].to_vec();
        let oriented = OrientedPointCloud::new(points.clone(), normals).unwrap();
        outputs_from(coarse, points, oriented)
    }

    #[test]
    fn exact_ground_truth_scores_zero() {
        let s = test_sample();
        let outputs = outputs_from(
            s.gt_points.points.clone(),
            s.gt_points.points.clone(),
            s.gt_oriented().unwrap(),
        );
        let (breakdown, cot) =
            total_loss(&outputs, &s, &sample_dpsr_cfg(&s), &LossConfig::default()).unwrap();
        assert_eq!(breakdown.dense_cd, 0.0);
        assert_eq!(breakdown.coarse_cd, 0.0);
        assert_eq!(breakdown.grid_mse, Some(0.0));
        assert_eq!(breakdown.total, 0.0);
        let flat = |vs: &[[f64; 3]]| vs.iter().flatten().all(|&g| g == 0.0);
        assert!(flat(&cot.dense) && flat(&cot.coarse) && flat(&cot.points));
        assert!(flat(&cot.normals.unwrap()));
    }

    #[test]
    fn breakdown_composes_with_the_configured_weights() {
        let s = test_sample();
        let outputs = generic_outputs(&s, 64);
        let cfg = LossConfig { lambda_mse: 0.25, coarse_cd_weight: 0.5, use_mse: true };
        let (b, _) = total_loss(&outputs, &s, &sample_dpsr_cfg(&s), &cfg).unwrap();
        assert!(b.dense_cd > 0.0 && b.coarse_cd > 0.0 && b.grid_mse.unwrap() > 0.0);
        assert_eq!(b.total, b.dense_cd + 0.5 * b.coarse_cd + 0.25 * b.grid_mse.unwrap());
    }

    #[test]
    fn disabling_the_grid_term_drops_normal_gradients() {
        let s = test_sample();
        let outputs = generic_outputs(&s, 64);
        let cfg = LossConfig { use_mse: false, ..LossConfig::default() };
        let (b, cot) = total_loss(&outputs, &s, &sample_dpsr_cfg(&s), &cfg).unwrap();
        assert_eq!(b.grid_mse, None);
        assert_eq!(b.total, b.dense_cd + 0.5 * b.coarse_cd);
        assert!(cot.normals.is_none());
        assert!(cot.points.iter().flatten().all(|&g| g == 0.0));

        // The value must not depend on normals at all.
        let mut tilted = outputs;
        for n in &mut tilted.oriented.normals {
            *n = [-n[1], n[0], n[2]];
        }
        let (b2, _) = total_loss(&tilted, &s, &sample_dpsr_cfg(&s), &cfg).unwrap();
        assert_eq!(b.total, b2.total);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let s = test_sample();
        let outputs = generic_outputs(&s, 48);
        let dpsr_cfg = sample_dpsr_cfg(&s);
        let cfg = LossConfig::default();
        let (_, cot) = total_loss(&outputs, &s, &dpsr_cfg, &cfg).unwrap();

        let value = |o: &NetOutputs| total_loss(o, &s, &dpsr_cfg, &cfg).unwrap().0.total;
        let h = 1e-6;
        // A dense point feeds the dense Chamfer term only.
        for (idx, d) in [(0usize, 0usize), (7, 1), (31, 2)] {
            let mut plus = outputs.clone();
            plus.dense[idx][d] += h;
            let mut minus = outputs.clone();
            minus.dense[idx][d] -= h;
            let fd = (value(&plus) - value(&minus)) / (2.0 * h);
            let an = cot.dense[idx][d];
            assert!(
                (fd - an).abs() <= 1e-5 * fd.abs().max(an.abs()).max(1e-3),
                "dense[{idx}][{d}]: fd {fd} vs analytic {an}"
            );
        }
        // A coarse point feeds the weighted coarse Chamfer term.
        for (idx, d) in [(2usize, 0usize), (9, 2)] {
            let mut plus = outputs.clone();
            plus.coarse[idx][d] += h;
            let mut minus = outputs.clone();
            minus.coarse[idx][d] -= h;
            let fd = (value(&plus) - value(&minus)) / (2.0 * h);
            let an = cot.coarse[idx][d];
            assert!(
                (fd - an).abs() <= 1e-5 * fd.abs().max(an.abs()).max(1e-3),
                "coarse[{idx}][{d}]: fd {fd} vs analytic {an}"
            );
        }
        // Oriented points and normals feed the grid term.
        for (idx, d) in [(3usize, 1usize), (20, 0)] {
            let mut plus = outputs.clone();
            plus.oriented.points[idx][d] += h;
            let mut minus = outputs.clone();
            minus.oriented.points[idx][d] -= h;
            let fd = (value(&plus) - value(&minus)) / (2.0 * h);
            let an = cot.points[idx][d];
            assert!(
                (fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-6),
                "oriented point [{idx}][{d}]: fd {fd} vs analytic {an}"
            );
        }
        let normals = cot.normals.as_ref().unwrap();
        for (idx, d) in [(5usize, 2usize), (40, 1)] {
            // Normal perturbations must stay (nearly) unit length for the
            // forward to accept them; renormalize inside the probe and
            // compare against the projected analytic gradient.
            let probe = |eps: f64| {
                let mut o = outputs.clone();
                let mut n = o.oriented.normals[idx];
                n[d] += eps;
                o.oriented.normals[idx] = vec3::normalized(n, 1e-12).unwrap();
                value(&o)
            };
            let fd = (probe(h) - probe(-h)) / (2.0 * h);
            // Analytic gradient of value∘normalize at the unit normal:
            // (g − n(n·g)) for upstream g.
            let n = outputs.oriented.normals[idx];
            let g = normals[idx];
            let proj = vec3::sub(g, vec3::scale(n, vec3::dot(n, g)));
            let an = proj[d];
            assert!(
                (fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-6),
                "normal [{idx}][{d}]: fd {fd} vs analytic {an}"
            );
        }
    }

    #[test]
    fn loss_is_invariant_under_output_permutations() {
        let s = test_sample();
        let outputs = generic_outputs(&s, 64);
        let dpsr_cfg = sample_dpsr_cfg(&s);
        let (b, _) = total_loss(&outputs, &s, &dpsr_cfg, &LossConfig::default()).unwrap();
        assert!(b.total >= 0.0);

        let mut shuffled = outputs.clone();
        let mut rng = Rng::new(5);
        let mut order: Vec<usize> = (0..64).collect();
        rng.shuffle(&mut order);
        shuffled.dense = order.iter().map(|&i| outputs.dense[i]).collect();
        shuffled.oriented = OrientedPointCloud::new(
            order.iter().map(|&i| outputs.oriented.points[i]).collect(),
            order.iter().map(|&i| outputs.oriented.normals[i]).collect(),
        )
        .unwrap();
        let mut coarse_order: Vec<usize> = (0..outputs.coarse.len()).collect();
        rng.shuffle(&mut coarse_order);
        shuffled.coarse = coarse_order.iter().map(|&i| outputs.coarse[i]).collect();
        let (b2, _) = total_loss(&shuffled, &s, &dpsr_cfg, &LossConfig::default()).unwrap();
        assert!(
            (b.total - b2.total).abs() <= 1e-12 * b.total.max(1.0),
            "permutation moved the loss: {} vs {}",
            b.total,
            b2.total
        );
    }

    #[test]
    fn positions_outside_the_cube_wrap_into_the_grid_term() {
        let s = test_sample();
        let mut outputs = generic_outputs(&s, 32);
        outputs.oriented.points[0][0] += 1.0; // one full period to the right
        outputs.oriented.points[1][2] = -0.25;
        let (b, _) =
            total_loss(&outputs, &s, &sample_dpsr_cfg(&s), &LossConfig::default()).unwrap();
        assert!(b.total.is_finite());

        // Shifting by exactly one period leaves the grid term unchanged.
        let mut unshifted = outputs.clone();
        unshifted.oriented.points[0][0] -= 1.0;
        let (b2, _) =
            total_loss(&unshifted, &s, &sample_dpsr_cfg(&s), &LossConfig::default()).unwrap();
        assert!((b.grid_mse.unwrap() - b2.grid_mse.unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn mismatched_grid_resolution_is_rejected() {
        let s = test_sample();
        let outputs = generic_outputs(&s, 16);
        let wrong = DpsrConfig { resolution: 32, sigma: s.meta.dpsr_sigma };
        assert!(total_loss(&outputs, &s, &wrong, &LossConfig::default()).is_err());
        // Without the grid term the resolution is never consulted.
        let cfg = LossConfig { use_mse: false, ..LossConfig::default() };
        assert!(total_loss(&outputs, &s, &wrong, &cfg).is_ok());
    }

    #[test]
    fn weight_validation_rejects_negatives() {
        assert!(LossConfig { lambda_mse: -1.0, ..LossConfig::default() }.validate().is_err());
        assert!(LossConfig { coarse_cd_weight: f64::NAN, ..LossConfig::default() }
            .validate()
            .is_err());
    }
}
