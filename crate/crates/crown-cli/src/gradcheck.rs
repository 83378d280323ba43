//! `crown gradcheck` — validate every hand-written derivative against
//! finite differences, stage by stage, plus adjoint dot-product probes
//! for the reconstruction and matching layers.
//!
//! Each probe compares a directional derivative measured with central
//! differences against the same quantity assembled from the analytic
//! adjoints. Errors are reported relative to the larger of the two
//! values with a small floor, so structurally-null directions (which
//! finite differences can only see as cancellation noise) do not turn
//! into divisions by zero.

use crate::cfgfile::{pick, FileConfig};
use crate::{GradcheckArgs, Scale};
use crown_core::data::{make_sample, GenConfig};
use crown_core::dpsr::{
    dpsr_adjoint_cached, dpsr_forward, dpsr_forward_cached, DpsrConfig, IndicatorGrid,
};
use crown_core::geom::rng::Rng;
use crown_core::geom::{vec3, OrientedPointCloud, PointCloud};
use crown_core::loss::{total_loss, LossConfig};
use crown_core::metrics::{chamfer_l2, chamfer_l2_adjoint};
use crown_core::net::{CompletionModel, ModelConfig, NetOutputs, OutputCotangents};
use crown_core::{Error, Result};

/// Finite-difference stages must agree to this relative error.
pub const FD_THRESHOLD: f64 = 1e-4;
/// Adjoint dot-product stages must agree to this relative error.
pub const DOT_THRESHOLD: f64 = 1e-8;
/// Relative-error floor guarding structurally-null directions.
const REL_FLOOR: f64 = 1e-2;
/// Central-difference step on unit-length directions.
const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct StageReport {
    pub name: String,
    pub max_err: f64,
    pub threshold: f64,
}

impl StageReport {
    pub fn pass(&self) -> bool {
        self.max_err <= self.threshold
    }
}

fn rel_err(fd: f64, analytic: f64) -> f64 {
    (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(REL_FLOOR)
}

/// Plain central difference, second-order accurate.
fn central(f: &mut dyn FnMut(f64) -> Result<f64>, h: f64) -> Result<f64> {
    Ok((f(h)? - f(-h)?) / (2.0 * h))
}

/// Five-point stencil, fourth-order accurate (exact through cubics).
fn five_point(f: &mut dyn FnMut(f64) -> Result<f64>, h: f64) -> Result<f64> {
    Ok((8.0 * (f(h)? - f(-h)?) - (f(2.0 * h)? - f(-2.0 * h)?)) / (12.0 * h))
}

fn dot3(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    a.iter().zip(b).map(|(x, y)| vec3::dot(*x, *y)).sum()
}

fn random_dirs(rng: &mut Rng, n: usize) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| {
            [
                rng.uniform(-1.0, 1.0),
                rng.uniform(-1.0, 1.0),
                rng.uniform(-1.0, 1.0),
            ]
        })
        .collect()
}

/// Scales one or two direction blocks to joint unit length.
fn normalize_blocks(blocks: &mut [&mut Vec<[f64; 3]>]) {
    let norm2: f64 = blocks
        .iter()
        .map(|b| b.iter().map(|v| vec3::dot(*v, *v)).sum::<f64>())
        .sum();
    let s = 1.0 / norm2.sqrt().max(1e-300);
    for block in blocks.iter_mut() {
        for v in block.iter_mut() {
            *v = vec3::scale(*v, s);
        }
    }
}

struct Corruptor<'a> {
    stage: Option<&'a str>,
}

impl Corruptor<'_> {
    fn tweak(&self, stage: &str, analytic: f64) -> f64 {
        if self.stage == Some(stage) {
            analytic * 1.01
        } else {
            analytic
        }
    }
}

struct DpsrProbe {
    cloud: OrientedPointCloud,
    cfg: DpsrConfig,
    upstream: IndicatorGrid,
    cot_positions: Vec<[f64; 3]>,
    cot_normals: Vec<[f64; 3]>,
}

impl DpsrProbe {
    fn build(rng: &mut Rng) -> Result<DpsrProbe> {
        let n = 48;
        let cfg = DpsrConfig { resolution: 16, sigma: 2.0 };
        let points: Vec<[f64; 3]> = (0..n)
            .map(|_| vec3::add([0.5; 3], vec3::scale(rng.unit_vector(), 0.3)))
            .collect();
        let normals: Vec<[f64; 3]> = (0..n).map(|_| rng.unit_vector()).collect();
        let cloud = OrientedPointCloud::new(points, normals)?;
        let r = cfg.resolution;
        let data: Vec<f64> = (0..r * r * r).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let upstream = IndicatorGrid::from_data(r, data)?;
        let run = dpsr_forward_cached(&cloud, &cfg)?;
        let cot = dpsr_adjoint_cached(&run, &cloud, &cfg, &upstream)?;
        Ok(DpsrProbe {
            cloud,
            cfg,
            upstream,
            cot_positions: cot.positions,
            cot_normals: cot.normals,
        })
    }

    /// ⟨indicator(cloud + t·(dp, dn)), upstream⟩ as a function of t.
    fn scalar_at(&self, t: f64, dp: &[[f64; 3]], dn: &[[f64; 3]]) -> Result<f64> {
        let points: Vec<[f64; 3]> = self
            .cloud
            .points
            .iter()
            .zip(dp)
            .map(|(&p, &d)| vec3::add(p, vec3::scale(d, t)))
            .collect();
        let normals: Vec<[f64; 3]> = self
            .cloud
            .normals
            .iter()
            .zip(dn)
            .map(|(&n, &d)| vec3::add(n, vec3::scale(d, t)))
            .collect();
        let chi = dpsr_forward(&OrientedPointCloud::new(points, normals)?, &self.cfg)?;
        Ok(chi
            .data
            .iter()
            .zip(&self.upstream.data)
            .map(|(a, b)| a * b)
            .sum())
    }

    /// Direction with tangential normal components, so perturbed
    /// normals keep unit length to second order.
    fn direction(&self, rng: &mut Rng) -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
        let mut dp = random_dirs(rng, self.cloud.points.len());
        let mut dn: Vec<[f64; 3]> = self
            .cloud
            .normals
            .iter()
            .map(|&n| {
                let raw = [
                    rng.uniform(-1.0, 1.0),
                    rng.uniform(-1.0, 1.0),
                    rng.uniform(-1.0, 1.0),
                ];
                vec3::sub(raw, vec3::scale(n, vec3::dot(n, raw)))
            })
            .collect();
        normalize_blocks(&mut [&mut dp, &mut dn]);
        (dp, dn)
    }
}

fn dpsr_stages(rng: &mut Rng, corrupt: &Corruptor) -> Result<Vec<StageReport>> {
    let probe = DpsrProbe::build(rng)?;

    let mut fd_err: f64 = 0.0;
    for k in 0..2 {
        let (dp, dn) = probe.direction(&mut rng.fork(10 + k));
        let analytic = dot3(&probe.cot_positions, &dp) + dot3(&probe.cot_normals, &dn);
        let fd = central(&mut |t| probe.scalar_at(t, &dp, &dn), FD_STEP)?;
        fd_err = fd_err.max(rel_err(fd, corrupt.tweak("dpsr", analytic)));
    }

    // Adjoint consistency at dot-product precision. The indicator is
    // affine in the normals, so a tangential normals-only difference
    // recovers the directional derivative exactly; the position
    // dependence is piecewise polynomial, handled by the five-point
    // stencil.
    let mut dot_err: f64 = 0.0;
    {
        let (_, dn) = probe.direction(&mut rng.fork(20));
        let zeros = vec![[0.0; 3]; probe.cloud.points.len()];
        let analytic = dot3(&probe.cot_normals, &dn);
        let fd = central(&mut |t| probe.scalar_at(t, &zeros, &dn), 1e-4)?;
        dot_err = dot_err.max(rel_err(fd, corrupt.tweak("dpsr-dot", analytic)));

        let (dp, _) = probe.direction(&mut rng.fork(21));
        let analytic = dot3(&probe.cot_positions, &dp);
        let fd = five_point(&mut |t| probe.scalar_at(t, &dp, &zeros), FD_STEP)?;
        dot_err = dot_err.max(rel_err(fd, corrupt.tweak("dpsr-dot", analytic)));
    }

    Ok(vec![
        StageReport { name: "dpsr".into(), max_err: fd_err, threshold: FD_THRESHOLD },
        StageReport { name: "dpsr-dot".into(), max_err: dot_err, threshold: DOT_THRESHOLD },
    ])
}

fn chamfer_stages(rng: &mut Rng, corrupt: &Corruptor) -> Result<Vec<StageReport>> {
    let a: Vec<[f64; 3]> = (0..32)
        .map(|_| {
            [
                rng.uniform(0.1, 0.9),
                rng.uniform(0.1, 0.9),
                rng.uniform(0.1, 0.9),
            ]
        })
        .collect();
    let b: Vec<[f64; 3]> = (0..40)
        .map(|_| {
            [
                rng.uniform(0.1, 0.9),
                rng.uniform(0.1, 0.9),
                rng.uniform(0.1, 0.9),
            ]
        })
        .collect();
    let upstream = 1.3;
    let cloud_a = PointCloud::new(a.clone());
    let cloud_b = PointCloud::new(b.clone());
    let (grad_a, grad_b) = chamfer_l2_adjoint(&cloud_a, &cloud_b, upstream)?;

    let scalar = |t: f64, da: &[[f64; 3]], db: &[[f64; 3]]| -> Result<f64> {
        let at: Vec<[f64; 3]> = a
            .iter()
            .zip(da)
            .map(|(&p, &d)| vec3::add(p, vec3::scale(d, t)))
            .collect();
        let bt: Vec<[f64; 3]> = b
            .iter()
            .zip(db)
            .map(|(&p, &d)| vec3::add(p, vec3::scale(d, t)))
            .collect();
        Ok(upstream * chamfer_l2(&PointCloud::new(at), &PointCloud::new(bt))?)
    };

    let mut fd_err: f64 = 0.0;
    let mut dot_err: f64 = 0.0;
    for k in 0..2 {
        let mut fork = rng.fork(30 + k);
        let mut da = random_dirs(&mut fork, a.len());
        let mut db = random_dirs(&mut fork, b.len());
        normalize_blocks(&mut [&mut da, &mut db]);
        let analytic = dot3(&grad_a, &da) + dot3(&grad_b, &db);
        let fd = central(&mut |t| scalar(t, &da, &db), FD_STEP)?;
        fd_err = fd_err.max(rel_err(fd, corrupt.tweak("chamfer", analytic)));
        // Squared distances are piecewise quadratic, so the same
        // central difference is exact while assignments hold.
        dot_err = dot_err.max(rel_err(fd, corrupt.tweak("chamfer-dot", analytic)));
    }

    Ok(vec![
        StageReport { name: "chamfer".into(), max_err: fd_err, threshold: FD_THRESHOLD },
        StageReport { name: "chamfer-dot".into(), max_err: dot_err, threshold: DOT_THRESHOLD },
    ])
}

/// Leading tensor-name segment with block indices stripped: `enc0.ffn.w1`
/// and `enc1.attn.wq` both check as stage `enc`.
fn stage_of(name: &str) -> String {
    let seg = name.split('.').next().unwrap_or(name);
    seg.trim_end_matches(|c: char| c.is_ascii_digit()).to_string()
}

fn linear_functional(outputs: &NetOutputs, cot: &OutputCotangents) -> f64 {
    dot3(&outputs.coarse, &cot.coarse)
        + dot3(&outputs.dense, &cot.dense)
        + dot3(&outputs.oriented.points, &cot.points)
        + dot3(
            &outputs.oriented.normals,
            cot.normals.as_ref().expect("probe uses normal weights"),
        )
}

fn network_stages(
    model_cfg: &ModelConfig,
    rng: &mut Rng,
    corrupt: &Corruptor,
) -> Result<Vec<StageReport>> {
    let mut fork = rng.fork(40);
    let context = PointCloud::new(
        (0..512)
            .map(|_| {
                [
                    fork.uniform(0.25, 0.75),
                    fork.uniform(0.25, 0.75),
                    fork.uniform(0.25, 0.75),
                ]
            })
            .collect(),
    );
    let model = CompletionModel::new(model_cfg.clone(), fork.next_u64())?;
    let cot = OutputCotangents {
        coarse: random_dirs(&mut fork, model_cfg.n_coarse),
        dense: random_dirs(&mut fork, model_cfg.n_dense()),
        points: random_dirs(&mut fork, model_cfg.n_oriented()),
        normals: Some(random_dirs(&mut fork, model_cfg.n_oriented())),
    };
    let (_, cache) = model.forward_full(&context)?;
    let grads = model.backward_full(&cache, &cot)?;

    let stages: Vec<String> = {
        let mut seen = Vec::new();
        for meta in model.params.metas() {
            let s = stage_of(&meta.name);
            if !seen.contains(&s) {
                seen.push(s);
            }
        }
        seen
    };

    let base = model.params.data.clone();
    let mut scratch = CompletionModel::new(model_cfg.clone(), 0)?;
    let mut reports = Vec::new();
    for (si, stage) in stages.iter().enumerate() {
        let mut dir = vec![0.0; base.len()];
        let mut dir_rng = rng.fork(50 + si as u64);
        let mut norm2 = 0.0;
        for meta in model.params.metas() {
            if stage_of(&meta.name) == *stage {
                for slot in &mut dir[meta.offset..meta.offset + meta.len()] {
                    *slot = dir_rng.uniform(-1.0, 1.0);
                    norm2 += *slot * *slot;
                }
            }
        }
        for slot in &mut dir {
            *slot /= norm2.sqrt().max(1e-300);
        }
        let analytic: f64 = grads.data.iter().zip(&dir).map(|(g, d)| g * d).sum();
        let fd = central(
            &mut |t| {
                for (x, (b, d)) in scratch.params.data.iter_mut().zip(base.iter().zip(&dir)) {
                    *x = b + t * d;
                }
                let (outputs, _) = scratch.forward_full(&context)?;
                Ok(linear_functional(&outputs, &cot))
            },
            FD_STEP,
        )?;
        reports.push(StageReport {
            name: stage.clone(),
            max_err: rel_err(fd, corrupt.tweak(stage, analytic)),
            threshold: FD_THRESHOLD,
        });
    }
    Ok(reports)
}

fn loss_stage(
    model_cfg: &ModelConfig,
    rng: &mut Rng,
    corrupt: &Corruptor,
) -> Result<StageReport> {
    let mut fork = rng.fork(90);
    let gen_cfg = GenConfig { grid_resolution: 16, ..GenConfig::default() };
    let sample = make_sample(&gen_cfg, &mut fork)?;
    let dpsr_cfg = DpsrConfig { resolution: 16, sigma: 2.0 };
    let loss_cfg = LossConfig::default();

    let model = CompletionModel::new(model_cfg.clone(), fork.next_u64())?;
    let (outputs, cache) = model.forward_full(&sample.context)?;
    let (_, cot) = total_loss(&outputs, &sample, &dpsr_cfg, &loss_cfg)?;
    let grads = model.backward_full(&cache, &cot)?;

    let mut dir: Vec<f64> = (0..grads.data.len())
        .map(|_| fork.uniform(-1.0, 1.0))
        .collect();
    let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt().max(1e-300);
    for d in &mut dir {
        *d /= norm;
    }
    let analytic: f64 = grads.data.iter().zip(&dir).map(|(g, d)| g * d).sum();

    let base = model.params.data.clone();
    let mut scratch = CompletionModel::new(model_cfg.clone(), 0)?;
    let fd = central(
        &mut |t| {
            for (x, (b, d)) in scratch.params.data.iter_mut().zip(base.iter().zip(&dir)) {
                *x = b + t * d;
            }
            let (outputs, _) = scratch.forward_full(&sample.context)?;
            Ok(total_loss(&outputs, &sample, &dpsr_cfg, &loss_cfg)?.0.total)
        },
        FD_STEP,
    )?;
    Ok(StageReport {
        name: "loss".into(),
        max_err: rel_err(fd, corrupt.tweak("loss", analytic)),
        threshold: FD_THRESHOLD,
    })
}

/// Runs the whole suite deterministically for one seed.
pub fn run_gradcheck(
    scale: Scale,
    seed: u64,
    corrupt_stage: Option<&str>,
) -> Result<Vec<StageReport>> {
    let model_cfg = match scale {
        Scale::Tiny => ModelConfig::tiny(),
        Scale::Default => ModelConfig::default(),
    };
    let corrupt = Corruptor { stage: corrupt_stage };
    let mut rng = Rng::new(seed);
    let mut reports = dpsr_stages(&mut rng, &corrupt)?;
    reports.extend(chamfer_stages(&mut rng.fork(2), &corrupt)?);
    reports.extend(network_stages(&model_cfg, &mut rng.fork(3), &corrupt)?);
    reports.push(loss_stage(&model_cfg, &mut rng.fork(4), &corrupt)?);
    if let Some(target) = corrupt_stage {
        if !reports.iter().any(|r| r.name == target) {
            return Err(Error::invalid(format!("no such stage `{target}`")));
        }
    }
    Ok(reports)
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<()> {
    let mut file = FileConfig::load(args.config.as_deref())?;
    let scale = pick(args.scale, file.take("scale")?, Scale::Tiny);
    let seed = pick(args.seed, file.take("seed")?, 7);
    file.finish()?;

    let reports = run_gradcheck(scale, seed, args.corrupt_stage.as_deref())?;
    for r in &reports {
        println!(
            "stage {:<12} max rel err {:.3e}  [{}]",
            r.name,
            r.max_err,
            if r.pass() { "pass" } else { "FAIL" }
        );
    }
    let failing: Vec<&str> = reports
        .iter()
        .filter(|r| !r.pass())
        .map(|r| r.name.as_str())
        .collect();
    if failing.is_empty() {
        println!("all gradient checks passed");
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "gradient checks failed in stage(s): {}",
            failing.join(", ")
        )))
    }
}
