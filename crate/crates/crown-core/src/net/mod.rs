//! Point-completion network with hand-written adjoints.
//!
//! The model maps a context point cloud to a predicted crown in three
//! granularities: `n_coarse` coarse points, a folded dense cloud
//! (`fold_grid²` points per coarse point), and an oriented cloud
//! (`densify_k` offset/normal pairs per dense point). Five stages:
//!
//! 1. **group_points** — farthest-point centers, k-nearest edge
//!    features through a shared MLP, max-pool per center.
//! 2. **encode** — pre-norm blocks of multi-head self-attention plus a
//!    geometry branch (edge convolution over the kNN graph of group
//!    centers) and a feed-forward, all with residual connections.
//! 3. **decode** — masked max-pool of encoder features seeds coarse
//!    query points; blocks of self-attention, cross-attention to the
//!    encoder memory (optionally masked), and feed-forward refine them.
//! 4. **fold** — two folding MLPs deform a canonical 2D lattice around
//!    each coarse point into a dense patch.
//! 5. **densify** — an MLP emits `densify_k` offset + raw-normal pairs
//!    per dense point; raw normals are normalized to unit length.
//!
//! Every stage caches its intermediates so `backward_full` can produce
//! exact reverse-mode gradients for all parameters given cotangents of
//! the four outputs (coarse, dense, oriented points, normals).
//!
//! Determinism: grouping draws its farthest-point start from a stream
//! with a fixed internal seed, so the whole forward pass is a pure
//! function of (context, parameters).

mod layers;
mod params;

pub use params::{Grads, Params, TensorId};

use crate::geom::rng::Rng;
use crate::geom::sampling::fps_subsample;
use crate::geom::{vec3, OrientedPointCloud, PointCloud};
use crate::{Error, Result};
use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};
use layers::{
    attention_bwd, attention_fwd, blockmax_bwd, blockmax_fwd, layernorm_bwd, layernorm_fwd,
    linear, linear_bwd, mlp2_bwd, mlp2_fwd, mlp3_bwd, mlp3_fwd, rowmax_bwd, rowmax_fwd, tanh,
    tanh_bwd, AttnCache, AttnParams, LnCache, Mlp2, Mlp2Cache, Mlp3, Mlp3Cache,
};
use ndarray::Array2;
use std::path::Path;

/// Coarse queries start from this offset so untrained points sit at the
/// domain center rather than the origin corner.
const COARSE_CENTER: f64 = 0.5;
/// Output scale of the decoder refinement head.
const REFINE_SCALE: f64 = 0.1;
/// Output scale of the second folding MLP.
const FOLD_SCALE: f64 = 0.1;
/// Output scale of the densifier offsets.
const DENSIFY_OFFSET_SCALE: f64 = 0.1;
/// Half-width of the canonical folding lattice.
const FOLD_LATTICE_HALF: f64 = 0.05;
/// Raw normals shorter than this fall back to +z.
const NORMAL_FLOOR: f64 = 1e-8;
/// Grouping draws its farthest-point start from this fixed stream, so
/// the forward pass is a pure function of the context.
const GROUPING_SEED: u64 = 0x47524f5550u64;

/// Architecture hyper-parameters. `fold_grid` is the lattice side
/// length, so each coarse point folds into `fold_grid²` dense points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub n_groups: usize,
    pub knn_k: usize,
    pub feat_dim: usize,
    pub n_heads: usize,
    pub n_enc_blocks: usize,
    pub n_dec_blocks: usize,
    pub n_coarse: usize,
    pub fold_grid: usize,
    pub densify_k: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_groups: 64,
            knn_k: 8,
            feat_dim: 64,
            n_heads: 2,
            n_enc_blocks: 2,
            n_dec_blocks: 2,
            n_coarse: 64,
            fold_grid: 4,
            densify_k: 4,
        }
    }
}

impl ModelConfig {
    /// Small configuration for gradient checks and fast tests.
    pub fn tiny() -> Self {
        ModelConfig {
            n_groups: 8,
            knn_k: 4,
            feat_dim: 16,
            n_heads: 2,
            n_enc_blocks: 1,
            n_dec_blocks: 1,
            n_coarse: 8,
            fold_grid: 2,
            densify_k: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_groups", self.n_groups),
            ("knn_k", self.knn_k),
            ("feat_dim", self.feat_dim),
            ("n_heads", self.n_heads),
            ("n_enc_blocks", self.n_enc_blocks),
            ("n_dec_blocks", self.n_dec_blocks),
            ("n_coarse", self.n_coarse),
            ("fold_grid", self.fold_grid),
            ("densify_k", self.densify_k),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::invalid(format!("model config: {name} must be >= 1")));
            }
        }
        if self.feat_dim % self.n_heads != 0 {
            return Err(Error::invalid(format!(
                "model config: feat_dim {} not divisible by n_heads {}",
                self.feat_dim, self.n_heads
            )));
        }
        Ok(())
    }

    /// Dense points produced by the folding stage.
    pub fn n_dense(&self) -> usize {
        self.n_coarse * self.fold_grid * self.fold_grid
    }

    /// Oriented points produced by the densifier.
    pub fn n_oriented(&self) -> usize {
        self.n_dense() * self.densify_k
    }

    pub(crate) fn fields_u32(&self) -> Result<[u32; 9]> {
        let fields = [
            self.n_groups,
            self.knn_k,
            self.feat_dim,
            self.n_heads,
            self.n_enc_blocks,
            self.n_dec_blocks,
            self.n_coarse,
            self.fold_grid,
            self.densify_k,
        ];
        let mut out = [0u32; 9];
        for (slot, v) in out.iter_mut().zip(fields) {
            *slot = u32::try_from(v)
                .map_err(|_| Error::invalid(format!("model config field {v} exceeds u32")))?;
        }
        Ok(out)
    }

    pub(crate) fn from_fields_u32(f: [u32; 9]) -> Self {
        ModelConfig {
            n_groups: f[0] as usize,
            knn_k: f[1] as usize,
            feat_dim: f[2] as usize,
            n_heads: f[3] as usize,
            n_enc_blocks: f[4] as usize,
            n_dec_blocks: f[5] as usize,
            n_coarse: f[6] as usize,
            fold_grid: f[7] as usize,
            densify_k: f[8] as usize,
        }
    }
}

/// Per-group feature vectors together with their 3D centers.
#[derive(Debug, Clone)]
pub struct Features {
    /// `(n_groups, feat_dim)`.
    pub feats: Array2<f64>,
    pub centers: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Copy)]
struct EncBlock {
    ln1_g: TensorId,
    ln1_b: TensorId,
    attn: AttnParams,
    geo_w1: TensorId,
    geo_b1: TensorId,
    geo_w2: TensorId,
    geo_b2: TensorId,
    ln2_g: TensorId,
    ln2_b: TensorId,
    ffn: Mlp2,
}

#[derive(Debug, Clone, Copy)]
struct DecBlock {
    ln1_g: TensorId,
    ln1_b: TensorId,
    selfattn: AttnParams,
    ln2_g: TensorId,
    ln2_b: TensorId,
    lnm_g: TensorId,
    lnm_b: TensorId,
    cross: AttnParams,
    ln3_g: TensorId,
    ln3_b: TensorId,
    ffn: Mlp2,
}

struct Arch {
    group_mlp: Mlp2,
    enc: Vec<EncBlock>,
    coarse_mlp: Mlp2,
    query_mlp: Mlp2,
    dec: Vec<DecBlock>,
    refine_mlp: Mlp2,
    fold1: Mlp3,
    fold2: Mlp3,
    densify_mlp: Mlp3,
}

/// The completion network: a flat parameter store plus tensor handles
/// for every layer, and the constant canonical folding lattice.
pub struct CompletionModel {
    config: ModelConfig,
    pub params: Params,
    arch: Arch,
    fold_lattice: Vec<[f64; 2]>,
}

fn fold_lattice(side: usize) -> Vec<[f64; 2]> {
    let coord = |g: usize| {
        if side == 1 {
            0.0
        } else {
            -FOLD_LATTICE_HALF + 2.0 * FOLD_LATTICE_HALF * g as f64 / (side - 1) as f64
        }
    };
    let mut out = Vec::with_capacity(side * side);
    for gy in 0..side {
        for gx in 0..side {
            out.push([coord(gx), coord(gy)]);
        }
    }
    out
}

/// Indices of the `k` nearest points to `query`, excluding index
/// `exclude`, ordered by (distance, index) for determinism.
fn k_nearest_excluding(points: &[[f64; 3]], query: [f64; 3], exclude: usize, k: usize) -> Vec<usize> {
    let mut cand: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != exclude)
        .map(|(i, &p)| (vec3::dist_sq(p, query), i))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    debug_assert!(k <= cand.len());
    if cand.len() > k {
        cand.select_nth_unstable_by(k - 1, cmp);
        cand.truncate(k);
    }
    cand.sort_unstable_by(cmp);
    cand.into_iter().map(|(_, i)| i).collect()
}

fn rows_to_vec3(a: &Array2<f64>) -> Vec<[f64; 3]> {
    debug_assert_eq!(a.ncols(), 3);
    a.rows()
        .into_iter()
        .map(|r| [r[0], r[1], r[2]])
        .collect()
}

fn vec3_to_rows(v: &[[f64; 3]]) -> Array2<f64> {
    let mut a = Array2::zeros((v.len(), 3));
    for (mut row, p) in a.rows_mut().into_iter().zip(v) {
        row[0] = p[0];
        row[1] = p[1];
        row[2] = p[2];
    }
    a
}

pub struct GroupCache {
    mlp: Mlp2Cache,
    argmax: Vec<usize>,
    n_rows: usize,
}

struct GeoCache {
    rows: Array2<f64>,
    act: Array2<f64>,
    pooled: Array2<f64>,
    argmax: Vec<usize>,
}

struct EncBlockCache {
    ln1: LnCache,
    attn: AttnCache,
    geo: Option<GeoCache>,
    ln2: LnCache,
    ffn: Mlp2Cache,
}

pub struct EncodeCache {
    blocks: Vec<EncBlockCache>,
    nbrs: Vec<usize>,
    k_geo: usize,
}

struct DecBlockCache {
    ln1: LnCache,
    selfattn: AttnCache,
    ln2: LnCache,
    lnm: LnCache,
    cross: AttnCache,
    ln3: LnCache,
    ffn: Mlp2Cache,
}

pub struct DecodeCache {
    n_mem: usize,
    pool_argmax: Vec<usize>,
    coarse_mlp: Mlp2Cache,
    query_mlp: Mlp2Cache,
    blocks: Vec<DecBlockCache>,
    refine_mlp: Mlp2Cache,
}

pub struct FoldCache {
    f1: Mlp3Cache,
    f2: Mlp3Cache,
}

pub struct DensifyCache {
    mlp: Mlp3Cache,
    raw_norm: Vec<f64>,
    unit: Vec<[f64; 3]>,
    fallback: Vec<bool>,
}

/// Everything `backward_full` needs from a forward pass.
pub struct ForwardCache {
    pub group: GroupCache,
    pub encode: EncodeCache,
    pub decode: DecodeCache,
    pub fold: FoldCache,
    pub densify: DensifyCache,
}

/// All three output granularities of one forward pass.
#[derive(Debug, Clone)]
pub struct NetOutputs {
    pub coarse: Vec<[f64; 3]>,
    pub dense: Vec<[f64; 3]>,
    pub oriented: OrientedPointCloud,
    /// Count of raw normals below the length floor, replaced by +z.
    pub normal_fallbacks: usize,
}

/// Cotangents of the four network outputs; `normals` is `None` when
/// the loss carries no normal term.
#[derive(Debug, Clone)]
pub struct OutputCotangents {
    pub coarse: Vec<[f64; 3]>,
    pub dense: Vec<[f64; 3]>,
    pub points: Vec<[f64; 3]>,
    pub normals: Option<Vec<[f64; 3]>>,
}

impl OutputCotangents {
    /// All-zero cotangents shaped for `cfg`.
    pub fn zeros(cfg: &ModelConfig, with_normals: bool) -> Self {
        OutputCotangents {
            coarse: vec![[0.0; 3]; cfg.n_coarse],
            dense: vec![[0.0; 3]; cfg.n_dense()],
            points: vec![[0.0; 3]; cfg.n_oriented()],
            normals: with_normals.then(|| vec![[0.0; 3]; cfg.n_oriented()]),
        }
    }
}

impl CompletionModel {
    /// Builds a model with uniform fan-in-scaled weights drawn from a
    /// stream seeded by `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let f = config.feat_dim;
        let mut p = Params::new();
        let mut rng = Rng::new(seed);

        let group_mlp = Mlp2::alloc(&mut p, "group", 6, f, f, &mut rng);

        let mut enc = Vec::with_capacity(config.n_enc_blocks);
        for b in 0..config.n_enc_blocks {
            let pre = format!("enc{b}");
            enc.push(EncBlock {
                ln1_g: p.alloc_gain(&format!("{pre}.ln1.gain"), f),
                ln1_b: p.alloc_bias(&format!("{pre}.ln1.bias"), f),
                attn: AttnParams::alloc(&mut p, &format!("{pre}.attn"), f, &mut rng),
                geo_w1: p.alloc_weight(&format!("{pre}.geo.w1"), f + 3, f, &mut rng),
                geo_b1: p.alloc_bias(&format!("{pre}.geo.b1"), f),
                geo_w2: p.alloc_weight(&format!("{pre}.geo.w2"), f, f, &mut rng),
                geo_b2: p.alloc_bias(&format!("{pre}.geo.b2"), f),
                ln2_g: p.alloc_gain(&format!("{pre}.ln2.gain"), f),
                ln2_b: p.alloc_bias(&format!("{pre}.ln2.bias"), f),
                ffn: Mlp2::alloc(&mut p, &format!("{pre}.ffn"), f, 2 * f, f, &mut rng),
            });
        }

        let coarse_mlp = Mlp2::alloc(&mut p, "dec.coarse", f, 2 * f, 3 * config.n_coarse, &mut rng);
        let query_mlp = Mlp2::alloc(&mut p, "dec.query", f + 3, f, f, &mut rng);

        let mut dec = Vec::with_capacity(config.n_dec_blocks);
        for b in 0..config.n_dec_blocks {
            let pre = format!("dec{b}");
            dec.push(DecBlock {
                ln1_g: p.alloc_gain(&format!("{pre}.ln1.gain"), f),
                ln1_b: p.alloc_bias(&format!("{pre}.ln1.bias"), f),
                selfattn: AttnParams::alloc(&mut p, &format!("{pre}.self"), f, &mut rng),
                ln2_g: p.alloc_gain(&format!("{pre}.ln2.gain"), f),
                ln2_b: p.alloc_bias(&format!("{pre}.ln2.bias"), f),
                lnm_g: p.alloc_gain(&format!("{pre}.lnm.gain"), f),
                lnm_b: p.alloc_bias(&format!("{pre}.lnm.bias"), f),
                cross: AttnParams::alloc(&mut p, &format!("{pre}.cross"), f, &mut rng),
                ln3_g: p.alloc_gain(&format!("{pre}.ln3.gain"), f),
                ln3_b: p.alloc_bias(&format!("{pre}.ln3.bias"), f),
                ffn: Mlp2::alloc(&mut p, &format!("{pre}.ffn"), f, 2 * f, f, &mut rng),
            });
        }

        let refine_mlp = Mlp2::alloc(&mut p, "dec.refine", f, f, 3, &mut rng);
        let fold1 = Mlp3::alloc(&mut p, "fold1", f + 2, f, f, 3, &mut rng);
        let fold2 = Mlp3::alloc(&mut p, "fold2", f + 5, f, f, 3, &mut rng);
        let densify_mlp = Mlp3::alloc(&mut p, "densify", f + 3, f, f, 6 * config.densify_k, &mut rng);

        Ok(CompletionModel {
            config,
            params: p,
            arch: Arch {
                group_mlp,
                enc,
                coarse_mlp,
                query_mlp,
                dec,
                refine_mlp,
                fold1,
                fold2,
                densify_mlp,
            },
            fold_lattice: fold_lattice(config.fold_grid),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Total scalar parameter count.
    pub fn n_params(&self) -> usize {
        self.params.n_scalars()
    }

    // ----- stage 1: grouping ------------------------------------------------

    /// Farthest-point centers with pooled edge-convolution features.
    pub fn group_points(&self, context: &PointCloud) -> Result<(Features, GroupCache)> {
        let cfg = &self.config;
        context.validate()?;
        if context.len() < cfg.n_groups {
            return Err(Error::invalid(format!(
                "grouping needs at least {} context points, got {}",
                cfg.n_groups,
                context.len()
            )));
        }
        if context.len() < 2 {
            return Err(Error::invalid("grouping needs at least 2 context points"));
        }
        let mut rng = Rng::new(GROUPING_SEED);
        let (centers_pc, center_idx) = fps_subsample(context, cfg.n_groups, &mut rng)?;
        let centers = centers_pc.points;
        let k = cfg.knn_k.min(context.len() - 1);

        let mut rows = Array2::zeros((cfg.n_groups * k, 6));
        for (g, (&ci, c)) in center_idx.iter().zip(&centers).enumerate() {
            let nbrs = k_nearest_excluding(&context.points, *c, ci, k);
            for (j, &nb) in nbrs.iter().enumerate() {
                let pnt = context.points[nb];
                let r = g * k + j;
                for d in 0..3 {
                    rows[[r, d]] = pnt[d] - c[d];
                    rows[[r, 3 + d]] = c[d];
                }
            }
        }
        let (h, mlp) = mlp2_fwd(&self.params, &self.arch.group_mlp, &rows);
        let (feats, argmax) = blockmax_fwd(&h, k);
        let n_rows = rows.nrows();
        Ok((
            Features { feats, centers },
            GroupCache { mlp, argmax, n_rows },
        ))
    }

    fn group_backward(&self, cache: &GroupCache, d_feats: &Array2<f64>, grads: &mut Grads) {
        let dh = blockmax_bwd(&cache.argmax, cache.n_rows, d_feats);
        // Edge rows are raw context coordinates with no parameter
        // dependence, so their cotangent is dropped.
        let _ = mlp2_bwd(&self.params, &self.arch.group_mlp, &cache.mlp, &dh, grads);
    }

    // ----- stage 2: encoder -------------------------------------------------

    fn geo_fwd(
        &self,
        blk: &EncBlock,
        h: &Array2<f64>,
        centers: &[[f64; 3]],
        nbrs: &[usize],
        k: usize,
    ) -> (Array2<f64>, Option<GeoCache>) {
        let n = h.nrows();
        let f = h.ncols();
        if k == 0 {
            return (Array2::zeros((n, f)), None);
        }
        let mut rows = Array2::zeros((n * k, f + 3));
        for i in 0..n {
            for kk in 0..k {
                let j = nbrs[i * k + kk];
                let r = i * k + kk;
                for c in 0..f {
                    rows[[r, c]] = h[[j, c]];
                }
                for d in 0..3 {
                    rows[[r, f + d]] = centers[j][d] - centers[i][d];
                }
            }
        }
        let act = tanh(&linear(&self.params, blk.geo_w1, blk.geo_b1, &rows));
        let (pooled, argmax) = blockmax_fwd(&act, k);
        let out = linear(&self.params, blk.geo_w2, blk.geo_b2, &pooled);
        (
            out,
            Some(GeoCache {
                rows,
                act,
                pooled,
                argmax,
            }),
        )
    }

    fn geo_bwd(
        &self,
        blk: &EncBlock,
        cache: &GeoCache,
        nbrs: &[usize],
        k: usize,
        d_out: &Array2<f64>,
        grads: &mut Grads,
    ) -> Array2<f64> {
        let f = d_out.ncols();
        let n = d_out.nrows();
        let d_pooled = linear_bwd(
            &self.params,
            blk.geo_w2,
            blk.geo_b2,
            &cache.pooled,
            d_out,
            grads,
        );
        let d_act = blockmax_bwd(&cache.argmax, cache.rows.nrows(), &d_pooled);
        let d_lin = tanh_bwd(&cache.act, &d_act);
        let d_rows = linear_bwd(&self.params, blk.geo_w1, blk.geo_b1, &cache.rows, &d_lin, grads);
        let mut dh = Array2::zeros((n, f));
        for i in 0..n {
            for kk in 0..k {
                let j = nbrs[i * k + kk];
                let r = i * k + kk;
                for c in 0..f {
                    dh[[j, c]] += d_rows[[r, c]];
                }
            }
        }
        dh
    }

    /// Runs the encoder blocks; centers pass through unchanged.
    pub fn encode(&self, features: &Features) -> (Features, EncodeCache) {
        let cfg = &self.config;
        let n = features.feats.nrows();
        let k_geo = cfg.knn_k.min(n.saturating_sub(1));
        let mut nbrs = Vec::with_capacity(n * k_geo);
        if k_geo > 0 {
            for (i, c) in features.centers.iter().enumerate() {
                nbrs.extend(k_nearest_excluding(&features.centers, *c, i, k_geo));
            }
        }

        let mut x = features.feats.clone();
        let mut blocks = Vec::with_capacity(cfg.n_enc_blocks);
        for blk in &self.arch.enc {
            let (h1, ln1) = layernorm_fwd(&self.params, blk.ln1_g, blk.ln1_b, &x);
            let (attn_out, attn) =
                attention_fwd(&self.params, &blk.attn, &h1, &h1, cfg.n_heads, None);
            let (geo_out, geo) = self.geo_fwd(blk, &h1, &features.centers, &nbrs, k_geo);
            x = x + &attn_out + &geo_out;
            let (h2, ln2) = layernorm_fwd(&self.params, blk.ln2_g, blk.ln2_b, &x);
            let (ffn_out, ffn) = mlp2_fwd(&self.params, &blk.ffn, &h2);
            x = x + &ffn_out;
            blocks.push(EncBlockCache {
                ln1,
                attn,
                geo,
                ln2,
                ffn,
            });
        }
        (
            Features {
                feats: x,
                centers: features.centers.clone(),
            },
            EncodeCache {
                blocks,
                nbrs,
                k_geo,
            },
        )
    }

    fn encode_backward(
        &self,
        cache: &EncodeCache,
        d_out: &Array2<f64>,
        grads: &mut Grads,
    ) -> Array2<f64> {
        let mut d = d_out.clone();
        for (blk, bc) in self.arch.enc.iter().zip(&cache.blocks).rev() {
            let d_h2 = mlp2_bwd(&self.params, &blk.ffn, &bc.ffn, &d, grads);
            let d_mid = d + layernorm_bwd(&self.params, blk.ln2_g, blk.ln2_b, &bc.ln2, &d_h2, grads);
            let (dq, dkv) =
                attention_bwd(&self.params, &blk.attn, &bc.attn, self.config.n_heads, &d_mid, grads);
            let mut d_h1 = dq + dkv;
            if let Some(geo) = &bc.geo {
                d_h1 += &self.geo_bwd(blk, geo, &cache.nbrs, cache.k_geo, &d_mid, grads);
            }
            d = d_mid
                + layernorm_bwd(&self.params, blk.ln1_g, blk.ln1_b, &bc.ln1, &d_h1, grads);
        }
        d
    }

    // ----- stage 3: decoder -------------------------------------------------

    /// Decodes coarse crown points and per-coarse features from encoder
    /// memory. `mask`, when given, marks which memory rows are real;
    /// padding rows receive no attention and no pooling weight.
    pub fn decode(
        &self,
        enc: &Features,
        mask: Option<&[bool]>,
    ) -> (Array2<f64>, Array2<f64>, DecodeCache) {
        let cfg = &self.config;
        let f = cfg.feat_dim;
        if let Some(m) = mask {
            assert_eq!(m.len(), enc.feats.nrows(), "mask length != memory rows");
        }

        let (global, pool_argmax) = rowmax_fwd(&enc.feats, mask);
        let (coarse_flat, coarse_mlp) = mlp2_fwd(&self.params, &self.arch.coarse_mlp, &global);
        let coarse_init = Array2::from_shape_fn((cfg.n_coarse, 3), |(q, d)| {
            coarse_flat[[0, 3 * q + d]] + COARSE_CENTER
        });

        let mut qrows = Array2::zeros((cfg.n_coarse, f + 3));
        for q in 0..cfg.n_coarse {
            for c in 0..f {
                qrows[[q, c]] = global[[0, c]];
            }
            for d in 0..3 {
                qrows[[q, f + d]] = coarse_init[[q, d]];
            }
        }
        let (mut x, query_mlp) = mlp2_fwd(&self.params, &self.arch.query_mlp, &qrows);

        let mut blocks = Vec::with_capacity(cfg.n_dec_blocks);
        for blk in &self.arch.dec {
            let (h1, ln1) = layernorm_fwd(&self.params, blk.ln1_g, blk.ln1_b, &x);
            let (sa, selfattn) =
                attention_fwd(&self.params, &blk.selfattn, &h1, &h1, cfg.n_heads, None);
            x = x + &sa;
            let (hq, ln2) = layernorm_fwd(&self.params, blk.ln2_g, blk.ln2_b, &x);
            let (hm, lnm) = layernorm_fwd(&self.params, blk.lnm_g, blk.lnm_b, &enc.feats);
            let (ca, cross) = attention_fwd(&self.params, &blk.cross, &hq, &hm, cfg.n_heads, mask);
            x = x + &ca;
            let (h3, ln3) = layernorm_fwd(&self.params, blk.ln3_g, blk.ln3_b, &x);
            let (ff, ffn) = mlp2_fwd(&self.params, &blk.ffn, &h3);
            x = x + &ff;
            blocks.push(DecBlockCache {
                ln1,
                selfattn,
                ln2,
                lnm,
                cross,
                ln3,
                ffn,
            });
        }

        let (refine, refine_mlp) = mlp2_fwd(&self.params, &self.arch.refine_mlp, &x);
        let coarse = &coarse_init + &(refine * REFINE_SCALE);
        (
            coarse,
            x.clone(),
            DecodeCache {
                n_mem: enc.feats.nrows(),
                pool_argmax,
                coarse_mlp,
                query_mlp,
                blocks,
                refine_mlp,
            },
        )
    }

    /// Returns the cotangent of the encoder memory.
    fn decode_backward(
        &self,
        cache: &DecodeCache,
        d_coarse: &Array2<f64>,
        d_feats: &Array2<f64>,
        grads: &mut Grads,
    ) -> Array2<f64> {
        let cfg = &self.config;
        let f = cfg.feat_dim;

        let d_refine = d_coarse * REFINE_SCALE;
        let mut dx = d_feats
            + mlp2_bwd(&self.params, &self.arch.refine_mlp, &cache.refine_mlp, &d_refine, grads);
        let mut d_coarse_init = d_coarse.clone();
        let mut d_mem = Array2::zeros((cache.n_mem, f));

        for (blk, bc) in self.arch.dec.iter().zip(&cache.blocks).rev() {
            let d_h3 = mlp2_bwd(&self.params, &blk.ffn, &bc.ffn, &dx, grads);
            dx = dx + layernorm_bwd(&self.params, blk.ln3_g, blk.ln3_b, &bc.ln3, &d_h3, grads);
            let (d_hq, d_hm) =
                attention_bwd(&self.params, &blk.cross, &bc.cross, cfg.n_heads, &dx, grads);
            d_mem += &layernorm_bwd(&self.params, blk.lnm_g, blk.lnm_b, &bc.lnm, &d_hm, grads);
            dx = dx + layernorm_bwd(&self.params, blk.ln2_g, blk.ln2_b, &bc.ln2, &d_hq, grads);
            let (dq, dkv) =
                attention_bwd(&self.params, &blk.selfattn, &bc.selfattn, cfg.n_heads, &dx, grads);
            let d_h1 = dq + dkv;
            dx = dx + layernorm_bwd(&self.params, blk.ln1_g, blk.ln1_b, &bc.ln1, &d_h1, grads);
        }

        let d_qrows = mlp2_bwd(&self.params, &self.arch.query_mlp, &cache.query_mlp, &dx, grads);
        let mut d_global = Array2::zeros((1, f));
        for q in 0..cfg.n_coarse {
            for c in 0..f {
                d_global[[0, c]] += d_qrows[[q, c]];
            }
            for d in 0..3 {
                d_coarse_init[[q, d]] += d_qrows[[q, f + d]];
            }
        }

        let mut d_coarse_flat = Array2::zeros((1, 3 * cfg.n_coarse));
        for q in 0..cfg.n_coarse {
            for d in 0..3 {
                d_coarse_flat[[0, 3 * q + d]] = d_coarse_init[[q, d]];
            }
        }
        d_global += &mlp2_bwd(
            &self.params,
            &self.arch.coarse_mlp,
            &cache.coarse_mlp,
            &d_coarse_flat,
            grads,
        );

        d_mem += &rowmax_bwd(&cache.pool_argmax, cache.n_mem, &d_global);
        d_mem
    }

    // ----- stage 4: folding -------------------------------------------------

    /// Folds the canonical lattice around each coarse point. Dense row
    /// `c · fold_grid² + g` belongs to coarse point `c`.
    pub fn fold(&self, coarse: &Array2<f64>, feats: &Array2<f64>) -> (Array2<f64>, FoldCache) {
        let cfg = &self.config;
        let f = cfg.feat_dim;
        let per = cfg.fold_grid * cfg.fold_grid;
        let n_dense = cfg.n_coarse * per;

        let mut rows1 = Array2::zeros((n_dense, f + 2));
        for c in 0..cfg.n_coarse {
            for g in 0..per {
                let r = c * per + g;
                for j in 0..f {
                    rows1[[r, j]] = feats[[c, j]];
                }
                rows1[[r, f]] = self.fold_lattice[g][0];
                rows1[[r, f + 1]] = self.fold_lattice[g][1];
            }
        }
        let (out1, f1) = mlp3_fwd(&self.params, &self.arch.fold1, &rows1);

        let mut rows2 = Array2::zeros((n_dense, f + 5));
        for r in 0..n_dense {
            for j in 0..f + 2 {
                rows2[[r, j]] = rows1[[r, j]];
            }
            for d in 0..3 {
                rows2[[r, f + 2 + d]] = out1[[r, d]];
            }
        }
        let (out2, f2) = mlp3_fwd(&self.params, &self.arch.fold2, &rows2);

        let mut dense = Array2::zeros((n_dense, 3));
        for c in 0..cfg.n_coarse {
            for g in 0..per {
                let r = c * per + g;
                for d in 0..3 {
                    dense[[r, d]] = coarse[[c, d]] + FOLD_SCALE * out2[[r, d]];
                }
            }
        }
        (dense, FoldCache { f1, f2 })
    }

    /// Returns `(d_coarse, d_feats)`.
    fn fold_backward(
        &self,
        cache: &FoldCache,
        d_dense: &Array2<f64>,
        grads: &mut Grads,
    ) -> (Array2<f64>, Array2<f64>) {
        let cfg = &self.config;
        let f = cfg.feat_dim;
        let per = cfg.fold_grid * cfg.fold_grid;
        let n_dense = d_dense.nrows();

        let d_out2 = d_dense * FOLD_SCALE;
        let d_rows2 = mlp3_bwd(&self.params, &self.arch.fold2, &cache.f2, &d_out2, grads);
        let mut d_out1 = Array2::zeros((n_dense, 3));
        for r in 0..n_dense {
            for d in 0..3 {
                d_out1[[r, d]] = d_rows2[[r, f + 2 + d]];
            }
        }
        let d_rows1 = mlp3_bwd(&self.params, &self.arch.fold1, &cache.f1, &d_out1, grads);

        let mut d_feats = Array2::zeros((cfg.n_coarse, f));
        let mut d_coarse = Array2::zeros((cfg.n_coarse, 3));
        for c in 0..cfg.n_coarse {
            for g in 0..per {
                let r = c * per + g;
                for j in 0..f {
                    d_feats[[c, j]] += d_rows1[[r, j]] + d_rows2[[r, j]];
                }
                for d in 0..3 {
                    d_coarse[[c, d]] += d_dense[[r, d]];
                }
            }
        }
        (d_coarse, d_feats)
    }

    // ----- stage 5: densifier -----------------------------------------------

    /// Emits `densify_k` offset/normal pairs per dense point. Output
    /// row `r · densify_k + k` descends from dense row `r`. Returns the
    /// oriented cloud, the +z fallback count, and the cache.
    pub fn densify(
        &self,
        dense: &Array2<f64>,
        feats: &Array2<f64>,
    ) -> (OrientedPointCloud, usize, DensifyCache) {
        let cfg = &self.config;
        let f = cfg.feat_dim;
        let per = cfg.fold_grid * cfg.fold_grid;
        let n_dense = dense.nrows();
        let kk = cfg.densify_k;

        let mut rows = Array2::zeros((n_dense, f + 3));
        for r in 0..n_dense {
            let parent = r / per;
            for j in 0..f {
                rows[[r, j]] = feats[[parent, j]];
            }
            for d in 0..3 {
                rows[[r, f + d]] = dense[[r, d]];
            }
        }
        let (out, mlp) = mlp3_fwd(&self.params, &self.arch.densify_mlp, &rows);

        let n_out = n_dense * kk;
        let mut points = Vec::with_capacity(n_out);
        let mut normals = Vec::with_capacity(n_out);
        let mut raw_norm = Vec::with_capacity(n_out);
        let mut unit = Vec::with_capacity(n_out);
        let mut fallback = Vec::with_capacity(n_out);
        let mut n_fallback = 0usize;
        for r in 0..n_dense {
            for k in 0..kk {
                let o = 6 * k;
                let p = [
                    dense[[r, 0]] + DENSIFY_OFFSET_SCALE * out[[r, o]],
                    dense[[r, 1]] + DENSIFY_OFFSET_SCALE * out[[r, o + 1]],
                    dense[[r, 2]] + DENSIFY_OFFSET_SCALE * out[[r, o + 2]],
                ];
                let raw = [out[[r, o + 3]], out[[r, o + 4]], out[[r, o + 5]]];
                let norm = vec3::norm(raw);
                let (n, fb) = if norm < NORMAL_FLOOR {
                    n_fallback += 1;
                    ([0.0, 0.0, 1.0], true)
                } else {
                    (vec3::scale(raw, 1.0 / norm), false)
                };
                points.push(p);
                normals.push(n);
                raw_norm.push(norm);
                unit.push(n);
                fallback.push(fb);
            }
        }
        (
            OrientedPointCloud { points, normals },
            n_fallback,
            DensifyCache {
                mlp,
                raw_norm,
                unit,
                fallback,
            },
        )
    }

    /// Returns `(d_dense, d_feats)`. `d_normals = None` means the loss
    /// carries no normal term; fallback normals are constants either
    /// way, so their raw vectors receive zero gradient.
    fn densify_backward(
        &self,
        cache: &DensifyCache,
        d_points: &[[f64; 3]],
        d_normals: Option<&[[f64; 3]]>,
        grads: &mut Grads,
    ) -> (Array2<f64>, Array2<f64>) {
        let cfg = &self.config;
        let f = cfg.feat_dim;
        let per = cfg.fold_grid * cfg.fold_grid;
        let kk = cfg.densify_k;
        let n_dense = d_points.len() / kk;

        let mut d_out = Array2::zeros((n_dense, 6 * kk));
        let mut d_dense = Array2::zeros((n_dense, 3));
        for r in 0..n_dense {
            for k in 0..kk {
                let oi = r * kk + k;
                let o = 6 * k;
                for d in 0..3 {
                    d_out[[r, o + d]] = DENSIFY_OFFSET_SCALE * d_points[oi][d];
                    d_dense[[r, d]] += d_points[oi][d];
                }
                if let Some(dn) = d_normals {
                    if !cache.fallback[oi] {
                        let n = cache.unit[oi];
                        let g = dn[oi];
                        let along = vec3::dot(n, g);
                        for d in 0..3 {
                            d_out[[r, o + 3 + d]] = (g[d] - n[d] * along) / cache.raw_norm[oi];
                        }
                    }
                }
            }
        }
        let d_rows = mlp3_bwd(&self.params, &self.arch.densify_mlp, &cache.mlp, &d_out, grads);
        let mut d_feats = Array2::zeros((cfg.n_coarse, f));
        for r in 0..n_dense {
            let parent = r / per;
            for j in 0..f {
                d_feats[[parent, j]] += d_rows[[r, j]];
            }
            for d in 0..3 {
                d_dense[[r, d]] += d_rows[[r, f + d]];
            }
        }
        (d_dense, d_feats)
    }

    // ----- composition ------------------------------------------------------

    /// Runs all five stages and returns every output granularity plus
    /// the cache `backward_full` needs.
    pub fn forward_full(&self, context: &PointCloud) -> Result<(NetOutputs, ForwardCache)> {
        let (features, group) = self.group_points(context)?;
        let (enc, encode) = self.encode(&features);
        let (coarse, dec_feats, decode) = self.decode(&enc, None);
        let (dense, fold) = self.fold(&coarse, &dec_feats);
        let (oriented, normal_fallbacks, densify) = self.densify(&dense, &dec_feats);
        Ok((
            NetOutputs {
                coarse: rows_to_vec3(&coarse),
                dense: rows_to_vec3(&dense),
                oriented,
                normal_fallbacks,
            },
            ForwardCache {
                group,
                encode,
                decode,
                fold,
                densify,
            },
        ))
    }

    /// Exact reverse-mode gradients of `Σ cot · output` over every
    /// parameter tensor, given the cache of the matching forward pass.
    pub fn backward_full(&self, cache: &ForwardCache, cot: &OutputCotangents) -> Result<Grads> {
        let cfg = &self.config;
        if cot.coarse.len() != cfg.n_coarse
            || cot.dense.len() != cfg.n_dense()
            || cot.points.len() != cfg.n_oriented()
            || cot.normals.as_ref().is_some_and(|n| n.len() != cfg.n_oriented())
        {
            return Err(Error::invalid("output cotangent lengths do not match config"));
        }
        let mut grads = self.params.zero_grads();

        let (d_dense_k, d_feats_k) = self.densify_backward(
            &cache.densify,
            &cot.points,
            cot.normals.as_deref(),
            &mut grads,
        );
        let d_dense = d_dense_k + vec3_to_rows(&cot.dense);
        let (d_coarse_f, d_feats_f) = self.fold_backward(&cache.fold, &d_dense, &mut grads);
        let d_coarse = d_coarse_f + vec3_to_rows(&cot.coarse);
        let d_feats = d_feats_k + d_feats_f;
        let d_enc = self.decode_backward(&cache.decode, &d_coarse, &d_feats, &mut grads);
        let d_group = self.encode_backward(&cache.encode, &d_enc, &mut grads);
        self.group_backward(&cache.group, &d_group, &mut grads);
        Ok(grads)
    }

    // ----- checkpoint I/O ----------------------------------------------------

    /// Serializes config and all tensors. Container layout: magic
    /// `CRWN`, version byte 1, nine u32 config fields, u32 tensor
    /// count, then per tensor a u16-length-prefixed name, u32 rows,
    /// u32 cols, and row-major little-endian f32 data.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(b"CRWN");
        buf.write_u8(1).expect("vec write");
        for field in self.config.fields_u32()? {
            buf.write_u32::<LittleEndian>(field).expect("vec write");
        }
        let n_tensors = u32::try_from(self.params.n_tensors())
            .map_err(|_| Error::invalid("too many tensors for checkpoint"))?;
        buf.write_u32::<LittleEndian>(n_tensors).expect("vec write");
        for m in self.params.metas() {
            let name = m.name.as_bytes();
            let len = u16::try_from(name.len())
                .map_err(|_| Error::invalid(format!("tensor name too long: {}", m.name)))?;
            buf.write_u16::<LittleEndian>(len).expect("vec write");
            buf.extend_from_slice(name);
            buf.write_u32::<LittleEndian>(m.rows as u32).expect("vec write");
            buf.write_u32::<LittleEndian>(m.cols as u32).expect("vec write");
            for &v in &self.params.data[m.offset..m.offset + m.len()] {
                if !v.is_finite() {
                    return Err(Error::invalid(format!(
                        "tensor {} holds a non-finite value",
                        m.name
                    )));
                }
                buf.write_f32::<LittleEndian>(v as f32).expect("vec write");
            }
        }
        std::fs::write(path, buf)?;
        Ok(())
    }

    /// Reads a checkpoint written by [`save_checkpoint`], verifying
    /// magic, version, tensor names, and shapes against a freshly built
    /// model of the stored config.
    pub fn load_checkpoint(path: &Path) -> Result<CompletionModel> {
        let bytes = std::fs::read(path)?;
        let mut r = SliceReader { bytes: &bytes, off: 0 };

        let magic = r.take(4, "magic")?;
        if magic != b"CRWN" {
            return Err(Error::parse_at_offset(0, "bad magic, expected CRWN"));
        }
        let version = r.u8("version")?;
        if version != 1 {
            return Err(Error::parse_at_offset(
                4,
                format!("unsupported checkpoint version {version}"),
            ));
        }
        let mut fields = [0u32; 9];
        for f in &mut fields {
            *f = r.u32("config field")?;
        }
        let config = ModelConfig::from_fields_u32(fields);
        config.validate()?;
        let mut model = CompletionModel::new(config, 0)?;

        let n_tensors = r.u32("tensor count")? as usize;
        if n_tensors != model.params.n_tensors() {
            return Err(Error::parse_at_offset(
                r.off as u64 - 4,
                format!(
                    "checkpoint has {n_tensors} tensors, config implies {}",
                    model.params.n_tensors()
                ),
            ));
        }
        for i in 0..n_tensors {
            let name_off = r.off as u64;
            let name_len = r.u16("tensor name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
                .map_err(|_| Error::parse_at_offset(name_off, "tensor name is not UTF-8"))?
                .to_owned();
            let rows = r.u32("tensor rows")? as usize;
            let cols = r.u32("tensor cols")? as usize;
            let meta = model.params.metas()[i].clone();
            if name != meta.name || rows != meta.rows || cols != meta.cols {
                return Err(Error::parse_at_offset(
                    name_off,
                    format!(
                        "tensor {i}: found {name} ({rows}x{cols}), expected {} ({}x{})",
                        meta.name, meta.rows, meta.cols
                    ),
                ));
            }
            let data_off = r.off as u64;
            let raw = r.take(meta.len() * 4, "tensor data")?;
            for (j, chunk) in raw.chunks_exact(4).enumerate() {
                let v = LittleEndian::read_f32(chunk);
                if !v.is_finite() {
                    return Err(Error::parse_at_offset(
                        data_off + 4 * j as u64,
                        format!("non-finite value in tensor {}", meta.name),
                    ));
                }
                model.params.data[meta.offset + j] = v as f64;
            }
        }
        if r.off != bytes.len() {
            return Err(Error::parse_at_offset(
                r.off as u64,
                format!("{} trailing bytes after last tensor", bytes.len() - r.off),
            ));
        }
        Ok(model)
    }
}

pub(crate) struct SliceReader<'a> {
    bytes: &'a [u8],
    off: usize,
}

impl<'a> SliceReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        SliceReader { bytes, off: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.off as u64
    }

    pub(crate) fn exhausted(&self) -> bool {
        self.off == self.bytes.len()
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.off + n > self.bytes.len() {
            return Err(Error::parse_at_offset(
                self.off as u64,
                format!("unexpected end of file reading {what}"),
            ));
        }
        let s = &self.bytes[self.off..self.off + n];
        self.off += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(LittleEndian::read_u16(self.take(2, what)?))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(LittleEndian::read_u32(self.take(4, what)?))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(LittleEndian::read_u64(self.take(8, what)?))
    }

    pub(crate) fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(LittleEndian::read_f64(self.take(8, what)?))
    }
}
