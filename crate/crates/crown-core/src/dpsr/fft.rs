//! Separable 3D FFT over cube grids, built on per-axis 1D transforms.
//!
//! Layout is x-fastest (`idx = x + r·(y + r·z)`). The x pass runs on
//! contiguous lines; the y pass gathers strided lines within each z
//! slab; the z pass transposes x↔z so lines become contiguous, then
//! transposes back. Inverse transforms are normalized by `1/r³`, so
//! `inverse(forward(x)) == x` up to rounding.

use num_complex::Complex;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

pub struct Fft3 {
    resolution: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Fft3 {
    pub fn new(resolution: usize) -> Self {
        assert!(resolution >= 2, "grid resolution must be at least 2");
        let mut planner = FftPlanner::new();
        Fft3 {
            resolution,
            forward: planner.plan_fft_forward(resolution),
            inverse: planner.plan_fft_inverse(resolution),
        }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Forward transform of a real grid. No normalization.
    pub fn forward_real(&self, data: &[f64]) -> Vec<Complex<f64>> {
        let mut buf: Vec<Complex<f64>> =
            data.iter().map(|&x| Complex::new(x, 0.0)).collect();
        self.transform(&mut buf, &self.forward);
        buf
    }

    /// Inverse transform, scaled by `1/r³`, keeping the real part. The
    /// caller is responsible for feeding a conjugate-symmetric spectrum;
    /// any rounding-level imaginary residue is dropped.
    pub fn inverse_to_real(&self, mut spectrum: Vec<Complex<f64>>) -> Vec<f64> {
        self.transform(&mut spectrum, &self.inverse);
        let r = self.resolution;
        let scale = 1.0 / (r * r * r) as f64;
        spectrum.iter().map(|c| c.re * scale).collect()
    }

    fn transform(&self, buf: &mut Vec<Complex<f64>>, plan: &Arc<dyn Fft<f64>>) {
        let r = self.resolution;
        assert_eq!(buf.len(), r * r * r, "buffer does not match resolution");

        // x lines are contiguous chunks.
        buf.par_chunks_mut(r).for_each_init(
            || vec![Complex::default(); plan.get_inplace_scratch_len()],
            |scratch, line| plan.process_with_scratch(line, scratch),
        );

        // y lines have stride r within each z slab.
        buf.par_chunks_mut(r * r).for_each_init(
            || {
                (
                    vec![Complex::default(); r],
                    vec![Complex::default(); plan.get_inplace_scratch_len()],
                )
            },
            |(line, scratch), slab| {
                for x in 0..r {
                    for y in 0..r {
                        line[y] = slab[x + r * y];
                    }
                    plan.process_with_scratch(line, scratch);
                    for y in 0..r {
                        slab[x + r * y] = line[y];
                    }
                }
            },
        );

        // z lines: swap x and z so they become contiguous, transform,
        // swap back.
        let mut swapped = swap_xz(buf, r);
        swapped.par_chunks_mut(r).for_each_init(
            || vec![Complex::default(); plan.get_inplace_scratch_len()],
            |scratch, line| plan.process_with_scratch(line, scratch),
        );
        *buf = swap_xz(&swapped, r);
    }
}

/// Out-of-place permutation `out[z + r·(y + r·x)] = in[x + r·(y + r·z)]`
/// (an involution). Output slabs of fixed new-slowest index are disjoint,
/// so the copy parallelizes safely.
fn swap_xz(input: &[Complex<f64>], r: usize) -> Vec<Complex<f64>> {
    let mut out = vec![Complex::default(); input.len()];
    out.par_chunks_mut(r * r)
        .enumerate()
        .for_each(|(x, slab)| {
            for y in 0..r {
                for z in 0..r {
                    slab[z + r * y] = input[x + r * (y + r * z)];
                }
            }
        });
    out
}
