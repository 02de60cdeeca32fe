//! Wall-clock comparison of the direct double-sum DCT with the separable plan.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::freq::{dct2_naive, pad_to_multiple, patchify, DctPlan};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub patch_size: usize,
    pub height: usize,
    pub width: usize,
    pub patches: usize,
    /// Largest coefficient difference between the two paths, checked before timing.
    pub max_abs_diff: f64,
    pub naive_secs: f64,
    pub separable_secs: f64,
    pub naive_patches_per_sec: f64,
    pub separable_patches_per_sec: f64,
    pub speedup: f64,
    /// Multiplications per block, `n⁴ : 2n³`.
    pub multiply_ratio: f64,
}

/// Uniform noise in [0, 1]; a worst case for neither path.
pub fn bench_image(seed: u64, height: usize, width: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[1, height, width], |_| rng.gen())
}

fn separable_all(blocks: &Tensor, plan: &DctPlan) -> Vec<f64> {
    let nn = plan.n() * plan.n();
    let mut out = vec![0.0; blocks.len()];
    let mut scratch = vec![0.0; nn];
    for (src, dst) in blocks.data().chunks_exact(nn).zip(out.chunks_exact_mut(nn)) {
        plan.forward_into(src, dst, &mut scratch);
    }
    out
}

fn naive_all(blocks: &Tensor, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(blocks.len());
    for src in blocks.data().chunks_exact(n * n) {
        let patch = Tensor::new(vec![n, n], src.to_vec())?;
        out.extend_from_slice(dct2_naive(&patch)?.values().data());
    }
    Ok(out)
}

/// Times both paths over every block of `image`. The separable time is the
/// best of `repeats` runs; the naive path runs once.
pub fn bench_dct(image: &Tensor, n: usize, repeats: usize) -> Result<BenchReport> {
    let plan = DctPlan::new(n)?;
    let padded = pad_to_multiple(image, n)?;
    let (_, height, width) = padded.dims3()?;
    let blocks = patchify(&padded, n)?;
    let patches = blocks.shape()[0];

    let t0 = Instant::now();
    let naive = naive_all(&blocks, n)?;
    let naive_secs = t0.elapsed().as_secs_f64();

    let mut separable_secs = f64::INFINITY;
    let mut fast = Vec::new();
    for _ in 0..repeats.max(1) {
        let t0 = Instant::now();
        fast = separable_all(&blocks, &plan);
        separable_secs = separable_secs.min(t0.elapsed().as_secs_f64());
    }
    let max_abs_diff = naive
        .iter()
        .zip(&fast)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if max_abs_diff >= 1e-9 || fast.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("DCT paths disagree by {max_abs_diff:e}")));
    }
    let nf = n as f64;
    Ok(BenchReport {
        patch_size: n,
        height,
        width,
        patches,
        max_abs_diff,
        naive_secs,
        separable_secs,
        naive_patches_per_sec: patches as f64 / naive_secs,
        separable_patches_per_sec: patches as f64 / separable_secs,
        speedup: naive_secs / separable_secs,
        multiply_ratio: nf.powi(4) / (2.0 * nf.powi(3)),
    })
}

/// Plain-text table for terminals.
pub fn format_bench(r: &BenchReport) -> String {
    format!(
        "image {h}x{w}, n={n}, {p} patches, max |diff| {d:.2e}\n\
         path        seconds    patches/sec\n\
         naive       {ns:<10.4} {np:.0}\n\
         separable   {ss:<10.4} {sp:.0}\n\
         speedup {x:.1}x (multiply ratio {mr}:1)\n",
        h = r.height,
        w = r.width,
        n = r.patch_size,
        p = r.patches,
        d = r.max_abs_diff,
        ns = r.naive_secs,
        np = r.naive_patches_per_sec,
        ss = r.separable_secs,
        sp = r.separable_patches_per_sec,
        x = r.speedup,
        mr = r.multiply_ratio,
    )
}
