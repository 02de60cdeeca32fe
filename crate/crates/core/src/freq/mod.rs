//! Blockwise DCT preprocessing.
//!
//! An image is zero-padded to a multiple of the block size, cut into
//! non-overlapping blocks, transformed, masked down to its high-frequency
//! corner and reassembled at the padded size.

mod dct;
mod mask;

use std::fmt;
use std::str::FromStr;

pub use dct::{dct2, dct2_naive, idct2, CoeffTable, DctPlan};
pub use mask::{retain_high_freq, MaskSpec};

use crate::error::{dim_err, param_err, Error, Result};
use crate::tensor::Tensor;

/// What a [`FreqImage`] holds after masking.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FreqMode {
    /// Masked coefficient tables laid out block by block.
    #[default]
    Coefficient,
    /// Masked tables pushed back through the inverse DCT.
    Spatial,
}

impl FromStr for FreqMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coeff" | "coefficient" => Ok(FreqMode::Coefficient),
            "spatial" => Ok(FreqMode::Spatial),
            other => param_err(format!("unknown frequency mode {other:?} (expected coeff|spatial)")),
        }
    }
}

impl fmt::Display for FreqMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FreqMode::Coefficient => "coeff",
            FreqMode::Spatial => "spatial",
        })
    }
}

/// The preprocessed single-channel image at padded size `1×H′×W′`.
#[derive(Clone, Debug, PartialEq)]
pub struct FreqImage {
    pub data: Tensor,
    pub mode: FreqMode,
    pub block: usize,
}

fn image_dims(image: &Tensor) -> Result<(usize, usize)> {
    match image.shape() {
        [1, h, w] => Ok((*h, *w)),
        other => dim_err(format!("expected a 1×H×W image, got {other:?}")),
    }
}

/// Zero-pads the bottom and right edges up to the next multiple of `n`.
pub fn pad_to_multiple(image: &Tensor, n: usize) -> Result<Tensor> {
    if n < 2 {
        return param_err(format!("block size must be at least 2, got {n}"));
    }
    let (h, w) = image_dims(image)?;
    let (hp, wp) = (h.div_ceil(n) * n, w.div_ceil(n) * n);
    if (hp, wp) == (h, w) {
        return Ok(image.clone());
    }
    let mut out = vec![0.0; hp * wp];
    for (y, row) in image.data().chunks_exact(w).enumerate() {
        out[y * wp..y * wp + w].copy_from_slice(row);
    }
    Tensor::new(vec![1, hp, wp], out)
}

/// Splits a `1×H×W` image into `(H/n)·(W/n)` blocks in row-major block order.
pub fn patchify(image: &Tensor, n: usize) -> Result<Tensor> {
    let (h, w) = image_dims(image)?;
    if n == 0 || h % n != 0 || w % n != 0 {
        return dim_err(format!("{h}×{w} image is not divisible into {n}×{n} blocks"));
    }
    let (bh, bw) = (h / n, w / n);
    let src = image.data();
    let mut out = Vec::with_capacity(h * w);
    for by in 0..bh {
        for bx in 0..bw {
            for y in 0..n {
                let start = (by * n + y) * w + bx * n;
                out.extend_from_slice(&src[start..start + n]);
            }
        }
    }
    Tensor::new(vec![bh * bw, n, n], out)
}

/// Inverse of [`patchify`] for a target image of `height×width`.
pub fn unpatchify(patches: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let (count, n, n2) = patches.dims3()?;
    if n != n2 || !height.is_multiple_of(n) || !width.is_multiple_of(n) || count != (height / n) * (width / n) {
        return dim_err(format!(
            "{:?} blocks cannot tile a {height}×{width} image",
            patches.shape()
        ));
    }
    let bw = width / n;
    let mut out = vec![0.0; height * width];
    for (p, block) in patches.data().chunks_exact(n * n).enumerate() {
        let (by, bx) = (p / bw, p % bw);
        for y in 0..n {
            let start = (by * n + y) * width + bx * n;
            out[start..start + n].copy_from_slice(&block[y * n..(y + 1) * n]);
        }
    }
    Tensor::new(vec![1, height, width], out)
}

/// Pad → blockwise DCT → high-frequency mask → reassemble.
pub fn preprocess(image: &Tensor, n: usize, m: usize, mode: FreqMode) -> Result<FreqImage> {
    let mask = MaskSpec::new(n, m)?;
    let plan = DctPlan::new(n)?;
    let padded = pad_to_multiple(image, n)?;
    let (h, w) = image_dims(&padded)?;
    let mut blocks = patchify(&padded, n)?;

    let mut coeffs = vec![0.0; n * n];
    let mut scratch = vec![0.0; n * n];
    for block in blocks.data_mut().chunks_exact_mut(n * n) {
        plan.forward_into(block, &mut coeffs, &mut scratch);
        mask.apply_in_place(&mut coeffs);
        match mode {
            FreqMode::Coefficient => block.copy_from_slice(&coeffs),
            FreqMode::Spatial => plan.inverse_into(&coeffs, block, &mut scratch),
        }
    }
    Ok(FreqImage {
        data: unpatchify(&blocks, h, w)?,
        mode,
        block: n,
    })
}

/// Coefficient energy of the padded image kept by each retention number.
///
/// Entry `m − 1` is the energy surviving a mask of retention `m`; the last
/// entry (`m = n`) is the total energy.
pub fn retained_energy_profile(image: &Tensor, n: usize) -> Result<Vec<f64>> {
    let plan = DctPlan::new(n)?;
    let padded = pad_to_multiple(image, n)?;
    let blocks = patchify(&padded, n)?;
    // energy[u][v] accumulated over every block
    let mut energy = vec![0.0; n * n];
    let mut coeffs = vec![0.0; n * n];
    let mut scratch = vec![0.0; n * n];
    for block in blocks.data().chunks_exact(n * n) {
        plan.forward_into(block, &mut coeffs, &mut scratch);
        for (e, c) in energy.iter_mut().zip(&coeffs) {
            *e += c * c;
        }
    }
    (1..=n)
        .map(|m| {
            let mask = MaskSpec::new(n, m)?;
            let mut kept = 0.0;
            for u in 0..n {
                for v in 0..n {
                    if mask.keeps(u, v) {
                        kept += energy[u * n + v];
                    }
                }
            }
            Ok(kept)
        })
        .collect()
}
