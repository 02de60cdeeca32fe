//! Fusion and alignment of the frequency feature `K` with the spatial
//! feature `T`.
//!
//! A 3×3 convolution compresses the joined streams to a two-channel map
//! `A = σ(conv(·))`. Each stream is then rescaled by its map channel and a
//! per-channel vector and the two are summed:
//! `out[c,i,j] = A₀[i,j]·K[c,i,j]·v_k[c] + A₁[i,j]·T[c,i,j]·v_t[c]`.

use std::fmt;
use std::str::FromStr;

use crate::error::{dim_err, param_err, Error, Result};
use crate::nn::{fan_in_uniform, param_rng, sigmoid, ParamSet};
use crate::tensor::{conv2d, Tensor};

/// How the two streams are joined before the attention convolution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FabJoin {
    /// Channel concatenation, conv sees `2C` channels.
    #[default]
    Concat,
    /// Elementwise sum, conv sees `C` channels.
    Add,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FabVectors {
    #[default]
    Learnable,
    /// `v_k = v_t = 1` regardless of the stored values.
    Unit,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FabVariant {
    pub join: FabJoin,
    pub vectors: FabVectors,
}

impl FabVariant {
    pub const ALL: [FabVariant; 4] = [
        FabVariant { join: FabJoin::Concat, vectors: FabVectors::Learnable },
        FabVariant { join: FabJoin::Concat, vectors: FabVectors::Unit },
        FabVariant { join: FabJoin::Add, vectors: FabVectors::Learnable },
        FabVariant { join: FabJoin::Add, vectors: FabVectors::Unit },
    ];

    pub fn conv_inputs(&self, channels: usize) -> usize {
        match self.join {
            FabJoin::Concat => 2 * channels,
            FabJoin::Add => channels,
        }
    }
}

impl fmt::Display for FabVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = match self.join {
            FabJoin::Concat => "concat",
            FabJoin::Add => "add",
        };
        let vec = match self.vectors {
            FabVectors::Learnable => "learnable",
            FabVectors::Unit => "unit",
        };
        write!(f, "{join}+{vec}")
    }
}

impl FromStr for FabVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let Some((join, vec)) = s.split_once('+') else {
            return param_err(format!("unknown FAB variant {s:?}"));
        };
        let join = match join {
            "concat" => FabJoin::Concat,
            "add" => FabJoin::Add,
            _ => return param_err(format!("unknown FAB join {join:?} in {s:?}")),
        };
        let vectors = match vec {
            "learnable" => FabVectors::Learnable,
            "unit" => FabVectors::Unit,
            _ => return param_err(format!("unknown FAB vectors {vec:?} in {s:?}")),
        };
        Ok(Self { join, vectors })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FabParams {
    /// `2×Cin×3×3` with `Cin = 2C` (concat) or `C` (add).
    pub conv_w: Tensor,
    pub conv_b: Tensor,
    pub v_k: Tensor,
    pub v_t: Tensor,
    pub variant: FabVariant,
}

impl FabParams {
    /// Conv weights uniform fan-in, zero bias, unit channel vectors.
    pub fn init(channels: usize, variant: FabVariant, seed: u64) -> Self {
        let mut rng = param_rng(seed, 3);
        let cin = variant.conv_inputs(channels);
        Self {
            conv_w: fan_in_uniform(&[2, cin, 3, 3], cin * 9, &mut rng),
            conv_b: Tensor::zeros(&[2]),
            v_k: Tensor::filled(&[channels], 1.0),
            v_t: Tensor::filled(&[channels], 1.0),
            variant,
        }
    }

    pub fn channels(&self) -> usize {
        self.v_k.len()
    }

    /// Channel vectors as seen by the forward pass.
    pub(crate) fn effective_vectors(&self) -> (Tensor, Tensor) {
        match self.variant.vectors {
            FabVectors::Learnable => (self.v_k.clone(), self.v_t.clone()),
            FabVectors::Unit => {
                let c = self.channels();
                (Tensor::filled(&[c], 1.0), Tensor::filled(&[c], 1.0))
            }
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }
}

impl ParamSet for FabParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("fab.conv.w".into(), &self.conv_w),
            ("fab.conv.b".into(), &self.conv_b),
            ("fab.vk".into(), &self.v_k),
            ("fab.vt".into(), &self.v_t),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("fab.conv.w".into(), &mut self.conv_w),
            ("fab.conv.b".into(), &mut self.conv_b),
            ("fab.vk".into(), &mut self.v_k),
            ("fab.vt".into(), &mut self.v_t),
        ]
    }
}

pub struct FabCache {
    pub(crate) joined: Tensor,
    pub(crate) attention: Tensor,
}

/// Fuses `K` and `T` (both `C×h×w`) according to `params.variant`.
pub fn fab_forward(k: &Tensor, t: &Tensor, params: &FabParams) -> Result<Tensor> {
    fab_forward_cached(k, t, params).map(|(y, _)| y)
}

/// Runs the fusion with an explicit variant, overriding the stored one.
pub fn fab_variants(k: &Tensor, t: &Tensor, params: &FabParams, variant: FabVariant) -> Result<Tensor> {
    if variant == params.variant {
        return fab_forward(k, t, params);
    }
    let mut p = params.clone();
    p.variant = variant;
    fab_forward(k, t, &p)
}

pub fn fab_forward_cached(k: &Tensor, t: &Tensor, params: &FabParams) -> Result<(Tensor, FabCache)> {
    if k.shape() != t.shape() {
        return dim_err(format!("K {:?} and T {:?} must share a shape", k.shape(), t.shape()));
    }
    let (c, h, w) = k.dims3()?;
    if c != params.channels() || params.v_t.len() != c {
        return dim_err(format!("features have {c} channels, FAB expects {}", params.channels()));
    }
    let expected = [2, params.variant.conv_inputs(c), 3, 3];
    if params.conv_w.shape() != expected {
        return dim_err(format!(
            "{} FAB needs conv weight {:?}, got {:?}",
            params.variant,
            expected,
            params.conv_w.shape()
        ));
    }
    let joined = match params.variant.join {
        FabJoin::Concat => Tensor::concat_channels(&[k, t])?,
        FabJoin::Add => k.add(t)?,
    };
    let attention = conv2d(&joined, &params.conv_w, &params.conv_b, 1, 1)?.map(sigmoid);
    let (vk, vt) = params.effective_vectors();
    let hw = h * w;
    let a = attention.data();
    let out = Tensor::from_fn(k.shape(), |i| {
        let (ch, p) = (i / hw, i % hw);
        a[p] * k.data()[i] * vk.data()[ch] + a[hw + p] * t.data()[i] * vt.data()[ch]
    });
    Ok((out, FabCache { joined, attention }))
}
