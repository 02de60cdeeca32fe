use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::backward::{
    channel_attention_backward, fab_backward, mlp_block_backward, patch_embed_backward,
    stub_backward,
};
use crate::error::{param_err, Error, Result};
use crate::extractor::{
    channel_attention_cached, mlp_block_cached, ChannelAttentionParams, DropoutMode,
    ExtractorConfig, ExtractorParams, MlpBlockParams,
};
use crate::fab::{fab_forward_cached, FabParams, FabVariant};
use crate::nn::{Linear, ParamSet};
use crate::stub::{stub_forward_cached, StubParams};
use crate::tensor::{conv2d, Tensor};
use crate::toy::{loss_and_grads, ToyConfig, ToyModel, ToySample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockId {
    PatchEmbed,
    MlpBlock,
    ChannelAttention,
    FabForward,
    StubForward,
    LinearHead,
    /// Encoder + pooled linear head + logistic loss, all parameters at once.
    Pipeline,
}

impl BlockId {
    pub const BLOCKS: [BlockId; 6] = [
        BlockId::PatchEmbed,
        BlockId::MlpBlock,
        BlockId::ChannelAttention,
        BlockId::FabForward,
        BlockId::StubForward,
        BlockId::LinearHead,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BlockId::PatchEmbed => "patch_embed",
            BlockId::MlpBlock => "mlp_block",
            BlockId::ChannelAttention => "channel_attention",
            BlockId::FabForward => "fab_forward",
            BlockId::StubForward => "stub_forward",
            BlockId::LinearHead => "linear_head",
            BlockId::Pipeline => "pipeline",
        }
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BlockId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BlockId::BLOCKS
            .iter()
            .chain(&[BlockId::Pipeline])
            .copied()
            .find(|b| b.name() == s)
            .map_or_else(|| param_err(format!("unsupported block {s:?}")), Ok)
    }
}

/// Sizes and tolerances for a gradient-check run.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub channels: usize,
    pub patch_size: usize,
    pub image_size: usize,
    pub mlp_blocks: usize,
    pub seeds: Vec<u64>,
    pub eps: f64,
    pub threshold: f64,
    /// Entries probed per tensor; larger tensors are subsampled with a
    /// seeded draw.
    pub max_probes: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            channels: 8,
            patch_size: 4,
            image_size: 16,
            mlp_blocks: 2,
            seeds: (0..5).collect(),
            eps: 1e-6,
            threshold: 1e-4,
            max_probes: 256,
        }
    }
}

impl GradCheckConfig {
    fn extractor(&self) -> ExtractorConfig {
        ExtractorConfig {
            channels: self.channels,
            patch_size: self.patch_size,
            retention: self.patch_size.min(3),
            num_blocks: self.mlp_blocks,
            reduction: 4,
            dropout: 0.0,
            ..ExtractorConfig::default()
        }
    }
}

/// One block instance: its differentiable inputs plus its parameters.
#[derive(Clone, Debug)]
pub enum BlockCase {
    PatchEmbed { input: Tensor, params: ExtractorParams },
    Mlp { input: Tensor, params: MlpBlockParams },
    ChannelAttention { input: Tensor, params: ChannelAttentionParams },
    Fab { k: Tensor, t: Tensor, params: FabParams },
    Stub { input: Tensor, params: StubParams },
    LinearHead { input: Tensor, params: Linear },
    Pipeline { sample: ToySample, model: ToyModel },
}

fn jitter<P: ParamSet>(p: &mut P, rng: &mut ChaCha8Rng, amount: f64) {
    for (_, t) in p.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-amount..amount));
    }
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

impl BlockCase {
    /// Random instance at gradient-check scale; all parameters (including
    /// zero-initialised biases) are jittered away from their init values.
    pub fn random(block: BlockId, seed: u64, cfg: &GradCheckConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(100 + block as u64);
        let ext_cfg = cfg.extractor();
        ext_cfg.validate()?;
        let c = cfg.channels;
        let s = cfg.image_size;
        let tokens = s / cfg.patch_size;
        Ok(match block {
            BlockId::PatchEmbed => {
                let mut params = ExtractorParams::init(ext_cfg, seed)?;
                jitter(&mut params, &mut rng, 0.1);
                BlockCase::PatchEmbed { input: uniform(&[1, s, s], -1.0, 1.0, &mut rng), params }
            }
            BlockId::MlpBlock => {
                let mut params = ExtractorParams::init(ext_cfg, seed)?.blocks.remove(0);
                jitter(&mut params, &mut rng, 0.2);
                BlockCase::Mlp { input: uniform(&[c, tokens, tokens], -1.0, 1.0, &mut rng), params }
            }
            BlockId::ChannelAttention => {
                let mut params = ExtractorParams::init(ext_cfg, seed)?.attention;
                jitter(&mut params, &mut rng, 0.2);
                BlockCase::ChannelAttention {
                    input: uniform(&[c, tokens, tokens], -1.0, 1.0, &mut rng),
                    params,
                }
            }
            BlockId::FabForward => {
                let mut params = FabParams::init(c, FabVariant::default(), seed);
                jitter(&mut params, &mut rng, 0.2);
                BlockCase::Fab {
                    k: uniform(&[c, tokens, tokens], -1.0, 1.0, &mut rng),
                    t: uniform(&[c, tokens, tokens], -1.0, 1.0, &mut rng),
                    params,
                }
            }
            BlockId::StubForward => {
                let mut params = StubParams::init(c, seed);
                jitter(&mut params, &mut rng, 0.05);
                BlockCase::Stub { input: uniform(&[1, s, s], 0.0, 1.0, &mut rng), params }
            }
            BlockId::LinearHead => {
                let mut params = Linear::init(c, 1, &mut rng);
                jitter(&mut params, &mut rng, 0.2);
                BlockCase::LinearHead { input: uniform(&[c], -1.0, 1.0, &mut rng), params }
            }
            BlockId::Pipeline => {
                let toy = ToyConfig {
                    extractor: ext_cfg,
                    image_size: s,
                    init_seed: seed,
                    ..ToyConfig::default()
                };
                let mut model = ToyModel::init(&toy)?;
                jitter(&mut model, &mut rng, 0.05);
                // a zero-initialised head would leave every encoder gradient at zero
                model.head = Linear::init(cfg.channels, 1, &mut rng);
                model.head.weight = model.head.weight.scale(8.0);
                let sample = ToySample {
                    image: uniform(&[1, s, s], 0.0, 1.0, &mut rng),
                    label: (seed % 2) as f64,
                };
                BlockCase::Pipeline { sample, model }
            }
        })
    }

    pub fn id(&self) -> BlockId {
        match self {
            BlockCase::PatchEmbed { .. } => BlockId::PatchEmbed,
            BlockCase::Mlp { .. } => BlockId::MlpBlock,
            BlockCase::ChannelAttention { .. } => BlockId::ChannelAttention,
            BlockCase::Fab { .. } => BlockId::FabForward,
            BlockCase::Stub { .. } => BlockId::StubForward,
            BlockCase::LinearHead { .. } => BlockId::LinearHead,
            BlockCase::Pipeline { .. } => BlockId::Pipeline,
        }
    }

    /// Block output (deterministic mode). The pipeline case outputs its
    /// scalar loss as a one-element tensor.
    pub fn forward(&self) -> Result<Tensor> {
        match self {
            BlockCase::PatchEmbed { input, params } => conv2d(
                input,
                &params.embed_weight,
                &params.embed_bias,
                params.config.patch_size,
                0,
            ),
            BlockCase::Mlp { input, params } => {
                mlp_block_cached(input, params, 0.0, DropoutMode::Deterministic, 0).map(|r| r.0)
            }
            BlockCase::ChannelAttention { input, params } => {
                channel_attention_cached(input, params).map(|r| r.0)
            }
            BlockCase::Fab { k, t, params } => fab_forward_cached(k, t, params).map(|r| r.0),
            BlockCase::Stub { input, params } => stub_forward_cached(input, params).map(|r| r.0),
            BlockCase::LinearHead { input, params } => params.forward_vec(input),
            BlockCase::Pipeline { sample, model } => {
                let (loss, _) = loss_and_grads(model, std::slice::from_ref(sample))?;
                Tensor::new(vec![1], vec![loss])
            }
        }
    }
}

impl ParamSet for BlockCase {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        match self {
            BlockCase::PatchEmbed { input, params } => vec![
                ("input".into(), input),
                ("embed.w".into(), &params.embed_weight),
                ("embed.b".into(), &params.embed_bias),
            ],
            BlockCase::Mlp { input, params } => with_input(input, params.tensors()),
            BlockCase::ChannelAttention { input, params } => with_input(input, params.tensors()),
            BlockCase::Fab { k, t, params } => {
                let mut out = vec![("K".to_string(), k), ("T".to_string(), t)];
                out.extend(params.tensors());
                out
            }
            BlockCase::Stub { input, params } => with_input(input, params.tensors()),
            BlockCase::LinearHead { input, params } => with_input(input, params.tensors()),
            BlockCase::Pipeline { model, .. } => model.tensors(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        match self {
            BlockCase::PatchEmbed { input, params } => vec![
                ("input".into(), input),
                ("embed.w".into(), &mut params.embed_weight),
                ("embed.b".into(), &mut params.embed_bias),
            ],
            BlockCase::Mlp { input, params } => with_input_mut(input, params.tensors_mut()),
            BlockCase::ChannelAttention { input, params } => with_input_mut(input, params.tensors_mut()),
            BlockCase::Fab { k, t, params } => {
                let mut out = vec![("K".to_string(), k), ("T".to_string(), t)];
                out.extend(params.tensors_mut());
                out
            }
            BlockCase::Stub { input, params } => with_input_mut(input, params.tensors_mut()),
            BlockCase::LinearHead { input, params } => with_input_mut(input, params.tensors_mut()),
            BlockCase::Pipeline { model, .. } => model.tensors_mut(),
        }
    }
}

fn with_input<'a>(input: &'a Tensor, rest: Vec<(String, &'a Tensor)>) -> Vec<(String, &'a Tensor)> {
    let mut out = vec![("input".to_string(), input)];
    out.extend(rest);
    out
}

fn with_input_mut<'a>(
    input: &'a mut Tensor,
    rest: Vec<(String, &'a mut Tensor)>,
) -> Vec<(String, &'a mut Tensor)> {
    let mut out = vec![("input".to_string(), input)];
    out.extend(rest);
    out
}

fn prepend(first: Vec<Tensor>, rest: Vec<(String, &Tensor)>) -> Vec<Tensor> {
    first.into_iter().chain(rest.into_iter().map(|(_, t)| t.clone())).collect()
}

/// Analytic gradient of `⟨upstream, case.forward()⟩` with respect to every
/// tensor of `case`, in `case.tensors()` order.
pub fn backward(case: &BlockCase, upstream: &Tensor) -> Result<Vec<Tensor>> {
    match case {
        BlockCase::PatchEmbed { input, params } => {
            let (gx, gw, gb) = patch_embed_backward(input, params, upstream)?;
            Ok(vec![gx, gw, gb])
        }
        BlockCase::Mlp { input, params } => {
            let (_, cache) = mlp_block_cached(input, params, 0.0, DropoutMode::Deterministic, 0)?;
            let (gx, gp) = mlp_block_backward(&cache, params, upstream)?;
            Ok(prepend(vec![gx], gp.tensors()))
        }
        BlockCase::ChannelAttention { input, params } => {
            let (_, cache) = channel_attention_cached(input, params)?;
            let (gx, gp) = channel_attention_backward(&cache, params, upstream)?;
            Ok(prepend(vec![gx], gp.tensors()))
        }
        BlockCase::Fab { k, t, params } => {
            let (_, cache) = fab_forward_cached(k, t, params)?;
            let (gk, gt, gp) = fab_backward(k, t, params, &cache, upstream)?;
            Ok(prepend(vec![gk, gt], gp.tensors()))
        }
        BlockCase::Stub { input, params } => {
            let (_, cache) = stub_forward_cached(input, params)?;
            let (gx, gp) = stub_backward(&cache, params, upstream)?;
            Ok(prepend(vec![gx], gp.tensors()))
        }
        BlockCase::LinearHead { input, params } => {
            let g = params.backward_vec(input, upstream)?;
            Ok(vec![g.input, g.weight, g.bias])
        }
        BlockCase::Pipeline { sample, model } => {
            let (_, grads) = loss_and_grads(model, std::slice::from_ref(sample))?;
            let s = upstream.data()[0];
            Ok(grads.tensors().into_iter().map(|(_, t)| t.scale(s)).collect())
        }
    }
}

/// Central differences `(L(θ + ε) − L(θ − ε)) / 2ε` for the listed flat
/// entries of tensor number `tensor` in `params.tensors()` order.
pub fn finite_diff_entries<P: ParamSet + Clone>(
    loss: impl Fn(&P) -> Result<f64>,
    params: &P,
    tensor: usize,
    entries: &[usize],
    eps: f64,
) -> Result<Vec<f64>> {
    if eps <= 0.0 {
        return param_err("finite-difference step must be positive");
    }
    let mut probe = params.clone();
    let set = |p: &mut P, e: usize, v: f64| {
        p.tensors_mut()[tensor].1.data_mut()[e] = v;
    };
    let mut out = Vec::with_capacity(entries.len());
    for &e in entries {
        let orig = params.tensors()[tensor].1.data()[e];
        set(&mut probe, e, orig + eps);
        let up = loss(&probe)?;
        set(&mut probe, e, orig - eps);
        let down = loss(&probe)?;
        set(&mut probe, e, orig);
        if !up.is_finite() || !down.is_finite() {
            let name = &params.tensors()[tensor].0;
            return Err(Error::Numeric(format!("non-finite loss probing {name}[{e}]")));
        }
        out.push((up - down) / (2.0 * eps));
    }
    Ok(out)
}

/// Full central-difference gradient for every tensor of `params`.
pub fn finite_diff_grad<P: ParamSet + Clone>(
    loss: impl Fn(&P) -> Result<f64>,
    params: &P,
    eps: f64,
) -> Result<Vec<(String, Tensor)>> {
    let shapes: Vec<(String, Vec<usize>)> = params
        .tensors()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    shapes
        .into_iter()
        .enumerate()
        .map(|(i, (name, shape))| {
            let len = shape.iter().product();
            let all: Vec<usize> = (0..len).collect();
            let g = finite_diff_entries(&loss, params, i, &all, eps)?;
            Ok((name, Tensor::new(shape, g)?))
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct TensorReport {
    pub name: String,
    pub entries_checked: usize,
    pub entries_total: usize,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct BlockReport {
    pub block: BlockId,
    pub seed: u64,
    pub tensors: Vec<TensorReport>,
    pub pass: bool,
}

impl BlockReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().fold(0.0, |m, t| m.max(t.max_rel_error))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradReport {
    pub eps: f64,
    pub threshold: f64,
    pub blocks: Vec<BlockReport>,
    pub pass: bool,
}

/// Compares [`backward`] against central differences for one block and seed.
pub fn check_block(block: BlockId, seed: u64, cfg: &GradCheckConfig) -> Result<BlockReport> {
    let case = BlockCase::random(block, seed, cfg)?;
    let out = case.forward()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(200 + block as u64);
    let upstream = uniform(out.shape(), -1.0, 1.0, &mut rng);
    let analytic = backward(&case, &upstream)?;

    let loss = |c: &BlockCase| -> Result<f64> { c.forward()?.dot(&upstream) };
    let mut tensors = Vec::new();
    for (i, ((name, t), a)) in case.tensors().into_iter().zip(&analytic).enumerate() {
        let entries: Vec<usize> = if t.len() <= cfg.max_probes {
            (0..t.len()).collect()
        } else {
            let mut e = sample(&mut rng, t.len(), cfg.max_probes).into_vec();
            e.sort_unstable();
            e
        };
        let numeric = finite_diff_entries(loss, &case, i, &entries, cfg.eps)?;
        let (mut max_abs, mut max_rel) = (0.0f64, 0.0f64);
        for (&e, &n) in entries.iter().zip(&numeric) {
            let av = a.data()[e];
            let err = (av - n).abs();
            max_abs = max_abs.max(err);
            max_rel = max_rel.max(err / av.abs().max(n.abs()).max(1e-12));
        }
        tensors.push(TensorReport {
            name,
            entries_checked: entries.len(),
            entries_total: t.len(),
            max_abs_error: max_abs,
            max_rel_error: max_rel,
            pass: max_rel < cfg.threshold,
        });
    }
    let pass = tensors.iter().all(|t| t.pass);
    Ok(BlockReport { block, seed, tensors, pass })
}

pub fn run_gradcheck(blocks: &[BlockId], cfg: &GradCheckConfig) -> Result<GradReport> {
    let mut reports = Vec::new();
    for &b in blocks {
        for &s in &cfg.seeds {
            reports.push(check_block(b, s, cfg)?);
        }
    }
    let pass = reports.iter().all(|r| r.pass);
    Ok(GradReport {
        eps: cfg.eps,
        threshold: cfg.threshold,
        blocks: reports,
        pass,
    })
}
