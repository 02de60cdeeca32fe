use rand::Rng;

use super::params::{ChannelAttentionParams, ExtractorParams, MlpBlockParams};
use crate::error::{dim_err, Result};
use crate::freq::FreqImage;
use crate::nn::{gelu, grid_to_rows, param_rng, relu, rows_to_grid, sigmoid};
use crate::tensor::{
    avg_pool_ceil, conv2d, global_avg_pool, layer_norm_with_stats, LayerNormStats, Tensor,
};

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DropoutMode {
    /// Dropout disabled; no random source is touched.
    #[default]
    Deterministic,
    /// Inverted dropout with masks drawn from a seeded ChaCha stream.
    Train { seed: u64 },
}

/// `C×1×n×n` convolution with stride `n`: each `n×n` block becomes a token.
pub fn patch_embed(freq: &FreqImage, params: &ExtractorParams) -> Result<Tensor> {
    embed_tensor(&freq.data, params)
}

pub(crate) fn embed_tensor(x: &Tensor, params: &ExtractorParams) -> Result<Tensor> {
    let n = params.config.patch_size;
    let (_, h, w) = x.dims3()?;
    if h % n != 0 || w % n != 0 {
        return dim_err(format!("{h}×{w} input not divisible by patch size {n}"));
    }
    conv2d(x, &params.embed_weight, &params.embed_bias, n, 0)
}

fn dropout_mask(len: usize, rate: f64, seed: u64, stream: u64) -> Vec<f64> {
    let mut rng = param_rng(seed, stream);
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

/// Intermediates of one MLP block, kept for the backward pass.
pub struct MlpCache {
    pub(crate) input_rows: Tensor,
    pub(crate) ln_stats: LayerNormStats,
    pub(crate) normed: Tensor,
    pub(crate) pre_act: Tensor,
    pub(crate) hidden: Tensor,
    pub(crate) mask_hidden: Option<Vec<f64>>,
    pub(crate) mask_out: Option<Vec<f64>>,
    pub(crate) grid: (usize, usize),
}

/// Residual MLP over every token: `x + Drop(fc2(Drop(GELU(fc1(LN(x))))))`.
///
/// `block_index` selects an independent dropout stream per block.
pub fn mlp_block(
    tokens: &Tensor,
    params: &MlpBlockParams,
    dropout: f64,
    mode: DropoutMode,
    block_index: usize,
) -> Result<Tensor> {
    mlp_block_cached(tokens, params, dropout, mode, block_index).map(|(y, _)| y)
}

pub fn mlp_block_cached(
    tokens: &Tensor,
    params: &MlpBlockParams,
    dropout: f64,
    mode: DropoutMode,
    block_index: usize,
) -> Result<(Tensor, MlpCache)> {
    let (c, h, w) = tokens.dims3()?;
    if c != params.channels() {
        return dim_err(format!("tokens have {c} channels, block expects {}", params.channels()));
    }
    let rows = grid_to_rows(tokens)?;
    let (normed, ln_stats) = layer_norm_with_stats(&rows, &params.ln_gamma, &params.ln_beta, LN_EPS)?;
    let pre_act = params.fc1.forward_rows(&normed)?;
    let mut hidden = pre_act.map(gelu);

    let (mask_hidden, mask_out) = match mode {
        DropoutMode::Train { seed } if dropout > 0.0 => {
            let stream = 1000 + 2 * block_index as u64;
            (
                Some(dropout_mask(hidden.len(), dropout, seed, stream)),
                Some(dropout_mask(rows.len(), dropout, seed, stream + 1)),
            )
        }
        _ => (None, None),
    };
    if let Some(mask) = &mask_hidden {
        hidden.data_mut().iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
    }
    let mut out = params.fc2.forward_rows(&hidden)?;
    if let Some(mask) = &mask_out {
        out.data_mut().iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
    }
    out.add_assign(&rows)?;
    let y = rows_to_grid(&out, h, w)?;
    Ok((
        y,
        MlpCache {
            input_rows: rows,
            ln_stats,
            normed,
            pre_act,
            hidden,
            mask_hidden,
            mask_out,
            grid: (h, w),
        },
    ))
}

pub struct ChannelAttentionCache {
    pub(crate) input: Tensor,
    pub(crate) pooled: Tensor,
    pub(crate) squeezed_pre: Tensor,
    pub(crate) squeezed: Tensor,
    pub(crate) gate: Tensor,
}

/// `x ⊙ σ(W2·ReLU(W1·GAP(x) + b1) + b2)`, gate broadcast over space.
pub fn channel_attention(tokens: &Tensor, params: &ChannelAttentionParams) -> Result<Tensor> {
    channel_attention_cached(tokens, params).map(|(y, _)| y)
}

pub fn channel_attention_cached(
    tokens: &Tensor,
    params: &ChannelAttentionParams,
) -> Result<(Tensor, ChannelAttentionCache)> {
    let (c, h, w) = tokens.dims3()?;
    if c != params.fc1.in_features() || c != params.fc2.out_features() {
        return dim_err(format!("tokens have {c} channels, attention expects {}", params.fc1.in_features()));
    }
    let pooled = global_avg_pool(tokens)?;
    let squeezed_pre = params.fc1.forward_vec(&pooled)?;
    let squeezed = squeezed_pre.map(relu);
    let gate = params.fc2.forward_vec(&squeezed)?.map(sigmoid);
    let hw = h * w;
    let y = Tensor::from_fn(tokens.shape(), |i| tokens.data()[i] * gate.data()[i / hw]);
    Ok((
        y,
        ChannelAttentionCache {
            input: tokens.clone(),
            pooled,
            squeezed_pre,
            squeezed,
            gate,
        },
    ))
}

/// Average-pools the token grid by `16 / n` so that it lands on the shared
/// 1/16 resolution of the spatial stream (a 2×2 pool for `n = 8`).
pub fn downsample_to_match(tokens: &Tensor, patch_size: usize) -> Result<Tensor> {
    let factor = super::params::STREAM_STRIDE / patch_size;
    avg_pool_ceil(tokens, factor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extractor::ExtractorConfig;
    use crate::freq::{preprocess, FreqMode};
    use crate::nn::{gelu, Linear};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_params(seed: u64) -> ExtractorParams {
        let cfg = ExtractorConfig { channels: 8, patch_size: 4, retention: 3, num_blocks: 2, reduction: 4, ..Default::default() };
        ExtractorParams::init(cfg, seed).unwrap()
    }

    fn random_grid(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    fn perturb(t: &mut Tensor, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.5..0.5));
    }

    #[test]
    fn summing_kernel_gives_block_sums() {
        let mut p = small_params(0);
        p.embed_weight = Tensor::zeros(&[8, 1, 4, 4]);
        for i in 0..16 {
            p.embed_weight.data_mut()[i] = 1.0;
        }
        let img = random_grid(&[1, 8, 8], 1);
        let freq = FreqImage { data: img.clone(), mode: FreqMode::Coefficient, block: 4 };
        let tok = patch_embed(&freq, &p).unwrap();
        assert_eq!(tok.shape(), &[8, 2, 2]);
        let mut s = 0.0;
        for y in 0..4 {
            for x in 4..8 {
                s += img.get(&[0, y, x]);
            }
        }
        assert!((tok.get(&[0, 0, 1]) - s).abs() < 1e-12);
    }

    #[test]
    fn zero_input_embeds_to_bias() {
        let mut p = small_params(2);
        p.embed_bias = Tensor::from_fn(&[8], |i| i as f64 - 3.0);
        let freq = FreqImage { data: Tensor::zeros(&[1, 8, 12]), mode: FreqMode::Coefficient, block: 4 };
        let tok = patch_embed(&freq, &p).unwrap();
        for c in 0..8 {
            for i in 0..2 {
                for j in 0..3 {
                    assert_eq!(tok.get(&[c, i, j]), c as f64 - 3.0);
                }
            }
        }
    }

    #[test]
    fn default_embedding_shape() {
        let cfg = ExtractorConfig::default();
        let p = ExtractorParams::init(cfg, 0).unwrap();
        let img = random_grid(&[1, 64, 64], 3).map(|v| v.abs());
        let freq = preprocess(&img, 8, 5, FreqMode::Coefficient).unwrap();
        assert_eq!(patch_embed(&freq, &p).unwrap().shape(), &[256, 8, 8]);
    }

    #[test]
    fn mlp_with_zero_fc2_is_identity() {
        let mut p = small_params(4).blocks[0].clone();
        p.fc2 = Linear::zeros(p.fc2.in_features(), 8);
        let x = random_grid(&[8, 3, 5], 5);
        assert_eq!(mlp_block(&x, &p, 0.3, DropoutMode::Deterministic, 0).unwrap(), x);
        assert_eq!(mlp_block(&x, &p, 0.3, DropoutMode::Train { seed: 9 }, 0).unwrap(), x);
    }

    #[test]
    fn mlp_matches_per_token_reference() {
        let mut p = small_params(6).blocks[1].clone();
        perturb(&mut p.ln_gamma, 60);
        perturb(&mut p.ln_beta, 61);
        perturb(&mut p.fc1.bias, 62);
        perturb(&mut p.fc2.bias, 63);
        let x = random_grid(&[8, 3, 4], 7);
        let y = mlp_block(&x, &p, 0.3, DropoutMode::Deterministic, 1).unwrap();
        let hidden = p.fc1.out_features();
        for i in 0..3 {
            for j in 0..4 {
                let tok: Vec<f64> = (0..8).map(|c| x.get(&[c, i, j])).collect();
                let mu = tok.iter().sum::<f64>() / 8.0;
                let var = tok.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 8.0;
                let ln: Vec<f64> = (0..8)
                    .map(|c| (tok[c] - mu) / (var + LN_EPS).sqrt() * p.ln_gamma.get(&[c]) + p.ln_beta.get(&[c]))
                    .collect();
                let act: Vec<f64> = (0..hidden)
                    .map(|r| {
                        let z: f64 = (0..8).map(|c| p.fc1.weight.get(&[r, c]) * ln[c]).sum::<f64>() + p.fc1.bias.get(&[r]);
                        gelu(z)
                    })
                    .collect();
                for c in 0..8 {
                    let o: f64 = (0..hidden).map(|r| p.fc2.weight.get(&[c, r]) * act[r]).sum::<f64>() + p.fc2.bias.get(&[c]);
                    assert!((y.get(&[c, i, j]) - (tok[c] + o)).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn mlp_determinism_and_dropout_seeding() {
        let p = small_params(8).blocks[0].clone();
        let x = random_grid(&[8, 4, 4], 9);
        let a = mlp_block(&x, &p, 0.3, DropoutMode::Deterministic, 0).unwrap();
        let b = mlp_block(&x, &p, 0.3, DropoutMode::Deterministic, 0).unwrap();
        assert_eq!(a.data(), b.data());
        let t1 = mlp_block(&x, &p, 0.3, DropoutMode::Train { seed: 1 }, 0).unwrap();
        let t1b = mlp_block(&x, &p, 0.3, DropoutMode::Train { seed: 1 }, 0).unwrap();
        let t2 = mlp_block(&x, &p, 0.3, DropoutMode::Train { seed: 2 }, 0).unwrap();
        assert_eq!(t1, t1b);
        assert_ne!(t1, t2);
        assert_ne!(t1, a);
    }

    #[test]
    fn attention_half_gate_and_zero_cases() {
        let mut p = small_params(10).attention;
        p.fc2 = Linear::zeros(p.fc2.in_features(), 8);
        let x = random_grid(&[8, 3, 3], 11);
        let y = channel_attention(&x, &p).unwrap();
        assert_eq!(y, x.scale(0.5));

        let p = small_params(12).attention;
        let z = Tensor::zeros(&[8, 2, 2]);
        assert_eq!(channel_attention(&z, &p).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn attention_matches_loop_reference() {
        let mut p = small_params(13).attention;
        perturb(&mut p.fc1.bias, 130);
        perturb(&mut p.fc2.bias, 131);
        let x = random_grid(&[8, 3, 4], 14);
        let y = channel_attention(&x, &p).unwrap();
        let sq = p.fc1.out_features();
        let mean: Vec<f64> = (0..8)
            .map(|c| (0..3).flat_map(|i| (0..4).map(move |j| (i, j))).map(|(i, j)| x.get(&[c, i, j])).sum::<f64>() / 12.0)
            .collect();
        let v: Vec<f64> = (0..sq)
            .map(|r| ((0..8).map(|c| p.fc1.weight.get(&[r, c]) * mean[c]).sum::<f64>() + p.fc1.bias.get(&[r])).max(0.0))
            .collect();
        for c in 0..8 {
            let z = (0..sq).map(|r| p.fc2.weight.get(&[c, r]) * v[r]).sum::<f64>() + p.fc2.bias.get(&[c]);
            let g = 1.0 / (1.0 + (-z).exp());
            assert!(g > 0.0 && g < 1.0);
            for i in 0..3 {
                for j in 0..4 {
                    assert!((y.get(&[c, i, j]) - x.get(&[c, i, j]) * g).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn downsample_cases() {
        let c = Tensor::filled(&[4, 6, 6], 2.5);
        let y = downsample_to_match(&c, 8).unwrap();
        assert_eq!(y, Tensor::filled(&[4, 3, 3], 2.5));

        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(downsample_to_match(&x, 8).unwrap().data(), &[2.5]);

        assert_eq!(downsample_to_match(&Tensor::zeros(&[256, 8, 8]), 8).unwrap().shape(), &[256, 4, 4]);
        // n = 16 tokens are already at the shared resolution
        let t = random_grid(&[4, 3, 5], 15);
        assert_eq!(downsample_to_match(&t, 16).unwrap(), t);
    }
}
