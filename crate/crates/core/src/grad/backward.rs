//! Analytic backward passes for every learnable block.
//!
//! Each function takes the cache produced by the matching `*_cached`
//! forward and the gradient of a scalar loss with respect to that block's
//! output, and returns gradients for the block input and its parameters.

use crate::error::Result;
use crate::extractor::{
    ChannelAttentionCache, ChannelAttentionParams, ExtractorCache, ExtractorFlags, ExtractorParams,
    MlpBlockParams, MlpCache,
};
use crate::fab::{FabCache, FabJoin, FabParams, FabVectors};
use crate::model::{MfhModel, ModelCache};
use crate::nn::{gelu_grad, grid_to_rows, rows_to_grid, Linear};
use crate::stub::{StubCache, StubParams};
use crate::tensor::{
    avg_pool_ceil_backward, conv2d_backward, layer_norm_backward, Tensor,
};

pub fn mlp_block_backward(
    cache: &MlpCache,
    params: &MlpBlockParams,
    upstream: &Tensor,
) -> Result<(Tensor, MlpBlockParams)> {
    let (h, w) = cache.grid;
    let g_rows = grid_to_rows(upstream)?;

    let mut g_out = g_rows.clone();
    if let Some(mask) = &cache.mask_out {
        g_out.data_mut().iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
    }
    let fc2 = params.fc2.backward_rows(&cache.hidden, &g_out)?;

    let mut g_pre = fc2.input;
    if let Some(mask) = &cache.mask_hidden {
        g_pre.data_mut().iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
    }
    g_pre
        .data_mut()
        .iter_mut()
        .zip(cache.pre_act.data())
        .for_each(|(g, &z)| *g *= gelu_grad(z));
    let fc1 = params.fc1.backward_rows(&cache.normed, &g_pre)?;

    let (mut g_in, g_gamma, g_beta) =
        layer_norm_backward(&cache.input_rows, &params.ln_gamma, &cache.ln_stats, &fc1.input)?;
    g_in.add_assign(&g_rows)?;

    Ok((
        rows_to_grid(&g_in, h, w)?,
        MlpBlockParams {
            ln_gamma: g_gamma,
            ln_beta: g_beta,
            fc1: Linear {
                weight: fc1.weight,
                bias: fc1.bias,
            },
            fc2: Linear {
                weight: fc2.weight,
                bias: fc2.bias,
            },
        },
    ))
}

pub fn channel_attention_backward(
    cache: &ChannelAttentionCache,
    params: &ChannelAttentionParams,
    upstream: &Tensor,
) -> Result<(Tensor, ChannelAttentionParams)> {
    let x = &cache.input;
    let (c, h, w) = x.dims3()?;
    let hw = h * w;
    let gate = cache.gate.data();

    let mut g_x = Tensor::from_fn(x.shape(), |i| upstream.data()[i] * gate[i / hw]);
    let g_gate: Vec<f64> = (0..c)
        .map(|ch| {
            let r = ch * hw..(ch + 1) * hw;
            upstream.data()[r.clone()]
                .iter()
                .zip(&x.data()[r])
                .map(|(g, v)| g * v)
                .sum()
        })
        .collect();
    let g_z2 = Tensor::new(
        vec![c],
        g_gate.iter().zip(gate).map(|(g, s)| g * s * (1.0 - s)).collect(),
    )?;
    let fc2 = params.fc2.backward_vec(&cache.squeezed, &g_z2)?;
    let g_z1 = fc2.input.zip_with(&cache.squeezed_pre, |g, z| if z > 0.0 { g } else { 0.0 })?;
    let fc1 = params.fc1.backward_vec(&cache.pooled, &g_z1)?;

    let inv = 1.0 / hw as f64;
    for (i, g) in g_x.data_mut().iter_mut().enumerate() {
        *g += fc1.input.data()[i / hw] * inv;
    }
    Ok((
        g_x,
        ChannelAttentionParams {
            fc1: Linear {
                weight: fc1.weight,
                bias: fc1.bias,
            },
            fc2: Linear {
                weight: fc2.weight,
                bias: fc2.bias,
            },
        },
    ))
}

/// Gradients of the patch embedding; returns `(d_input, d_weight, d_bias)`.
pub fn patch_embed_backward(
    input: &Tensor,
    params: &ExtractorParams,
    upstream: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let n = params.config.patch_size;
    let g = conv2d_backward(input, &params.embed_weight, n, 0, upstream)?;
    Ok((g.input, g.weight, g.bias))
}

/// Full extractor backward from `dL/dK`. The preprocessed image has no
/// learnable parents, so only parameter gradients are returned.
pub fn extractor_backward(
    cache: &ExtractorCache,
    params: &ExtractorParams,
    flags: ExtractorFlags,
    upstream: &Tensor,
) -> Result<ExtractorParams> {
    let mut grads = params.zeros_like();
    // positional encoding is additive and parameter-free
    let mut g = avg_pool_ceil_backward(&cache.token_shape, params.config.pool_factor(), upstream)?;
    if flags.channel_attention {
        if let Some(ca) = &cache.attention {
            let (gx, gp) = channel_attention_backward(ca, &params.attention, &g)?;
            g = gx;
            grads.attention = gp;
        }
    }
    for (k, block) in params.blocks.iter().enumerate().rev() {
        let (gx, gp) = mlp_block_backward(&cache.mlp[k], block, &g)?;
        g = gx;
        grads.blocks[k] = gp;
    }
    let (_, gw, gb) = patch_embed_backward(&cache.freq, params, &g)?;
    grads.embed_weight = gw;
    grads.embed_bias = gb;
    Ok(grads)
}

/// Returns `(dK, dT, parameter grads)`.
pub fn fab_backward(
    k: &Tensor,
    t: &Tensor,
    params: &FabParams,
    cache: &FabCache,
    upstream: &Tensor,
) -> Result<(Tensor, Tensor, FabParams)> {
    let (c, h, w) = k.dims3()?;
    let hw = h * w;
    let a = cache.attention.data();
    let (vk, vt) = params.effective_vectors();
    let (vk, vt) = (vk.data(), vt.data());
    let (kd, td, gd) = (k.data(), t.data(), upstream.data());

    let mut g_k = vec![0.0; k.len()];
    let mut g_t = vec![0.0; t.len()];
    let mut g_vk = vec![0.0; c];
    let mut g_vt = vec![0.0; c];
    let mut g_a = vec![0.0; 2 * hw];
    for ch in 0..c {
        for p in 0..hw {
            let i = ch * hw + p;
            let g = gd[i];
            g_k[i] = g * a[p] * vk[ch];
            g_t[i] = g * a[hw + p] * vt[ch];
            g_vk[ch] += g * a[p] * kd[i];
            g_vt[ch] += g * a[hw + p] * td[i];
            g_a[p] += g * kd[i] * vk[ch];
            g_a[hw + p] += g * td[i] * vt[ch];
        }
    }
    let g_z = Tensor::new(
        vec![2, h, w],
        g_a.iter().zip(a).map(|(g, s)| g * s * (1.0 - s)).collect(),
    )?;
    let conv = conv2d_backward(&cache.joined, &params.conv_w, 1, 1, &g_z)?;
    let gj = conv.input.data();
    match params.variant.join {
        FabJoin::Concat => {
            for i in 0..k.len() {
                g_k[i] += gj[i];
                g_t[i] += gj[k.len() + i];
            }
        }
        FabJoin::Add => {
            for i in 0..k.len() {
                g_k[i] += gj[i];
                g_t[i] += gj[i];
            }
        }
    }
    if params.variant.vectors == FabVectors::Unit {
        g_vk.iter_mut().chain(g_vt.iter_mut()).for_each(|v| *v = 0.0);
    }
    Ok((
        Tensor::new(k.shape().to_vec(), g_k)?,
        Tensor::new(t.shape().to_vec(), g_t)?,
        FabParams {
            conv_w: conv.weight,
            conv_b: conv.bias,
            v_k: Tensor::new(vec![c], g_vk)?,
            v_t: Tensor::new(vec![c], g_vt)?,
            variant: params.variant,
        },
    ))
}

/// Returns `(d_image, parameter grads)`.
pub fn stub_backward(cache: &StubCache, params: &StubParams, upstream: &Tensor) -> Result<(Tensor, StubParams)> {
    let mut grads = params.zeros_like();
    let mut g = upstream.clone();
    for k in (0..params.weights.len()).rev() {
        let gated = g.zip_with(&cache.outputs[k], |g, y| if y > 0.0 { g } else { 0.0 })?;
        let conv = conv2d_backward(&cache.inputs[k], &params.weights[k], 2, 1, &gated)?;
        grads.weights[k] = conv.weight;
        grads.biases[k] = conv.bias;
        g = conv.input;
    }
    Ok((g, grads))
}

/// Gradients of the full two-stream model from `dL/d fused`.
pub fn model_backward(model: &MfhModel, cache: &ModelCache, upstream: &Tensor) -> Result<MfhModel> {
    let (g_k, g_t, fab) = match &cache.fab {
        Some(fc) => fab_backward(&cache.k, &cache.t, &model.fab, fc, upstream)?,
        None => (upstream.clone(), upstream.clone(), model.fab.zeros_like()),
    };
    let extractor = extractor_backward(&cache.extractor, &model.extractor, model.flags, &g_k)?;
    let (_, stub) = stub_backward(&cache.stub, &model.stub, &g_t)?;
    Ok(MfhModel {
        extractor,
        stub,
        fab,
        flags: model.flags,
        use_fab: model.use_fab,
    })
}
