//! Frequency feature extractor: patch embedding, residual MLP blocks,
//! channel attention and 2-D positional encoding, pooled down to the
//! resolution shared with the spatial stream.

mod blocks;
mod params;
mod posenc;

pub use blocks::{
    channel_attention, channel_attention_cached, downsample_to_match, mlp_block, mlp_block_cached,
    patch_embed, ChannelAttentionCache, DropoutMode, MlpCache, LN_EPS,
};
pub use params::{
    ChannelAttentionParams, ExtractorConfig, ExtractorParams, MlpBlockParams, STREAM_STRIDE,
};
pub use posenc::{positional_encoding_2d, sinusoid_1d};

use crate::error::Result;
use crate::freq::preprocess;
use crate::tensor::Tensor;

/// Component switches for ablations plus the dropout mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExtractorFlags {
    pub channel_attention: bool,
    pub positional_encoding: bool,
    pub dropout: DropoutMode,
}

impl Default for ExtractorFlags {
    fn default() -> Self {
        Self {
            channel_attention: true,
            positional_encoding: true,
            dropout: DropoutMode::Deterministic,
        }
    }
}

pub struct ExtractorCache {
    /// Preprocessed input to the patch embedding, `1×H′×W′`.
    pub(crate) freq: Tensor,
    pub(crate) mlp: Vec<MlpCache>,
    pub(crate) attention: Option<ChannelAttentionCache>,
    pub(crate) token_shape: Vec<usize>,
}

/// Image `1×H×W` → frequency feature `K: C×⌈H′/16⌉×⌈W′/16⌉`.
pub fn extractor_forward(image: &Tensor, params: &ExtractorParams, flags: ExtractorFlags) -> Result<Tensor> {
    extractor_forward_cached(image, params, flags).map(|(k, _)| k)
}

pub fn extractor_forward_cached(
    image: &Tensor,
    params: &ExtractorParams,
    flags: ExtractorFlags,
) -> Result<(Tensor, ExtractorCache)> {
    let cfg = &params.config;
    cfg.validate()?;
    let freq = preprocess(image, cfg.patch_size, cfg.retention, cfg.freq_mode)?;
    let mut tokens = patch_embed(&freq, params)?;

    let mut mlp = Vec::with_capacity(params.blocks.len());
    for (k, block) in params.blocks.iter().enumerate() {
        let (next, cache) = mlp_block_cached(&tokens, block, cfg.dropout, flags.dropout, k)?;
        tokens = next;
        mlp.push(cache);
    }

    let attention = if flags.channel_attention {
        let (next, cache) = channel_attention_cached(&tokens, &params.attention)?;
        tokens = next;
        Some(cache)
    } else {
        None
    };

    if flags.positional_encoding {
        let (c, h, w) = tokens.dims3()?;
        tokens.add_assign(&positional_encoding_2d(h, w, c, cfg.pe_scale)?)?;
    }

    let token_shape = tokens.shape().to_vec();
    let k = downsample_to_match(&tokens, cfg.patch_size)?;
    Ok((
        k,
        ExtractorCache {
            freq: freq.data,
            mlp,
            attention,
            token_shape,
        },
    ))
}
