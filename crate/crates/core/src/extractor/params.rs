use crate::error::{param_err, Result};
use crate::freq::FreqMode;
use crate::nn::{fan_in_uniform, param_rng, Linear, ParamSet};
use crate::tensor::Tensor;

/// Architecture and preprocessing settings of the frequency stream.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtractorConfig {
    pub channels: usize,
    pub patch_size: usize,
    pub retention: usize,
    pub num_blocks: usize,
    /// Hidden width of each MLP block is `expansion · channels`.
    pub expansion: usize,
    /// Channel attention squeezes to `channels / reduction`.
    pub reduction: usize,
    pub dropout: f64,
    pub pe_scale: f64,
    pub freq_mode: FreqMode,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            channels: 256,
            patch_size: 8,
            retention: 5,
            num_blocks: 6,
            expansion: 2,
            reduction: 16,
            dropout: 0.3,
            pe_scale: 1.0,
            freq_mode: FreqMode::Coefficient,
        }
    }
}

/// Total downsampling of both streams relative to the padded image.
pub const STREAM_STRIDE: usize = 16;

impl ExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        let c = self.channels;
        if c == 0 || !c.is_multiple_of(4) {
            return param_err(format!("channels={c} must be a positive multiple of 4"));
        }
        if self.reduction == 0 || !c.is_multiple_of(self.reduction) {
            return param_err(format!(
                "channels={c} not divisible by attention reduction {}",
                self.reduction
            ));
        }
        if self.expansion == 0 {
            return param_err("MLP expansion must be ≥ 1");
        }
        if self.num_blocks == 0 {
            return param_err("at least one MLP block is required");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return param_err(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !self.pe_scale.is_finite() {
            return param_err("pe_scale must be finite");
        }
        let n = self.patch_size;
        if n < 2 || !STREAM_STRIDE.is_multiple_of(n) {
            return param_err(format!("patch size {n} must be ≥ 2 and divide {STREAM_STRIDE}"));
        }
        if self.retention < 1 || self.retention > n {
            return param_err(format!("retention m={} outside [1, {n}]", self.retention));
        }
        Ok(())
    }

    /// Pooling factor that brings the token grid to the shared 1/16 resolution.
    pub fn pool_factor(&self) -> usize {
        STREAM_STRIDE / self.patch_size
    }

    pub fn hidden(&self) -> usize {
        self.expansion * self.channels
    }

    pub fn squeezed(&self) -> usize {
        self.channels / self.reduction
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpBlockParams {
    pub ln_gamma: Tensor,
    pub ln_beta: Tensor,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl MlpBlockParams {
    pub fn channels(&self) -> usize {
        self.ln_gamma.len()
    }
}

/// Squeeze (`fc1: C/r′×C`) and excite (`fc2: C×C/r′`) maps.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelAttentionParams {
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtractorParams {
    pub config: ExtractorConfig,
    /// `C×1×n×n`
    pub embed_weight: Tensor,
    pub embed_bias: Tensor,
    pub blocks: Vec<MlpBlockParams>,
    pub attention: ChannelAttentionParams,
}

impl ExtractorParams {
    /// Seeded uniform fan-in initialisation; biases and LN shift zero, LN scale one.
    pub fn init(config: ExtractorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = param_rng(seed, 1);
        let (c, n, hidden, sq) = (config.channels, config.patch_size, config.hidden(), config.squeezed());
        let embed_weight = fan_in_uniform(&[c, 1, n, n], n * n, &mut rng);
        let blocks = (0..config.num_blocks)
            .map(|_| MlpBlockParams {
                ln_gamma: Tensor::filled(&[c], 1.0),
                ln_beta: Tensor::zeros(&[c]),
                fc1: Linear::init(c, hidden, &mut rng),
                fc2: Linear::init(hidden, c, &mut rng),
            })
            .collect();
        let attention = ChannelAttentionParams {
            fc1: Linear::init(c, sq, &mut rng),
            fc2: Linear::init(sq, c, &mut rng),
        };
        Ok(Self {
            config,
            embed_weight,
            embed_bias: Tensor::zeros(&[c]),
            blocks,
            attention,
        })
    }

    /// Same structure with every tensor zeroed; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }
}

impl ParamSet for ExtractorParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("embed.w".to_string(), &self.embed_weight),
            ("embed.b".to_string(), &self.embed_bias),
        ];
        for (k, b) in self.blocks.iter().enumerate() {
            out.push((format!("mlp{k}.ln.g"), &b.ln_gamma));
            out.push((format!("mlp{k}.ln.b"), &b.ln_beta));
            out.push((format!("mlp{k}.fc1.w"), &b.fc1.weight));
            out.push((format!("mlp{k}.fc1.b"), &b.fc1.bias));
            out.push((format!("mlp{k}.fc2.w"), &b.fc2.weight));
            out.push((format!("mlp{k}.fc2.b"), &b.fc2.bias));
        }
        out.push(("ca.w1".to_string(), &self.attention.fc1.weight));
        out.push(("ca.b1".to_string(), &self.attention.fc1.bias));
        out.push(("ca.w2".to_string(), &self.attention.fc2.weight));
        out.push(("ca.b2".to_string(), &self.attention.fc2.bias));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![
            ("embed.w".to_string(), &mut self.embed_weight),
            ("embed.b".to_string(), &mut self.embed_bias),
        ];
        for (k, b) in self.blocks.iter_mut().enumerate() {
            out.push((format!("mlp{k}.ln.g"), &mut b.ln_gamma));
            out.push((format!("mlp{k}.ln.b"), &mut b.ln_beta));
            out.push((format!("mlp{k}.fc1.w"), &mut b.fc1.weight));
            out.push((format!("mlp{k}.fc1.b"), &mut b.fc1.bias));
            out.push((format!("mlp{k}.fc2.w"), &mut b.fc2.weight));
            out.push((format!("mlp{k}.fc2.b"), &mut b.fc2.bias));
        }
        out.push(("ca.w1".to_string(), &mut self.attention.fc1.weight));
        out.push(("ca.b1".to_string(), &mut self.attention.fc1.bias));
        out.push(("ca.w2".to_string(), &mut self.attention.fc2.weight));
        out.push(("ca.b2".to_string(), &mut self.attention.fc2.bias));
        out
    }
}

impl ParamSet for MlpBlockParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("ln.g".into(), &self.ln_gamma),
            ("ln.b".into(), &self.ln_beta),
            ("fc1.w".into(), &self.fc1.weight),
            ("fc1.b".into(), &self.fc1.bias),
            ("fc2.w".into(), &self.fc2.weight),
            ("fc2.b".into(), &self.fc2.bias),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("ln.g".into(), &mut self.ln_gamma),
            ("ln.b".into(), &mut self.ln_beta),
            ("fc1.w".into(), &mut self.fc1.weight),
            ("fc1.b".into(), &mut self.fc1.bias),
            ("fc2.w".into(), &mut self.fc2.weight),
            ("fc2.b".into(), &mut self.fc2.bias),
        ]
    }
}

impl ParamSet for ChannelAttentionParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("w1".into(), &self.fc1.weight),
            ("b1".into(), &self.fc1.bias),
            ("w2".into(), &self.fc2.weight),
            ("b2".into(), &self.fc2.bias),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("w1".into(), &mut self.fc1.weight),
            ("b1".into(), &mut self.fc1.bias),
            ("w2".into(), &mut self.fc2.weight),
            ("b2".into(), &mut self.fc2.bias),
        ]
    }
}
