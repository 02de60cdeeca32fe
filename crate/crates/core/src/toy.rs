//! Synthetic binary task used to exercise the whole encoder end to end.
//!
//! Class 0 images hold one large filled disc. Class 1 images hold the same
//! kind of disc plus a small disc offset towards the upper right, a
//! superscript-like layout. A global-pool + linear head on the fused
//! feature is trained by full-batch gradient descent on the logistic loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::extractor::{DropoutMode, ExtractorConfig};
use crate::fab::FabVariant;
use crate::grad::model_backward;
use crate::model::MfhModel;
use crate::nn::{Linear, ParamSet};
use crate::tensor::{global_avg_pool, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ToyConfig {
    pub extractor: ExtractorConfig,
    pub variant: FabVariant,
    pub use_fab: bool,
    pub channel_attention: bool,
    pub positional_encoding: bool,
    pub image_size: usize,
    pub batch: usize,
    pub steps: usize,
    pub lr: f64,
    pub dataset_seed: u64,
    pub init_seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            extractor: ExtractorConfig {
                channels: 16,
                num_blocks: 2,
                reduction: 4,
                dropout: 0.0,
                ..ExtractorConfig::default()
            },
            variant: FabVariant::default(),
            use_fab: true,
            channel_attention: true,
            positional_encoding: true,
            image_size: 64,
            batch: 16,
            steps: 300,
            lr: 0.5,
            dataset_seed: 0,
            init_seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ToySample {
    pub image: Tensor,
    pub label: f64,
}

fn paint_disc(img: &mut [f64], size: usize, cy: f64, cx: f64, r: f64) {
    let r2 = r * r;
    for y in 0..size {
        for x in 0..size {
            let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
            if dy * dy + dx * dx <= r2 {
                img[y * size + x] = 1.0;
            }
        }
    }
}

/// Balanced, alternating-label dataset; fully determined by `seed`.
pub fn synth_dataset(seed: u64, count: usize, size: usize) -> Vec<ToySample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    (0..count)
        .map(|i| {
            let label = (i % 2) as f64;
            let mut img = vec![0.0; size * size];
            let r = rng.gen_range(0.125 * s..0.19 * s);
            let cy = rng.gen_range(0.375 * s..0.625 * s);
            let cx = rng.gen_range(0.375 * s..0.625 * s);
            paint_disc(&mut img, size, cy, cx, r);
            // draw the same number of variates for both classes so the
            // big-disc statistics do not depend on the label
            let off = r + rng.gen_range(0.03 * s..0.08 * s);
            let small = rng.gen_range(0.03 * s..0.055 * s);
            if label == 1.0 {
                let d = off * std::f64::consts::FRAC_1_SQRT_2 + small;
                paint_disc(&mut img, size, cy - d, cx + d, small);
            }
            ToySample {
                image: Tensor::new(vec![1, size, size], img).expect("square image"),
                label,
            }
        })
        .collect()
}

/// Two-stream encoder plus a linear logit head on the pooled fused feature.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyModel {
    pub encoder: MfhModel,
    pub head: Linear,
}

impl ToyModel {
    /// Encoder seeded from `seed`; head starts at zero so the first logits
    /// are exactly 0.
    pub fn init(config: &ToyConfig) -> Result<Self> {
        let mut encoder = MfhModel::init(config.extractor.clone(), config.variant, config.init_seed)?;
        encoder.use_fab = config.use_fab;
        encoder.flags.channel_attention = config.channel_attention;
        encoder.flags.positional_encoding = config.positional_encoding;
        Ok(Self {
            head: Linear::zeros(config.extractor.channels, 1),
            encoder,
        })
    }

    pub fn logit(&self, image: &Tensor) -> Result<f64> {
        let fused = self.encoder.forward(image)?.fused;
        Ok(self.head.forward_vec(&global_avg_pool(&fused)?)?.data()[0])
    }

    fn zeros_like(&self) -> Self {
        Self {
            encoder: self.encoder.zeros_like(),
            head: Linear::zeros(self.head.in_features(), self.head.out_features()),
        }
    }
}

impl ParamSet for ToyModel {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.encoder.tensors();
        out.push(("head.w".into(), &self.head.weight));
        out.push(("head.b".into(), &self.head.bias));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.encoder.tensors_mut();
        out.push(("head.w".into(), &mut self.head.weight));
        out.push(("head.b".into(), &mut self.head.bias));
        out
    }
}

/// `log(1 + e^z) − y·z`, evaluated without overflow.
pub fn logistic_loss(z: f64, y: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z
}

/// Mean logistic loss over `data` and its gradient with respect to every
/// parameter of `model`.
pub fn loss_and_grads(model: &ToyModel, data: &[ToySample]) -> Result<(f64, ToyModel)> {
    let mut grads = model.zeros_like();
    let mut loss = 0.0;
    let inv_n = 1.0 / data.len() as f64;
    for sample in data {
        let (out, cache) = model.encoder.forward_cached(&sample.image)?;
        let pooled = global_avg_pool(&out.fused)?;
        let z = model.head.forward_vec(&pooled)?.data()[0];
        loss += logistic_loss(z, sample.label) * inv_n;

        let g_z = Tensor::new(vec![1], vec![(crate::nn::sigmoid(z) - sample.label) * inv_n])?;
        let head = model.head.backward_vec(&pooled, &g_z)?;
        grads.head.weight.add_assign(&head.weight)?;
        grads.head.bias.add_assign(&head.bias)?;

        let (_, h, w) = out.fused.dims3()?;
        let hw = h * w;
        let g_fused = Tensor::from_fn(out.fused.shape(), |i| head.input.data()[i / hw] / hw as f64);
        let g_enc = model_backward(&model.encoder, &cache, &g_fused)?;
        for ((_, acc), (_, g)) in grads.encoder.tensors_mut().into_iter().zip(g_enc.tensors()) {
            acc.add_assign(g)?;
        }
    }
    Ok((loss, grads))
}

#[derive(Clone, Debug)]
pub struct ToyRun {
    /// Loss before each update; the final entry is the loss after the last one.
    pub losses: Vec<f64>,
    pub model: ToyModel,
}

pub fn train_toy(config: &ToyConfig) -> Result<ToyRun> {
    config.extractor.validate()?;
    let data = synth_dataset(config.dataset_seed, config.batch, config.image_size);
    let mut model = ToyModel::init(config)?;
    let mut losses = Vec::with_capacity(config.steps + 1);
    for step in 0..=config.steps {
        if config.extractor.dropout > 0.0 {
            model.encoder.flags.dropout = DropoutMode::Train {
                seed: config.init_seed.wrapping_mul(1_000_003).wrapping_add(step as u64),
            };
        }
        let (loss, grads) = loss_and_grads(&model, &data)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("loss diverged at step {step}")));
        }
        losses.push(loss);
        if step < config.steps {
            model.sgd_step(&grads, config.lr)?;
        }
    }
    model.encoder.flags.dropout = DropoutMode::Deterministic;
    Ok(ToyRun { losses, model })
}

/// `step,loss` CSV with a header row.
pub fn loss_trace_csv(losses: &[f64]) -> String {
    let mut out = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        out.push_str(&format!("{i},{l}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_is_seeded_and_balanced() {
        let a = synth_dataset(3, 8, 64);
        let b = synth_dataset(3, 8, 64);
        assert_eq!(a.len(), 8);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image, y.image);
        }
        assert_eq!(a.iter().filter(|s| s.label == 1.0).count(), 4);
        // class 1 carries strictly more ink than its big disc alone
        assert!(a.iter().all(|s| s.image.data().iter().all(|&v| v == 0.0 || v == 1.0)));
    }

    #[test]
    fn logistic_loss_is_stable() {
        assert!((logistic_loss(0.0, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(logistic_loss(1000.0, 1.0).abs() < 1e-12);
        assert!((logistic_loss(-1000.0, 1.0) - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn zero_learning_rate_keeps_loss_constant() {
        let cfg = ToyConfig { steps: 3, lr: 0.0, batch: 4, image_size: 32, ..Default::default() };
        let run = train_toy(&cfg).unwrap();
        assert_eq!(run.losses.len(), 4);
        assert!(run.losses.iter().all(|&l| l == run.losses[0]));
        assert!((run.losses[0] - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn trace_csv_format() {
        assert_eq!(loss_trace_csv(&[0.5, 0.25]), "step,loss\n0,0.5\n1,0.25\n");
    }
}
