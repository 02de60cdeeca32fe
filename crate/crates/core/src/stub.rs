//! Stand-in for the CNN spatial stream: four 3×3 stride-2 convolutions
//! (1 → 16 → 32 → 64 → C), each followed by ReLU. Output is at 1/16 of the
//! input resolution, matching the frequency stream.

use crate::error::{dim_err, param_err, Result};
use crate::nn::{param_rng, relu, relu_uniform, ParamSet};
use crate::tensor::{conv2d, Tensor};

pub const STUB_WIDTHS: [usize; 4] = [16, 32, 64, 0];

#[derive(Clone, Debug, PartialEq)]
pub struct StubParams {
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

impl StubParams {
    pub fn init(channels: usize, seed: u64) -> Self {
        let mut rng = param_rng(seed, 2);
        let mut cin = 1;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (k, &w) in STUB_WIDTHS.iter().enumerate() {
            let cout = if k == 3 { channels } else { w };
            weights.push(relu_uniform(&[cout, cin, 3, 3], cin * 9, &mut rng));
            biases.push(Tensor::zeros(&[cout]));
            cin = cout;
        }
        Self { weights, biases }
    }

    pub fn channels(&self) -> usize {
        self.weights.last().map_or(0, |w| w.shape()[0])
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weights: self.weights.iter().map(Tensor::zeros_like).collect(),
            biases: self.biases.iter().map(Tensor::zeros_like).collect(),
        }
    }
}

impl ParamSet for StubParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            out.push((format!("stub.conv{k}.w"), w));
            out.push((format!("stub.conv{k}.b"), b));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (k, (w, b)) in self.weights.iter_mut().zip(self.biases.iter_mut()).enumerate() {
            out.push((format!("stub.conv{k}.w"), w));
            out.push((format!("stub.conv{k}.b"), b));
        }
        out
    }
}

/// Inputs to every stage; stage `k+1`'s input is stage `k`'s ReLU output.
pub struct StubCache {
    pub(crate) inputs: Vec<Tensor>,
    pub(crate) outputs: Vec<Tensor>,
}

pub fn stub_forward(image: &Tensor, params: &StubParams) -> Result<Tensor> {
    stub_forward_cached(image, params).map(|(t, _)| t)
}

pub fn stub_forward_cached(image: &Tensor, params: &StubParams) -> Result<(Tensor, StubCache)> {
    let (c, h, w) = image.dims3()?;
    if c != 1 {
        return dim_err(format!("spatial stream expects one input channel, got {c}"));
    }
    if h % 16 != 0 || w % 16 != 0 {
        return dim_err(format!("spatial stream input {h}×{w} is not a multiple of 16"));
    }
    if params.weights.len() != 4 || params.biases.len() != 4 {
        return param_err("spatial stream needs exactly four conv stages");
    }
    let mut x = image.clone();
    let mut inputs = Vec::with_capacity(4);
    let mut outputs = Vec::with_capacity(4);
    for (wt, b) in params.weights.iter().zip(&params.biases) {
        let y = conv2d(&x, wt, b, 2, 1)?.map(relu);
        inputs.push(std::mem::replace(&mut x, y.clone()));
        outputs.push(y);
    }
    Ok((x, StubCache { inputs, outputs }))
}
