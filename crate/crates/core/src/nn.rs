//! Small building blocks shared by the extractor, the fusion block, the
//! spatial stub and the toy classifier head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, Result};
use crate::tensor::{matmul, matmul_nt, matmul_tn, Tensor};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const GELU_C: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

/// Seeded generator for one named parameter group.
pub(crate) fn param_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform(−s, s) with `s = sqrt(1 / fan_in)`.
pub(crate) fn fan_in_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let s = (1.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.gen_range(-s..s))
}

/// He-style Uniform(−s, s) with `s = sqrt(6 / fan_in)`, which keeps
/// activation variance roughly constant through a stack of ReLU layers.
pub(crate) fn relu_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let s = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.gen_range(-s..s))
}

/// Fully connected layer, `weight: out×in`, `bias: out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

pub struct LinearGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn init(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: fan_in_uniform(&[outputs, inputs], inputs, rng),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[outputs, inputs]),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Applies the layer to every row of `x: N×in`.
    pub fn forward_rows(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = matmul_nt(x, &self.weight)?;
        let out = self.out_features();
        if self.bias.shape() != [out] {
            return dim_err(format!("linear bias {:?} for {out} outputs", self.bias.shape()));
        }
        for row in y.data_mut().chunks_exact_mut(out) {
            for (v, b) in row.iter_mut().zip(self.bias.data()) {
                *v += b;
            }
        }
        Ok(y)
    }

    /// Vector form: `x: in` → `out`.
    pub fn forward_vec(&self, x: &Tensor) -> Result<Tensor> {
        let rows = x.clone().reshape(&[1, x.len()])?;
        self.forward_rows(&rows)?.reshape(&[self.out_features()])
    }

    /// Gradients for [`Linear::forward_rows`] with upstream `g: N×out`.
    pub fn backward_rows(&self, x: &Tensor, g: &Tensor) -> Result<LinearGrads> {
        let out = self.out_features();
        let weight = matmul_tn(g, x)?;
        let mut bias = vec![0.0; out];
        for row in g.data().chunks_exact(out) {
            for (b, v) in bias.iter_mut().zip(row) {
                *b += v;
            }
        }
        Ok(LinearGrads {
            input: matmul(g, &self.weight)?,
            weight,
            bias: Tensor::new(vec![out], bias)?,
        })
    }

    pub fn backward_vec(&self, x: &Tensor, g: &Tensor) -> Result<LinearGrads> {
        let xr = x.clone().reshape(&[1, x.len()])?;
        let gr = g.clone().reshape(&[1, g.len()])?;
        let mut grads = self.backward_rows(&xr, &gr)?;
        grads.input = grads.input.reshape(&[x.len()])?;
        Ok(grads)
    }
}

/// `C×h×w` feature map → `(h·w)×C` token rows.
pub(crate) fn grid_to_rows(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    x.clone().reshape(&[c, h * w])?.transpose()
}

pub(crate) fn rows_to_grid(rows: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (n, c) = rows.dims2()?;
    if n != h * w {
        return dim_err(format!("{n} token rows cannot fill a {h}×{w} grid"));
    }
    rows.transpose()?.reshape(&[c, h, w])
}

/// A set of named parameter tensors, enumerated in a fixed order.
pub trait ParamSet {
    fn tensors(&self) -> Vec<(String, &Tensor)>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self -= lr * grads`, matching tensors by position.
    fn sgd_step(&mut self, grads: &Self, lr: f64) -> Result<()>
    where
        Self: Sized,
    {
        let g = grads.tensors();
        for ((name, p), (gname, gt)) in self.tensors_mut().into_iter().zip(g) {
            debug_assert_eq!(name, gname);
            p.axpy(-lr, gt)?;
        }
        Ok(())
    }
}

impl ParamSet for Linear {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![("w".into(), &self.weight), ("b".into(), &self.bias)]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![("w".into(), &mut self.weight), ("b".into(), &mut self.bias)]
    }
}
