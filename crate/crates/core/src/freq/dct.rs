use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{dim_err, param_err, Result};
use crate::tensor::Tensor;

/// Coefficient table of one `n×n` block. Index `(0, 0)` is the DC term;
/// larger `(u, v)` are higher frequencies.
#[derive(Clone, Debug, PartialEq)]
pub struct CoeffTable(Tensor);

impl CoeffTable {
    pub fn new(values: Tensor) -> Result<Self> {
        let (r, c) = values.dims2()?;
        if r != c {
            return dim_err(format!("coefficient table must be square, got {r}×{c}"));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn size(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.0.get(&[u, v])
    }
}

fn normalizer(k: usize) -> f64 {
    if k == 0 {
        FRAC_1_SQRT_2
    } else {
        1.0
    }
}

/// Orthonormal type-II DCT basis for `n×n` blocks.
///
/// `basis[u][x] = sqrt(2/n) · C(u) · cos((2x + 1)uπ / 2n)`, so the 2-D
/// transform is `B · f · Bᵀ` and its inverse `Bᵀ · F · B`.
#[derive(Clone, Debug)]
pub struct DctPlan {
    n: usize,
    basis: Vec<f64>,
}

impl DctPlan {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return param_err(format!("block size must be at least 2, got {n}"));
        }
        let scale = (2.0 / n as f64).sqrt();
        let mut basis = vec![0.0; n * n];
        for u in 0..n {
            for x in 0..n {
                basis[u * n + x] =
                    scale * normalizer(u) * ((2 * x + 1) as f64 * u as f64 * PI / (2 * n) as f64).cos();
            }
        }
        Ok(Self { n, basis })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn basis(&self) -> Tensor {
        Tensor::new(vec![self.n, self.n], self.basis.clone()).expect("basis shape")
    }

    /// Forward transform of a row-major block. `scratch` must hold `n²` values.
    pub fn forward_into(&self, block: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        let n = self.n;
        debug_assert!(block.len() == n * n && out.len() == n * n && scratch.len() >= n * n);
        let b = &self.basis;
        // scratch = f · Bᵀ  (rows of f against rows of B)
        for x in 0..n {
            let row = &block[x * n..(x + 1) * n];
            for v in 0..n {
                let bv = &b[v * n..(v + 1) * n];
                scratch[x * n + v] = row.iter().zip(bv).map(|(a, c)| a * c).sum();
            }
        }
        // out = B · scratch
        out.iter_mut().for_each(|o| *o = 0.0);
        for u in 0..n {
            let out_row = &mut out[u * n..(u + 1) * n];
            for x in 0..n {
                let coef = b[u * n + x];
                let s_row = &scratch[x * n..(x + 1) * n];
                for (o, s) in out_row.iter_mut().zip(s_row) {
                    *o += coef * s;
                }
            }
        }
    }

    /// Inverse transform of a row-major coefficient block.
    pub fn inverse_into(&self, coeffs: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        let n = self.n;
        debug_assert!(coeffs.len() == n * n && out.len() == n * n && scratch.len() >= n * n);
        let b = &self.basis;
        // scratch = F · B
        scratch[..n * n].iter_mut().for_each(|s| *s = 0.0);
        for u in 0..n {
            let s_row = &mut scratch[u * n..(u + 1) * n];
            for v in 0..n {
                let coef = coeffs[u * n + v];
                let b_row = &b[v * n..(v + 1) * n];
                for (s, bb) in s_row.iter_mut().zip(b_row) {
                    *s += coef * bb;
                }
            }
        }
        // out = Bᵀ · scratch
        out.iter_mut().for_each(|o| *o = 0.0);
        for u in 0..n {
            let s_row = &scratch[u * n..(u + 1) * n];
            for x in 0..n {
                let coef = b[u * n + x];
                let out_row = &mut out[x * n..(x + 1) * n];
                for (o, s) in out_row.iter_mut().zip(s_row) {
                    *o += coef * s;
                }
            }
        }
    }

    fn check(&self, t: &Tensor) -> Result<()> {
        let (r, c) = t.dims2()?;
        if r != self.n || c != self.n {
            return dim_err(format!("plan is for {0}×{0} blocks, got {r}×{c}", self.n));
        }
        Ok(())
    }
}

/// Separable forward DCT of one block.
pub fn dct2(patch: &Tensor, plan: &DctPlan) -> Result<CoeffTable> {
    plan.check(patch)?;
    let n = plan.n;
    let mut out = vec![0.0; n * n];
    let mut scratch = vec![0.0; n * n];
    plan.forward_into(patch.data(), &mut out, &mut scratch);
    CoeffTable::new(Tensor::new(vec![n, n], out)?)
}

pub fn idct2(coeffs: &CoeffTable, plan: &DctPlan) -> Result<Tensor> {
    plan.check(coeffs.values())?;
    let n = plan.n;
    let mut out = vec![0.0; n * n];
    let mut scratch = vec![0.0; n * n];
    plan.inverse_into(coeffs.values().data(), &mut out, &mut scratch);
    Tensor::new(vec![n, n], out)
}

/// Direct evaluation of the 2-D DCT double sum, cosines recomputed per term.
///
/// Shares nothing with [`DctPlan`]; used as the reference implementation.
pub fn dct2_naive(patch: &Tensor) -> Result<CoeffTable> {
    let (n, c) = patch.dims2()?;
    if n != c {
        return dim_err(format!("patch must be square, got {n}×{c}"));
    }
    let f = patch.data();
    let nf = n as f64;
    let mut out = vec![0.0; n * n];
    for u in 0..n {
        for v in 0..n {
            let mut s = 0.0;
            for x in 0..n {
                for y in 0..n {
                    s += f[x * n + y]
                        * ((2 * x + 1) as f64 * u as f64 * PI / (2.0 * nf)).cos()
                        * ((2 * y + 1) as f64 * v as f64 * PI / (2.0 * nf)).cos();
                }
            }
            out[u * n + v] = 2.0 / nf * normalizer(u) * normalizer(v) * s;
        }
    }
    CoeffTable::new(Tensor::new(vec![n, n], out)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::matmul_nt;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_patch(n: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(&[n, n], |_| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn basis_is_orthonormal() {
        for n in [2, 4, 8, 16] {
            let b = DctPlan::new(n).unwrap().basis();
            let g = matmul_nt(&b, &b).unwrap();
            let eye = Tensor::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 });
            assert!(g.max_abs_diff(&eye).unwrap() < 1e-10, "n={n}");
        }
    }

    #[test]
    fn rejects_small_block() {
        assert!(matches!(DctPlan::new(1), Err(crate::Error::Parameter(_))));
    }

    #[test]
    fn constant_patch_is_dc_only() {
        let ones = Tensor::filled(&[8, 8], 1.0);
        let f = dct2_naive(&ones).unwrap();
        assert!((f.get(0, 0) - 8.0).abs() < 1e-10);
        let ac = f.values().data()[1..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(ac < 1e-10);

        let plan = DctPlan::new(4).unwrap();
        let c = Tensor::filled(&[4, 4], 0.3);
        assert!((dct2(&c, &plan).unwrap().get(0, 0) - 1.2).abs() < 1e-12);
    }

    #[test]
    fn impulse_n2() {
        let f = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let naive = dct2_naive(&f).unwrap();
        for &v in naive.values().data() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn separable_matches_naive_and_roundtrips() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let plan = DctPlan::new(8).unwrap();
        for _ in 0..200 {
            let p = random_patch(8, &mut rng);
            let fast = dct2(&p, &plan).unwrap();
            let slow = dct2_naive(&p).unwrap();
            assert!(fast.values().max_abs_diff(slow.values()).unwrap() < 1e-9);
            let back = idct2(&fast, &plan).unwrap();
            assert!(back.max_abs_diff(&p).unwrap() < 1e-9);
            let rel = (p.sq_norm() - fast.values().sq_norm()).abs() / p.sq_norm();
            assert!(rel < 1e-10);
        }
    }

    #[test]
    fn plan_size_mismatch() {
        let plan = DctPlan::new(8).unwrap();
        let p = Tensor::zeros(&[4, 4]);
        assert!(matches!(dct2(&p, &plan), Err(crate::Error::Dimension(_))));
    }
}
