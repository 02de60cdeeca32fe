use super::dct::CoeffTable;
use crate::error::{dim_err, param_err, Result};
use crate::tensor::Tensor;

/// Keeps the bottom-right `m×m` corner of an `n×n` coefficient table,
/// i.e. every `(u, v)` with `u ≥ n − m` and `v ≥ n − m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskSpec {
    n: usize,
    m: usize,
}

impl MaskSpec {
    pub fn new(n: usize, m: usize) -> Result<Self> {
        if n < 2 {
            return param_err(format!("block size must be at least 2, got {n}"));
        }
        if m < 1 || m > n {
            return param_err(format!("retention m={m} outside [1, {n}]"));
        }
        Ok(Self { n, m })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn keeps(&self, u: usize, v: usize) -> bool {
        let lo = self.n - self.m;
        u >= lo && v >= lo
    }

    /// Zeroes every masked-out position of a row-major `n×n` block in place.
    pub fn apply_in_place(&self, block: &mut [f64]) {
        let n = self.n;
        for u in 0..n {
            for v in 0..n {
                if !self.keeps(u, v) {
                    block[u * n + v] = 0.0;
                }
            }
        }
    }
}

pub fn retain_high_freq(coeffs: &CoeffTable, mask: &MaskSpec) -> Result<CoeffTable> {
    if coeffs.size() != mask.n {
        return dim_err(format!(
            "mask is for {0}×{0} tables, got {1}×{1}",
            mask.n,
            coeffs.size()
        ));
    }
    let mut data = coeffs.values().data().to_vec();
    mask.apply_in_place(&mut data);
    CoeffTable::new(Tensor::new(vec![mask.n, mask.n], data)?)
}
