use super::Tensor;
use crate::error::{dim_err, param_err, Result};

/// `c += a·b` on raw row-major buffers, `a: m×k`, `b: k×n`.
fn gemm_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &a_ip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += a_ip * bv;
            }
        }
    }
}

/// `c += aᵀ·b`, `a: k×m`, `b: k×n`.
fn gemm_tn_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    for p in 0..k {
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let a_pi = a[p * m + i];
            if a_pi == 0.0 {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += a_pi * bv;
            }
        }
    }
}

fn transpose_raw(rows: usize, cols: usize, src: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = src[i * cols + j];
        }
    }
    out
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return dim_err(format!("matmul inner dims {k} vs {k2}"));
    }
    let mut c = vec![0.0; m * n];
    gemm_acc(m, k, n, &a.data, &b.data, &mut c);
    Tensor::new(vec![m, n], c)
}

/// `aᵀ·b` without materialising the transpose.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return dim_err(format!("matmul_tn inner dims {k} vs {k2}"));
    }
    let mut c = vec![0.0; m * n];
    gemm_tn_acc(m, k, n, &a.data, &b.data, &mut c);
    Tensor::new(vec![m, n], c)
}

/// `a·bᵀ`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (n, k2) = b.dims2()?;
    if k != k2 {
        return dim_err(format!("matmul_nt inner dims {k} vs {k2}"));
    }
    let bt = transpose_raw(n, k, &b.data);
    let mut c = vec![0.0; m * n];
    gemm_acc(m, k, n, &a.data, &bt, &mut c);
    Tensor::new(vec![m, n], c)
}

struct ConvGeometry {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeometry {
    fn new(x: &Tensor, weight: &Tensor, stride: usize, pad: usize) -> Result<(Self, usize)> {
        let (cin, h, w) = x.dims3()?;
        let [cout, wcin, k, k2] = weight.shape[..] else {
            return dim_err(format!("conv weight must be rank 4, got {:?}", weight.shape));
        };
        if wcin != cin {
            return dim_err(format!("conv input has {cin} channels, weight expects {wcin}"));
        }
        if k != k2 {
            return dim_err(format!("conv kernel must be square, got {k}×{k2}"));
        }
        if stride == 0 {
            return param_err("conv stride must be ≥ 1");
        }
        if h + 2 * pad < k || w + 2 * pad < k {
            return dim_err(format!(
                "kernel {k} larger than padded input {}×{}",
                h + 2 * pad,
                w + 2 * pad
            ));
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        Ok((
            Self {
                cin,
                h,
                w,
                k,
                stride,
                pad,
                ho,
                wo,
            },
            cout,
        ))
    }

    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Visits every (column-matrix index, input index) pair that falls inside
    /// the unpadded input.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let cols = self.cols();
        for c in 0..self.cin {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let in_row = (c * self.h + iy as usize) * self.w;
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            f(row * cols + oy * self.wo + ox, in_row + ix as usize);
                        }
                    }
                }
            }
        }
    }

    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let mut col = vec![0.0; self.rows() * self.cols()];
        self.for_each_tap(|ci, xi| col[ci] = x[xi]);
        col
    }

    fn col2im(&self, col: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.cin * self.h * self.w];
        self.for_each_tap(|ci, xi| x[xi] += col[ci]);
        x
    }
}

/// 2-D cross-correlation with zero padding.
///
/// `x: Cin×H×W`, `weight: Cout×Cin×k×k`, `bias: Cout`. Output is
/// `Cout×H′×W′` with `H′ = (H + 2·padding − k)/stride + 1`.
pub fn conv2d(
    x: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (g, cout) = ConvGeometry::new(x, weight, stride, padding)?;
    if bias.shape != [cout] {
        return dim_err(format!("conv bias shape {:?}, expected [{cout}]", bias.shape));
    }
    let col = g.im2col(&x.data);
    let cols = g.cols();
    let mut out = Vec::with_capacity(cout * cols);
    for &b in &bias.data {
        out.extend(std::iter::repeat_n(b, cols));
    }
    gemm_acc(cout, g.rows(), cols, &weight.data, &col, &mut out);
    Tensor::new(vec![cout, g.ho, g.wo], out)
}

pub struct Conv2dGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Gradients of [`conv2d`] given the upstream gradient of its output.
pub fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    stride: usize,
    padding: usize,
    grad_out: &Tensor,
) -> Result<Conv2dGrads> {
    let (g, cout) = ConvGeometry::new(x, weight, stride, padding)?;
    if grad_out.shape != [cout, g.ho, g.wo] {
        return dim_err(format!(
            "conv upstream shape {:?}, expected {:?}",
            grad_out.shape,
            [cout, g.ho, g.wo]
        ));
    }
    let cols = g.cols();
    let rows = g.rows();
    let col = g.im2col(&x.data);

    let bias: Vec<f64> = grad_out
        .data
        .chunks_exact(cols)
        .map(|r| r.iter().sum())
        .collect();

    // dW = dY · colᵀ
    let col_t = transpose_raw(rows, cols, &col);
    let mut dw = vec![0.0; cout * rows];
    gemm_acc(cout, cols, rows, &grad_out.data, &col_t, &mut dw);

    // dcol = Wᵀ · dY
    let mut dcol = vec![0.0; rows * cols];
    gemm_tn_acc(rows, cout, cols, &weight.data, &grad_out.data, &mut dcol);
    let dx = g.col2im(&dcol);

    Ok(Conv2dGrads {
        input: Tensor::new(x.shape.clone(), dx)?,
        weight: Tensor::new(weight.shape.clone(), dw)?,
        bias: Tensor::new(vec![cout], bias)?,
    })
}

/// Mean over the spatial axes of a `C×H×W` tensor.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    let n = (h * w) as f64;
    let data = x
        .data
        .chunks_exact(h * w)
        .map(|plane| plane.iter().sum::<f64>() / n)
        .collect();
    Tensor::new(vec![c], data)
}

/// Average pooling with a `factor×factor` window and stride `factor`.
///
/// Odd remainders are handled in ceil mode: the input is zero-padded on the
/// bottom/right and the divisor is always `factor²`.
pub fn avg_pool_ceil(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return param_err("pool factor must be ≥ 1");
    }
    let (c, h, w) = x.dims3()?;
    if factor == 1 {
        return Ok(x.clone());
    }
    let ho = h.div_ceil(factor);
    let wo = w.div_ceil(factor);
    let inv = 1.0 / (factor * factor) as f64;
    let mut out = vec![0.0; c * ho * wo];
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                out[(ch * ho + y / factor) * wo + xx / factor] += x.data[(ch * h + y) * w + xx];
            }
        }
    }
    out.iter_mut().for_each(|v| *v *= inv);
    Tensor::new(vec![c, ho, wo], out)
}

pub fn avg_pool_ceil_backward(input_shape: &[usize], factor: usize, grad_out: &Tensor) -> Result<Tensor> {
    let [c, h, w] = input_shape[..] else {
        return dim_err(format!("pool input must be rank 3, got {input_shape:?}"));
    };
    if factor == 1 {
        return Ok(grad_out.clone());
    }
    let ho = h.div_ceil(factor);
    let wo = w.div_ceil(factor);
    if grad_out.shape != [c, ho, wo] {
        return dim_err(format!("pool upstream shape {:?}", grad_out.shape));
    }
    let inv = 1.0 / (factor * factor) as f64;
    Ok(Tensor::from_fn(input_shape, |i| {
        let ch = i / (h * w);
        let y = (i / w) % h;
        let xx = i % w;
        grad_out.data[(ch * ho + y / factor) * wo + xx / factor] * inv
    }))
}

/// Per-token moments saved by the forward pass for use in backward.
#[derive(Clone, Debug)]
pub struct LayerNormStats {
    pub mean: Vec<f64>,
    pub rstd: Vec<f64>,
}

/// Layer normalization over the last axis with biased variance.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    layer_norm_with_stats(x, gamma, beta, eps).map(|(y, _)| y)
}

pub fn layer_norm_with_stats(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<(Tensor, LayerNormStats)> {
    let c = *x.shape.last().unwrap_or(&0);
    if c == 0 {
        return dim_err("layer_norm over an empty axis");
    }
    if gamma.shape != [c] || beta.shape != [c] {
        return dim_err(format!(
            "layer_norm affine params {:?}/{:?} do not match axis size {c}",
            gamma.shape, beta.shape
        ));
    }
    if eps <= 0.0 {
        return param_err("layer_norm eps must be positive");
    }
    let tokens = x.len() / c;
    let mut out = vec![0.0; x.len()];
    let mut mean = Vec::with_capacity(tokens);
    let mut rstd = Vec::with_capacity(tokens);
    for (xt, yt) in x.data.chunks_exact(c).zip(out.chunks_exact_mut(c)) {
        let mu = xt.iter().sum::<f64>() / c as f64;
        let var = xt.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
        let r = 1.0 / (var + eps).sqrt();
        for (j, (yv, xv)) in yt.iter_mut().zip(xt).enumerate() {
            *yv = (xv - mu) * r * gamma.data[j] + beta.data[j];
        }
        mean.push(mu);
        rstd.push(r);
    }
    Ok((Tensor::new(x.shape.clone(), out)?, LayerNormStats { mean, rstd }))
}

/// Returns `(d_input, d_gamma, d_beta)`.
pub fn layer_norm_backward(
    x: &Tensor,
    gamma: &Tensor,
    stats: &LayerNormStats,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    x.expect_same_shape(grad_out)?;
    let c = gamma.len();
    let mut dx = vec![0.0; x.len()];
    let mut dg = vec![0.0; c];
    let mut db = vec![0.0; c];
    let mut xhat = vec![0.0; c];
    let mut dxhat = vec![0.0; c];
    for (t, ((xt, gt), dxt)) in x
        .data
        .chunks_exact(c)
        .zip(grad_out.data.chunks_exact(c))
        .zip(dx.chunks_exact_mut(c))
        .enumerate()
    {
        let (mu, r) = (stats.mean[t], stats.rstd[t]);
        for j in 0..c {
            xhat[j] = (xt[j] - mu) * r;
            dxhat[j] = gt[j] * gamma.data[j];
            dg[j] += gt[j] * xhat[j];
            db[j] += gt[j];
        }
        let m1 = dxhat.iter().sum::<f64>() / c as f64;
        let m2 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / c as f64;
        for j in 0..c {
            dxt[j] = r * (dxhat[j] - m1 - xhat[j] * m2);
        }
    }
    Ok((
        Tensor::new(x.shape.clone(), dx)?,
        Tensor::new(vec![c], dg)?,
        Tensor::new(vec![c], db)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    fn matmul_oracle(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k) = a.dims2().unwrap();
        let (_, n) = b.dims2().unwrap();
        let mut c = Tensor::zeros(&[m, n]);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.get(&[i, p]) * b.get(&[p, j]);
                }
                c.set(&[i, j], s);
            }
        }
        c
    }

    fn conv_oracle(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
        let (cin, h, wd) = x.dims3().unwrap();
        let (cout, k) = (w.shape()[0], w.shape()[2]);
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let mut out = Tensor::zeros(&[cout, ho, wo]);
        for o in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = b.get(&[o]);
                    for c in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    s += w.get(&[o, c, ky, kx]) * x.get(&[c, iy as usize, ix as usize]);
                                }
                            }
                        }
                    }
                    out.set(&[o, oy, ox], s);
                }
            }
        }
        out
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[3, 3], &mut rng);
        let eye = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        assert_eq!(matmul(&eye, &x).unwrap(), x);

        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![0.0, 1.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(&[5, 7], &mut rng);
        let b = random(&[7, 3], &mut rng);
        let diff = matmul(&a, &b).unwrap().max_abs_diff(&matmul_oracle(&a, &b)).unwrap();
        assert!(diff < 1e-12, "{diff}");

        let at = a.transpose().unwrap();
        let bt = b.transpose().unwrap();
        let tn = matmul_tn(&at, &b).unwrap();
        let nt = matmul_nt(&a, &bt).unwrap();
        assert!(tn.max_abs_diff(&matmul_oracle(&a, &b)).unwrap() < 1e-12);
        assert!(nt.max_abs_diff(&matmul_oracle(&a, &b)).unwrap() < 1e-12);
    }

    #[test]
    fn matmul_dimension_error() {
        let a = Tensor::zeros(&[2, 3]);
        assert!(matches!(matmul(&a, &a), Err(crate::Error::Dimension(_))));
    }

    #[test]
    fn matmul_is_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = random(&[4, 6], &mut rng);
            let b = random(&[6, 5], &mut rng);
            let c = random(&[5, 3], &mut rng);
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            assert!(left.max_abs_diff(&right).unwrap() < 1e-9);
        }
    }

    #[test]
    fn conv_identity_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&[1, 5, 6], &mut rng);
        let one = Tensor::filled(&[1, 1, 1, 1], 1.0);
        let zero_b = Tensor::zeros(&[1]);
        assert_eq!(conv2d(&x, &one, &zero_b, 1, 0).unwrap(), x);

        // centred delta with "same" padding is exactly the identity
        let mut delta = Tensor::zeros(&[1, 1, 3, 3]);
        delta.set(&[0, 0, 1, 1], 1.0);
        assert_eq!(conv2d(&x, &delta, &zero_b, 1, 1).unwrap(), x);
    }

    #[test]
    fn conv_sum_pooling_hand_case() {
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::filled(&[1, 1, 2, 2], 1.0);
        let y = conv2d(&x, &w, &Tensor::zeros(&[1]), 2, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[10.0]);
    }

    #[test]
    fn conv_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(cin, cout, h, w, k, s, p) in &[
            (3, 4, 9, 7, 3, 1, 1),
            (2, 5, 10, 11, 3, 2, 1),
            (1, 3, 16, 16, 4, 4, 0),
            (4, 2, 5, 5, 5, 1, 2),
        ] {
            let x = random(&[cin, h, w], &mut rng);
            let wt = random(&[cout, cin, k, k], &mut rng);
            let b = random(&[cout], &mut rng);
            let fast = conv2d(&x, &wt, &b, s, p).unwrap();
            let slow = conv_oracle(&x, &wt, &b, s, p);
            assert_eq!(fast.shape(), slow.shape());
            assert!(fast.max_abs_diff(&slow).unwrap() < 1e-10);
        }
    }

    #[test]
    fn conv_rejects_oversized_kernel() {
        let x = Tensor::zeros(&[1, 2, 2]);
        let w = Tensor::zeros(&[1, 1, 3, 3]);
        assert!(matches!(
            conv2d(&x, &w, &Tensor::zeros(&[1]), 1, 0),
            Err(crate::Error::Dimension(_))
        ));
        assert!(conv2d(&x, &w, &Tensor::zeros(&[1]), 1, 1).is_ok());
    }

    #[test]
    fn global_avg_pool_cases() {
        let c = Tensor::filled(&[3, 4, 5], 7.0);
        assert!(global_avg_pool(&c).unwrap().data().iter().all(|&v| v == 7.0));

        let single = Tensor::new(vec![3, 1, 1], vec![1.0, -2.0, 3.5]).unwrap();
        assert_eq!(global_avg_pool(&single).unwrap().data(), &[1.0, -2.0, 3.5]);

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random(&[3, 4, 5], &mut rng);
        let g = global_avg_pool(&x).unwrap();
        for ch in 0..3 {
            let mut s = 0.0;
            for i in 0..4 {
                for j in 0..5 {
                    s += x.get(&[ch, i, j]);
                }
            }
            assert!((g.get(&[ch]) - s / 20.0).abs() < 1e-12);
        }
    }

    #[test]
    fn avg_pool_ceil_cases() {
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(avg_pool_ceil(&x, 2).unwrap().data(), &[2.5]);

        let odd = Tensor::filled(&[1, 3, 3], 4.0);
        let y = avg_pool_ceil(&odd, 2).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        // zero padding is counted in the divisor
        assert_eq!(y.data(), &[4.0, 2.0, 2.0, 1.0]);
    }

    #[test]
    fn layer_norm_cases() {
        let g = Tensor::filled(&[4], 1.0);
        let b = Tensor::zeros(&[4]);
        let constant = Tensor::filled(&[2, 4], 3.0);
        assert!(layer_norm(&constant, &g, &b, 1e-5).unwrap().data().iter().all(|&v| v == 0.0));

        let g2 = Tensor::filled(&[2], 1.0);
        let b2 = Tensor::zeros(&[2]);
        let t = Tensor::new(vec![2], vec![1.0, -1.0]).unwrap();
        let y = layer_norm(&t, &g2, &b2, 1e-5).unwrap();
        let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((y.data()[0] - expect).abs() < 1e-15);
        assert!((y.data()[1] + expect).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let c = 32;
        let x = Tensor::from_fn(&[5, c], |_| rng.gen_range(-3.0..3.0));
        let y = layer_norm(&x, &Tensor::filled(&[c], 1.0), &Tensor::zeros(&[c]), 1e-5).unwrap();
        for tok in y.data().chunks_exact(c) {
            let mu = tok.iter().sum::<f64>() / c as f64;
            let var = tok.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
            assert!(mu.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-5, "{var}");
        }
    }

    #[test]
    fn layer_norm_rejects_bad_axis() {
        let x = Tensor::zeros(&[2, 3]);
        assert!(layer_norm(&x, &Tensor::zeros(&[2]), &Tensor::zeros(&[2]), 1e-5).is_err());
    }
}
