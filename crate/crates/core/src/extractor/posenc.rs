use crate::error::{param_err, Result};
use crate::tensor::Tensor;

/// 1-D sinusoidal code of a scalar position with `dim` slots:
/// `out[2i] = sin(p / 10000^(2i/dim))`, `out[2i+1] = cos(…)`.
pub fn sinusoid_1d(p: f64, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for i in 0..dim / 2 {
        let angle = p / 10000f64.powf((2 * i) as f64 / dim as f64);
        out[2 * i] = angle.sin();
        out[2 * i + 1] = angle.cos();
    }
    out
}

/// Relative 2-D positional encoding of shape `d×h×w`.
///
/// The first `d/2` channels encode the normalized row `scale·x/h`, the last
/// `d/2` the normalized column `scale·y/w`.
pub fn positional_encoding_2d(h: usize, w: usize, d: usize, scale: f64) -> Result<Tensor> {
    if d == 0 || !d.is_multiple_of(4) {
        return param_err(format!("encoding width {d} must be a positive multiple of 4"));
    }
    if h == 0 || w == 0 {
        return param_err("positional encoding over an empty grid");
    }
    let half = d / 2;
    let rows: Vec<Vec<f64>> = (0..h).map(|x| sinusoid_1d(scale * x as f64 / h as f64, half)).collect();
    let cols: Vec<Vec<f64>> = (0..w).map(|y| sinusoid_1d(scale * y as f64 / w as f64, half)).collect();
    Ok(Tensor::from_fn(&[d, h, w], |i| {
        let ch = i / (h * w);
        let x = (i / w) % h;
        let y = i % w;
        if ch < half {
            rows[x][ch]
        } else {
            cols[y][ch - half]
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_is_alternating_zero_one() {
        let pe = positional_encoding_2d(3, 5, 16, 1.0).unwrap();
        for ch in 0..16 {
            let expect = if ch % 2 == 0 { 0.0 } else { 1.0 };
            assert_eq!(pe.get(&[ch, 0, 0]), expect);
        }
    }

    #[test]
    fn first_slot_at_unit_position() {
        let p = sinusoid_1d(1.0, 8);
        assert!((p[0] - 0.841_471).abs() < 1e-6);
        assert!((p[1] - 0.540_302).abs() < 1e-6);
    }

    #[test]
    fn halves_depend_on_one_axis_each() {
        let (h, w, d) = (4, 6, 8);
        let pe = positional_encoding_2d(h, w, d, 10.0).unwrap();
        assert_eq!(pe.shape(), &[d, h, w]);
        for ch in 0..d {
            for x in 0..h {
                for y in 0..w {
                    let v = pe.get(&[ch, x, y]);
                    assert!((-1.0..=1.0).contains(&v));
                    if ch < d / 2 {
                        assert_eq!(v, pe.get(&[ch, x, 0]));
                    } else {
                        assert_eq!(v, pe.get(&[ch, 0, y]));
                    }
                }
            }
        }
    }

    #[test]
    fn width_must_be_multiple_of_four() {
        assert!(matches!(positional_encoding_2d(2, 2, 6, 1.0), Err(crate::Error::Parameter(_))));
    }
}
