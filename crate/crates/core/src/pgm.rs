//! Binary greyscale PGM (`P5`, maxval 255) input and output.

use std::io::{Read, Write};

use crate::error::{format_err, Result};
use crate::tensor::Tensor;

struct Header {
    width: usize,
    height: usize,
    payload_start: usize,
}

fn skip_space_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    loop {
        match bytes.get(pos) {
            Some(b) if b.is_ascii_whitespace() => pos += 1,
            Some(b'#') => {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            }
            _ => return pos,
        }
    }
}

/// Returns the value with its start and end offsets.
fn read_uint(bytes: &[u8], pos: usize, what: &str) -> Result<(usize, usize, usize)> {
    let start = skip_space_and_comments(bytes, pos);
    let end = start + bytes[start..].iter().take_while(|b| b.is_ascii_digit()).count();
    if end == start {
        return format_err(start, format!("expected {what}"));
    }
    let text = std::str::from_utf8(&bytes[start..end]).expect("ascii digits");
    match text.parse::<usize>() {
        Ok(v) if v > 0 => Ok((v, start, end)),
        _ => format_err(start, format!("invalid {what} {text:?}")),
    }
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return format_err(0, "missing P5 magic");
    }
    let (width, _, pos) = read_uint(bytes, 2, "width")?;
    let (height, _, pos) = read_uint(bytes, pos, "height")?;
    let (maxval, at, pos) = read_uint(bytes, pos, "maxval")?;
    if maxval != 255 {
        return format_err(at, format!("maxval {maxval} unsupported, only 255"));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => {}
        _ => return format_err(pos, "expected single whitespace before pixel data"),
    }
    Ok(Header {
        width,
        height,
        payload_start: pos + 1,
    })
}

/// Decodes a P5 image into `[1, H, W]` with values in [0, 1]. With `invert`
/// the values become `1 − v` (dark ink on light paper → bright strokes).
pub fn decode_pgm(bytes: &[u8], invert: bool) -> Result<Tensor> {
    let h = parse_header(bytes)?;
    let need = h.width * h.height;
    let payload = &bytes[h.payload_start..];
    if payload.len() < need {
        return format_err(
            bytes.len(),
            format!("truncated payload: {} of {need} pixel bytes", payload.len()),
        );
    }
    let data = payload[..need]
        .iter()
        .map(|&b| {
            let v = b as f64 / 255.0;
            if invert {
                1.0 - v
            } else {
                v
            }
        })
        .collect();
    Tensor::new(vec![1, h.height, h.width], data)
}

pub fn read_pgm<R: Read>(mut r: R, invert: bool) -> Result<Tensor> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode_pgm(&bytes, invert)
}

/// 8-bit rendering with min → 0 and max → 255; a constant image is all 0.
///
/// A value range narrower than `1e-9` of the value scale is rounding noise
/// (a masked constant image, say) and is rendered as constant too.
pub fn encode_pgm(image: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = match image.rank() {
        2 => image.dims2()?,
        _ => {
            let (c, h, w) = image.dims3()?;
            if c != 1 {
                return crate::error::dim_err(format!("PGM needs a single channel, got {c}"));
            }
            (h, w)
        }
    };
    let lo = image.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = image.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut span = hi - lo;
    if span <= 1e-9 * lo.abs().max(hi.abs()).max(1.0) {
        span = 0.0;
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|&v| {
        if span > 0.0 {
            ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    Ok(out)
}

pub fn write_pgm<W: Write>(mut w: W, image: &Tensor) -> Result<()> {
    w.write_all(&encode_pgm(image)?)?;
    Ok(())
}
