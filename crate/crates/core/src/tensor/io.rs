//! `MFHT` tensor dumps.
//!
//! Layout: `b"MFHT"`, `u8` version (1), `u8` dtype (1 = f32, 2 = f64),
//! `u8` rank, `rank × u32` dims, then the row-major payload. All integers
//! and floats are little-endian.

use std::io::{Read, Write};

use super::Tensor;
use crate::error::{format_err, param_err, Result};

const MAGIC: &[u8; 4] = b"MFHT";
const VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "f32" => Some(DType::F32),
            "f64" => Some(DType::F64),
            _ => None,
        }
    }
}

pub(crate) fn encode_payload(t: &Tensor, dtype: DType, out: &mut Vec<u8>) {
    match dtype {
        DType::F32 => t
            .data()
            .iter()
            .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        DType::F64 => t
            .data()
            .iter()
            .for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
    }
}

pub(crate) fn decode_payload(bytes: &[u8], dtype: DType) -> Vec<f64> {
    match dtype {
        DType::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        DType::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    }
}

pub fn write_mfht<W: Write>(mut w: W, t: &Tensor, dtype: DType) -> Result<()> {
    if t.rank() > u8::MAX as usize {
        return param_err("tensor rank exceeds 255");
    }
    let mut buf = Vec::with_capacity(7 + 4 * t.rank() + t.len() * dtype.size());
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.push(dtype.code());
    buf.push(t.rank() as u8);
    for &d in t.shape() {
        let Ok(d) = u32::try_from(d) else {
            return param_err(format!("dimension {d} does not fit in u32"));
        };
        buf.extend_from_slice(&d.to_le_bytes());
    }
    encode_payload(t, dtype, &mut buf);
    w.write_all(&buf)?;
    Ok(())
}

/// Reads one tensor; returns it along with the stored dtype.
pub fn read_mfht<R: Read>(mut r: R) -> Result<(Tensor, DType)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 7 {
        return format_err(bytes.len(), "truncated MFHT header");
    }
    if &bytes[..4] != MAGIC {
        return format_err(0, "bad magic, expected MFHT");
    }
    if bytes[4] != VERSION {
        return format_err(4, format!("unsupported MFHT version {}", bytes[4]));
    }
    let Some(dtype) = DType::from_code(bytes[5]) else {
        return format_err(5, format!("unknown dtype code {}", bytes[5]));
    };
    let rank = bytes[6] as usize;
    if rank == 0 {
        return format_err(6, "rank must be at least 1");
    }
    let dims_end = 7 + 4 * rank;
    if bytes.len() < dims_end {
        return format_err(bytes.len(), "truncated MFHT dims");
    }
    let shape: Vec<usize> = bytes[7..dims_end]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    if let Some(i) = shape.iter().position(|&d| d == 0) {
        return format_err(7 + 4 * i, "zero-sized dimension");
    }
    let count: usize = shape.iter().product();
    let expected = dims_end + count * dtype.size();
    if bytes.len() != expected {
        return format_err(
            bytes.len().min(expected),
            format!("payload length {} but header implies {}", bytes.len() - dims_end, expected - dims_end),
        );
    }
    let data = decode_payload(&bytes[dims_end..], dtype);
    Ok((Tensor::new(shape, data)?, dtype))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::new(vec![1, 2], vec![1.0, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_mfht(&mut buf, &t, DType::F32).unwrap();
        let mut expect = b"MFHT".to_vec();
        expect.extend_from_slice(&[1, 1, 2]);
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&2u32.to_le_bytes());
        expect.extend_from_slice(&1.0f32.to_le_bytes());
        expect.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(buf, expect);
    }

    #[test]
    fn f64_roundtrip_is_bit_exact() {
        let t = Tensor::from_fn(&[2, 3, 4], |i| (i as f64).sin() * 1e-3);
        let mut buf = Vec::new();
        write_mfht(&mut buf, &t, DType::F64).unwrap();
        let (back, dtype) = read_mfht(&buf[..]).unwrap();
        assert_eq!(dtype, DType::F64);
        assert_eq!(back, t);
    }

    #[test]
    fn rejects_corrupt_input() {
        let t = Tensor::filled(&[3], 1.0);
        let mut buf = Vec::new();
        write_mfht(&mut buf, &t, DType::F64).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_mfht(&bad[..]), Err(Error::Format { offset: 0, .. })));

        let truncated = &buf[..buf.len() - 1];
        assert!(matches!(read_mfht(truncated), Err(Error::Format { .. })));

        let mut bad_dtype = buf.clone();
        bad_dtype[5] = 9;
        assert!(matches!(read_mfht(&bad_dtype[..]), Err(Error::Format { offset: 5, .. })));
    }
}
