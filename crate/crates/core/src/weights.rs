//! `MFHW` weight container: magic, version byte, a length-prefixed JSON
//! header `{name: {dtype, dims, offset}}`, then the little-endian payloads.
//! Offsets are relative to the first payload byte.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, format_err, param_err, Result};
use crate::extractor::ExtractorConfig;
use crate::fab::{FabJoin, FabVariant, FabVectors};
use crate::model::MfhModel;
use crate::nn::ParamSet;
use crate::tensor::{decode_payload, encode_payload, DType, Tensor};

const MAGIC: &[u8; 4] = b"MFHW";
const VERSION: u8 = 1;

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
struct Entry {
    dtype: String,
    dims: Vec<usize>,
    offset: usize,
}

pub type WeightMap = BTreeMap<String, Tensor>;

pub fn write_weights<W: Write>(mut w: W, tensors: &[(String, &Tensor)], dtype: DType) -> Result<()> {
    let mut header = BTreeMap::new();
    let mut payload = Vec::new();
    for (name, t) in tensors {
        let entry = Entry {
            dtype: dtype.name().to_string(),
            dims: t.shape().to_vec(),
            offset: payload.len(),
        };
        if header.insert(name.clone(), entry).is_some() {
            return param_err(format!("duplicate tensor name {name:?}"));
        }
        encode_payload(t, dtype, &mut payload);
    }
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&payload)?;
    Ok(())
}

pub fn read_weights<R: Read>(mut r: R) -> Result<WeightMap> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return format_err(0, "missing MFHW magic");
    }
    match bytes.get(4) {
        Some(&VERSION) => {}
        Some(v) => return format_err(4, format!("unsupported version {v}")),
        None => return format_err(4, "truncated before version"),
    }
    if bytes.len() < 9 {
        return format_err(bytes.len(), "truncated header length");
    }
    let hlen = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let body = 9 + hlen;
    if bytes.len() < body {
        return format_err(bytes.len(), format!("truncated JSON header of {hlen} bytes"));
    }
    let header: BTreeMap<String, Entry> = match serde_json::from_slice(&bytes[9..body]) {
        Ok(h) => h,
        Err(e) => return format_err(9, format!("bad JSON header: {e}")),
    };
    let mut out = WeightMap::new();
    for (name, e) in header {
        let Some(dtype) = DType::from_name(&e.dtype) else {
            return format_err(9, format!("{name}: unknown dtype {:?}", e.dtype));
        };
        let count: usize = e.dims.iter().product();
        let start = body + e.offset;
        let end = start + count * dtype.size();
        if end > bytes.len() {
            return format_err(bytes.len(), format!("{name}: payload ends past file end"));
        }
        let t = Tensor::new(e.dims, decode_payload(&bytes[start..end], dtype))?;
        out.insert(name, t);
    }
    Ok(out)
}

/// Copies every tensor of `params` from `map`, requiring exact shapes.
pub fn load_into<P: ParamSet>(map: &WeightMap, params: &mut P) -> Result<()> {
    for (name, t) in params.tensors_mut() {
        let Some(src) = map.get(&name) else {
            return param_err(format!("weights file lacks tensor {name}"));
        };
        if src.shape() != t.shape() {
            return dim_err(format!("{name}: stored {:?}, expected {:?}", src.shape(), t.shape()));
        }
        *t = src.clone();
    }
    Ok(())
}

fn shape_of<'a>(map: &'a WeightMap, name: &str) -> Result<&'a [usize]> {
    map.get(name)
        .map(Tensor::shape)
        .map_or_else(|| param_err(format!("weights file lacks tensor {name}")), Ok)
}

/// Recovers channels, patch size, block count, expansion and reduction from
/// tensor shapes; everything else comes from `base`.
pub fn infer_extractor_config(map: &WeightMap, base: &ExtractorConfig) -> Result<ExtractorConfig> {
    let embed = shape_of(map, "embed.w")?;
    if embed.len() != 4 {
        return dim_err(format!("embed.w has rank {}", embed.len()));
    }
    let (c, n) = (embed[0], embed[2]);
    let num_blocks = (0..).take_while(|k| map.contains_key(&format!("mlp{k}.ln.g"))).count();
    let hidden = shape_of(map, "mlp0.fc1.w")?[0];
    let squeezed = shape_of(map, "ca.w1")?[0];
    if hidden % c != 0 || squeezed == 0 || c % squeezed != 0 {
        return dim_err(format!("inconsistent widths: C={c}, hidden={hidden}, squeeze={squeezed}"));
    }
    let cfg = ExtractorConfig {
        channels: c,
        patch_size: n,
        retention: base.retention.min(n),
        num_blocks,
        expansion: hidden / c,
        reduction: c / squeezed,
        ..base.clone()
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Rebuilds a full two-stream model. The FAB join is read from the fusion
/// conv width; whether the channel vectors are used is chosen by `vectors`.
pub fn load_model(map: &WeightMap, base: &ExtractorConfig, vectors: FabVectors) -> Result<MfhModel> {
    let cfg = infer_extractor_config(map, base)?;
    let c = cfg.channels;
    let cin = shape_of(map, "fab.conv.w")?.get(1).copied().unwrap_or(0);
    let join = match cin {
        x if x == 2 * c => FabJoin::Concat,
        x if x == c => FabJoin::Add,
        _ => return dim_err(format!("fab.conv.w input width {cin} fits neither join for C={c}")),
    };
    let mut model = MfhModel::init(cfg, FabVariant { join, vectors }, 0)?;
    load_into(map, &mut model)?;
    Ok(model)
}

pub fn save_model<W: Write>(w: W, model: &MfhModel, dtype: DType) -> Result<()> {
    write_weights(w, &model.tensors(), dtype)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn small() -> MfhModel {
        let cfg = ExtractorConfig { channels: 8, num_blocks: 2, reduction: 4, ..Default::default() };
        MfhModel::init(cfg, FabVariant::default(), 5).unwrap()
    }

    #[test]
    fn model_roundtrip_f64_is_exact() {
        let model = small();
        let mut buf = Vec::new();
        save_model(&mut buf, &model, DType::F64).unwrap();
        let map = read_weights(&buf[..]).unwrap();
        assert!(map.contains_key("mlp1.fc2.b") && map.contains_key("stub.conv3.w"));
        let back = load_model(&map, &ExtractorConfig::default(), FabVectors::Learnable).unwrap();
        assert_eq!(back.extractor.config, model.extractor.config);
        assert_eq!(back, model);
    }

    #[test]
    fn header_is_length_prefixed_json() {
        let t = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let mut buf = Vec::new();
        write_weights(&mut buf, &[("a".into(), &t)], DType::F32).unwrap();
        assert_eq!(&buf[..5], b"MFHW\x01");
        let hlen = u32::from_le_bytes(buf[5..9].try_into().unwrap()) as usize;
        let json: serde_json::Value = serde_json::from_slice(&buf[9..9 + hlen]).unwrap();
        assert_eq!(json["a"]["dims"], serde_json::json!([2]));
        assert_eq!(json["a"]["dtype"], "f32");
        assert_eq!(buf.len(), 9 + hlen + 8);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        assert!(matches!(read_weights(&b"MFHX\x01"[..]), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(read_weights(&b"MFHW\x07"[..]), Err(Error::Format { offset: 4, .. })));
        let t = Tensor::zeros(&[4]);
        let mut buf = Vec::new();
        write_weights(&mut buf, &[("a".into(), &t)], DType::F64).unwrap();
        buf.truncate(buf.len() - 1);
        assert!(matches!(read_weights(&buf[..]), Err(Error::Format { .. })));
    }

    #[test]
    fn missing_or_misshapen_tensors_fail() {
        let model = small();
        let mut map: WeightMap = model.tensors().into_iter().map(|(n, t)| (n, t.clone())).collect();
        map.insert("ca.b2".into(), Tensor::zeros(&[3]));
        let mut target = model.clone();
        assert!(matches!(load_into(&map, &mut target), Err(Error::Dimension(_))));
        map.remove("ca.b2");
        assert!(matches!(load_into(&map, &mut target), Err(Error::Parameter(_))));
    }
}
