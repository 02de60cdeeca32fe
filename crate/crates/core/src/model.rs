//! The two-stream encoder: frequency extractor and spatial stub run on the
//! same padded image, and their features are fused.

use crate::error::Result;
use crate::extractor::{
    extractor_forward_cached, ExtractorCache, ExtractorConfig, ExtractorFlags, ExtractorParams,
    STREAM_STRIDE,
};
use crate::fab::{fab_forward_cached, FabCache, FabParams, FabVariant};
use crate::freq::pad_to_multiple;
use crate::nn::ParamSet;
use crate::stub::{stub_forward_cached, StubCache, StubParams};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct MfhModel {
    pub extractor: ExtractorParams,
    pub stub: StubParams,
    pub fab: FabParams,
    pub flags: ExtractorFlags,
    /// When false the streams are summed directly instead of going through FAB.
    pub use_fab: bool,
}

pub struct ModelOutput {
    pub k: Tensor,
    pub t: Tensor,
    pub fused: Tensor,
}

pub struct ModelCache {
    pub(crate) extractor: ExtractorCache,
    pub(crate) stub: StubCache,
    pub(crate) fab: Option<FabCache>,
    pub(crate) k: Tensor,
    pub(crate) t: Tensor,
}

/// Zero-pads an image to a multiple of the shared stream stride so both
/// streams see exactly the same pixels.
pub fn pad_for_streams(image: &Tensor) -> Result<Tensor> {
    pad_to_multiple(image, STREAM_STRIDE)
}

impl MfhModel {
    pub fn init(config: ExtractorConfig, variant: FabVariant, seed: u64) -> Result<Self> {
        let channels = config.channels;
        Ok(Self {
            extractor: ExtractorParams::init(config, seed)?,
            stub: StubParams::init(channels, seed),
            fab: FabParams::init(channels, variant, seed),
            flags: ExtractorFlags::default(),
            use_fab: true,
        })
    }

    pub fn forward(&self, image: &Tensor) -> Result<ModelOutput> {
        self.forward_cached(image).map(|(o, _)| o)
    }

    pub fn forward_cached(&self, image: &Tensor) -> Result<(ModelOutput, ModelCache)> {
        let padded = pad_for_streams(image)?;
        let (k, ext_cache) = extractor_forward_cached(&padded, &self.extractor, self.flags)?;
        let (t, stub_cache) = stub_forward_cached(&padded, &self.stub)?;
        let (fused, fab_cache) = if self.use_fab {
            let (y, c) = fab_forward_cached(&k, &t, &self.fab)?;
            (y, Some(c))
        } else {
            (k.add(&t)?, None)
        };
        Ok((
            ModelOutput {
                k: k.clone(),
                t: t.clone(),
                fused,
            },
            ModelCache {
                extractor: ext_cache,
                stub: stub_cache,
                fab: fab_cache,
                k,
                t,
            },
        ))
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            extractor: self.extractor.zeros_like(),
            stub: self.stub.zeros_like(),
            fab: self.fab.zeros_like(),
            flags: self.flags,
            use_fab: self.use_fab,
        }
    }
}

impl ParamSet for MfhModel {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.extractor.tensors();
        out.extend(self.stub.tensors());
        out.extend(self.fab.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.extractor.tensors_mut();
        out.extend(self.stub.tensors_mut());
        out.extend(self.fab.tensors_mut());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_agree_on_shape() {
        let cfg = ExtractorConfig { channels: 8, num_blocks: 1, reduction: 2, ..Default::default() };
        let model = MfhModel::init(cfg, FabVariant::default(), 0).unwrap();
        let img = Tensor::filled(&[1, 37, 70], 0.5);
        let out = model.forward(&img).unwrap();
        assert_eq!(out.k.shape(), &[8, 3, 5]);
        assert_eq!(out.t.shape(), out.k.shape());
        assert_eq!(out.fused.shape(), out.k.shape());
    }

    #[test]
    fn without_fab_streams_are_summed() {
        let cfg = ExtractorConfig { channels: 8, num_blocks: 1, reduction: 2, ..Default::default() };
        let mut model = MfhModel::init(cfg, FabVariant::default(), 1).unwrap();
        model.use_fab = false;
        let img = Tensor::from_fn(&[1, 32, 32], |i| (i % 7) as f64 / 7.0);
        let out = model.forward(&img).unwrap();
        assert_eq!(out.fused, out.k.add(&out.t).unwrap());
    }
}
