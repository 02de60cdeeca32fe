//! Frequency-domain feature extraction for handwritten mathematical
//! expression images: block DCT preprocessing, an MLP-based frequency
//! extractor, a small spatial CNN stream and the attention-based fusion of
//! the two, with hand-written backward passes.

pub mod bench;
pub mod error;
pub mod extractor;
pub mod fab;
pub mod freq;
pub mod grad;
pub mod model;
pub mod nn;
pub mod pgm;
pub mod stub;
pub mod sweep;
pub mod tensor;
pub mod toy;
pub mod weights;

pub use error::{Error, Result};
pub use tensor::Tensor;
