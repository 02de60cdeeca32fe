//! Hand-derived gradients and their finite-difference validation.

mod backward;
mod check;

pub use backward::{
    channel_attention_backward, extractor_backward, fab_backward, mlp_block_backward,
    model_backward, patch_embed_backward, stub_backward,
};
pub use check::{
    backward, check_block, finite_diff_entries, finite_diff_grad, run_gradcheck, BlockCase,
    BlockId, BlockReport, GradCheckConfig, GradReport, TensorReport,
};
