//! Re-sampling image compression supervised by a virtual codec.
//!
//! A re-sampling network (RSN) turns an image into re-sampled vectors that
//! pass through a non-differentiable channel: either a block-DCT codec
//! (the standard-compliant path) or a feature-space quantiser plus
//! arithmetic coder (the learned path). An image decoder network (IDN)
//! restores the image from the channel output. During training a virtual
//! codec network (VCN) learns to imitate channel + decoder so that its
//! gradients can stand in for the channel when updating the RSN.

pub mod codec;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod losses;
pub mod networks;
pub mod pipeline;
pub mod quantizer;
pub mod selftest;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Graph, Tensor, Var};
