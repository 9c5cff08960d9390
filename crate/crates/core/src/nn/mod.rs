//! Building blocks shared by the encoder, the coherence blocks and the decoder.

mod attention;
mod conv;
mod init;
pub mod resample;

pub use attention::{ChannelAttention, ChannelAttentionConfig};
pub use conv::{conv2d_matmul, ConvBlock, ConvBlockConfig};
pub use init::SeededInit;

use burn::tensor::{backend::Backend, Tensor};

/// Logistic function as `(1 + tanh(x / 2)) / 2`. Unlike burn's built-in,
/// which rounds through f32, this keeps the backend's precision, and its
/// gradient stays finite for saturated inputs.
pub fn sigmoid<B: Backend, const D: usize>(x: Tensor<B, D>) -> Tensor<B, D> {
    (x * 0.5).tanh() * 0.5 + 0.5
}
