use burn::{
    config::Config,
    module::Module,
    tensor::{backend::Backend, module::adaptive_avg_pool2d, Tensor},
};

use super::{sigmoid, ConvBlock, ConvBlockConfig};

/// Squeeze-and-excitation style channel gate.
#[derive(Config, Debug)]
pub struct ChannelAttentionConfig {
    pub channels: usize,
    #[config(default = 16)]
    pub reduction: usize,
}

impl ChannelAttentionConfig {
    pub fn init<B: Backend>(&self, device: &B::Device) -> ChannelAttention<B> {
        let hidden = (self.channels / self.reduction).max(1);
        ChannelAttention {
            squeeze: ConvBlockConfig::new([self.channels, hidden], 1)
                .with_norm(false)
                .init(device),
            excite: ConvBlockConfig::linear([hidden, self.channels], 1).init(device),
        }
    }
}

#[derive(Module, Debug)]
pub struct ChannelAttention<B: Backend> {
    squeeze: ConvBlock<B>,
    excite: ConvBlock<B>,
}

impl<B: Backend> ChannelAttention<B> {
    /// Per-channel gate in (0, 1), shape `[B, C, 1, 1]`.
    pub fn gate(&self, x: Tensor<B, 4>) -> Tensor<B, 4> {
        let pooled = adaptive_avg_pool2d(x, [1, 1]);
        sigmoid(self.excite.forward(self.squeeze.forward(pooled)))
    }

    pub fn forward(&self, x: Tensor<B, 4>) -> Tensor<B, 4> {
        let gate = self.gate(x.clone());
        x * gate
    }
}
