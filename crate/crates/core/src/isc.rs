//! Intra-stage coherence: fuse 3x3 and 5x5 receptive fields within one stage.
//!
//! ```text
//! f3  = conv3(conv1(f))          f5 = conv5(conv1'(f))
//! m   = f3 + f5
//! out = conv1''(f) + conv3_out(conv3(m) * conv5(m))
//! ```
//!
//! The three 1x1 convolutions are independent instances. Every convolution
//! carries batch norm and ReLU except the residual `conv1''` and the outer
//! `conv3_out`, which are plain linear maps so the residual sum is literal.

use burn::{
    config::Config,
    module::Module,
    tensor::{backend::Backend, Tensor},
};

use crate::error::{HcmError, Result};
use crate::nn::{ConvBlock, ConvBlockConfig};

#[derive(Config, Debug)]
pub struct IscConfig {
    pub in_channels: usize,
    #[config(default = 64)]
    pub channels: usize,
}

impl IscConfig {
    pub fn init<B: Backend>(&self, device: &B::Device) -> IscBlock<B> {
        let (i, c) = (self.in_channels, self.channels);
        IscBlock {
            residual: ConvBlockConfig::linear([i, c], 1).init(device),
            reduce3: ConvBlockConfig::new([i, c], 1).init(device),
            reduce5: ConvBlockConfig::new([i, c], 1).init(device),
            branch3: ConvBlockConfig::new([c, c], 3).init(device),
            branch5: ConvBlockConfig::new([c, c], 5).init(device),
            fuse3: ConvBlockConfig::new([c, c], 3).init(device),
            fuse5: ConvBlockConfig::new([c, c], 5).init(device),
            out: ConvBlockConfig::linear([c, c], 3).init(device),
        }
    }
}

#[derive(Module, Debug)]
pub struct IscBlock<B: Backend> {
    residual: ConvBlock<B>,
    reduce3: ConvBlock<B>,
    reduce5: ConvBlock<B>,
    branch3: ConvBlock<B>,
    branch5: ConvBlock<B>,
    fuse3: ConvBlock<B>,
    fuse5: ConvBlock<B>,
    out: ConvBlock<B>,
}

impl<B: Backend> IscBlock<B> {
    pub fn in_channels(&self) -> usize {
        self.residual.conv.weight.dims()[1]
    }

    pub fn forward(&self, f: Tensor<B, 4>) -> Result<Tensor<B, 4>> {
        let channels = f.dims()[1];
        if channels != self.in_channels() {
            return Err(HcmError::shape("isc input", self.in_channels(), channels));
        }
        let f3 = self.branch3.forward(self.reduce3.forward(f.clone()));
        let f5 = self.branch5.forward(self.reduce5.forward(f.clone()));
        let merged = f3 + f5;
        let fused = self.fuse3.forward(merged.clone()) * self.fuse5.forward(merged);
        Ok(self.residual.forward(f) + self.out.forward(fused))
    }

    /// Test hook: every convolution becomes an identity kernel with zero bias
    /// and normalization removed. On a non-negative input `f` the block then
    /// computes `f + 4 f^2`.
    pub fn into_identity(self) -> Self {
        Self {
            residual: self.residual.into_identity(),
            reduce3: self.reduce3.into_identity(),
            reduce5: self.reduce5.into_identity(),
            branch3: self.branch3.into_identity(),
            branch5: self.branch5.into_identity(),
            fuse3: self.fuse3.into_identity(),
            fuse5: self.fuse5.into_identity(),
            out: self.out.into_identity(),
        }
    }

    /// Zero the outer fusion convolution, leaving only the residual path.
    pub fn with_zeroed_fusion(mut self) -> Self {
        self.out = self.out.zeroed();
        self
    }

    /// The residual 1x1 projection on its own.
    pub fn residual(&self, f: Tensor<B, 4>) -> Tensor<B, 4> {
        self.residual.forward(f)
    }
}
