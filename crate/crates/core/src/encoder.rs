//! Backbone feature pyramid and the atrous pyramid pooling head.
//!
//! The backbone is a bottleneck residual network with the ResNet-50 stage
//! layout: widths 64/256/512/1024/2048 at strides 2/4/8/16/32. The number of
//! bottlenecks per stage is configurable so that tests can run a shallow
//! network with identical shapes.

use std::path::Path;

use burn::{
    config::Config,
    module::Module,
    nn::{BatchNorm, Relu},
    record::{FullPrecisionSettings, NamedMpkFileRecorder},
    tensor::{backend::Backend, module::adaptive_avg_pool2d, module::max_pool2d, Tensor},
};

use crate::error::{HcmError, Result};
use crate::nn::{ConvBlock, ConvBlockConfig};

/// Output widths of stages f0..f4.
pub const STAGE_CHANNELS: [usize; 5] = [64, 256, 512, 1024, 2048];
/// Output strides of stages f0..f4.
pub const STAGE_STRIDES: [usize; 5] = [2, 4, 8, 16, 32];
/// Input height and width must be multiples of this.
pub const INPUT_MULTIPLE: usize = 32;

/// Normalized input images `[B, 3, H, W]`.
#[derive(Debug, Clone)]
pub struct ImageBatch<B: Backend>(Tensor<B, 4>);

impl<B: Backend> ImageBatch<B> {
    pub fn new(data: Tensor<B, 4>) -> Result<Self> {
        let [_, channels, height, width] = data.dims();
        if channels != 3 {
            return Err(HcmError::shape("image batch", "3 channels", channels));
        }
        check_divisible(height, width)?;
        let finite = data.clone().is_finite().all().into_scalar();
        if !burn::tensor::ElementConversion::elem::<bool>(finite) {
            return Err(HcmError::Data("image batch contains non-finite values".into()));
        }
        Ok(Self(data))
    }

    pub fn tensor(&self) -> &Tensor<B, 4> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<B, 4> {
        self.0
    }

    pub fn dims(&self) -> [usize; 4] {
        self.0.dims()
    }
}

fn check_divisible(height: usize, width: usize) -> Result<()> {
    if !height.is_multiple_of(INPUT_MULTIPLE) || !width.is_multiple_of(INPUT_MULTIPLE) || height == 0 || width == 0 {
        return Err(HcmError::InputNotDivisible { height, width });
    }
    Ok(())
}

/// Backbone stage outputs f0..f4 plus, once the head has run, the pooled
/// stride-32 feature f5.
#[derive(Debug, Clone)]
pub struct FeaturePyramid<B: Backend> {
    pub f0: Tensor<B, 4>,
    pub f1: Tensor<B, 4>,
    pub f2: Tensor<B, 4>,
    pub f3: Tensor<B, 4>,
    pub f4: Tensor<B, 4>,
    pub f5: Option<Tensor<B, 4>>,
}

impl<B: Backend> FeaturePyramid<B> {
    /// Stages f1..f4, the ones consumed by the coherence blocks.
    pub fn stages(&self) -> [Tensor<B, 4>; 4] {
        [
            self.f1.clone(),
            self.f2.clone(),
            self.f3.clone(),
            self.f4.clone(),
        ]
    }
}

#[derive(Config, Debug)]
pub struct BottleneckConfig {
    pub in_channels: usize,
    pub mid_channels: usize,
    pub out_channels: usize,
    #[config(default = 1)]
    pub stride: usize,
}

impl BottleneckConfig {
    pub fn init<B: Backend>(&self, device: &B::Device) -> Bottleneck<B> {
        let mut expand = ConvBlockConfig::new([self.mid_channels, self.out_channels], 1)
            .with_relu(false)
            .init(device);
        // Residual branches start silent so a fresh network is close to identity.
        if let Some(norm) = expand.norm.take() {
            expand.norm = Some(zero_gamma(norm));
        }
        let shortcut = (self.stride != 1 || self.in_channels != self.out_channels).then(|| {
            ConvBlockConfig::new([self.in_channels, self.out_channels], 1)
                .with_stride(self.stride)
                .with_relu(false)
                .init(device)
        });
        Bottleneck {
            reduce: ConvBlockConfig::new([self.in_channels, self.mid_channels], 1).init(device),
            spatial: ConvBlockConfig::new([self.mid_channels, self.mid_channels], 3)
                .with_stride(self.stride)
                .init(device),
            expand,
            shortcut,
            relu: Relu::new(),
        }
    }
}

fn zero_gamma<B: Backend>(mut norm: BatchNorm<B>) -> BatchNorm<B> {
    norm.gamma = norm.gamma.map(|g| {
        let rg = g.is_require_grad();
        g.zeros_like().set_require_grad(rg)
    });
    norm
}

#[derive(Module, Debug)]
pub struct Bottleneck<B: Backend> {
    reduce: ConvBlock<B>,
    spatial: ConvBlock<B>,
    expand: ConvBlock<B>,
    shortcut: Option<ConvBlock<B>>,
    relu: Relu,
}

impl<B: Backend> Bottleneck<B> {
    pub fn forward(&self, x: Tensor<B, 4>) -> Tensor<B, 4> {
        let identity = match &self.shortcut {
            Some(shortcut) => shortcut.forward(x.clone()),
            None => x.clone(),
        };
        let out = self.expand.forward(self.spatial.forward(self.reduce.forward(x)));
        self.relu.forward(out + identity)
    }
}

#[derive(Config, Debug, PartialEq)]
pub struct BackboneConfig {
    /// Bottlenecks per stage; `[3, 4, 6, 3]` is ResNet-50.
    #[config(default = "[3, 4, 6, 3]")]
    pub layers: [usize; 4],
}

impl BackboneConfig {
    pub fn init<B: Backend>(&self, device: &B::Device) -> Backbone<B> {
        let mut in_channels = STAGE_CHANNELS[0];
        let mut stages = Vec::with_capacity(4);
        for (i, &depth) in self.layers.iter().enumerate() {
            assert!(depth >= 1, "every backbone stage needs at least one block");
            let out_channels = STAGE_CHANNELS[i + 1];
            let mid_channels = out_channels / 4;
            let blocks: Vec<_> = (0..depth)
                .map(|j| {
                    let stride = if i > 0 && j == 0 { 2 } else { 1 };
                    BottleneckConfig::new(
                        if j == 0 { in_channels } else { out_channels },
                        mid_channels,
                        out_channels,
                    )
                    .with_stride(stride)
                    .init(device)
                })
                .collect();
            in_channels = out_channels;
            stages.push(blocks);
        }
        Backbone {
            stem: ConvBlockConfig::new([3, STAGE_CHANNELS[0]], 7)
                .with_stride(2)
                .init(device),
            stages,
        }
    }
}

#[derive(Module, Debug)]
pub struct Backbone<B: Backend> {
    stem: ConvBlock<B>,
    stages: Vec<Vec<Bottleneck<B>>>,
}

impl<B: Backend> Backbone<B> {
    /// Stage outputs f0..f4 for a `[B, 3, H, W]` image tensor.
    ///
    /// Fails when H or W is not a multiple of 32.
    pub fn extract_features(&self, image: Tensor<B, 4>) -> Result<FeaturePyramid<B>> {
        let [_, channels, height, width] = image.dims();
        if channels != 3 {
            return Err(HcmError::shape("backbone input", "3 channels", channels));
        }
        check_divisible(height, width)?;
        let f0 = self.stem.forward(image);
        let mut x = max_pool2d(f0.clone(), [3, 3], [2, 2], [1, 1], [1, 1], false);
        let mut outs = Vec::with_capacity(4);
        for stage in &self.stages {
            for block in stage {
                x = block.forward(x);
            }
            outs.push(x.clone());
        }
        let [f1, f2, f3, f4]: [Tensor<B, 4>; 4] = outs.try_into().expect("four stages");
        Ok(FeaturePyramid {
            f0,
            f1,
            f2,
            f3,
            f4,
            f5: None,
        })
    }

    /// Replace the weights with a named-msgpack record written by
    /// [`Backbone::save_weights`] (or converted from pretrained weights).
    pub fn load_weights(self, path: &Path, device: &B::Device) -> Result<Self> {
        let recorder = NamedMpkFileRecorder::<FullPrecisionSettings>::new();
        self.load_file(path.to_path_buf(), &recorder, device)
            .map_err(|e| HcmError::Checkpoint {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
    }

    pub fn save_weights(self, path: &Path) -> Result<()> {
        let recorder = NamedMpkFileRecorder::<FullPrecisionSettings>::new();
        self.save_file(path.to_path_buf(), &recorder)
            .map_err(|e| HcmError::Checkpoint {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
    }
}

#[derive(Config, Debug)]
pub struct AsppConfig {
    #[config(default = 2048)]
    pub in_channels: usize,
    #[config(default = 64)]
    pub channels: usize,
    #[config(default = "[1, 6, 12, 18]")]
    pub rates: [usize; 4],
}

impl AsppConfig {
    pub fn init<B: Backend>(&self, device: &B::Device) -> Aspp<B> {
        let branches = self
            .rates
            .iter()
            .map(|&rate| {
                ConvBlockConfig::new([self.in_channels, self.channels], 3)
                    .with_dilation(rate)
                    .init(device)
            })
            .collect();
        Aspp {
            branches,
            // No normalization on the pooled branch: a 1x1 map has no spatial
            // statistics, and batch-of-one training would zero it out.
            image_pool: ConvBlockConfig::new([self.in_channels, self.channels], 1)
                .with_norm(false)
                .init(device),
            fuse: ConvBlockConfig::new([5 * self.channels, self.channels], 1).init(device),
            project: ConvBlockConfig::linear([self.channels, 1], 1).init(device),
        }
    }
}

/// Four dilated 3x3 branches plus an image-level branch, fused to the
/// decoder width; a 1x1 projection of the fused feature gives the coarse map.
#[derive(Module, Debug)]
pub struct Aspp<B: Backend> {
    branches: Vec<ConvBlock<B>>,
    image_pool: ConvBlock<B>,
    fuse: ConvBlock<B>,
    pub project: ConvBlock<B>,
}

impl<B: Backend> Aspp<B> {
    /// Returns `(f5, p5)`: the fused feature and the coarse logit map.
    pub fn forward(&self, f4: Tensor<B, 4>) -> Result<(Tensor<B, 4>, Tensor<B, 4>)> {
        let [b, c, h, w] = f4.dims();
        let expected = self.image_pool.conv.weight.dims()[1];
        if c != expected {
            return Err(HcmError::shape("aspp input", expected, c));
        }
        let mut parts: Vec<_> = self.branches.iter().map(|br| br.forward(f4.clone())).collect();
        let pooled = self.image_pool.forward(adaptive_avg_pool2d(f4, [1, 1]));
        let width = pooled.dims()[1];
        parts.push(pooled.expand([b, width, h, w]));
        let f5 = self.fuse.forward(Tensor::cat(parts, 1));
        let p5 = self.project.forward(f5.clone());
        Ok((f5, p5))
    }
}

#[derive(Config, Debug)]
pub struct EncoderConfig {
    #[config(default = "BackboneConfig::new()")]
    pub backbone: BackboneConfig,
    #[config(default = 64)]
    pub channels: usize,
}

impl EncoderConfig {
    pub fn init<B: Backend>(&self, device: &B::Device) -> Encoder<B> {
        Encoder {
            backbone: self.backbone.init(device),
            aspp: AsppConfig::new()
                .with_in_channels(STAGE_CHANNELS[4])
                .with_channels(self.channels)
                .init(device),
        }
    }
}

#[derive(Module, Debug)]
pub struct Encoder<B: Backend> {
    pub backbone: Backbone<B>,
    pub aspp: Aspp<B>,
}

impl<B: Backend> Encoder<B> {
    /// Full pyramid (f0..f5) and the coarse prediction p5.
    pub fn forward(&self, image: Tensor<B, 4>) -> Result<(FeaturePyramid<B>, Tensor<B, 4>)> {
        let mut pyramid = self.backbone.extract_features(image)?;
        let (f5, p5) = self.aspp.forward(pyramid.f4.clone())?;
        pyramid.f5 = Some(f5);
        Ok((pyramid, p5))
    }
}
