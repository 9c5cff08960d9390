//! The full segmenter: encoder, per-stage coherence, cross-stage context and
//! the top-down decoder, with switches that remove each of the three
//! coherence/decoder components.

use burn::{
    config::Config,
    module::Module,
    tensor::{backend::Backend, Tensor},
};

use crate::csc::{CscBlock, CscConfig};
use crate::encoder::{BackboneConfig, Encoder, EncoderConfig, FeaturePyramid, ImageBatch, STAGE_CHANNELS};
use crate::error::Result;
use crate::isc::{IscBlock, IscConfig};
use crate::nn::{ConvBlock, ConvBlockConfig, SeededInit};
use crate::rrd::{Decoder, DecoderConfig, PredictionPyramid};

#[derive(Config, Debug, PartialEq)]
pub struct HcmConfig {
    /// Decoder width C.
    #[config(default = 64)]
    pub channels: usize,
    #[config(default = "BackboneConfig::new()")]
    pub backbone: BackboneConfig,
    #[config(default = true)]
    pub use_isc: bool,
    #[config(default = true)]
    pub use_csc: bool,
    #[config(default = true)]
    pub use_rrd: bool,
}

impl HcmConfig {
    /// Build the model with every kernel drawn from a stream seeded by `seed`.
    pub fn init<B: Backend>(&self, seed: u64, device: &B::Device) -> HcmModel<B> {
        let c = self.channels;
        let stages = STAGE_CHANNELS[1..]
            .iter()
            .map(|&in_channels| {
                if self.use_isc {
                    StageEncoder::Coherence(
                        IscConfig::new(in_channels).with_channels(c).init(device),
                    )
                } else {
                    StageEncoder::Projection(ConvBlockConfig::linear([in_channels, c], 1).init(device))
                }
            })
            .collect();
        let csc = if self.use_csc {
            (0..4)
                .map(|_| CscConfig::new().with_channels(c).init(device))
                .collect()
        } else {
            Vec::new()
        };
        let model = HcmModel {
            encoder: EncoderConfig::new()
                .with_backbone(self.backbone.clone())
                .with_channels(c)
                .init(device),
            stages,
            csc,
            decoder: DecoderConfig::new()
                .with_channels(c)
                .with_reversible(self.use_rrd)
                .init(device),
        };
        SeededInit::apply(seed, model)
    }
}

/// Per-stage feature transform: the intra-stage coherence block, or (ablated)
/// a 1x1 projection to the decoder width.
#[derive(Module, Debug)]
pub enum StageEncoder<B: Backend> {
    Coherence(IscBlock<B>),
    Projection(ConvBlock<B>),
}

impl<B: Backend> StageEncoder<B> {
    pub fn forward(&self, f: Tensor<B, 4>) -> Result<Tensor<B, 4>> {
        match self {
            StageEncoder::Coherence(isc) => isc.forward(f),
            StageEncoder::Projection(proj) => {
                let expected = proj.conv.weight.dims()[1];
                if f.dims()[1] != expected {
                    return Err(crate::HcmError::shape("stage projection", expected, f.dims()[1]));
                }
                Ok(proj.forward(f))
            }
        }
    }
}

/// Every intermediate of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<B: Backend> {
    pub features: FeaturePyramid<B>,
    /// f1i..f4i.
    pub coherent: [Tensor<B, 4>; 4],
    /// f1c..f4c.
    pub contexts: [Tensor<B, 4>; 4],
    pub predictions: PredictionPyramid<B>,
}

#[derive(Module, Debug)]
pub struct HcmModel<B: Backend> {
    pub encoder: Encoder<B>,
    /// Stage transforms for s = 1..4.
    pub stages: Vec<StageEncoder<B>>,
    /// Cross-stage blocks for s = 1..4; empty when the component is removed.
    pub csc: Vec<CscBlock<B>>,
    pub decoder: Decoder<B>,
}

impl<B: Backend> HcmModel<B> {
    pub fn forward(&self, images: &ImageBatch<B>) -> Result<PredictionPyramid<B>> {
        self.forward_tensor(images.tensor().clone())
    }

    /// Forward on a raw `[B, 3, H, W]` tensor (H, W multiples of 32).
    pub fn forward_tensor(&self, images: Tensor<B, 4>) -> Result<PredictionPyramid<B>> {
        Ok(self.trace(images)?.predictions)
    }

    pub fn trace(&self, images: Tensor<B, 4>) -> Result<ForwardTrace<B>> {
        let (features, p5) = self.encoder.forward(images)?;
        let mut coherent = Vec::with_capacity(4);
        for (stage, f) in self.stages.iter().zip(features.stages()) {
            coherent.push(stage.forward(f)?);
        }
        let coherent: [Tensor<B, 4>; 4] = coherent.try_into().expect("four stages");
        let contexts = if self.csc.is_empty() {
            coherent.clone()
        } else {
            let f5 = features.f5.clone().expect("encoder fills f5");
            let mut out = Vec::with_capacity(4);
            for (s, block) in self.csc.iter().enumerate() {
                let next = if s < 3 { coherent[s + 1].clone() } else { f5.clone() };
                out.push(block.forward(coherent[s].clone(), next)?);
            }
            out.try_into().expect("four stages")
        };
        let predictions = self.decoder.decode(contexts.clone(), p5)?;
        Ok(ForwardTrace {
            features,
            coherent,
            contexts,
            predictions,
        })
    }
}
