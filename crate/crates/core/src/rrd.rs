//! Reversible re-calibration decoder.
//!
//! Each step gates the stage context feature by the sigmoid of the coarser
//! prediction and, separately, by its complement, so that regions the prior
//! marked as background or uncertain are re-examined. The two gated copies
//! are concatenated, passed through a residual channel-attention block and
//! projected to a one-channel logit map.

use burn::{
    config::Config,
    module::Module,
    tensor::{backend::Backend, Tensor},
};

use crate::error::{HcmError, Result};
use crate::nn::{resample, sigmoid, ChannelAttention, ChannelAttentionConfig, ConvBlock, ConvBlockConfig};

/// Per-stage logit maps p1..p5 (pre-sigmoid), finest first.
#[derive(Debug, Clone)]
pub struct PredictionPyramid<B: Backend> {
    levels: Vec<Tensor<B, 4>>,
}

impl<B: Backend> PredictionPyramid<B> {
    pub const LEVELS: usize = 5;

    /// Build from `[p1, ..., p5]`; fails if a level is missing or has more
    /// than one channel.
    pub fn new(levels: Vec<Tensor<B, 4>>) -> Result<Self> {
        if levels.len() != Self::LEVELS {
            return Err(HcmError::MissingLevel(levels.len() + 1));
        }
        for p in &levels {
            if p.dims()[1] != 1 {
                return Err(HcmError::shape("prediction level", 1, p.dims()[1]));
            }
        }
        Ok(Self { levels })
    }

    /// Level `s` in 1..=5.
    pub fn level(&self, s: usize) -> &Tensor<B, 4> {
        &self.levels[s - 1]
    }

    /// The finest map p1.
    pub fn finest(&self) -> &Tensor<B, 4> {
        &self.levels[0]
    }

    pub fn levels(&self) -> &[Tensor<B, 4>] {
        &self.levels
    }

    pub fn into_levels(self) -> Vec<Tensor<B, 4>> {
        self.levels
    }
}

#[derive(Config, Debug)]
pub struct RcabConfig {
    pub channels: usize,
    #[config(default = 16)]
    pub reduction: usize,
}

impl RcabConfig {
    pub fn init<B: Backend>(&self, device: &B::Device) -> Rcab<B> {
        let c = self.channels;
        Rcab {
            body: ConvBlockConfig::new([c, c], 3).with_norm(false).init(device),
            tail: ConvBlockConfig::linear([c, c], 3).init(device),
            attention: ChannelAttentionConfig::new(c)
                .with_reduction(self.reduction)
                .init(device),
        }
    }
}

/// Residual channel attention block: `x + CA(conv3(relu(conv3(x))))`.
#[derive(Module, Debug)]
pub struct Rcab<B: Backend> {
    body: ConvBlock<B>,
    tail: ConvBlock<B>,
    attention: ChannelAttention<B>,
}

impl<B: Backend> Rcab<B> {
    /// The residual branch before the channel gate.
    pub fn branch(&self, x: Tensor<B, 4>) -> Tensor<B, 4> {
        self.tail.forward(self.body.forward(x))
    }

    pub fn forward(&self, x: Tensor<B, 4>) -> Tensor<B, 4> {
        let branch = self.branch(x.clone());
        x + self.attention.forward(branch)
    }

    pub fn with_zeroed_tail(mut self) -> Self {
        self.tail = self.tail.zeroed();
        self
    }
}

/// The forward gate `a = sigmoid(prior)` broadcast to the feature width and
/// its reverse `1 - a`.
#[derive(Debug, Clone)]
pub struct PriorGates<B: Backend> {
    pub forward: Tensor<B, 4>,
    pub reverse: Tensor<B, 4>,
}

#[derive(Config, Debug)]
pub struct RrdStepConfig {
    #[config(default = 64)]
    pub channels: usize,
}

impl RrdStepConfig {
    pub fn init<B: Backend>(&self, device: &B::Device) -> RrdStep<B> {
        let c = self.channels;
        RrdStep {
            rcab: RcabConfig::new(2 * c).init(device),
            head: ConvBlockConfig::linear([2 * c, 1], 3).init(device),
        }
    }
}

#[derive(Module, Debug)]
pub struct RrdStep<B: Backend> {
    rcab: Rcab<B>,
    head: ConvBlock<B>,
}

impl<B: Backend> RrdStep<B> {
    /// Resize the coarser prediction to the context size, squash it and
    /// repeat it across `channels`.
    pub fn gates(&self, prior: Tensor<B, 4>, [h, w]: [usize; 2], channels: usize) -> Result<PriorGates<B>> {
        if prior.dims()[1] != 1 {
            return Err(HcmError::shape("decoder prior", 1, prior.dims()[1]));
        }
        let a = sigmoid(resample::resize_bilinear(prior, [h, w])).repeat_dim(1, channels);
        let reverse = a.clone().neg() + 1.0;
        Ok(PriorGates { forward: a, reverse })
    }

    /// `concat(f ⊙ a, f ⊙ (1 − a))`.
    pub fn gated_features(&self, context: Tensor<B, 4>, prior: Tensor<B, 4>) -> Result<Tensor<B, 4>> {
        let [_, c, h, w] = context.dims();
        let gates = self.gates(prior, [h, w], c)?;
        Ok(Tensor::cat(
            vec![context.clone() * gates.forward, context * gates.reverse],
            1,
        ))
    }

    /// Channel attention refinement and the linear 3x3 logit head.
    pub fn refine(&self, gated: Tensor<B, 4>) -> Tensor<B, 4> {
        self.head.forward(self.rcab.forward(gated))
    }

    pub fn forward(&self, context: Tensor<B, 4>, prior: Tensor<B, 4>) -> Result<Tensor<B, 4>> {
        let expected = self.head.conv.weight.dims()[1] / 2;
        if context.dims()[1] != expected {
            return Err(HcmError::shape("decoder context", expected, context.dims()[1]));
        }
        Ok(self.refine(self.gated_features(context, prior)?))
    }
}

/// One decoder stage: the full reversible step, or (ablated) a plain 3x3
/// logit head on the context feature that ignores the prior.
#[derive(Module, Debug)]
pub enum DecoderStage<B: Backend> {
    Reversible(RrdStep<B>),
    Plain(ConvBlock<B>),
}

impl<B: Backend> DecoderStage<B> {
    pub fn forward(&self, context: Tensor<B, 4>, prior: Tensor<B, 4>) -> Result<Tensor<B, 4>> {
        match self {
            DecoderStage::Reversible(step) => step.forward(context, prior),
            DecoderStage::Plain(head) => Ok(head.forward(context)),
        }
    }
}

#[derive(Config, Debug)]
pub struct DecoderConfig {
    #[config(default = 64)]
    pub channels: usize,
    #[config(default = true)]
    pub reversible: bool,
}

impl DecoderConfig {
    pub fn init<B: Backend>(&self, device: &B::Device) -> Decoder<B> {
        let stages = (0..4)
            .map(|_| {
                if self.reversible {
                    DecoderStage::Reversible(
                        RrdStepConfig::new().with_channels(self.channels).init(device),
                    )
                } else {
                    DecoderStage::Plain(ConvBlockConfig::linear([self.channels, 1], 3).init(device))
                }
            })
            .collect();
        Decoder { stages }
    }
}

/// Top-down decoder producing p4, p3, p2, p1 from the context features and p5.
#[derive(Module, Debug)]
pub struct Decoder<B: Backend> {
    /// Stage heads for s = 1..4, finest first.
    stages: Vec<DecoderStage<B>>,
}

impl<B: Backend> Decoder<B> {
    pub fn stage(&self, s: usize) -> &DecoderStage<B> {
        &self.stages[s - 1]
    }

    /// `contexts` holds f1c..f4c, finest first.
    pub fn decode(&self, contexts: [Tensor<B, 4>; 4], p5: Tensor<B, 4>) -> Result<PredictionPyramid<B>> {
        if p5.dims()[1] != 1 {
            return Err(HcmError::shape("coarse prediction", 1, p5.dims()[1]));
        }
        let mut levels = vec![p5];
        for (stage, context) in self.stages.iter().zip(contexts).rev() {
            let prior = levels.last().expect("non-empty").clone();
            levels.push(stage.forward(context, prior)?);
        }
        levels.reverse();
        PredictionPyramid::new(levels)
    }
}
