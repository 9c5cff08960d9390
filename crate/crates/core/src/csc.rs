//! Cross-stage coherence: joint attention over a stage feature and its
//! upsampled successor, followed by position normalization.

use burn::{
    config::Config,
    module::Module,
    tensor::{backend::Backend, Tensor},
};

use crate::error::{HcmError, Result};
use crate::nn::{resample, sigmoid, ChannelAttention, ChannelAttentionConfig, ConvBlock, ConvBlockConfig};

/// Variance floor of [`position_norm`].
pub const POSITION_NORM_EPS: f64 = 1e-5;

/// Bilinear upsampling of `x` to `size` (half-pixel centres).
pub fn upsample<B: Backend>(x: Tensor<B, 4>, size: [usize; 2]) -> Tensor<B, 4> {
    resample::resize_bilinear(x, size)
}

/// Normalize each `(batch, y, x)` position across channels to zero mean and
/// unit population variance. No affine parameters.
pub fn position_norm<B: Backend>(x: Tensor<B, 4>) -> Tensor<B, 4> {
    let (var, mean) = x.clone().var_mean_bias(1);
    (x - mean) / (var + POSITION_NORM_EPS).sqrt()
}

/// Whether the attention gates are applied or forced open (gate = 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gates {
    Learned,
    Open,
}

#[derive(Config, Debug)]
pub struct JointAttentionConfig {
    #[config(default = 64)]
    pub channels: usize,
    #[config(default = 16)]
    pub reduction: usize,
    #[config(default = 7)]
    pub spatial_kernel: usize,
}

impl JointAttentionConfig {
    pub fn init<B: Backend>(&self, device: &B::Device) -> JointAttention<B> {
        let c = self.channels;
        JointAttention {
            fuse: ConvBlockConfig::new([2 * c, c], 1).init(device),
            channel: ChannelAttentionConfig::new(c)
                .with_reduction(self.reduction)
                .init(device),
            spatial: ConvBlockConfig::linear([2, 1], self.spatial_kernel).init(device),
        }
    }
}

/// Channel gate then spatial gate over the 1x1 fusion of `concat(a, b)`.
#[derive(Module, Debug)]
pub struct JointAttention<B: Backend> {
    fuse: ConvBlock<B>,
    channel: ChannelAttention<B>,
    spatial: ConvBlock<B>,
}

impl<B: Backend> JointAttention<B> {
    pub fn fuse(&self, a: Tensor<B, 4>, b: Tensor<B, 4>) -> Result<Tensor<B, 4>> {
        if a.dims() != b.dims() {
            return Err(HcmError::shape("joint attention", a.dims(), b.dims()));
        }
        let width = self.fuse.out_channels();
        if a.dims()[1] != width {
            return Err(HcmError::shape("joint attention width", width, a.dims()[1]));
        }
        Ok(self.fuse.forward(Tensor::cat(vec![a, b], 1)))
    }

    pub fn spatial_gate(&self, x: Tensor<B, 4>) -> Tensor<B, 4> {
        let avg = x.clone().mean_dim(1);
        let max = x.max_dim(1);
        sigmoid(self.spatial.forward(Tensor::cat(vec![avg, max], 1)))
    }

    pub fn forward(&self, a: Tensor<B, 4>, b: Tensor<B, 4>) -> Result<Tensor<B, 4>> {
        self.forward_gated(a, b, Gates::Learned)
    }

    pub fn forward_gated(&self, a: Tensor<B, 4>, b: Tensor<B, 4>, gates: Gates) -> Result<Tensor<B, 4>> {
        let fused = self.fuse(a, b)?;
        Ok(match gates {
            Gates::Open => fused,
            Gates::Learned => {
                let x = self.channel.forward(fused);
                let gate = self.spatial_gate(x.clone());
                x * gate
            }
        })
    }
}

#[derive(Config, Debug)]
pub struct CscConfig {
    #[config(default = 64)]
    pub channels: usize,
}

impl CscConfig {
    pub fn init<B: Backend>(&self, device: &B::Device) -> CscBlock<B> {
        CscBlock {
            attention: JointAttentionConfig::new()
                .with_channels(self.channels)
                .init(device),
        }
    }
}

#[derive(Module, Debug)]
pub struct CscBlock<B: Backend> {
    pub attention: JointAttention<B>,
}

impl<B: Backend> CscBlock<B> {
    /// `PN(JA(current, up(next)))`, at the spatial size of `current`.
    pub fn forward(&self, current: Tensor<B, 4>, next: Tensor<B, 4>) -> Result<Tensor<B, 4>> {
        let [_, _, h, w] = current.dims();
        let next = upsample(next, [h, w]);
        Ok(position_norm(self.attention.forward(current, next)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::SeededInit;
    use crate::CpuBackend64;
    use burn::tensor::{Distribution, TensorData};

    type B = CpuBackend64;

    fn position_stats(x: Tensor<B, 4>) -> Vec<(f64, f64)> {
        let [b, c, h, w] = x.dims();
        let v = x.into_data().to_vec::<f64>().unwrap();
        let mut out = Vec::new();
        for n in 0..b {
            for p in 0..h * w {
                let vals: Vec<f64> = (0..c).map(|k| v[(n * c + k) * h * w + p]).collect();
                let mean = vals.iter().sum::<f64>() / c as f64;
                let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / c as f64;
                out.push((mean, var.sqrt()));
            }
        }
        out
    }

    #[test]
    fn position_norm_statistics() {
        let device = Default::default();
        let x = Tensor::<B, 4>::random([2, 16, 5, 7], Distribution::Normal(3.0, 2.0), &device);
        for (mean, std) in position_stats(position_norm(x)) {
            assert!(mean.abs() < 1e-5);
            assert!((std - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn position_norm_constant_position_is_zero() {
        let device = Default::default();
        let x = Tensor::<B, 4>::full([1, 8, 2, 2], 4.25, &device);
        for v in position_norm(x).into_data().to_vec::<f64>().unwrap() {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn position_norm_two_channels() {
        let device = Default::default();
        let x = Tensor::<B, 4>::from_data(TensorData::new(vec![1.0f64, 3.0], [1, 2, 1, 1]), &device);
        let y = position_norm(x).into_data().to_vec::<f64>().unwrap();
        assert!((y[0] + 1.0).abs() < 1e-3 && (y[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn joint_attention_open_gates_is_fusion() {
        let device = Default::default();
        let ja = SeededInit::apply(5, JointAttentionConfig::new().init::<B>(&device));
        let a = Tensor::<B, 4>::random([1, 64, 6, 6], Distribution::Default, &device);
        let b = Tensor::<B, 4>::random([1, 64, 6, 6], Distribution::Default, &device);
        let open = ja.forward_gated(a.clone(), b.clone(), Gates::Open).unwrap();
        open.into_data()
            .assert_eq(&ja.fuse(a, b).unwrap().into_data(), true);
    }

    #[test]
    fn joint_attention_rejects_mismatch() {
        let device = Default::default();
        let ja = JointAttentionConfig::new().init::<B>(&device);
        let a = Tensor::<B, 4>::zeros([1, 64, 6, 6], &device);
        let b = Tensor::<B, 4>::zeros([1, 64, 3, 3], &device);
        assert!(ja.forward(a, b).is_err());
    }

    #[test]
    fn csc_shapes() {
        let device = Default::default();
        let csc = SeededInit::apply(2, CscConfig::new().init::<B>(&device));
        let f2 = Tensor::<B, 4>::random([1, 64, 44, 44], Distribution::Default, &device);
        let f3 = Tensor::<B, 4>::random([1, 64, 22, 22], Distribution::Default, &device);
        assert_eq!(csc.forward(f2, f3).unwrap().dims(), [1, 64, 44, 44]);
        let f4 = Tensor::<B, 4>::random([1, 64, 11, 11], Distribution::Default, &device);
        let f5 = Tensor::<B, 4>::random([1, 64, 11, 11], Distribution::Default, &device);
        assert_eq!(csc.forward(f4, f5).unwrap().dims(), [1, 64, 11, 11]);
    }

    #[test]
    fn output_depends_on_both_inputs() {
        let device = Default::default();
        let csc = SeededInit::apply(8, CscConfig::new().with_channels(16).init::<B>(&device));
        for seed in 0..5u64 {
            <B as burn::tensor::backend::Backend>::seed(&device, seed);
            let a = Tensor::<B, 4>::random([1, 16, 8, 8], Distribution::Normal(0.0, 1.0), &device);
            let b = Tensor::<B, 4>::random([1, 16, 4, 4], Distribution::Normal(0.0, 1.0), &device);
            let base = csc.forward(a.clone(), b.clone()).unwrap();
            let nudge = |x: Tensor<B, 4>| x.clone() + x.zeros_like().slice_fill([0..1, 3..4, 2..3, 1..2], 1e-4);
            let da = (csc.forward(nudge(a.clone()), b.clone()).unwrap() - base.clone()).abs().sum();
            let db = (csc.forward(a, nudge(b)).unwrap() - base).abs().sum();
            assert!(da.into_scalar() > 0.0);
            assert!(db.into_scalar() > 0.0);
        }
    }
}
