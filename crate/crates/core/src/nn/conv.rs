use burn::{
    config::Config,
    module::{Module, Param},
    nn::{
        conv::{Conv2d, Conv2dConfig},
        BatchNorm, BatchNormConfig, Initializer, PaddingConfig2d, Relu,
    },
    tensor::{backend::Backend, ops::PadMode, Int, Slice, Tensor, TensorData},
};

/// Convolution optionally followed by batch normalization and ReLU.
#[derive(Config, Debug)]
pub struct ConvBlockConfig {
    pub channels: [usize; 2],
    pub kernel: usize,
    #[config(default = 1)]
    pub stride: usize,
    #[config(default = 1)]
    pub dilation: usize,
    #[config(default = true)]
    pub norm: bool,
    #[config(default = true)]
    pub relu: bool,
}

impl ConvBlockConfig {
    /// A plain convolution with bias: no normalization, no activation.
    pub fn linear(channels: [usize; 2], kernel: usize) -> Self {
        Self::new(channels, kernel).with_norm(false).with_relu(false)
    }

    pub fn init<B: Backend>(&self, device: &B::Device) -> ConvBlock<B> {
        assert!(self.kernel % 2 == 1, "kernel size must be odd");
        let pad = self.dilation * (self.kernel - 1) / 2;
        // Weights start at zero and are filled by `SeededInit`, so model
        // construction never touches the backend's global RNG.
        let conv = Conv2dConfig::new(self.channels, [self.kernel, self.kernel])
            .with_stride([self.stride, self.stride])
            .with_dilation([self.dilation, self.dilation])
            .with_padding(PaddingConfig2d::Explicit(pad, pad))
            .with_bias(!self.norm)
            .with_initializer(Initializer::Zeros)
            .init(device);
        ConvBlock {
            conv,
            stride: self.stride,
            dilation: self.dilation,
            norm: self
                .norm
                .then(|| BatchNormConfig::new(self.channels[1]).init(device)),
            relu: self.relu.then(Relu::new),
        }
    }
}

/// 2D convolution as shifted slices of the padded input followed by one
/// matrix product.
///
/// The ndarray backend's native convolution backward is orders of magnitude
/// slower than its forward; in this form the backward pass is slices and
/// matmuls only. Kernel taps whose every read lands in the zero padding
/// (large dilations on small maps) are dropped, which leaves the result
/// unchanged.
pub fn conv2d_matmul<B: Backend>(
    x: Tensor<B, 4>,
    weight: Tensor<B, 4>,
    bias: Option<Tensor<B, 1>>,
    stride: usize,
    dilation: usize,
    pad: usize,
) -> Tensor<B, 4> {
    let [b, c, h, w] = x.dims();
    let [o, _, kh, kw] = weight.dims();
    let oh = (h + 2 * pad - dilation * (kh - 1) - 1) / stride + 1;
    let ow = (w + 2 * pad - dilation * (kw - 1) - 1) / stride + 1;
    let live = |offset: usize, size: usize, out: usize| {
        let last = offset + stride * (out - 1);
        last >= pad && offset < pad + size
    };
    let rows: Vec<usize> = (0..kh).filter(|&i| live(i * dilation, h, oh)).collect();
    let cols: Vec<usize> = (0..kw).filter(|&j| live(j * dilation, w, ow)).collect();

    let x = if pad > 0 {
        x.pad((pad, pad, pad, pad), PadMode::Constant(0.0))
    } else {
        x
    };
    let span = |start: usize, out: usize| {
        Slice::new(start as isize, Some((start + stride * (out - 1) + 1) as isize), stride as isize)
    };
    let mut taps = Vec::with_capacity(rows.len() * cols.len());
    let mut tap_index = Vec::with_capacity(rows.len() * cols.len());
    for &i in &rows {
        for &j in &cols {
            taps.push(x.clone().slice([
                Slice::from(0..b),
                Slice::from(0..c),
                span(i * dilation, oh),
                span(j * dilation, ow),
            ]));
            tap_index.push((i * kw + j) as i64);
        }
    }
    let k = taps.len() * c;
    let patches = if taps.len() == 1 {
        taps.pop().unwrap()
    } else {
        Tensor::cat(taps, 1)
    }
    .reshape([b, k, oh * ow]);

    // [o, c, kh, kw] -> [o, tap, c], keeping the live taps in patch order
    let mut kernel = weight.permute([0, 2, 3, 1]).reshape([o, kh * kw, c]);
    if tap_index.len() != kh * kw {
        let device = kernel.device();
        kernel = kernel.select(1, Tensor::<B, 1, Int>::from_data(TensorData::new(tap_index, [k / c]), &device));
    }
    let kernel = kernel.reshape([1, o, k]);
    let out = kernel.matmul(patches).reshape([b, o, oh, ow]);
    match bias {
        Some(bias) => out + bias.reshape([1, o, 1, 1]),
        None => out,
    }
}

#[derive(Module, Debug)]
pub struct ConvBlock<B: Backend> {
    pub conv: Conv2d<B>,
    stride: usize,
    dilation: usize,
    pub norm: Option<BatchNorm<B>>,
    pub relu: Option<Relu>,
}

impl<B: Backend> ConvBlock<B> {
    pub fn forward(&self, x: Tensor<B, 4>) -> Tensor<B, 4> {
        let [_, _, kh, _] = self.conv.weight.dims();
        let pad = self.dilation * (kh - 1) / 2;
        let mut x = conv2d_matmul(
            x,
            self.conv.weight.val(),
            self.conv.bias.as_ref().map(|b| b.val()),
            self.stride,
            self.dilation,
            pad,
        );
        if let Some(norm) = &self.norm {
            x = norm.forward(x);
        }
        if let Some(relu) = &self.relu {
            x = relu.forward(x);
        }
        x
    }

    pub fn out_channels(&self) -> usize {
        self.conv.weight.dims()[0]
    }

    /// Zero weights and bias, keeping normalization and activation.
    pub fn zeroed(mut self) -> Self {
        self.conv.weight = self.conv.weight.map(|w| {
            let rg = w.is_require_grad();
            w.zeros_like().set_require_grad(rg)
        });
        self.conv.bias = self.conv.bias.map(|b| {
            b.map(|b| {
                let rg = b.is_require_grad();
                b.zeros_like().set_require_grad(rg)
            })
        });
        self
    }

    /// Test hook: turn the block into an exact identity map.
    ///
    /// Requires equal input and output widths. The kernel becomes a centred
    /// delta on the channel diagonal, any bias is zeroed, and normalization is
    /// dropped. The activation is kept, so the block is the identity only on
    /// non-negative inputs when it has a ReLU.
    pub fn into_identity(mut self) -> Self {
        let [out_c, in_c, kh, kw] = self.conv.weight.dims();
        assert_eq!(out_c, in_c, "identity kernel needs equal channel counts");
        let mut values = vec![0.0f64; out_c * in_c * kh * kw];
        for c in 0..out_c {
            values[((c * in_c + c) * kh + kh / 2) * kw + kw / 2] = 1.0;
        }
        self.conv.weight = self.conv.weight.map(|w| {
            let rg = w.is_require_grad();
            Tensor::<B, 4>::from_data(
                TensorData::new(values, [out_c, in_c, kh, kw]),
                &w.device(),
            )
            .set_require_grad(rg)
        });
        let device = self.conv.weight.device();
        self.conv.bias = Some(Param::from_tensor(Tensor::zeros([out_c], &device)));
        self.norm = None;
        self
    }
}
