//! Spatial resampling.
//!
//! Bilinear resizing samples at pixel centres (corners not aligned). It is
//! written as two dense interpolation matrices so that the backward pass is
//! an ordinary matrix product.

use burn::tensor::{backend::Backend, module::avg_pool2d, Int, Tensor, TensorData};

/// Row-stochastic `[out, in]` matrix of half-pixel linear interpolation weights.
pub fn bilinear_weights(input: usize, output: usize) -> Vec<f64> {
    let mut weights = vec![0.0; output * input];
    let scale = input as f64 / output as f64;
    for o in 0..output {
        let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
        let lo = (src.floor() as usize).min(input - 1);
        let hi = (lo + 1).min(input - 1);
        let frac = src - lo as f64;
        weights[o * input + lo] += 1.0 - frac;
        weights[o * input + hi] += frac;
    }
    weights
}

fn weight_matrix<B: Backend>(input: usize, output: usize, device: &B::Device) -> Tensor<B, 2> {
    Tensor::from_data(
        TensorData::new(bilinear_weights(input, output), [output, input]),
        device,
    )
}

/// Bilinear resize of a `[B, C, h, w]` tensor to `[B, C, height, width]`.
///
/// Returns the input unchanged when the size already matches.
pub fn resize_bilinear<B: Backend>(x: Tensor<B, 4>, [height, width]: [usize; 2]) -> Tensor<B, 4> {
    let [b, c, h, w] = x.dims();
    if h == height && w == width {
        return x;
    }
    let device = x.device();
    let x = if w == width {
        x
    } else {
        let cols = weight_matrix::<B>(w, width, &device).transpose();
        x.reshape([b * c * h, w]).matmul(cols).reshape([b, c, h, width])
    };
    if h == height {
        return x;
    }
    let rows = weight_matrix::<B>(h, height, &device).transpose();
    x.swap_dims(2, 3)
        .reshape([b * c * width, h])
        .matmul(rows)
        .reshape([b, c, width, height])
        .swap_dims(2, 3)
}

/// Nearest-neighbour resize sampling the source pixel under each output
/// pixel's centre, `floor((o + 0.5) * in / out)`, so it lines up with the
/// half-pixel bilinear resize.
pub fn resize_nearest<B: Backend>(x: Tensor<B, 4>, [height, width]: [usize; 2]) -> Tensor<B, 4> {
    let [_, _, h, w] = x.dims();
    if h == height && w == width {
        return x;
    }
    let device = x.device();
    let index = |input: usize, output: usize| {
        let idx: Vec<i64> = (0..output)
            .map(|o| nearest_index(o, input, output) as i64)
            .collect();
        Tensor::<B, 1, Int>::from_data(TensorData::new(idx, [output]), &device)
    };
    x.select(2, index(h, height)).select(3, index(w, width))
}

pub fn nearest_index(o: usize, input: usize, output: usize) -> usize {
    ((2 * o + 1) * input / (2 * output)).min(input - 1)
}

/// Stride-1 mean filter; border windows average only the in-image pixels.
pub fn box_mean<B: Backend>(x: Tensor<B, 4>, window: usize) -> Tensor<B, 4> {
    let pad = window / 2;
    avg_pool2d(x, [window, window], [1, 1], [pad, pad], false, false)
}
