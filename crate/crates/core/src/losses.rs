//! Boundary-weighted BCE + IoU objective, summed over the five prediction
//! levels with halving weights.

use burn::tensor::{
    activation::relu,
    backend::Backend,
    ElementConversion, Tensor,
};
use serde::{Deserialize, Serialize};

use crate::error::{HcmError, Result};
use crate::nn::{resample, sigmoid};
use crate::rrd::PredictionPyramid;

/// Level weights `2^-(s-1)` for s = 1..5.
pub const SCALE_WEIGHTS: [f64; 5] = [1.0, 0.5, 0.25, 0.125, 0.0625];
/// Gain on the boundary term of the pixel weights.
pub const BOUNDARY_GAIN: f64 = 5.0;
/// Side of the mean window used to detect mask boundaries.
pub const BOUNDARY_WINDOW: usize = 31;

/// Binary ground-truth masks `[B, 1, H, W]`.
#[derive(Debug, Clone)]
pub struct MaskBatch<B: Backend>(Tensor<B, 4>);

impl<B: Backend> MaskBatch<B> {
    /// Fails unless the tensor has one channel and only 0/1 values.
    pub fn new(data: Tensor<B, 4>) -> Result<Self> {
        if data.dims()[1] != 1 {
            return Err(HcmError::shape("mask batch", 1, data.dims()[1]));
        }
        let binary = data
            .clone()
            .equal_elem(0.0)
            .bool_or(data.clone().equal_elem(1.0))
            .all()
            .into_scalar();
        if !binary.elem::<bool>() {
            return Err(HcmError::Data("mask batch is not binary".into()));
        }
        Ok(Self(data))
    }

    pub fn tensor(&self) -> &Tensor<B, 4> {
        &self.0
    }

    pub fn dims(&self) -> [usize; 4] {
        self.0.dims()
    }

    /// Nearest-neighbour downscale, re-binarized at 0.5.
    pub fn resize(&self, size: [usize; 2]) -> Self {
        let resized = resample::resize_nearest(self.0.clone(), size);
        Self(resized.greater_equal_elem(0.5).float())
    }
}

/// Per-pixel loss weights in [1, 1 + BOUNDARY_GAIN].
#[derive(Debug, Clone)]
pub struct PixelWeightMap<B: Backend>(Tensor<B, 4>);

impl<B: Backend> PixelWeightMap<B> {
    pub fn tensor(&self) -> &Tensor<B, 4> {
        &self.0
    }

    pub fn resize(&self, size: [usize; 2]) -> Self {
        Self(resample::resize_bilinear(self.0.clone(), size))
    }
}

/// `w = 1 + 5 |mean_31x31(y) - y|`: weights grow near mask boundaries.
pub fn boundary_weights<B: Backend>(y: &MaskBatch<B>) -> PixelWeightMap<B> {
    let y = y.tensor().clone();
    let pooled = resample::box_mean(y.clone(), BOUNDARY_WINDOW);
    PixelWeightMap((pooled - y).abs() * BOUNDARY_GAIN + 1.0)
}

/// `log(1 + e^x)` without overflow.
fn softplus<B: Backend>(x: Tensor<B, 4>) -> Tensor<B, 4> {
    relu(x.clone()) + x.abs().neg().exp().log1p()
}

fn targets_at<B: Backend>(
    p: &Tensor<B, 4>,
    y: &MaskBatch<B>,
    w: &PixelWeightMap<B>,
) -> Result<(Tensor<B, 4>, Tensor<B, 4>)> {
    let [pb, pc, ph, pw] = p.dims();
    let [yb, _, _, _] = y.dims();
    if pb != yb || pc != 1 {
        return Err(HcmError::shape("loss input", [yb, 1], [pb, pc]));
    }
    Ok((
        y.resize([ph, pw]).tensor().clone(),
        w.resize([ph, pw]).tensor().clone(),
    ))
}

/// `Σ w·[y·softplus(−p) + (1−y)·softplus(p)] / Σ w`, evaluated as
/// `softplus(p) − y·p` in logit space.
pub fn weighted_bce<B: Backend>(
    p: Tensor<B, 4>,
    y: &MaskBatch<B>,
    w: &PixelWeightMap<B>,
) -> Result<Tensor<B, 1>> {
    let (y, w) = targets_at(&p, y, w)?;
    let per_pixel = softplus(p.clone()) - y * p;
    Ok((per_pixel * w.clone()).sum() / w.sum())
}

/// `1 − (Σ w·q·y + 1) / (Σ w·(q + y − q·y) + 1)` with `q = sigmoid(p)`.
pub fn weighted_iou<B: Backend>(
    p: Tensor<B, 4>,
    y: &MaskBatch<B>,
    w: &PixelWeightMap<B>,
) -> Result<Tensor<B, 1>> {
    let (y, w) = targets_at(&p, y, w)?;
    let q = sigmoid(p);
    let inter = q.clone() * y.clone();
    let union = q + y - inter.clone();
    let ratio = ((inter * w.clone()).sum() + 1.0) / ((union * w).sum() + 1.0);
    Ok(ratio.neg() + 1.0)
}

/// Scalar values of one loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub total: f64,
    pub bce: [f64; 5],
    pub iou: [f64; 5],
}

impl LossValues {
    /// Unweighted `bce + iou` of each level.
    pub fn level_terms(&self) -> [f64; 5] {
        std::array::from_fn(|i| self.bce[i] + self.iou[i])
    }
}

/// Weighted sum of per-level terms.
pub fn combine_levels(terms: &[f64; 5]) -> f64 {
    terms.iter().zip(SCALE_WEIGHTS).map(|(t, w)| t * w).sum()
}

/// The differentiable total and its per-level pieces.
#[derive(Debug, Clone)]
pub struct LossBreakdown<B: Backend> {
    pub total: Tensor<B, 1>,
    pub bce: Vec<Tensor<B, 1>>,
    pub iou: Vec<Tensor<B, 1>>,
}

impl<B: Backend> LossBreakdown<B> {
    pub fn values(&self) -> LossValues {
        let scalar = |t: &Tensor<B, 1>| t.clone().into_scalar().elem::<f64>();
        LossValues {
            total: scalar(&self.total),
            bce: std::array::from_fn(|i| scalar(&self.bce[i])),
            iou: std::array::from_fn(|i| scalar(&self.iou[i])),
        }
    }
}

/// `Σ_s 2^-(s-1) [bce(p_s) + iou(p_s)]` with targets and weights resampled
/// to each level.
pub fn total_loss<B: Backend>(preds: &PredictionPyramid<B>, y: &MaskBatch<B>) -> Result<LossBreakdown<B>> {
    let w = boundary_weights(y);
    let mut total: Option<Tensor<B, 1>> = None;
    let mut bce = Vec::with_capacity(5);
    let mut iou = Vec::with_capacity(5);
    for (p, scale) in preds.levels().iter().zip(SCALE_WEIGHTS) {
        let b = weighted_bce(p.clone(), y, &w)?;
        let i = weighted_iou(p.clone(), y, &w)?;
        let term = (b.clone() + i.clone()) * scale;
        total = Some(match total {
            Some(t) => t + term,
            None => term,
        });
        bce.push(b);
        iou.push(i);
    }
    Ok(LossBreakdown {
        total: total.expect("five levels"),
        bce,
        iou,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::CpuBackend64;
    use burn::tensor::{Distribution, TensorData};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type B = CpuBackend64;

    fn tensor(values: Vec<f64>, h: usize, w: usize) -> Tensor<B, 4> {
        Tensor::from_data(TensorData::new(values, [1, 1, h, w]), &Default::default())
    }

    fn scalar(t: Tensor<B, 1>) -> f64 {
        t.into_scalar()
    }

    /// Straight pixel loop with the textbook logistic loss.
    fn bce_oracle(p: &[f64], y: &[f64], w: &[f64]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..p.len() {
            let q = 1.0 / (1.0 + (-p[i]).exp());
            num += w[i] * -(y[i] * q.ln() + (1.0 - y[i]) * (1.0 - q).ln());
            den += w[i];
        }
        num / den
    }

    #[test]
    fn constant_masks_have_unit_weights() {
        for fill in [0.0, 1.0] {
            let y = MaskBatch::new(tensor(vec![fill; 100], 10, 10)).unwrap();
            for v in boundary_weights(&y).tensor().to_data().to_vec::<f64>().unwrap() {
                assert!((v - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_pixel_weight() {
        let mut values = vec![0.0; 64 * 64];
        values[30 * 64 + 33] = 1.0;
        let y = MaskBatch::new(tensor(values, 64, 64)).unwrap();
        let w = boundary_weights(&y).tensor().to_data().to_vec::<f64>().unwrap();
        let expected = 1.0 + 5.0 * (1.0 - 1.0 / 961.0);
        assert!((w[30 * 64 + 33] - expected).abs() < 1e-12);
        assert!((expected - 5.9948).abs() < 1e-4);
    }

    #[test]
    fn mask_batch_rejects_non_binary() {
        assert!(MaskBatch::new(tensor(vec![0.0, 0.5, 1.0, 1.0], 2, 2)).is_err());
    }

    #[test]
    fn saturated_logits_give_tiny_bce() {
        let yv: Vec<f64> = (0..64).map(|i| ((i * 7) % 3 == 0) as u8 as f64).collect();
        let pv: Vec<f64> = yv.iter().map(|&y| if y > 0.5 { 50.0 } else { -50.0 }).collect();
        let y = MaskBatch::new(tensor(yv, 8, 8)).unwrap();
        let w = boundary_weights(&y);
        assert!(scalar(weighted_bce(tensor(pv, 8, 8), &y, &w).unwrap()) < 1e-6);
    }

    #[test]
    fn zero_logits_give_ln2() {
        let yv: Vec<f64> = (0..64).map(|i| (i % 2) as f64).collect();
        let y = MaskBatch::new(tensor(yv, 8, 8)).unwrap();
        let w = PixelWeightMap(Tensor::ones([1, 1, 8, 8], &Default::default()));
        let loss = scalar(weighted_bce(tensor(vec![0.0; 64], 8, 8), &y, &w).unwrap());
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn bce_matches_pixel_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let pv: Vec<f64> = (0..64).map(|_| rng.random_range(-6.0..6.0)).collect();
            let yv: Vec<f64> = (0..64).map(|_| rng.random_bool(0.4) as u8 as f64).collect();
            let wv: Vec<f64> = (0..64).map(|_| rng.random_range(1.0..6.0)).collect();
            let y = MaskBatch::new(tensor(yv.clone(), 8, 8)).unwrap();
            let w = PixelWeightMap(tensor(wv.clone(), 8, 8));
            let got = scalar(weighted_bce(tensor(pv.clone(), 8, 8), &y, &w).unwrap());
            assert!((got - bce_oracle(&pv, &yv, &wv)).abs() < 1e-6);
        }
    }

    #[test]
    fn iou_closed_forms() {
        let y = MaskBatch::new(tensor(vec![1.0; 16], 4, 4)).unwrap();
        let w = PixelWeightMap(Tensor::ones([1, 1, 4, 4], &Default::default()));
        // sigmoid(-1e3) underflows to exactly 0
        let loss = scalar(weighted_iou(tensor(vec![-1e3; 16], 4, 4), &y, &w).unwrap());
        assert!((loss - (1.0 - 1.0 / 17.0)).abs() < 1e-12);
        assert!((loss - 0.9412).abs() < 1e-4);

        let y = MaskBatch::new(Tensor::ones([1, 1, 100, 100], &Default::default())).unwrap();
        let w = PixelWeightMap(Tensor::ones([1, 1, 100, 100], &Default::default()));
        let p = Tensor::<B, 4>::zeros([1, 1, 100, 100], &Default::default());
        let loss = scalar(weighted_iou(p, &y, &w).unwrap());
        assert!((loss - 0.5).abs() < 1e-3);
    }

    #[test]
    fn iou_saturated_is_near_zero() {
        let yv: Vec<f64> = (0..64).map(|i| (i % 5 == 0) as u8 as f64).collect();
        let pv: Vec<f64> = yv.iter().map(|&y| if y > 0.5 { 40.0 } else { -40.0 }).collect();
        let y = MaskBatch::new(tensor(yv, 8, 8)).unwrap();
        let w = boundary_weights(&y);
        assert!(scalar(weighted_iou(tensor(pv, 8, 8), &y, &w).unwrap()) < 1e-4);
    }

    #[test]
    fn level_weights_are_halving() {
        assert_eq!(SCALE_WEIGHTS, [1.0, 1.0 / 2.0, 1.0 / 4.0, 1.0 / 8.0, 1.0 / 16.0]);
        for (s, w) in SCALE_WEIGHTS.iter().enumerate() {
            assert_eq!(*w, 2f64.powi(-(s as i32)));
        }
        let only_third = [0.0, 0.0, 0.8, 0.0, 0.0];
        assert!((combine_levels(&only_third) - 0.25 * 0.8).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        use crate::TrainBackend64;
        type A = TrainBackend64;
        let device = Default::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pv: Vec<f64> = (0..64).map(|_| rng.random_range(-3.0..3.0)).collect();
        let yv: Vec<f64> = (0..64).map(|_| rng.random_bool(0.5) as u8 as f64).collect();
        let y = MaskBatch::<A>::new(Tensor::from_data(TensorData::new(yv, [1, 1, 8, 8]), &device)).unwrap();
        // the same logit map at every level, so the gradient collects all five terms
        let loss = |p: Tensor<A, 4>| {
            let pyramid = PredictionPyramid::new(vec![p; 5]).unwrap();
            total_loss(&pyramid, &y).unwrap().total
        };
        let at = |values: Vec<f64>| -> f64 {
            loss(Tensor::from_data(TensorData::new(values, [1, 1, 8, 8]), &device)).into_scalar()
        };
        let p = Tensor::<A, 4>::from_data(TensorData::new(pv.clone(), [1, 1, 8, 8]), &device).require_grad();
        let grads = loss(p.clone()).backward();
        let g = p.grad(&grads).unwrap().to_data().to_vec::<f64>().unwrap();
        let h = 1e-3;
        for i in 0..pv.len() {
            let mut up = pv.clone();
            up[i] += h;
            let mut down = pv.clone();
            down[i] -= h;
            let fd = (at(up) - at(down)) / (2.0 * h);
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-8);
            assert!(rel < 1e-3, "pixel {i}: fd {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn total_of_saturated_pyramid() {
        let device = Default::default();
        let y = Tensor::<B, 4>::random([2, 1, 32, 32], Distribution::Bernoulli(0.3), &device);
        let mask = MaskBatch::new(y).unwrap();
        let levels = [32, 16, 8, 4, 4]
            .iter()
            .map(|&s| (mask.resize([s, s]).tensor().clone() * 2.0 - 1.0) * 60.0)
            .collect();
        let pyramid = PredictionPyramid::new(levels).unwrap();
        let values = total_loss(&pyramid, &mask).unwrap().values();
        assert!(values.total < 1e-3, "{values:?}");
        assert!((values.total - combine_levels(&values.level_terms())).abs() < 1e-12);
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (
            proptest::collection::vec(-20.0f64..20.0, 64),
            proptest::collection::vec(any::<bool>(), 64),
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn losses_stay_in_range((pv, yv) in instance()) {
            let y = MaskBatch::new(tensor(yv.iter().map(|&b| b as u8 as f64).collect(), 8, 8)).unwrap();
            let w = boundary_weights(&y);
            for v in w.tensor().to_data().to_vec::<f64>().unwrap() {
                prop_assert!((1.0..=6.0).contains(&v));
            }
            let bce = scalar(weighted_bce(tensor(pv.clone(), 8, 8), &y, &w).unwrap());
            let iou = scalar(weighted_iou(tensor(pv, 8, 8), &y, &w).unwrap());
            prop_assert!(bce >= 0.0);
            prop_assert!((0.0..1.0).contains(&iou));
        }

        #[test]
        fn correcting_a_pixel_never_raises_bce(yv in proptest::collection::vec(any::<bool>(), 64), idx in 0usize..64) {
            let y = MaskBatch::new(tensor(yv.iter().map(|&b| b as u8 as f64).collect(), 8, 8)).unwrap();
            let w = boundary_weights(&y);
            let correct: Vec<f64> = yv.iter().map(|&b| if b { 30.0 } else { -30.0 }).collect();
            let mut wrong = correct.clone();
            wrong[idx] = -wrong[idx];
            let before = scalar(weighted_bce(tensor(wrong, 8, 8), &y, &w).unwrap());
            let after = scalar(weighted_bce(tensor(correct, 8, 8), &y, &w).unwrap());
            prop_assert!(after <= before);
        }
    }
}
