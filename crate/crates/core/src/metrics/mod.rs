//! Evaluation metrics for binary segmentation, generic over the float type.
//!
//! Scores are `[0, 1]` maps at ground-truth resolution. Every threshold-based
//! metric binarizes with the same rule: a pixel is foreground at threshold `t`
//! when its score is positive and at least `t`, so an all-zero map predicts
//! nothing at any threshold.

mod emeasure;
mod fmeasure;
mod pixel;
mod report;
mod smeasure;

use num_traits::Float;

use crate::error::{HcmError, Result};

pub use emeasure::{e_measure, EMode};
pub use fmeasure::{distance_transform, f_measure, FMode, BETA2, BETA2_WEIGHTED};
pub use pixel::{ber, dice_iou, mae, DICE_THRESHOLD};
pub use report::{aggregate, score_image, ImageScores, MetricsReport};
pub use smeasure::{s_measure, ALPHA};

/// Number of sweep thresholds, `k / 255` for `k = 0..=255`.
pub const THRESHOLDS: usize = 256;

/// Prediction scores in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap<T> {
    height: usize,
    width: usize,
    values: Vec<T>,
}

impl<T: Float> ScoreMap<T> {
    pub fn new(height: usize, width: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != height * width {
            return Err(HcmError::shape("score map", height * width, values.len()));
        }
        if values.iter().any(|v| !(*v >= T::zero() && *v <= T::one())) {
            return Err(HcmError::Data("score map values must lie in [0, 1]".into()));
        }
        Ok(Self { height, width, values })
    }

    /// 8-bit gray levels scaled by 1/255.
    pub fn from_gray(height: usize, width: usize, gray: &[u8]) -> Result<Self> {
        let scale = T::from(255.0).unwrap();
        Self::new(height, width, gray.iter().map(|&g| T::from(g).unwrap() / scale).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub(crate) fn check(&self, y: &BinaryMask) -> Result<()> {
        if (self.height, self.width) != (y.height, y.width) {
            return Err(HcmError::shape("score map vs mask", (y.height, y.width), (self.height, self.width)));
        }
        Ok(())
    }
}

/// Ground-truth mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    values: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, values: Vec<bool>) -> Result<Self> {
        if values.len() != height * width {
            return Err(HcmError::shape("binary mask", height * width, values.len()));
        }
        Ok(Self { height, width, values })
    }

    /// Gray levels above 127.5 are foreground.
    pub fn from_gray(height: usize, width: usize, gray: &[u8]) -> Result<Self> {
        Self::new(height, width, gray.iter().map(|&g| g > 127).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }
}

/// Threshold `k / 255`.
pub fn threshold<T: Float>(k: usize) -> T {
    T::from(k).unwrap() / T::from(255).unwrap()
}

#[inline]
pub(crate) fn foreground<T: Float>(s: T, t: T) -> bool {
    s > T::zero() && s >= t
}

/// Largest `k` whose threshold the score passes, or `None` for a zero score.
fn level<T: Float>(s: T) -> Option<usize> {
    if s <= T::zero() {
        return None;
    }
    let mut k = (s * T::from(255).unwrap()).floor().to_usize().unwrap_or(0).min(255);
    while k < 255 && s >= threshold(k + 1) {
        k += 1;
    }
    while k > 0 && s < threshold(k) {
        k -= 1;
    }
    Some(k)
}

/// Confusion counts of one binarization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub(crate) struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn of<T: Float>(s: &ScoreMap<T>, y: &BinaryMask, t: T) -> Self {
        let mut c = Confusion::default();
        for (&v, &g) in s.values.iter().zip(&y.values) {
            match (g, foreground(v, t)) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    /// Counts at every sweep threshold from one pass over the pixels.
    pub fn sweep<T: Float>(s: &ScoreMap<T>, y: &BinaryMask) -> Vec<Self> {
        let mut hist = [[0usize; THRESHOLDS]; 2];
        let mut totals = [0usize; 2];
        for (&v, &g) in s.values.iter().zip(&y.values) {
            totals[g as usize] += 1;
            if let Some(k) = level(v) {
                hist[g as usize][k] += 1;
            }
        }
        let mut above = [0usize; 2];
        let mut out = vec![Confusion::default(); THRESHOLDS];
        for k in (0..THRESHOLDS).rev() {
            above[0] += hist[0][k];
            above[1] += hist[1][k];
            out[k] = Confusion {
                tp: above[1],
                fp: above[0],
                fn_: totals[1] - above[1],
                tn: totals[0] - above[0],
            };
        }
        out
    }
}
