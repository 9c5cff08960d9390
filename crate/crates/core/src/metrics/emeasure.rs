use num_traits::Float;

use super::{BinaryMask, Confusion, ScoreMap};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EMode {
    /// Average over the 256 sweep thresholds.
    Mean,
    /// Best value over the sweep thresholds.
    Max,
}

/// Enhanced-alignment measure over the threshold sweep.
pub fn e_measure<T: Float>(s: &ScoreMap<T>, y: &BinaryMask, mode: EMode) -> Result<T> {
    s.check(y)?;
    let values: Vec<T> = Confusion::sweep(s, y).into_iter().map(alignment).collect();
    Ok(match mode {
        EMode::Mean => values.iter().fold(T::zero(), |a, &v| a + v) / T::from(values.len()).unwrap(),
        EMode::Max => values.into_iter().fold(T::zero(), T::max),
    })
}

/// Mean of `(ξ + 1)² / 4` for one binarization, from its four pixel classes.
fn alignment<T: Float>(c: Confusion) -> T {
    let n = c.total();
    let nf = T::from(n).unwrap();
    let positives = c.tp + c.fn_;
    if positives == 0 {
        return T::from(c.fn_ + c.tn).unwrap() / nf;
    }
    if positives == n {
        return T::from(c.tp + c.fp).unwrap() / nf;
    }
    let mean_y = T::from(positives).unwrap() / nf;
    let mean_b = T::from(c.tp + c.fp).unwrap() / nf;
    let enhanced = |y: T, b: T| {
        let (py, pb) = (y - mean_y, b - mean_b);
        let xi = (py * pb + py * pb) / (py * py + pb * pb + T::epsilon());
        (xi + T::one()) * (xi + T::one()) / T::from(4).unwrap()
    };
    let (one, zero) = (T::one(), T::zero());
    let sum = T::from(c.tp).unwrap() * enhanced(one, one)
        + T::from(c.fp).unwrap() * enhanced(zero, one)
        + T::from(c.fn_).unwrap() * enhanced(one, zero)
        + T::from(c.tn).unwrap() * enhanced(zero, zero);
    sum / nf
}
