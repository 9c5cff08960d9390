use num_traits::Float;

use super::{BinaryMask, Confusion, ScoreMap};
use crate::error::Result;

/// Binarization threshold for dice, IoU and BER.
pub const DICE_THRESHOLD: f64 = 0.5;

fn ratio<T: Float>(num: usize, den: usize) -> T {
    T::from(num).unwrap() / T::from(den).unwrap()
}

/// Mean absolute error.
pub fn mae<T: Float>(s: &ScoreMap<T>, y: &BinaryMask) -> Result<T> {
    s.check(y)?;
    let sum = s
        .values()
        .iter()
        .zip(y.values())
        .fold(T::zero(), |acc, (&v, &g)| acc + (v - if g { T::one() } else { T::zero() }).abs());
    Ok(sum / T::from(s.values().len().max(1)).unwrap())
}

/// `(dice, iou)` of the map binarized at 0.5; both are 1 when prediction and
/// mask are empty.
pub fn dice_iou<T: Float>(s: &ScoreMap<T>, y: &BinaryMask) -> Result<(T, T)> {
    s.check(y)?;
    let c = Confusion::of(s, y, T::from(DICE_THRESHOLD).unwrap());
    let union = c.tp + c.fp + c.fn_;
    if union == 0 {
        return Ok((T::one(), T::one()));
    }
    Ok((ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_), ratio(c.tp, union)))
}

/// Balanced error rate in percent. A class missing from the mask contributes
/// a perfect rate.
pub fn ber<T: Float>(s: &ScoreMap<T>, y: &BinaryMask) -> Result<T> {
    s.check(y)?;
    let c = Confusion::of(s, y, T::from(DICE_THRESHOLD).unwrap());
    let rate = |hit: usize, miss: usize| {
        if hit + miss == 0 {
            T::one()
        } else {
            ratio(hit, hit + miss)
        }
    };
    let half = T::from(0.5).unwrap();
    let hundred = T::from(100).unwrap();
    Ok(hundred * (T::one() - half * (rate(c.tp, c.fn_) + rate(c.tn, c.fp))))
}
