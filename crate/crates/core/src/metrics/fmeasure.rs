use num_traits::Float;

use super::{BinaryMask, Confusion, ScoreMap};
use crate::error::Result;

/// β² of the adaptive and max F-measures.
pub const BETA2: f64 = 0.3;
/// β² of the weighted F-measure.
pub const BETA2_WEIGHTED: f64 = 1.0;

const GAUSS_SIZE: usize = 7;
const GAUSS_SIGMA: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FMode {
    /// Binarized at `min(2 * mean(s), 1)`.
    Adaptive,
    /// Best F over the 256 sweep thresholds.
    Max,
    /// Dependency- and location-weighted precision/recall.
    Weighted,
}

pub fn f_measure<T: Float>(s: &ScoreMap<T>, y: &BinaryMask, mode: FMode) -> Result<T> {
    s.check(y)?;
    Ok(match mode {
        FMode::Adaptive => {
            let n = T::from(s.values().len().max(1)).unwrap();
            let mean = s.values().iter().fold(T::zero(), |a, &v| a + v) / n;
            let t = (mean + mean).min(T::one());
            f_from_counts(Confusion::of(s, y, t), T::from(BETA2).unwrap())
        }
        FMode::Max => Confusion::sweep(s, y)
            .into_iter()
            .map(|c| f_from_counts(c, T::from(BETA2).unwrap()))
            .fold(T::zero(), T::max),
        FMode::Weighted => weighted(s, y),
    })
}

fn f_from_counts<T: Float>(c: Confusion, beta2: T) -> T {
    if c.tp + c.fn_ == 0 {
        // empty mask: perfect only when nothing is predicted
        return if c.tp + c.fp == 0 { T::one() } else { T::zero() };
    }
    if c.tp == 0 {
        return T::zero();
    }
    let tp = T::from(c.tp).unwrap();
    let precision = tp / T::from(c.tp + c.fp).unwrap();
    let recall = tp / T::from(c.tp + c.fn_).unwrap();
    (T::one() + beta2) * precision * recall / (beta2 * precision + recall)
}

/// Exact Euclidean distance from every pixel to the nearest foreground pixel
/// of `mask`, and that pixel's row-major index. Among equally near pixels the
/// one with the smallest column, then smallest row, is reported.
///
/// Returns `None` when the mask has no foreground.
pub fn distance_transform(mask: &BinaryMask) -> Option<(Vec<f64>, Vec<usize>)> {
    let (h, w) = (mask.height(), mask.width());
    let m = mask.values();
    if !m.iter().any(|&v| v) {
        return None;
    }
    // nearest foreground row within each column; ties go to the upper pixel
    let mut col_row: Vec<Option<usize>> = vec![None; h * w];
    for j in 0..w {
        let mut above = None;
        for i in 0..h {
            if m[i * w + j] {
                above = Some(i);
            }
            col_row[i * w + j] = above;
        }
        let mut below: Option<usize> = None;
        for i in (0..h).rev() {
            if m[i * w + j] {
                below = Some(i);
            }
            let up = col_row[i * w + j];
            col_row[i * w + j] = match (up, below) {
                (Some(u), Some(b)) => Some(if b - i < i - u { b } else { u }),
                (u, b) => u.or(b),
            };
        }
    }

    let mut dist = vec![0.0; h * w];
    let mut nearest = vec![0usize; h * w];
    let mut cols: Vec<usize> = Vec::with_capacity(w);
    let mut bounds: Vec<f64> = Vec::with_capacity(w + 1);
    for i in 0..h {
        let f = |j: usize| -> f64 {
            let r = col_row[i * w + j].expect("column has foreground");
            let d = r as f64 - i as f64;
            d * d
        };
        // lower envelope of the parabolas f(q) + (x - q)^2
        cols.clear();
        bounds.clear();
        for q in (0..w).filter(|&j| col_row[i * w + j].is_some()) {
            let mut s = f64::NEG_INFINITY;
            while let Some(&v) = cols.last() {
                s = ((f(q) + (q * q) as f64) - (f(v) + (v * v) as f64)) / (2.0 * (q as f64 - v as f64));
                if s <= *bounds.last().unwrap() {
                    cols.pop();
                    bounds.pop();
                    s = f64::NEG_INFINITY;
                } else {
                    break;
                }
            }
            cols.push(q);
            bounds.push(s);
        }
        let mut k = 0;
        for j in 0..w {
            while k + 1 < cols.len() && bounds[k + 1] < j as f64 {
                k += 1;
            }
            let v = cols[k];
            let dx = j as f64 - v as f64;
            dist[i * w + j] = (dx * dx + f(v)).sqrt();
            nearest[i * w + j] = col_row[i * w + v].unwrap() * w + v;
        }
    }
    Some((dist, nearest))
}

fn gaussian_kernel<T: Float>() -> Vec<T> {
    let r = (GAUSS_SIZE / 2) as f64;
    let raw: Vec<f64> = (0..GAUSS_SIZE)
        .map(|i| {
            let x = i as f64 - r;
            (-x * x / (2.0 * GAUSS_SIGMA * GAUSS_SIGMA)).exp()
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.iter().map(|&v| T::from(v / sum).unwrap()).collect()
}

/// Separable 7x7 Gaussian with zero padding, same-size output.
fn gaussian_filter<T: Float>(x: &[T], h: usize, w: usize) -> Vec<T> {
    let k = gaussian_kernel::<T>();
    let r = GAUSS_SIZE / 2;
    let pass = |src: &[T], along_rows: bool| -> Vec<T> {
        let mut out = vec![T::zero(); h * w];
        for i in 0..h {
            for j in 0..w {
                let mut acc = T::zero();
                for (t, &kt) in k.iter().enumerate() {
                    let (ii, jj) = if along_rows {
                        (i as isize, j as isize + t as isize - r as isize)
                    } else {
                        (i as isize + t as isize - r as isize, j as isize)
                    };
                    if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < w {
                        acc = acc + kt * src[ii as usize * w + jj as usize];
                    }
                }
                out[i * w + j] = acc;
            }
        }
        out
    };
    pass(&pass(x, true), false)
}

fn weighted<T: Float>(s: &ScoreMap<T>, y: &BinaryMask) -> T {
    let nothing_predicted = s.values().iter().all(|&v| v <= T::zero());
    let Some((dist, nearest)) = distance_transform(y) else {
        return if nothing_predicted { T::one() } else { T::zero() };
    };
    if nothing_predicted {
        // zero-padded smoothing would otherwise credit border pixels
        return T::zero();
    }
    let (h, w) = (y.height(), y.width());
    let g = y.values();
    let err: Vec<T> = s
        .values()
        .iter()
        .zip(g)
        .map(|(&v, &gt)| (v - if gt { T::one() } else { T::zero() }).abs())
        .collect();
    // background pixels borrow the error of their nearest foreground pixel
    let borrowed: Vec<T> = (0..h * w).map(|i| if g[i] { err[i] } else { err[nearest[i]] }).collect();
    let smoothed = gaussian_filter(&borrowed, h, w);
    let decay = T::from(0.5f64.ln() / 5.0).unwrap();
    let two = T::from(2.0).unwrap();
    let mut fg_err = T::zero();
    let mut bg_err = T::zero();
    let mut fg_count = 0usize;
    for i in 0..h * w {
        if g[i] {
            fg_err = fg_err + err[i].min(smoothed[i]);
            fg_count += 1;
        } else {
            let importance = two - (decay * T::from(dist[i]).unwrap()).exp();
            bg_err = bg_err + err[i] * importance;
        }
    }
    let eps = T::epsilon();
    let tp = T::from(fg_count).unwrap() - fg_err;
    let recall = T::one() - fg_err / T::from(fg_count).unwrap();
    let precision = tp / (eps + tp + bg_err);
    let beta2 = T::from(BETA2_WEIGHTED).unwrap();
    (T::one() + beta2) * recall * precision / (eps + recall + beta2 * precision)
}
