use num_traits::Float;

use super::{BinaryMask, ScoreMap};
use crate::error::Result;

/// Balance between the object and region terms.
pub const ALPHA: f64 = 0.5;

/// Structure measure, clamped to `[0, 1]`.
pub fn s_measure<T: Float>(s: &ScoreMap<T>, y: &BinaryMask) -> Result<T> {
    s.check(y)?;
    let v = s.values();
    let g = y.values();
    let n = T::from(v.len()).unwrap();
    let fg = y.count();
    if fg == 0 {
        return Ok(T::one() - mean(v.iter().copied(), n));
    }
    if fg == v.len() {
        return Ok(mean(v.iter().copied(), n));
    }
    let alpha = T::from(ALPHA).unwrap();
    let score = alpha * object(v, g) + (T::one() - alpha) * region(s, y);
    Ok(score.max(T::zero()).min(T::one()))
}

fn mean<T: Float>(values: impl Iterator<Item = T>, n: T) -> T {
    values.fold(T::zero(), |a, v| a + v) / n
}

/// `2x / (x² + 1 + σ)` over the pixels of one class, with sample std σ.
fn object_similarity<T: Float>(values: &[T]) -> T {
    let n = values.len();
    let nf = T::from(n).unwrap();
    let x = mean(values.iter().copied(), nf);
    let sigma = if n > 1 {
        let ss = values.iter().fold(T::zero(), |a, &v| a + (v - x) * (v - x));
        (ss / T::from(n - 1).unwrap()).sqrt()
    } else {
        T::zero()
    };
    (x + x) / (x * x + T::one() + sigma + T::epsilon())
}

fn object<T: Float>(v: &[T], g: &[bool]) -> T {
    let fg: Vec<T> = v.iter().zip(g).filter(|(_, &g)| g).map(|(&v, _)| v).collect();
    let bg: Vec<T> = v.iter().zip(g).filter(|(_, &g)| !g).map(|(&v, _)| T::one() - v).collect();
    let u = T::from(fg.len()).unwrap() / T::from(v.len()).unwrap();
    u * object_similarity(&fg) + (T::one() - u) * object_similarity(&bg)
}

/// Split point `(x, y)`: the rounded foreground centroid plus one, so the
/// quadrants are `[0, y) x [0, x)` and so on.
fn centroid(y: &BinaryMask) -> (usize, usize) {
    let w = y.width();
    let (mut rows, mut cols, mut count) = (0.0f64, 0.0f64, 0usize);
    for (i, _) in y.values().iter().enumerate().filter(|(_, &g)| g) {
        rows += (i / w) as f64;
        cols += (i % w) as f64;
        count += 1;
    }
    let c = count as f64;
    ((cols / c).round_ties_even() as usize + 1, (rows / c).round_ties_even() as usize + 1)
}

fn ssim<T: Float>(x: &[T], y: &[T]) -> T {
    let n = T::from(x.len()).unwrap();
    let mx = mean(x.iter().copied(), n);
    let my = mean(y.iter().copied(), n);
    let denom = n - T::one() + T::epsilon();
    let (mut vx, mut vy, mut cxy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y) {
        vx = vx + (a - mx) * (a - mx);
        vy = vy + (b - my) * (b - my);
        cxy = cxy + (a - mx) * (b - my);
    }
    let (vx, vy, cxy) = (vx / denom, vy / denom, cxy / denom);
    let four = T::from(4).unwrap();
    let num = four * mx * my * cxy;
    let den = (mx * mx + my * my) * (vx + vy);
    if num != T::zero() {
        num / (den + T::epsilon())
    } else if den == T::zero() {
        T::one()
    } else {
        T::zero()
    }
}

fn region<T: Float>(s: &ScoreMap<T>, y: &BinaryMask) -> T {
    let (h, w) = (s.height(), s.width());
    let (cx, cy) = centroid(y);
    let cx = cx.min(w);
    let cy = cy.min(h);
    let quadrants = [(0..cy, 0..cx), (0..cy, cx..w), (cy..h, 0..cx), (cy..h, cx..w)];
    let total = T::from(h * w).unwrap();
    let mut score = T::zero();
    for (rows, cols) in quadrants {
        let area = rows.len() * cols.len();
        if area == 0 {
            continue;
        }
        let mut pred = Vec::with_capacity(area);
        let mut gt = Vec::with_capacity(area);
        for i in rows {
            for j in cols.clone() {
                pred.push(s.values()[i * w + j]);
                gt.push(if y.values()[i * w + j] { T::one() } else { T::zero() });
            }
        }
        score = score + T::from(area).unwrap() / total * ssim(&pred, &gt);
    }
    score
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::testing::random_pairs;

    /// Second implementation on a 2D grid, following the textbook layout:
    /// foreground/background object scores, then four SSIM quadrants around
    /// the centroid.
    fn oracle(s: &ScoreMap<f64>, y: &BinaryMask) -> f64 {
        let (h, w) = (s.height(), s.width());
        let grid = |i: usize, j: usize| s.values()[i * w + j];
        let gt = |i: usize, j: usize| y.values()[i * w + j] as u8 as f64;
        let cells: Vec<(usize, usize)> = (0..h).flat_map(|i| (0..w).map(move |j| (i, j))).collect();
        let gm = cells.iter().map(|&(i, j)| gt(i, j)).sum::<f64>() / (h * w) as f64;
        let sm = cells.iter().map(|&(i, j)| grid(i, j)).sum::<f64>() / (h * w) as f64;
        if gm == 0.0 {
            return 1.0 - sm;
        }
        if gm == 1.0 {
            return sm;
        }
        let score_of = |vals: Vec<f64>| {
            let n = vals.len() as f64;
            let m = vals.iter().sum::<f64>() / n;
            let sd = if vals.len() > 1 {
                (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            2.0 * m / (m * m + 1.0 + sd + f64::EPSILON)
        };
        let o_fg = score_of(cells.iter().filter(|&&(i, j)| gt(i, j) == 1.0).map(|&(i, j)| grid(i, j)).collect());
        let o_bg = score_of(cells.iter().filter(|&&(i, j)| gt(i, j) == 0.0).map(|&(i, j)| 1.0 - grid(i, j)).collect());
        let object = gm * o_fg + (1.0 - gm) * o_bg;

        let fg: Vec<(usize, usize)> = cells.iter().copied().filter(|&(i, j)| gt(i, j) == 1.0).collect();
        let ci = fg.iter().map(|p| p.0 as f64).sum::<f64>() / fg.len() as f64;
        let cj = fg.iter().map(|p| p.1 as f64).sum::<f64>() / fg.len() as f64;
        let round_even = |v: f64| {
            let f = v.floor();
            if v - f == 0.5 {
                if f % 2.0 == 0.0 { f } else { f + 1.0 }
            } else {
                v.round()
            }
        };
        let yc = round_even(ci) as usize + 1;
        let xc = round_even(cj) as usize + 1;
        let mut region = 0.0;
        for (r0, r1, c0, c1) in [(0, yc, 0, xc), (0, yc, xc, w), (yc, h, 0, xc), (yc, h, xc, w)] {
            let (r1, c1) = (r1.min(h), c1.min(w));
            if r1 <= r0 || c1 <= c0 {
                continue;
            }
            let n = ((r1 - r0) * (c1 - c0)) as f64;
            let pts: Vec<(usize, usize)> = (r0..r1).flat_map(|i| (c0..c1).map(move |j| (i, j))).collect();
            let mx = pts.iter().map(|&(i, j)| grid(i, j)).sum::<f64>() / n;
            let my = pts.iter().map(|&(i, j)| gt(i, j)).sum::<f64>() / n;
            let d = n - 1.0 + f64::EPSILON;
            let vx = pts.iter().map(|&(i, j)| (grid(i, j) - mx).powi(2)).sum::<f64>() / d;
            let vy = pts.iter().map(|&(i, j)| (gt(i, j) - my).powi(2)).sum::<f64>() / d;
            let cxy = pts.iter().map(|&(i, j)| (grid(i, j) - mx) * (gt(i, j) - my)).sum::<f64>() / d;
            let a = 4.0 * mx * my * cxy;
            let b = (mx * mx + my * my) * (vx + vy);
            let q = if a != 0.0 { a / (b + f64::EPSILON) } else if b == 0.0 { 1.0 } else { 0.0 };
            region += n / (h * w) as f64 * q;
        }
        (0.5 * object + 0.5 * region).clamp(0.0, 1.0)
    }

    #[test]
    fn matches_second_implementation() {
        for (s, y) in random_pairs(9, 200, 8, 8).into_iter().chain(random_pairs(10, 100, 16, 16)) {
            assert!((s_measure(&s, &y).unwrap() - oracle(&s, &y)).abs() < 1e-6);
        }
    }

    #[test]
    fn self_similarity() {
        for (_, y) in random_pairs(11, 50, 16, 16) {
            let s = ScoreMap::new(16, 16, y.values().iter().map(|&g| g as u8 as f64).collect()).unwrap();
            assert!((s_measure(&s, &y).unwrap() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn degenerate_masks() {
        let empty = BinaryMask::new(3, 3, vec![false; 9]).unwrap();
        let zero = ScoreMap::new(3, 3, vec![0.0; 9]).unwrap();
        assert_eq!(s_measure(&zero, &empty).unwrap(), 1.0);
        let full = BinaryMask::new(3, 3, vec![true; 9]).unwrap();
        assert_eq!(s_measure(&zero, &full).unwrap(), 0.0);
    }

    #[test]
    fn centroid_rounds_half_to_even() {
        // foreground columns 0 and 5 average to 2.5, which rounds to 2
        let mut values = vec![false; 6];
        values[0] = true;
        values[5] = true;
        let y = BinaryMask::new(1, 6, values).unwrap();
        assert_eq!(centroid(&y), (3, 1));
    }
}
