use std::fmt;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::{ber, dice_iou, e_measure, f_measure, mae, s_measure, BinaryMask, EMode, FMode, ScoreMap};
use crate::error::{HcmError, Result};

/// All metrics of one image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageScores<T> {
    pub mae: T,
    pub f_adp: T,
    pub f_w: T,
    pub f_max: T,
    pub e_mean: T,
    pub e_max: T,
    pub s_alpha: T,
    pub dice: T,
    pub iou: T,
    pub ber: T,
}

pub fn score_image<T: Float>(s: &ScoreMap<T>, y: &BinaryMask) -> Result<ImageScores<T>> {
    let (dice, iou) = dice_iou(s, y)?;
    Ok(ImageScores {
        mae: mae(s, y)?,
        f_adp: f_measure(s, y, FMode::Adaptive)?,
        f_w: f_measure(s, y, FMode::Weighted)?,
        f_max: f_measure(s, y, FMode::Max)?,
        e_mean: e_measure(s, y, EMode::Mean)?,
        e_max: e_measure(s, y, EMode::Max)?,
        s_alpha: s_measure(s, y)?,
        dice,
        iou,
        ber: ber(s, y)?,
    })
}

/// Dataset means of every metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport<T> {
    pub mae: T,
    pub f_adp: T,
    pub f_w: T,
    pub f_max: T,
    pub e_mean: T,
    pub e_max: T,
    pub s_alpha: T,
    pub mdice: T,
    pub miou: T,
    pub ber: T,
    pub n_images: usize,
}

/// Sorted before summing, so the result does not depend on image order.
fn order_free_mean<T: Float>(mut values: Vec<T>) -> T {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    let n = T::from(values.len()).unwrap();
    values.into_iter().fold(T::zero(), |a, v| a + v) / n
}

pub fn aggregate<T: Float>(scores: &[ImageScores<T>]) -> Result<MetricsReport<T>> {
    if scores.is_empty() {
        return Err(HcmError::Data("no images to aggregate".into()));
    }
    let m = |f: fn(&ImageScores<T>) -> T| order_free_mean(scores.iter().map(f).collect());
    Ok(MetricsReport {
        mae: m(|s| s.mae),
        f_adp: m(|s| s.f_adp),
        f_w: m(|s| s.f_w),
        f_max: m(|s| s.f_max),
        e_mean: m(|s| s.e_mean),
        e_max: m(|s| s.e_max),
        s_alpha: m(|s| s.s_alpha),
        mdice: m(|s| s.dice),
        miou: m(|s| s.iou),
        ber: m(|s| s.ber),
        n_images: scores.len(),
    })
}

impl<T: Float> MetricsReport<T> {
    fn columns(&self) -> [(&'static str, T); 10] {
        [
            ("M", self.mae),
            ("F_β", self.f_adp),
            ("F_β^w", self.f_w),
            ("F_β^max", self.f_max),
            ("E_φ", self.e_mean),
            ("E_φ^max", self.e_max),
            ("S_α", self.s_alpha),
            ("mDice", self.mdice),
            ("mIoU", self.miou),
            ("BER", self.ber),
        ]
    }
}

/// Aligned two-line table, one column per metric.
impl<T: Float + fmt::Display> fmt::Display for MetricsReport<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cols = self.columns();
        let header: Vec<String> = cols.iter().map(|(name, _)| format!("{name:>9}")).collect();
        let row: Vec<String> = cols.iter().map(|(_, v)| format!("{:>9.4}", v)).collect();
        writeln!(f, "{}{:>8}", header.join(" "), "images")?;
        write!(f, "{}{:>8}", row.join(" "), self.n_images)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::testing::random_pairs;

    fn scores() -> Vec<ImageScores<f64>> {
        random_pairs(12, 12, 10, 10)
            .iter()
            .map(|(s, y)| score_image(s, y).unwrap())
            .collect()
    }

    #[test]
    fn single_image_report_is_the_image() {
        let one = scores()[3];
        let r = aggregate(&[one]).unwrap();
        assert_eq!((r.mae, r.mdice, r.ber, r.s_alpha, r.n_images), (one.mae, one.dice, one.ber, one.s_alpha, 1));
    }

    #[test]
    fn mean_of_two() {
        let mut a = scores()[0];
        let mut b = a;
        a.mae = 0.1;
        b.mae = 0.3;
        assert!((aggregate(&[a, b]).unwrap().mae - 0.2).abs() < 1e-15);
    }

    #[test]
    fn order_independent() {
        let s = scores();
        let forward = aggregate(&s).unwrap();
        let mut reversed = s.clone();
        reversed.reverse();
        reversed.rotate_left(5);
        assert_eq!(aggregate(&reversed).unwrap(), forward);
    }

    #[test]
    fn all_in_range() {
        for s in scores() {
            for v in [s.mae, s.f_adp, s.f_w, s.f_max, s.e_mean, s.e_max, s.s_alpha, s.dice, s.iou] {
                assert!((0.0..=1.0).contains(&v), "{s:?}");
            }
            assert!((0.0..=100.0).contains(&s.ber));
        }
    }

    #[test]
    fn pixelwise_metrics_survive_a_joint_flip() {
        for (s, y) in random_pairs(13, 50, 8, 6) {
            let (h, w) = (s.height(), s.width());
            let flip = |i: usize| (i / w) * w + (w - 1 - i % w);
            let fs = ScoreMap::new(h, w, (0..h * w).map(|i| s.values()[flip(i)]).collect()).unwrap();
            let fy = BinaryMask::new(h, w, (0..h * w).map(|i| y.values()[flip(i)]).collect()).unwrap();
            let (a, b) = (score_image(&s, &y).unwrap(), score_image(&fs, &fy).unwrap());
            assert!((a.mae - b.mae).abs() < 1e-12);
            assert_eq!((a.dice, a.iou, a.ber), (b.dice, b.iou, b.ber));
            for (p, q) in [(a.f_adp, b.f_adp), (a.f_max, b.f_max), (a.e_mean, b.e_mean), (a.e_max, b.e_max)] {
                assert!((p - q).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn table_and_json() {
        let r = aggregate(&scores()).unwrap();
        let table = r.to_string();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].contains("mDice") && lines[0].contains("BER"));
        let json = serde_json::to_string(&r).unwrap();
        let back: MetricsReport<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }
}
