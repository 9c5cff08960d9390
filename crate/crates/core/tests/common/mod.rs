#![allow(dead_code)]

use std::path::{Path, PathBuf};

use hcm::engine::TrainConfig;
use image::{GrayImage, Luma, Rgb, RgbImage};

/// An ellipse of one texture on a background of another; `k` varies the
/// placement so samples differ.
pub fn write_sample(root: &Path, split: &str, stem: &str, k: u32) {
    let images = root.join(split).join("images");
    let masks = root.join(split).join("masks");
    std::fs::create_dir_all(&images).unwrap();
    std::fs::create_dir_all(&masks).unwrap();
    let (w, h) = (120u32, 96u32);
    let (cx, cy) = (50.0 + 7.0 * (k % 4) as f32, 40.0 + 5.0 * (k % 3) as f32);
    let inside = |x: u32, y: u32| {
        let dx = x as f32 - cx;
        let dy = y as f32 - cy;
        dx * dx / 900.0 + dy * dy / 400.0 < 1.0
    };
    RgbImage::from_fn(w, h, |x, y| {
        if inside(x, y) {
            Rgb([150 + (x % 7) as u8 * 5, 120, 90])
        } else {
            Rgb([100, 130 + (y % 5) as u8 * 6, 80])
        }
    })
    .save(images.join(format!("{stem}.png")))
    .unwrap();
    GrayImage::from_fn(w, h, |x, y| Luma([if inside(x, y) { 255 } else { 0 }]))
        .save(masks.join(format!("{stem}.png")))
        .unwrap();
}

/// `<root>/<split>` with `n` samples named `s0`, `s1`, ...
pub fn dataset(root: &Path, split: &str, n: u32) -> PathBuf {
    for k in 0..n {
        write_sample(root, split, &format!("s{k}"), k);
    }
    root.to_path_buf()
}

/// A model small enough to train on one CPU core in seconds.
pub fn tiny_config(dir: &Path) -> TrainConfig {
    TrainConfig {
        batch: 2,
        epochs: 4,
        input_size: 32,
        channels: 16,
        backbone_layers: [1; 4],
        seed: 5,
        data_root: Some(dir.join("data")),
        checkpoint_dir: dir.join("ckpt"),
        checkpoint_every_epochs: 0,
        ..TrainConfig::default()
    }
}
