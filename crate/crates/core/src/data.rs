//! Dataset layout scanning, image/mask preprocessing and batching.
//!
//! On disk a split lives at `<root>/<split>/{images,masks}/<stem>.<ext>`;
//! images and masks are paired by file stem.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use burn::tensor::{backend::Backend, Tensor, TensorData};
use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::ImageBatch;
use crate::error::{HcmError, Result};
use crate::losses::MaskBatch;
use crate::metrics::BinaryMask;
use crate::nn::resample::{bilinear_weights, nearest_index};

/// Per-channel normalization of the ImageNet-pretrained backbone.
pub const IMAGE_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGE_STD: [f32; 3] = [0.229, 0.224, 0.225];
/// Default square input side.
pub const INPUT_SIZE: usize = 352;

const EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    pub stem: String,
    pub image: PathBuf,
    pub mask: PathBuf,
    pub split: String,
    pub dataset: String,
}

#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub records: Vec<SampleRecord>,
    /// Files without a partner, and duplicate stems.
    pub warnings: Vec<String>,
    /// Image resolution `(width, height)` counts.
    pub resolutions: BTreeMap<(u32, u32), usize>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Image files in `dir`, keyed by stem in lexicographic order.
pub fn list_images(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out: BTreeMap<String, PathBuf> = BTreeMap::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| HcmError::Data(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    entries.sort();
    for path in entries {
        let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
        if let Some(first) = out.get(&stem) {
            log::warn!("duplicate stem {stem}: keeping {}, ignoring {}", first.display(), path.display());
            continue;
        }
        out.insert(stem, path);
    }
    Ok(out)
}

/// Pair images and masks of one split by stem.
pub fn scan(root: &Path, split: &str) -> Result<DatasetManifest> {
    let base = root.join(split);
    let images = list_images(&base.join("images"))?;
    let masks = list_images(&base.join("masks"))?;
    let dataset = root
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();

    let image_stems: BTreeSet<&String> = images.keys().collect();
    let mask_stems: BTreeSet<&String> = masks.keys().collect();
    let mut warnings = Vec::new();
    for stem in image_stems.difference(&mask_stems) {
        warnings.push(format!("image {stem} has no mask"));
    }
    for stem in mask_stems.difference(&image_stems) {
        warnings.push(format!("mask {stem} has no image"));
    }
    for w in &warnings {
        log::warn!("{}: {w}", base.display());
    }

    let mut records = Vec::new();
    let mut resolutions = BTreeMap::new();
    for stem in image_stems.intersection(&mask_stems) {
        let image = images[*stem].clone();
        if let Ok(dims) = image::image_dimensions(&image) {
            *resolutions.entry(dims).or_insert(0) += 1;
        }
        records.push(SampleRecord {
            stem: (*stem).clone(),
            image,
            mask: masks[*stem].clone(),
            split: split.to_string(),
            dataset: dataset.clone(),
        });
    }
    if records.is_empty() {
        return Err(HcmError::Data(format!("no image/mask pairs under {}", base.display())));
    }
    Ok(DatasetManifest {
        records,
        warnings,
        resolutions,
    })
}

/// Half-pixel bilinear resize of one `h x w` plane.
fn resize_plane(src: &[f32], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    let rows = bilinear_weights(h, oh);
    let cols = bilinear_weights(w, ow);
    let taps = |m: &[f64], n_in: usize, o: usize| -> Vec<(usize, f32)> {
        (0..n_in)
            .filter(|&i| m[o * n_in + i] != 0.0)
            .map(|i| (i, m[o * n_in + i] as f32))
            .collect()
    };
    let col_taps: Vec<_> = (0..ow).map(|o| taps(&cols, w, o)).collect();
    let mut tmp = vec![0.0f32; h * ow];
    for i in 0..h {
        for (o, t) in col_taps.iter().enumerate() {
            tmp[i * ow + o] = t.iter().map(|&(j, c)| c * src[i * w + j]).sum();
        }
    }
    let mut out = vec![0.0f32; oh * ow];
    for o in 0..oh {
        for (i, r) in taps(&rows, h, o) {
            for j in 0..ow {
                out[o * ow + j] += r * tmp[i * ow + j];
            }
        }
    }
    out
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|source| HcmError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// `[3, size, size]` normalized image and its native `(height, width)`.
pub fn load_image(path: &Path, size: usize) -> Result<(Vec<f32>, (usize, usize))> {
    let rgb = open(path)?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let raw = rgb.into_raw();
    let mut out = Vec::with_capacity(3 * size * size);
    for c in 0..3 {
        let plane: Vec<f32> = raw.iter().skip(c).step_by(3).map(|&v| v as f32 / 255.0).collect();
        out.extend(
            resize_plane(&plane, h, w, size, size)
                .into_iter()
                .map(|v| (v - IMAGE_MEAN[c]) / IMAGE_STD[c]),
        );
    }
    Ok((out, (h, w)))
}

/// Ground truth at native resolution, foreground above 127.5.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let gray = open(path)?.to_luma8();
    BinaryMask::from_gray(gray.height() as usize, gray.width() as usize, gray.as_raw())
}

/// Nearest-resized `size x size` mask with values in {0, 1}.
fn resize_mask(mask: &BinaryMask, size: usize) -> Vec<f32> {
    let (h, w) = (mask.height(), mask.width());
    let mut out = Vec::with_capacity(size * size);
    for o in 0..size {
        let i = nearest_index(o, h, size);
        for p in 0..size {
            let j = nearest_index(p, w, size);
            out.push(mask.values()[i * w + j] as u8 as f32);
        }
    }
    out
}

/// One preprocessed pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub stem: String,
    /// `[3, size, size]`, normalized.
    pub image: Vec<f32>,
    /// `[size, size]`, binary.
    pub mask: Vec<f32>,
    pub size: usize,
}

impl Sample {
    pub fn hflip(mut self) -> Self {
        let s = self.size;
        for row in self.image.chunks_mut(s).chain(self.mask.chunks_mut(s)) {
            row.reverse();
        }
        self
    }
}

pub fn preprocess(record: &SampleRecord, size: usize) -> Result<Sample> {
    let (image, _) = load_image(&record.image, size)?;
    let mask = resize_mask(&load_mask(&record.mask)?, size);
    Ok(Sample {
        stem: record.stem.clone(),
        image,
        mask,
        size,
    })
}

/// How a split is walked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    /// Reshuffled every epoch from `seed`; a trailing partial batch is dropped.
    Train { seed: u64, epoch: u64 },
    /// Manifest order; the trailing partial batch is kept.
    Eval,
}

/// Record indices of each batch.
pub fn make_batches(len: usize, batch: usize, order: Order) -> Vec<Vec<usize>> {
    assert!(batch >= 1, "batch size must be positive");
    let mut idx: Vec<usize> = (0..len).collect();
    match order {
        Order::Train { seed, epoch } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(epoch);
            idx.shuffle(&mut rng);
            idx.chunks_exact(batch).map(<[usize]>::to_vec).collect()
        }
        Order::Eval => idx.chunks(batch).map(<[usize]>::to_vec).collect(),
    }
}

/// Model-ready tensors of one batch.
#[derive(Debug, Clone)]
pub struct Batch<B: Backend> {
    pub images: ImageBatch<B>,
    pub masks: MaskBatch<B>,
    pub stems: Vec<String>,
}

pub fn collate<B: Backend>(samples: &[Sample], device: &B::Device) -> Result<Batch<B>> {
    let Some(first) = samples.first() else {
        return Err(HcmError::Data("empty batch".into()));
    };
    let s = first.size;
    let n = samples.len();
    let mut image = Vec::with_capacity(n * 3 * s * s);
    let mut mask = Vec::with_capacity(n * s * s);
    for sample in samples {
        if sample.size != s {
            return Err(HcmError::shape("batch sample size", s, sample.size));
        }
        image.extend_from_slice(&sample.image);
        mask.extend_from_slice(&sample.mask);
    }
    Ok(Batch {
        images: ImageBatch::new(Tensor::from_data(TensorData::new(image, [n, 3, s, s]), device))?,
        masks: MaskBatch::new(Tensor::from_data(TensorData::new(mask, [n, 1, s, s]), device))?,
        stems: samples.iter().map(|x| x.stem.clone()).collect(),
    })
}

/// Decode the records of one batch, skipping (with a warning) any that fail.
/// Training batches are flipped horizontally at random when `flip` is given.
pub fn load_batch<B: Backend>(
    manifest: &DatasetManifest,
    indices: &[usize],
    size: usize,
    flip: Option<&mut ChaCha8Rng>,
    device: &B::Device,
) -> Result<Option<Batch<B>>> {
    let mut samples = Vec::with_capacity(indices.len());
    for &i in indices {
        match preprocess(&manifest.records[i], size) {
            Ok(s) => samples.push(s),
            Err(e) => log::warn!("skipping {}: {e}", manifest.records[i].stem),
        }
    }
    if let Some(rng) = flip {
        samples = samples
            .into_iter()
            .map(|s| if rng.random_bool(0.5) { s.hflip() } else { s })
            .collect();
    }
    if samples.is_empty() {
        return Ok(None);
    }
    collate(&samples, device).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::CpuBackend;
    use image::{GrayImage, Luma, Rgb, RgbImage};

    fn write_pair(root: &Path, stem: &str, w: u32, h: u32) {
        let img = RgbImage::from_fn(w, h, |x, y| Rgb([(x % 256) as u8, (y % 256) as u8, 128]));
        img.save(root.join("train/images").join(format!("{stem}.png"))).unwrap();
        let mask = GrayImage::from_fn(w, h, |x, _| Luma([if x < w / 2 { 255 } else { 0 }]));
        mask.save(root.join("train/masks").join(format!("{stem}.png"))).unwrap();
    }

    fn layout() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("train/images")).unwrap();
        fs::create_dir_all(dir.path().join("train/masks")).unwrap();
        dir
    }

    #[test]
    fn scan_pairs_and_warns() {
        let dir = layout();
        for stem in ["b", "a", "c"] {
            write_pair(dir.path(), stem, 20, 10);
        }
        let m = scan(dir.path(), "train").unwrap();
        assert_eq!(m.len(), 3);
        assert!(m.warnings.is_empty());
        assert_eq!(m.records.iter().map(|r| r.stem.as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);
        assert_eq!(m.resolutions[&(20, 10)], 3);

        fs::remove_file(dir.path().join("train/masks/b.png")).unwrap();
        let m = scan(dir.path(), "train").unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.warnings.len(), 1);
    }

    #[test]
    fn scan_rejects_empty_mask_dir() {
        let dir = layout();
        write_pair(dir.path(), "a", 8, 8);
        fs::remove_file(dir.path().join("train/masks/a.png")).unwrap();
        assert!(matches!(scan(dir.path(), "train"), Err(HcmError::Data(_))));
    }

    #[test]
    fn preprocess_resizes_and_normalizes() {
        let dir = layout();
        write_pair(dir.path(), "a", 500, 375);
        let m = scan(dir.path(), "train").unwrap();
        let s = preprocess(&m.records[0], INPUT_SIZE).unwrap();
        assert_eq!(s.image.len(), 3 * 352 * 352);
        assert_eq!(s.mask.len(), 352 * 352);
        // constant blue channel of 128 stays constant through the resize
        let blue = (128.0 / 255.0 - IMAGE_MEAN[2]) / IMAGE_STD[2];
        assert!(s.image[2 * 352 * 352..].iter().all(|v| (v - blue).abs() < 1e-5));
        assert!(s.mask.iter().all(|&v| v == 0.0 || v == 1.0));
        assert_eq!(preprocess(&m.records[0], INPUT_SIZE).unwrap(), s);
    }

    #[test]
    fn mask_threshold() {
        let dir = layout();
        let path = dir.path().join("m.png");
        GrayImage::from_raw(4, 1, vec![0, 100, 127, 128]).unwrap().save(&path).unwrap();
        GrayImage::from_raw(2, 1, vec![0, 255]).unwrap().save(dir.path().join("n.png")).unwrap();
        assert_eq!(load_mask(&path).unwrap().values(), [false, false, false, true]);
        assert_eq!(load_mask(&dir.path().join("n.png")).unwrap().values(), [false, true]);
    }

    #[test]
    fn resize_plane_matches_tensor_resize() {
        use crate::nn::resample::resize_bilinear;
        let (h, w) = (7, 5);
        let src: Vec<f32> = (0..h * w).map(|i| (i * 37 % 11) as f32).collect();
        let t = Tensor::<CpuBackend, 4>::from_data(TensorData::new(src.clone(), [1, 1, h, w]), &Default::default());
        let want = resize_bilinear(t, [12, 3]).into_data().to_vec::<f32>().unwrap();
        for (a, b) in resize_plane(&src, h, w, 12, 3).iter().zip(&want) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn batching() {
        let train = |seed| make_batches(70, 32, Order::Train { seed, epoch: 0 });
        assert_eq!(train(1).len(), 2);
        assert_eq!(make_batches(70, 32, Order::Eval).len(), 3);
        assert_eq!(make_batches(70, 32, Order::Eval)[2].len(), 6);
        assert_eq!(train(1), train(1));
        assert_ne!(train(1), train(2));
        assert_ne!(train(1), make_batches(70, 32, Order::Train { seed: 1, epoch: 1 }));
    }

    #[test]
    fn undecodable_files_are_skipped() {
        let dir = layout();
        write_pair(dir.path(), "a", 16, 16);
        write_pair(dir.path(), "b", 16, 16);
        fs::write(dir.path().join("train/images/b.png"), b"not an image").unwrap();
        let m = scan(dir.path(), "train").unwrap();
        let batch = load_batch::<CpuBackend>(&m, &[0, 1], 32, None, &Default::default())
            .unwrap()
            .unwrap();
        assert_eq!(batch.stems, ["a"]);
        assert_eq!(batch.images.dims(), [1, 3, 32, 32]);
    }

    #[test]
    fn flip_is_an_involution() {
        let s = Sample {
            stem: "x".into(),
            image: (0..12).map(|v| v as f32).collect(),
            mask: vec![1.0, 0.0, 0.0, 0.0],
            size: 2,
        };
        let f = s.clone().hflip();
        assert_eq!(f.mask, [0.0, 1.0, 0.0, 0.0]);
        assert_eq!(f.hflip(), s);
    }
}
