use std::collections::HashMap;
use std::path::{Path, PathBuf};

use burn::tensor::{backend::Backend, Tensor, TensorData};
use image::GenericImageView;
use serde::{Deserialize, Serialize};

use crate::data::{list_images, load_image, load_mask, make_batches, DatasetManifest, Order};
use crate::error::{HcmError, Result};
use crate::metrics::{aggregate, score_image, ImageScores, MetricsReport, ScoreMap};
use crate::model::HcmModel;
use crate::nn::{resample::resize_bilinear, sigmoid};

/// `sigmoid(p1)` of each image, bilinearly resized to its native size and
/// clamped to `[0, 1]`.
pub fn score_maps<B: Backend>(
    model: &HcmModel<B>,
    images: Tensor<B, 4>,
    sizes: &[(usize, usize)],
) -> Result<Vec<ScoreMap<f64>>> {
    let preds = model.forward_tensor(images)?;
    let p1 = preds.finest().clone();
    sizes
        .iter()
        .enumerate()
        .map(|(n, &(h, w))| {
            let logits = p1.clone().narrow(0, n, 1);
            let s = resize_bilinear(sigmoid(logits), [h, w]).clamp(0.0, 1.0);
            let values: Vec<f64> = s.into_data().iter::<f64>().collect();
            ScoreMap::new(h, w, values)
        })
        .collect()
}

/// Images of `paths` resized for the network, with their native sizes;
/// undecodable files are skipped with a warning.
fn load_inputs<B: Backend>(
    paths: &[(String, PathBuf)],
    size: usize,
    device: &B::Device,
) -> Option<(Tensor<B, 4>, Vec<(String, (usize, usize))>)> {
    let mut data = Vec::new();
    let mut kept = Vec::new();
    for (stem, path) in paths {
        match load_image(path, size) {
            Ok((pixels, native)) => {
                data.extend(pixels);
                kept.push((stem.clone(), native));
            }
            Err(e) => log::warn!("skipping {stem}: {e}"),
        }
    }
    if kept.is_empty() {
        return None;
    }
    let n = kept.len();
    Some((Tensor::from_data(TensorData::new(data, [n, 3, size, size]), device), kept))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: MetricsReport<f64>,
    pub per_image: Vec<(String, ImageScores<f64>)>,
}

/// Score the finest prediction of every record against its native-size mask.
pub fn evaluate<B: Backend>(
    model: &HcmModel<B>,
    manifest: &DatasetManifest,
    input_size: usize,
    batch: usize,
    device: &B::Device,
) -> Result<Evaluation> {
    let index: HashMap<&str, usize> = manifest
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.stem.as_str(), i))
        .collect();
    let mut per_image = Vec::with_capacity(manifest.len());
    for indices in make_batches(manifest.len(), batch, Order::Eval) {
        let paths: Vec<(String, PathBuf)> = indices
            .iter()
            .map(|&i| (manifest.records[i].stem.clone(), manifest.records[i].image.clone()))
            .collect();
        let Some((images, kept)) = load_inputs::<B>(&paths, input_size, device) else {
            continue;
        };
        let sizes: Vec<(usize, usize)> = kept.iter().map(|(_, s)| *s).collect();
        let maps = score_maps(model, images, &sizes)?;
        for ((stem, _), map) in kept.into_iter().zip(maps) {
            let record = &manifest.records[index[stem.as_str()]];
            let mask = match load_mask(&record.mask) {
                Ok(m) => m,
                Err(e) => {
                    log::warn!("skipping {stem}: {e}");
                    continue;
                }
            };
            if (mask.height(), mask.width()) != (map.height(), map.width()) {
                log::warn!("skipping {stem}: image and mask sizes differ");
                continue;
            }
            per_image.push((stem, score_image(&map, &mask)?));
        }
    }
    let scores: Vec<ImageScores<f64>> = per_image.iter().map(|(_, s)| *s).collect();
    Ok(Evaluation {
        report: aggregate(&scores)?,
        per_image,
    })
}

/// Write `round(255 · sigmoid(p1))` as an 8-bit PNG per input image, named
/// after the input stem.
pub fn predict<B: Backend>(
    model: &HcmModel<B>,
    images_dir: &Path,
    out_dir: &Path,
    input_size: usize,
    batch: usize,
    device: &B::Device,
) -> Result<Vec<PathBuf>> {
    let inputs: Vec<(String, PathBuf)> = list_images(images_dir)?.into_iter().collect();
    if inputs.is_empty() {
        return Err(HcmError::Data(format!("no images in {}", images_dir.display())));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(batch.max(1)) {
        let Some((images, kept)) = load_inputs::<B>(chunk, input_size, device) else {
            continue;
        };
        let sizes: Vec<(usize, usize)> = kept.iter().map(|(_, s)| *s).collect();
        for ((stem, (h, w)), map) in kept.into_iter().zip(score_maps(model, images, &sizes)?) {
            let gray: Vec<u8> = map.values().iter().map(|&v| (v * 255.0).round() as u8).collect();
            let path = out_dir.join(format!("{stem}.png"));
            image::GrayImage::from_raw(w as u32, h as u32, gray)
                .expect("buffer matches size")
                .save(&path)
                .map_err(|source| HcmError::Image {
                    path: path.clone(),
                    source,
                })?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Metrics of exported score maps against ground-truth masks, paired by
/// stem. Needs no model; the result depends only on the two directories.
pub fn score_dirs(pred_dir: &Path, gt_dir: &Path) -> Result<Evaluation> {
    let preds = list_images(pred_dir)?;
    let masks = list_images(gt_dir)?;
    let mut per_image = Vec::new();
    for (stem, gt_path) in &masks {
        let Some(pred_path) = preds.get(stem) else {
            log::warn!("no prediction for {stem}");
            continue;
        };
        let mask = load_mask(gt_path)?;
        let pred = image::open(pred_path).map_err(|source| HcmError::Image {
            path: pred_path.clone(),
            source,
        })?;
        let (w, h) = pred.dimensions();
        if (h as usize, w as usize) != (mask.height(), mask.width()) {
            return Err(HcmError::Data(format!(
                "{stem}: prediction is {w}x{h}, mask is {}x{}",
                mask.width(),
                mask.height()
            )));
        }
        let map = ScoreMap::from_gray(h as usize, w as usize, pred.to_luma8().as_raw())?;
        per_image.push((stem.clone(), score_image(&map, &mask)?));
    }
    if per_image.is_empty() {
        return Err(HcmError::Data(format!(
            "no prediction in {} matches a mask in {}",
            pred_dir.display(),
            gt_dir.display()
        )));
    }
    let scores: Vec<ImageScores<f64>> = per_image.iter().map(|(_, s)| *s).collect();
    Ok(Evaluation {
        report: aggregate(&scores)?,
        per_image,
    })
}
