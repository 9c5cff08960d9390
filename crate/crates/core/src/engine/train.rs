use std::path::{Path, PathBuf};

use burn::{
    module::{AutodiffModule, Module},
    optim::{adaptor::OptimizerAdaptor, Adam, AdamConfig, GradientsParams, Optimizer},
    record::{BinFileRecorder, DoublePrecisionSettings, Recorder},
    tensor::backend::AutodiffBackend,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{TrainConfig, SCHEMA_VERSION};
use crate::data::{load_batch, make_batches, Batch, DatasetManifest, Order};
use crate::error::{HcmError, Result};
use crate::losses::{total_loss, LossValues};
use crate::model::HcmModel;

type Optim<B> = OptimizerAdaptor<Adam, HcmModel<B>, B>;
type OptimRecord<B> = <Optim<B> as Optimizer<HcmModel<B>, B>>::Record;
type ModelRecord<B> = <HcmModel<B> as Module<B>>::Record;
type CheckpointRecord<B> = (ModelRecord<B>, OptimRecord<B>, String);

/// Checkpoint files are bincode with every float widened to f64, so f32
/// weights survive the round trip bit for bit.
type CheckpointRecorder = BinFileRecorder<DoublePrecisionSettings>;

/// Where the next optimizer step falls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Progress {
    pub epoch: usize,
    /// Index of the next batch within the epoch.
    pub batch: usize,
    /// Optimizer steps taken so far.
    pub step: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub batch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: LossValues,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub steps: usize,
    pub mean_loss: f64,
}

/// Everything except the tensors, stored as JSON inside the checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointMeta {
    schema_version: u32,
    config: TrainConfig,
    progress: Progress,
    history: Vec<EpochSummary>,
}

fn checkpoint_error(path: &Path, message: impl ToString) -> HcmError {
    HcmError::Checkpoint {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

/// Model, Adam state and run bookkeeping.
pub struct Trainer<B: AutodiffBackend> {
    pub model: HcmModel<B>,
    optim: Optim<B>,
    pub config: TrainConfig,
    pub progress: Progress,
    pub history: Vec<EpochSummary>,
    device: B::Device,
}

fn adam<B: AutodiffBackend>(config: &TrainConfig) -> Optim<B> {
    AdamConfig::new()
        .with_beta_1(config.betas.0 as f32)
        .with_beta_2(config.betas.1 as f32)
        .with_epsilon(config.adam_eps as f32)
        .init()
}

impl<B: AutodiffBackend> Trainer<B> {
    pub fn new(config: TrainConfig, device: &B::Device) -> Result<Self> {
        config.validate()?;
        let mut model = config.model().init::<B>(config.seed, device);
        if let Some(path) = &config.backbone_weights {
            model.encoder.backbone = model.encoder.backbone.load_weights(path, device)?;
        }
        Ok(Self {
            model,
            optim: adam(&config),
            config,
            progress: Progress::default(),
            history: Vec::new(),
            device: device.clone(),
        })
    }

    pub fn lr(&self) -> f64 {
        self.config.lr_at(self.progress.epoch)
    }

    /// One forward/backward/update on `batch`. The loss is checked before
    /// the update, so a non-finite loss leaves the weights untouched.
    pub fn step(&mut self, batch: &Batch<B>) -> Result<LossValues> {
        let preds = self.model.forward(&batch.images)?;
        let loss = total_loss(&preds, &batch.masks)?;
        let values = loss.values();
        if !values.total.is_finite() {
            log::error!(
                "non-finite loss {:?} on batch {} of epoch {} (stems {:?})",
                values,
                self.progress.batch,
                self.progress.epoch,
                batch.stems
            );
            return Err(HcmError::NonFiniteLoss {
                loss: values.total,
                step: self.progress.step,
                epoch: self.progress.epoch,
                batch: self.progress.batch,
            });
        }
        let grads = GradientsParams::from_grads(loss.total.backward(), &self.model);
        self.model = self.optim.step(self.lr(), self.model.clone(), grads);
        self.progress.step += 1;
        Ok(values)
    }

    fn step_limit_reached(&self) -> bool {
        self.config.max_steps.is_some_and(|m| self.progress.step >= m)
    }

    /// Train until `config.epochs` or `config.max_steps`, calling `on_step`
    /// after every update. Resumes from `self.progress`.
    pub fn run(&mut self, manifest: &DatasetManifest, mut on_step: impl FnMut(&StepLog)) -> Result<Vec<StepLog>> {
        let c = self.config.clone();
        if manifest.len() < c.batch {
            return Err(HcmError::Data(format!(
                "{} samples cannot fill one batch of {}",
                manifest.len(),
                c.batch
            )));
        }
        let mut logs = Vec::new();
        while self.progress.epoch < c.epochs && !self.step_limit_reached() {
            let epoch = self.progress.epoch;
            let batches = make_batches(manifest.len(), c.batch, Order::Train { seed: c.seed, epoch: epoch as u64 });
            while self.progress.batch < batches.len() && !self.step_limit_reached() {
                let bi = self.progress.batch;
                // flips depend only on (seed, epoch, batch), so a resumed run sees the same data
                let mut flip_rng = ChaCha8Rng::seed_from_u64(c.seed.wrapping_add(0x5eed));
                flip_rng.set_stream(((epoch as u64) << 32) | bi as u64);
                let flip = c.hflip.then_some(&mut flip_rng);
                let loaded = load_batch::<B>(manifest, &batches[bi], c.input_size, flip, &self.device)?;
                if let Some(batch) = loaded {
                    let lr = self.lr();
                    let loss = self.step(&batch)?;
                    let log = StepLog {
                        epoch,
                        batch: bi,
                        step: self.progress.step,
                        lr,
                        loss,
                    };
                    log::info!(
                        "epoch {epoch} batch {bi} step {} lr {lr:.3e} loss {:.6} per-level {:?}",
                        log.step,
                        loss.total,
                        loss.level_terms()
                    );
                    on_step(&log);
                    logs.push(log);
                    self.progress.batch += 1;
                    if c.checkpoint_every_steps > 0 && self.progress.step.is_multiple_of(c.checkpoint_every_steps) {
                        self.save(&c.checkpoint_dir.join(format!("step_{:06}.bin", self.progress.step)))?;
                    }
                } else {
                    self.progress.batch += 1;
                }
            }
            if self.progress.batch < batches.len() {
                break;
            }
            let epoch_logs: Vec<&StepLog> = logs.iter().filter(|l| l.epoch == epoch).collect();
            if !epoch_logs.is_empty() {
                self.history.push(EpochSummary {
                    epoch,
                    steps: epoch_logs.len(),
                    mean_loss: epoch_logs.iter().map(|l| l.loss.total).sum::<f64>() / epoch_logs.len() as f64,
                });
            }
            self.progress.epoch += 1;
            self.progress.batch = 0;
            if c.checkpoint_every_epochs > 0 && self.progress.epoch.is_multiple_of(c.checkpoint_every_epochs) {
                self.save(&c.checkpoint_dir.join(format!("epoch_{:04}.bin", self.progress.epoch)))?;
            }
        }
        Ok(logs)
    }

    /// Write a single-file checkpoint. `path` should end in `.bin`.
    pub fn save(&self, path: &Path) -> Result<PathBuf> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let meta = CheckpointMeta {
            schema_version: SCHEMA_VERSION,
            config: self.config.clone(),
            progress: self.progress,
            history: self.history.clone(),
        };
        let record: CheckpointRecord<B> = (
            self.model.clone().into_record(),
            self.optim.to_record(),
            serde_json::to_string(&meta).expect("metadata serializes"),
        );
        CheckpointRecorder::new()
            .record(record, path.to_path_buf())
            .map_err(|e| checkpoint_error(path, e))?;
        Ok(path.with_extension("bin"))
    }

    /// Restore model, optimizer state and progress from a checkpoint.
    pub fn resume(path: &Path, device: &B::Device) -> Result<Self> {
        let (model_record, optim_record, meta) = read_checkpoint::<B>(path, device)?;
        let config = meta.config;
        let model = config.model().init::<B>(config.seed, device).load_record(model_record);
        Ok(Self {
            model,
            optim: adam::<B>(&config).load_record(optim_record),
            config,
            progress: meta.progress,
            history: meta.history,
            device: device.clone(),
        })
    }
}

fn read_checkpoint<B: AutodiffBackend>(
    path: &Path,
    device: &B::Device,
) -> Result<(ModelRecord<B>, OptimRecord<B>, CheckpointMeta)> {
    if !path.is_file() {
        return Err(checkpoint_error(path, "no such file"));
    }
    let (model, optim, meta): CheckpointRecord<B> = CheckpointRecorder::new()
        .load(path.to_path_buf(), device)
        .map_err(|e| checkpoint_error(path, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&meta).map_err(|e| checkpoint_error(path, e))?;
    if meta.schema_version != SCHEMA_VERSION {
        return Err(checkpoint_error(
            path,
            format!("schema version {} (expected {SCHEMA_VERSION})", meta.schema_version),
        ));
    }
    Ok((model, optim, meta))
}

/// Inference model and training config from a checkpoint.
pub fn load_model<B: AutodiffBackend>(
    path: &Path,
    device: &B::Device,
) -> Result<(HcmModel<B::InnerBackend>, TrainConfig)> {
    let (record, _, meta) = read_checkpoint::<B>(path, device)?;
    let model = meta.config.model().init::<B>(meta.config.seed, device).load_record(record);
    Ok((model.valid(), meta.config))
}
