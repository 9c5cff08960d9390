use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::BackboneConfig;
use crate::error::{HcmError, Result};
use crate::model::HcmConfig;

/// Version of the config and checkpoint layout written by this crate.
pub const SCHEMA_VERSION: u32 = 1;

/// Everything a training or evaluation run reads, as one flat TOML table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub schema_version: u32,
    /// Initial learning rate.
    pub lr0: f64,
    pub betas: (f64, f64),
    pub adam_eps: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Epochs between learning-rate drops.
    pub decay_period: usize,
    pub decay_factor: f64,
    pub input_size: usize,
    /// Decoder width C.
    pub channels: usize,
    pub use_isc: bool,
    pub use_csc: bool,
    pub use_rrd: bool,
    pub seed: u64,
    /// Random horizontal flips during training.
    pub hflip: bool,
    pub backbone_layers: [usize; 4],
    /// Pretrained backbone weights (burn named-msgpack record).
    pub backbone_weights: Option<PathBuf>,
    pub data_root: Option<PathBuf>,
    pub train_split: String,
    pub eval_split: String,
    pub checkpoint_dir: PathBuf,
    /// Checkpoint every this many epochs; 0 disables.
    pub checkpoint_every_epochs: usize,
    /// Extra checkpoint every this many optimizer steps; 0 disables.
    pub checkpoint_every_steps: usize,
    /// Stop after this many optimizer steps.
    pub max_steps: Option<usize>,
    /// Checkpoint to evaluate, predict with, or resume from.
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            lr0: 1e-4,
            betas: (0.9, 0.999),
            adam_eps: 1e-8,
            batch: 32,
            epochs: 160,
            decay_period: 80,
            decay_factor: 10.0,
            input_size: 352,
            channels: 64,
            use_isc: true,
            use_csc: true,
            use_rrd: true,
            seed: 0,
            hflip: false,
            backbone_layers: [3, 4, 6, 3],
            backbone_weights: None,
            data_root: None,
            train_split: "train".into(),
            eval_split: "test".into(),
            checkpoint_dir: PathBuf::from("checkpoints"),
            checkpoint_every_epochs: 1,
            checkpoint_every_steps: 0,
            max_steps: None,
            checkpoint: None,
        }
    }
}

impl TrainConfig {
    /// `lr0 · decay_factor^(−floor(epoch / decay_period))`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr0 * self.decay_factor.powi(-((epoch / self.decay_period) as i32))
    }

    pub fn model(&self) -> HcmConfig {
        HcmConfig::new()
            .with_channels(self.channels)
            .with_backbone(BackboneConfig::new().with_layers(self.backbone_layers))
            .with_use_isc(self.use_isc)
            .with_use_csc(self.use_csc)
            .with_use_rrd(self.use_rrd)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(HcmError::Config(m.into()));
        if self.schema_version != SCHEMA_VERSION {
            return Err(HcmError::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return fail("lr0 must be positive");
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return fail("betas must lie in [0, 1)");
        }
        if self.batch == 0 {
            return fail("batch must be at least 1");
        }
        if self.decay_period == 0 || self.decay_factor <= 0.0 {
            return fail("decay_period and decay_factor must be positive");
        }
        if self.input_size == 0 || !self.input_size.is_multiple_of(crate::encoder::INPUT_MULTIPLE) {
            return fail("input_size must be a positive multiple of 32");
        }
        if self.channels == 0 || self.backbone_layers.contains(&0) {
            return fail("channels and backbone_layers must be positive");
        }
        Ok(())
    }

    /// Parse TOML, apply `key=value` overrides (values in TOML syntax, bare
    /// words taken as strings), then type-check the result.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| HcmError::Config(e.message().to_string()))?;
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| HcmError::Config(format!("override `{o}` is not key=value")))?;
            let key = key.trim();
            let value = match format!("v = {raw}").parse::<toml::Table>() {
                Ok(mut t) => t.remove("v").unwrap(),
                Err(_) => toml::Value::String(raw.trim().to_string()),
            };
            table.insert(key.to_string(), value);
        }
        let config: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| HcmError::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Defaults overlaid with `path` (if any) and the overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| HcmError::Config(format!("cannot read config {}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
