//! Run configuration in TOML. Unknown keys are rejected; every section and
//! field is optional and falls back to the defaults below.
//!
//! ```toml
//! [data]
//! height = 64
//! width = 64
//! coils = 4
//! train_slices = 200
//! val_slices = 40
//! accelerations = [4.0, 8.0]
//! center_fraction = 0.08
//! noise_sigma = 0.0
//! seed = 42
//!
//! [model]
//! cascades = 3
//! widths = [8, 16]
//! kernel_size = 3
//! downsample = 2
//! seed = 7
//!
//! [train]
//! acceleration = 4.0
//! batch_size = 1
//! rho = 0.99
//! epsilon = 1e-8
//! seed = 11
//! pretrain_epochs = 15
//! pretrain_learning_rate = 1e-4
//! finetune_epochs = 5
//! finetune_learning_rate = 5e-5
//! discriminator_learning_rate = 5e-5
//!
//! [train.discriminator]
//! widths = [8, 16]
//! kernel_size = 3
//! stride = 2
//! negative_slope = 0.2
//! seed = 1009
//!
//! [loss]
//! lambda = 1e-3
//! gamma = 0.1
//! ssim_window = 7
//! k1 = 0.01
//! k2 = 0.03
//!
//! [interp]
//! alpha = 0.5
//! allow_extrapolation = false
//! sweep_points = 5
//! sweep_slices = [0]
//!
//! [metrics]
//! foreground = "stored"   # or "estimated"
//! ssim_window = 7
//! k1 = 0.01
//! k2 = 0.03
//! ```
//!
//! The model grid and coil count always follow `[data]`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::DataConfig;
use crate::error::{Error, Result};
use crate::interp::check_alpha;
use crate::losses::LossConfig;
use crate::metrics::MetricsConfig;
use crate::network::{DiscriminatorConfig, ModelConfig};
use crate::trainer::{Phase, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSettings {
    pub cascades: usize,
    pub widths: Vec<usize>,
    pub kernel_size: usize,
    pub downsample: usize,
    pub seed: u64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSettings {
            cascades: m.cascades,
            widths: m.widths,
            kernel_size: m.kernel_size,
            downsample: m.downsample,
            seed: m.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub acceleration: f64,
    pub batch_size: usize,
    pub rho: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub pretrain_epochs: usize,
    pub pretrain_learning_rate: f64,
    pub finetune_epochs: usize,
    pub finetune_learning_rate: f64,
    pub discriminator_learning_rate: f64,
    pub discriminator: DiscriminatorConfig,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let pre = TrainConfig::new(Phase::SnPretrain);
        let fine = TrainConfig::new(Phase::SnFinetune);
        TrainSettings {
            acceleration: pre.acceleration,
            batch_size: pre.batch_size,
            rho: pre.rho,
            epsilon: pre.epsilon,
            seed: pre.seed,
            pretrain_epochs: pre.epochs,
            pretrain_learning_rate: pre.learning_rate,
            finetune_epochs: fine.epochs,
            finetune_learning_rate: fine.learning_rate,
            discriminator_learning_rate: pre.discriminator_learning_rate,
            discriminator: pre.discriminator,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterpSettings {
    pub alpha: f64,
    pub allow_extrapolation: bool,
    pub sweep_points: usize,
    /// Validation slices whose images a sweep writes out.
    pub sweep_slices: Vec<usize>,
}

impl Default for InterpSettings {
    fn default() -> Self {
        InterpSettings {
            alpha: 0.5,
            allow_extrapolation: false,
            sweep_points: 5,
            sweep_slices: vec![0],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelSettings,
    pub train: TrainSettings,
    pub loss: LossConfig,
    pub interp: InterpSettings,
    pub metrics: MetricsConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model_config().validate()?;
        self.loss.validate()?;
        for phase in [Phase::SnPretrain, Phase::SnGanFinetune] {
            self.train_config(phase).validate()?;
        }
        if !self.data.accelerations.contains(&self.train.acceleration) {
            return Err(Error::Config(format!(
                "training acceleration {} is not among the simulated {:?}",
                self.train.acceleration, self.data.accelerations
            )));
        }
        check_alpha(self.interp.alpha, self.interp.allow_extrapolation)?;
        if self.interp.sweep_points == 0 {
            return Err(Error::Config("sweep needs at least one point".into()));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            cascades: self.model.cascades,
            widths: self.model.widths.clone(),
            kernel_size: self.model.kernel_size,
            downsample: self.model.downsample,
            height: self.data.height,
            width: self.data.width,
            coils: self.data.coils,
            seed: self.model.seed,
        }
    }

    pub fn train_config(&self, phase: Phase) -> TrainConfig {
        let t = &self.train;
        let (epochs, learning_rate) = match phase {
            Phase::SnPretrain => (t.pretrain_epochs, t.pretrain_learning_rate),
            _ => (t.finetune_epochs, t.finetune_learning_rate),
        };
        TrainConfig {
            phase,
            epochs,
            batch_size: t.batch_size,
            learning_rate,
            rho: t.rho,
            epsilon: t.epsilon,
            seed: t.seed,
            acceleration: t.acceleration,
            loss: self.loss.clone(),
            discriminator: t.discriminator.clone(),
            discriminator_learning_rate: t.discriminator_learning_rate,
            metrics: self.metrics.clone(),
        }
    }
}
