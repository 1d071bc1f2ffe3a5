//! Model and training configuration with per-dataset defaults.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::nn::NormKind;

/// Dimension of the attribute latent produced by the AA module.
pub const LATENT_DIM: usize = 128;
/// Dimension of the noise vectors `z_s` and `z_f`.
pub const NOISE_DIM: usize = 100;
/// Width of the hidden layers of the AA fully-connected stack.
pub const AA_HIDDEN: usize = 256;
/// Default weight of the KL term for both stages.
pub const DEFAULT_LAMBDA: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Output resolutions, ascending, each twice the previous.
    pub scales: Vec<usize>,
    /// All channel counts are divided by this (1 = full width).
    pub width_div: usize,
    pub norm: NormKind,
    pub latent_dim: usize,
    pub noise_dim: usize,
    pub aa_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            scales: vec![16, 32, 64],
            width_div: 1,
            norm: NormKind::Conditional,
            latent_dim: LATENT_DIM,
            noise_dim: NOISE_DIM,
            aa_hidden: AA_HIDDEN,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        validate_scales(&self.scales)?;
        if self.width_div == 0 {
            return Err(invalid!("width_div must be positive"));
        }
        Ok(())
    }

    pub fn top(&self) -> usize {
        *self.scales.last().expect("validated scales")
    }

    /// Scaled channel count.
    pub fn ch(&self, base: usize) -> usize {
        (base / self.width_div).max(1)
    }
}

pub(crate) fn validate_scales(scales: &[usize]) -> Result<()> {
    if scales.is_empty() {
        return Err(invalid!("at least one scale is required"));
    }
    for &s in scales {
        if s < 8 || !s.is_power_of_two() {
            return Err(invalid!("scale {} must be a power of two >= 8", s));
        }
    }
    for w in scales.windows(2) {
        if w[1] != 2 * w[0] {
            return Err(invalid!("scales must double at each step, got {:?}", scales));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Dataset {
    Celeba,
    Lfwa,
    Celebahq,
}

/// Generator side of the adversarial objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum GeneratorLossForm {
    /// `-log D(G(z))`
    NonSaturating,
    /// `log(1 - D(G(z)))`, the literal min-max form.
    Minimax,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Sketch,
    Face,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct TrainConfig {
    pub dataset: Dataset,
    pub batch_size: usize,
    pub lr_stage1: f64,
    pub lr_stage2: f64,
    pub epochs: usize,
    pub freeze_epochs: usize,
    /// Fraction of the initial rate removed per epoch after the frozen period.
    pub decay_fraction: f64,
    pub lambda_s: f64,
    pub lambda_f: f64,
    pub scales: Vec<usize>,
    pub seed: u64,
    pub width_div: usize,
    pub norm: NormKind,
    pub generator_loss: GeneratorLossForm,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    /// Train the sketch generator to completion before the face generator.
    pub staged: bool,
    /// Block face-stage gradients from reaching the sketch generator.
    pub stop_gradient_sketch: bool,
    /// Feed ground-truth sketches to the face generator (ablation).
    pub ground_truth_sketch: bool,
}

impl TrainConfig {
    pub fn for_dataset(dataset: Dataset) -> Self {
        let base = Self {
            dataset,
            batch_size: 40,
            lr_stage1: 2e-4,
            lr_stage2: 1e-4,
            epochs: 20,
            freeze_epochs: 10,
            decay_fraction: 0.1,
            lambda_s: DEFAULT_LAMBDA,
            lambda_f: DEFAULT_LAMBDA,
            scales: vec![16, 32, 64],
            seed: 0,
            width_div: 1,
            norm: NormKind::Conditional,
            generator_loss: GeneratorLossForm::NonSaturating,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            staged: false,
            stop_gradient_sketch: false,
            ground_truth_sketch: false,
        };
        match dataset {
            Dataset::Celeba => base,
            Dataset::Lfwa => Self { epochs: 200, freeze_epochs: 100, decay_fraction: 0.01, ..base },
            Dataset::Celebahq => Self {
                batch_size: 16,
                scales: vec![64, 128, 256],
                staged: true,
                stop_gradient_sketch: true,
                ..base
            },
        }
    }

    /// Desk-scale profile: 16 samples, batch 8, 1/8 channel width and a
    /// constant learning rate over 250 epochs (500 steps).
    pub fn smoke() -> Self {
        Self {
            batch_size: 8,
            epochs: 250,
            freeze_epochs: 250,
            width_div: 8,
            ..Self::for_dataset(Dataset::Celeba)
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig { scales: self.scales.clone(), width_div: self.width_div, norm: self.norm, ..ModelConfig::default() }
    }

    pub fn lr0(&self, stage: Stage) -> f64 {
        match stage {
            Stage::Sketch => self.lr_stage1,
            Stage::Face => self.lr_stage2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        if self.batch_size < 2 {
            return Err(Error::BatchTooSmall(self.batch_size));
        }
        if self.epochs == 0 || self.freeze_epochs > self.epochs {
            return Err(invalid!("need 0 < epochs and freeze_epochs <= epochs"));
        }
        if self.lambda_s < 0.0 || self.lambda_f < 0.0 {
            return Err(invalid!("KL weights must be non-negative"));
        }
        if !(self.decay_fraction >= 0.0) || !(self.lr_stage1 > 0.0) || !(self.lr_stage2 > 0.0) {
            return Err(invalid!("learning rates must be positive and decay non-negative"));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_dataset(Dataset::Celeba)
    }
}

/// Learning rate for `epoch`: the initial rate during the frozen period, then
/// reduced by `decay_fraction * lr0` per epoch, floored at zero.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig, stage: Stage) -> Result<f64> {
    if epoch >= cfg.epochs {
        return Err(Error::EpochOutOfRange { epoch, epochs: cfg.epochs });
    }
    let lr0 = cfg.lr0(stage);
    if epoch < cfg.freeze_epochs {
        return Ok(lr0);
    }
    let steps = (epoch - cfg.freeze_epochs + 1) as f64;
    Ok(lr0 * (1.0 - cfg.decay_fraction * steps).max(0.0))
}
