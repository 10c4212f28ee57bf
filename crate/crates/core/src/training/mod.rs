//! Two-step training: a discriminative spatial filter first, then the GAN conditioned on
//! the filter's frozen intermediate features.

mod checkpoint;
mod provider;
mod stage1;
mod stage2;

pub use checkpoint::{Checkpoint, RngState, FORMAT_VERSION, MAGIC};
pub use provider::{
    extract_features, spatial_input, FeatureProvider, ProviderConfig, ToySpatialFilter, TOY_PROVIDER_ID, TOY_TAP,
};
pub use stage1::{load_provider, provider_checkpoint, train_stage1, Stage1Outcome};
pub use stage2::{Batch, GanTrainer, TrainedExtractor};

use candle_core::DType;
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::discriminator::DiscConfig;
use crate::eval::Example;
use crate::generator::GeneratorConfig;
use crate::losses::{LossReport, LossWeights};
use crate::nn::AdamConfig;
use crate::tf::Resolution;
use crate::{Error, Result, SAMPLE_RATE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Self::F32 => DType::F32,
            Self::F64 => DType::F64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: u8,
    pub seed: u64,
    pub steps: u64,
    pub batch_size: usize,
    /// Training crop length in samples.
    pub segment_samples: usize,
    pub precision: Precision,
    pub sample_rate: u32,
    pub generator: GeneratorConfig,
    pub discriminator: DiscConfig,
    pub provider: ProviderConfig,
    pub weights: LossWeights,
    pub resolutions: Vec<Resolution>,
    pub generator_optim: AdamConfig,
    pub discriminator_optim: AdamConfig,
    pub provider_optim: AdamConfig,
    /// Validation period in steps; 0 disables validation.
    pub validation_every: u64,
    /// Maximum number of validation items scored per validation pass.
    pub validation_items: usize,
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: 2,
            seed: 0,
            steps: 1000,
            batch_size: 4,
            segment_samples: 16_000,
            precision: Precision::F32,
            sample_rate: SAMPLE_RATE,
            generator: GeneratorConfig::default(),
            discriminator: DiscConfig::default(),
            provider: ProviderConfig::default(),
            weights: LossWeights::default(),
            resolutions: Resolution::default_ladder(),
            generator_optim: AdamConfig::default(),
            discriminator_optim: AdamConfig::default(),
            provider_optim: AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
            validation_every: 0,
            validation_items: 16,
            log_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stage != 1 && self.stage != 2 {
            return Err(Error::Config(format!("stage must be 1 or 2, got {}", self.stage)));
        }
        if self.batch_size == 0 || self.segment_samples == 0 {
            return Err(Error::Config("batch size and segment length must be positive".into()));
        }
        self.weights.validate()?;
        self.provider.validate()?;
        let mut g = self.generator.clone();
        self.attach_feature_shape(&mut g);
        g.validate()?;
        if self.stage == 2 {
            self.discriminator.validate()?;
            if self.segment_samples < self.discriminator.longest_window() {
                return Err(Error::Config(format!(
                    "segments of {} samples are shorter than the longest discriminator window",
                    self.segment_samples
                )));
            }
        }
        if self.generator.directions != self.provider.directions && self.generator.mode.uses_features() {
            return Err(Error::Config("generator and provider DoA grids differ".into()));
        }
        Ok(())
    }

    fn attach_feature_shape(&self, g: &mut GeneratorConfig) {
        if g.mode.uses_features() && g.feature_shape.is_none() {
            g.feature_shape = Some((self.provider.hidden, self.provider.stft.bins()));
        }
    }

    /// Generator config with the feature shape implied by the provider config.
    pub fn resolved_generator(&self) -> GeneratorConfig {
        let mut g = self.generator.clone();
        self.attach_feature_shape(&mut g);
        g
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub stage: u8,
    pub step: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub losses: Option<LossReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provider_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_norm_g: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_norm_d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation: Option<f64>,
}

impl LogRecord {
    pub fn new(stage: u8, step: u64) -> Self {
        Self {
            stage,
            step,
            losses: None,
            provider_loss: None,
            grad_norm_g: None,
            grad_norm_d: None,
            validation: None,
        }
    }
}

/// Sink for log records; training never fails because of the sink.
pub type LogSink<'a> = &'a mut dyn FnMut(&LogRecord);

/// A `segment`-sample crop of `example` starting at a random offset; shorter items are
/// zero-padded.
pub fn random_crop(example: &Example, segment: usize, rng: &mut ChaCha8Rng) -> (Array2<f64>, Vec<f64>) {
    let len = example.len();
    let m = example.mixture.nrows();
    if len <= segment {
        let mut mix = Array2::zeros((m, segment));
        mix.slice_mut(ndarray::s![.., ..len]).assign(&example.mixture);
        let mut tgt = example.target.clone();
        tgt.resize(segment, 0.0);
        return (mix, tgt);
    }
    let start = rng.random_range(0..=len - segment);
    (
        example.mixture.slice(ndarray::s![.., start..start + segment]).to_owned(),
        example.target[start..start + segment].to_vec(),
    )
}

/// Indices of a batch drawn without replacement when possible.
pub fn draw_batch(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let take = batch.min(n);
    for i in 0..take {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    let mut out: Vec<usize> = idx[..take].to_vec();
    while out.len() < batch {
        out.push(rng.random_range(0..n));
    }
    out
}

pub(crate) fn fault(step: u64, reason: impl Into<String>) -> Error {
    Error::TrainingFault {
        step,
        reason: reason.into(),
    }
}
