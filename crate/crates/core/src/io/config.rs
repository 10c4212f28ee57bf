use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::DatasetConfig;
use crate::eval::SegSnrConfig;
use crate::scene::SimulationConfig;
use crate::training::TrainConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub seg_snr: SegSnrConfig,
    pub sweep_step_deg: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seg_snr: SegSnrConfig::default(),
            sweep_step_deg: 5.0,
        }
    }
}

/// Complete experiment description. Unknown keys are rejected; every run saves the
/// fully-defaulted tree next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub simulation: SimulationConfig,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub evaluation: EvalConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(Error::Toml)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// Cross-section consistency on top of each section's own checks.
    pub fn validate(&self) -> Result<()> {
        self.simulation.validate()?;
        self.dataset.validate()?;
        self.train.validate()?;
        let d = self.simulation.grid()?.len();
        let g = &self.train.generator;
        if g.directions != d {
            return Err(Error::Config(format!(
                "generator has {} directions, simulation grid has {d}",
                g.directions
            )));
        }
        if g.mics != self.simulation.mic_count || self.train.provider.mics != self.simulation.mic_count {
            return Err(Error::Config("microphone counts differ between sections".into()));
        }
        if self.train.sample_rate != self.simulation.sample_rate {
            return Err(Error::Config("sample rates differ between sections".into()));
        }
        let step = self.evaluation.sweep_step_deg;
        if !(step > 0.0) || ((360.0 / step) - (360.0 / step).round()).abs() > 1e-9 {
            return Err(Error::Config(format!("sweep step {step} does not divide 360")));
        }
        Ok(())
    }

    /// Desk-scale toy profile: 8 directions, two interferers, short items and small models.
    pub fn toy() -> Self {
        use crate::conditioning::ConditioningMode;
        use crate::discriminator::DiscConfig;
        use crate::generator::GeneratorConfig;
        use crate::tf::StftConfig;
        let simulation = SimulationConfig {
            doa_resolution_deg: 45.0,
            interferer_count: 2,
            ..SimulationConfig::default()
        };
        let mut train = TrainConfig::default();
        train.generator = GeneratorConfig {
            pre_channels: 8,
            channels: vec![8, 16, 16, 16],
            latent: 32,
            ..GeneratorConfig::desk(ConditioningMode::XPhi, 8)
        };
        train.provider.directions = 8;
        train.discriminator = DiscConfig {
            scales: [512, 1024].iter().map(|&n| StftConfig::new(n, n, n / 4)).collect(),
            channels: 8,
            ..DiscConfig::default()
        };
        train.batch_size = 4;
        train.segment_samples = 8000;
        Self {
            seed: 0,
            simulation,
            dataset: DatasetConfig {
                count: 600,
                item_seconds: 2.0,
                ..DatasetConfig::default()
            },
            train,
            evaluation: EvalConfig {
                sweep_step_deg: 45.0,
                ..EvalConfig::default()
            },
        }
    }
}
