//! Steerable target speaker extraction with a spatially conditioned GAN.
//!
//! The crate is organised along the processing chain:
//!
//! * [`scene`] samples reverberant multi-speaker scenes and renders
//!   multichannel mixtures with the image-source method.
//! * [`tf`] holds the STFT, the generator input/output feature maps and the
//!   multi-resolution spectra used by the reconstruction loss.
//! * [`conditioning`], [`generator`] and [`discriminator`] are the networks.
//! * [`losses`] and [`training`] implement the two-step training procedure.
//! * [`eval`] computes SI-SNR / SegSNR reports and spatial selectivity sweeps.
//! * [`io`] covers manifests, WAV files and the experiment configuration.

pub mod conditioning;
pub mod discriminator;
pub mod error;
pub mod eval;
pub mod generator;
pub mod io;
pub mod losses;
pub mod nn;
pub mod scene;
pub mod tf;
pub mod training;

pub use conditioning::{ConditioningMode, CondFeatures, DoAOneHot};
pub use discriminator::{DiscConfig, MultiScaleDiscriminator};
pub use error::{Error, Result};
pub use eval::{Example, Extractor, MetricsReport, SelectivityProfile};
pub use generator::{Generator, GeneratorConfig};
pub use io::{DatasetConfig, ExperimentConfig, ManifestRecord};
pub use losses::{LossReport, LossWeights};
pub use scene::{MixtureItem, RoomSpec, SceneSpec, SimulationConfig};
pub use tf::StftConfig;
pub use training::{Checkpoint, GanTrainer, TrainConfig};

/// Speed of sound in m/s.
pub const SPEED_OF_SOUND: f64 = 343.0;

/// Default model sample rate in Hz.
pub const SAMPLE_RATE: u32 = 16_000;
