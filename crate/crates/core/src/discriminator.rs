//! Multi-scale STFT discriminator.
//!
//! Each scale analyses the waveform with its own STFT, stacks real and imaginary parts as
//! two channels and runs a 2D convolution stack. The last layer's single-channel map is
//! averaged over frequency to give one score per frame.

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{leaky_relu, Conv2d, Conv2dSpec, ParamBuilder, ParamStore};
use crate::tf::{DiffStft, StftConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscConfig {
    pub scales: Vec<StftConfig>,
    /// Convolutions per scale, the score layer included.
    pub layers: usize,
    pub channels: usize,
    pub slope: f64,
}

impl Default for DiscConfig {
    fn default() -> Self {
        Self {
            scales: [512, 1024, 2048].iter().map(|&n| StftConfig::new(n, n, n / 4)).collect(),
            layers: 5,
            channels: 16,
            slope: 0.2,
        }
    }
}

impl DiscConfig {
    pub fn tiny() -> Self {
        Self {
            scales: vec![StftConfig::new(16, 16, 4), StftConfig::new(32, 32, 8)],
            layers: 3,
            channels: 3,
            slope: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::Config("discriminator needs at least one scale".into()));
        }
        for (i, s) in self.scales.iter().enumerate() {
            s.validate()?;
            if self.scales[..i].iter().any(|o| o.fft_length == s.fft_length) {
                return Err(Error::Config(format!("duplicate discriminator FFT length {}", s.fft_length)));
            }
        }
        if self.layers < 2 || self.channels == 0 {
            return Err(Error::Config("discriminator needs >= 2 layers and >= 1 channel".into()));
        }
        Ok(())
    }

    pub fn longest_window(&self) -> usize {
        self.scales.iter().map(|s| s.window_length).max().unwrap_or(0)
    }
}

/// Per-scale frame scores `(B, N_k)` and per-scale, per-layer feature maps.
#[derive(Debug, Clone)]
pub struct DiscOutputs {
    pub scores: Vec<Tensor>,
    pub features: Vec<Vec<Tensor>>,
}

impl DiscOutputs {
    pub fn scales(&self) -> usize {
        self.scores.len()
    }

    pub fn detach(&self) -> Self {
        Self {
            scores: self.scores.iter().map(|t| t.detach()).collect(),
            features: self
                .features
                .iter()
                .map(|f| f.iter().map(|t| t.detach()).collect())
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
struct ScaleDisc {
    stft: DiffStft,
    convs: Vec<Conv2d>,
}

#[derive(Debug, Clone)]
pub struct MultiScaleDiscriminator {
    config: DiscConfig,
    scales: Vec<ScaleDisc>,
}

impl MultiScaleDiscriminator {
    pub fn new(config: DiscConfig, pb: &mut ParamBuilder) -> Result<Self> {
        config.validate()?;
        let mut scales = Vec::new();
        for (k, s) in config.scales.iter().enumerate() {
            let mut sp = pb.pp(&format!("scale{k}"));
            let mut convs = Vec::new();
            for l in 0..config.layers {
                let c_in = if l == 0 { 2 } else { config.channels };
                let last = l + 1 == config.layers;
                let c_out = if last { 1 } else { config.channels };
                let mut spec = Conv2dSpec::same(c_in, c_out, 3);
                if l > 0 && !last {
                    spec = spec.with_stride_f(2);
                }
                let name = if last { "score".to_string() } else { format!("conv{l}") };
                convs.push(Conv2d::new(spec, &mut sp.pp(&name))?);
            }
            scales.push(ScaleDisc {
                stft: DiffStft::new(*s, pb.dtype(), &pb.device())?,
                convs,
            });
        }
        Ok(Self { config, scales })
    }

    pub fn init(config: DiscConfig, seed: u64, dtype: DType, device: &Device) -> Result<(Self, ParamStore)> {
        let mut store = ParamStore::new(dtype, device);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Self::new(config, &mut ParamBuilder::new(&mut store, &mut rng))?;
        Ok((d, store))
    }

    pub fn config(&self) -> &DiscConfig {
        &self.config
    }

    /// `wave`: `(B, L)` with `L` at least the longest window.
    pub fn forward(&self, wave: &Tensor) -> Result<DiscOutputs> {
        let (_, len) = wave.dims2()?;
        if len < self.config.longest_window() {
            return Err(Error::Domain(format!(
                "{len} samples are shorter than the longest discriminator window {}",
                self.config.longest_window()
            )));
        }
        let mut scores = Vec::with_capacity(self.scales.len());
        let mut features = Vec::with_capacity(self.scales.len());
        for scale in &self.scales {
            let (re, im) = scale.stft.forward(wave)?;
            let mut h = Tensor::stack(&[re, im], 1)?;
            let mut feats = Vec::with_capacity(scale.convs.len());
            for (l, conv) in scale.convs.iter().enumerate() {
                h = conv.forward(&h)?;
                if l + 1 < scale.convs.len() {
                    h = leaky_relu(&h, self.config.slope)?;
                }
                feats.push(h.clone());
            }
            scores.push(h.squeeze(1)?.mean(1)?);
            features.push(feats);
        }
        Ok(DiscOutputs { scores, features })
    }
}
