//! Time-frequency transforms.
//!
//! [`stft`]/[`istft`] are the double-precision reference transforms used for data
//! preparation and evaluation. [`DiffStft`] is the same transform expressed with tensor
//! operations so that losses and discriminators can backpropagate into the waveform.

mod diff;
mod features;
mod mel;
mod stft;

pub use diff::DiffStft;
pub use features::{
    assemble_input, assemble_input_framed, features_from_spectra, output_spectrum, softplus, softplus_inv, synthesize_output, GeneratorOutput, MagPhaseFeatures,
    MAG_FLOOR,
};
pub use mel::{mel_filterbank, multires_spectra, MultiResSpectrum, Resolution};
pub use stft::{
    frame_count, framed_layout, hann_periodic, istft, istft_framed, stft, stft_framed,
    ComplexSpectrogram, FramedLayout,
};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    #[default]
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftConfig {
    pub fft_length: usize,
    pub window_length: usize,
    pub hop_length: usize,
    #[serde(default)]
    pub window: WindowKind,
}

impl StftConfig {
    pub const fn new(fft_length: usize, window_length: usize, hop_length: usize) -> Self {
        Self {
            fft_length,
            window_length,
            hop_length,
            window: WindowKind::Hann,
        }
    }

    /// Generator analysis/synthesis: FFT 512, window 512, hop 160.
    pub const fn generator() -> Self {
        Self::new(512, 512, 160)
    }

    /// Discriminative feature provider: FFT 512, window 512, hop 256.
    pub const fn provider() -> Self {
        Self::new(512, 512, 256)
    }

    pub fn bins(&self) -> usize {
        self.fft_length / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.fft_length < 2 || self.window_length == 0 || self.hop_length == 0 {
            return Err(Error::Config(format!("degenerate STFT config {self:?}")));
        }
        if self.window_length > self.fft_length {
            return Err(Error::Config(format!(
                "window {} longer than FFT {}",
                self.window_length, self.fft_length
            )));
        }
        if self.hop_length > self.window_length {
            return Err(Error::Config(format!(
                "hop {} leaves gaps between windows of {}",
                self.hop_length, self.window_length
            )));
        }
        Ok(())
    }

    pub fn window(&self) -> Vec<f64> {
        match self.window {
            WindowKind::Hann => hann_periodic(self.window_length),
        }
    }
}
