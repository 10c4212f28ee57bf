//! Mel filterbanks and multi-resolution magnitude/mel spectra.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{stft_framed, StftConfig};
use crate::{Error, Result};

/// One analysis scale of the multi-resolution reconstruction loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Resolution {
    pub stft: StftConfig,
    pub mel_bands: usize,
}

impl Resolution {
    /// FFT {128, 256, 512, 1024, 2048} with hop FFT/4 and mel bands {10, 20, 40, 80, 160}.
    pub fn default_ladder() -> Vec<Resolution> {
        [(128, 10), (256, 20), (512, 40), (1024, 80), (2048, 160)]
            .into_iter()
            .map(|(n, mel)| Resolution {
                stft: StftConfig::new(n, n, n / 4),
                mel_bands: mel,
            })
            .collect()
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK-mel filterbank, `n_mels x (fft_length / 2 + 1)`, spanning 0 Hz to Nyquist.
///
/// A triangle narrower than the bin spacing would be empty; such rows get a unit weight on
/// the bin nearest to their center so that every row has positive mass.
pub fn mel_filterbank(n_mels: usize, fft_length: usize, sample_rate: u32) -> Result<Array2<f64>> {
    let bins = fft_length / 2 + 1;
    if n_mels == 0 || n_mels > bins {
        return Err(Error::Config(format!(
            "{n_mels} mel bands do not fit {bins} frequency bins"
        )));
    }
    let fs = sample_rate as f64;
    let top = hz_to_mel(fs / 2.0);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = fs / fft_length as f64;
    let mut fb = Array2::<f64>::zeros((n_mels, bins));
    for m in 0..n_mels {
        let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = k as f64 * bin_hz;
            let w = ((f - lo) / (c - lo)).min((hi - f) / (hi - c));
            if w > 0.0 {
                fb[[m, k]] = w;
            }
        }
        if fb.row(m).sum() <= 0.0 {
            let k = ((c / bin_hz).round() as usize).min(bins - 1);
            fb[[m, k]] = 1.0;
        }
    }
    Ok(fb)
}

/// Magnitude (`F x T`) and mel (`n_mels x T`) spectra at one resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiResSpectrum {
    pub magnitude: Array2<f64>,
    pub mel: Array2<f64>,
}

/// Magnitude and mel spectra of `wave` at every resolution. Framing follows
/// [`stft_framed`], so signals shorter than the largest window are accepted.
pub fn multires_spectra(
    wave: &[f64],
    resolutions: &[Resolution],
    sample_rate: u32,
) -> Result<Vec<MultiResSpectrum>> {
    if resolutions.is_empty() {
        return Err(Error::Config("empty resolution list".into()));
    }
    resolutions
        .iter()
        .map(|r| {
            let fb = mel_filterbank(r.mel_bands, r.stft.fft_length, sample_rate)?;
            let spec = stft_framed(wave, &r.stft)?;
            let magnitude = spec.values.mapv(|c| c.norm());
            let mel = fb.dot(&magnitude);
            Ok(MultiResSpectrum { magnitude, mel })
        })
        .collect()
}
