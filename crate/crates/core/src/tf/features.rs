//! Generator input assembly and output synthesis.

use ndarray::{s, Array2, Array3};
use num_complex::Complex64;

use super::{istft, stft, stft_framed, ComplexSpectrogram, StftConfig};
use crate::{Error, Result};

/// Magnitude floor used before the logarithm and the phase normalization.
pub const MAG_FLOOR: f64 = 1e-8;

/// `3M x F x T` generator input. Channel order: `log|X_m|` for all `m`, then `Re X_m / |X_m|`
/// for all `m`, then `Im X_m / |X_m|` for all `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct MagPhaseFeatures {
    pub values: Array3<f64>,
}

impl MagPhaseFeatures {
    pub fn mics(&self) -> usize {
        self.values.dim().0 / 3
    }
}

/// `3 x F x T` generator output `[S_mag, S_r, S_i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorOutput {
    pub values: Array3<f64>,
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}

/// Log-magnitude and unit-modulus phase of every microphone's STFT.
///
/// Magnitudes are floored at [`MAG_FLOOR`]; bins at or below the floor get the phase (1, 0).
pub fn assemble_input(wave: &Array2<f64>, cfg: &StftConfig) -> Result<MagPhaseFeatures> {
    assemble_with(wave, |row| stft(row, cfg))
}

/// [`assemble_input`] on the length-preserving framing of [`stft_framed`].
pub fn assemble_input_framed(wave: &Array2<f64>, cfg: &StftConfig) -> Result<MagPhaseFeatures> {
    assemble_with(wave, |row| stft_framed(row, cfg))
}

fn assemble_with(
    wave: &Array2<f64>,
    transform: impl Fn(&[f64]) -> Result<ComplexSpectrogram>,
) -> Result<MagPhaseFeatures> {
    let m = wave.nrows();
    if m == 0 {
        return Err(Error::Domain("mixture has no channels".into()));
    }
    let specs = wave
        .rows()
        .into_iter()
        .map(|row| transform(&row.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok(features_from_spectra(&specs))
}

/// Channel layout of [`MagPhaseFeatures`] from per-microphone spectra of equal shape.
pub fn features_from_spectra(specs: &[ComplexSpectrogram]) -> MagPhaseFeatures {
    let m = specs.len();
    let (f, t) = specs[0].values.dim();
    let mut values = Array3::<f64>::zeros((3 * m, f, t));
    for (ch, spec) in specs.iter().enumerate() {
        for ((fi, ti), c) in spec.values.indexed_iter() {
            let mag = c.norm();
            let (re, im) = if mag > MAG_FLOOR {
                (c.re / mag, c.im / mag)
            } else {
                (1.0, 0.0)
            };
            values[[ch, fi, ti]] = mag.max(MAG_FLOOR).ln();
            values[[m + ch, fi, ti]] = re;
            values[[2 * m + ch, fi, ti]] = im;
        }
    }
    MagPhaseFeatures { values }
}

/// Complex spectrum `softplus(S_mag) * (S_r + j S_i)` of a generator output.
pub fn output_spectrum(out: &GeneratorOutput, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    let (c, f, t) = out.values.dim();
    if c != 3 {
        return Err(Error::Domain(format!("generator output has {c} channels, expected 3")));
    }
    let mag = out.values.slice(s![0, .., ..]);
    let re = out.values.slice(s![1, .., ..]);
    let im = out.values.slice(s![2, .., ..]);
    let mut values = Array2::<Complex64>::zeros((f, t));
    for ((idx, v), m) in values.indexed_iter_mut().zip(mag.iter()) {
        *v = Complex64::new(re[idx], im[idx]) * softplus(*m);
    }
    Ok(ComplexSpectrogram { values, config: *cfg })
}

/// `ISTFT(softplus(S_mag) * (S_r + j S_i))`.
pub fn synthesize_output(out: &GeneratorOutput, cfg: &StftConfig) -> Result<Vec<f64>> {
    istft(&output_spectrum(out, cfg)?, cfg)
}
