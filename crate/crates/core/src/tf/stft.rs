use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;

use super::StftConfig;
use crate::{Error, Result};

/// Complex `F x T` spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub values: Array2<Complex64>,
    pub config: StftConfig,
}

impl ComplexSpectrogram {
    pub fn bins(&self) -> usize {
        self.values.nrows()
    }

    pub fn frames(&self) -> usize {
        self.values.ncols()
    }
}

pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos())
        .collect()
}

/// Frames produced by [`stft`] for `len` samples (no padding).
pub fn frame_count(len: usize, cfg: &StftConfig) -> usize {
    if len < cfg.window_length {
        0
    } else {
        (len - cfg.window_length) / cfg.hop_length + 1
    }
}

/// Zero padding that lets every input sample be covered by full overlap-add weight.
///
/// The signal is shifted by half a window and padded on the right so that
/// `frames = ceil(len / hop) + 1`; frame `t` is centered on sample `t * hop`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FramedLayout {
    pub left: usize,
    pub right: usize,
    pub frames: usize,
}

impl FramedLayout {
    pub fn padded_len(&self, len: usize) -> usize {
        self.left + len + self.right
    }
}

pub fn framed_layout(len: usize, cfg: &StftConfig) -> FramedLayout {
    let frames = len.div_ceil(cfg.hop_length) + 1;
    let padded = (frames - 1) * cfg.hop_length + cfg.window_length;
    let left = cfg.window_length / 2;
    FramedLayout {
        left,
        right: padded - len - left,
        frames,
    }
}

/// Short-time Fourier transform with a periodic Hann analysis window and no padding.
pub fn stft(wave: &[f64], cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    cfg.validate()?;
    if wave.len() < cfg.window_length {
        return Err(Error::Domain(format!(
            "signal of {} samples shorter than the {}-sample window",
            wave.len(),
            cfg.window_length
        )));
    }
    let frames = frame_count(wave.len(), cfg);
    let bins = cfg.bins();
    let win = cfg.window();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.fft_length);
    let mut values = Array2::<Complex64>::zeros((bins, frames));
    let mut buf = vec![Complex64::default(); cfg.fft_length];
    for t in 0..frames {
        buf.fill(Complex64::default());
        let start = t * cfg.hop_length;
        for (i, (b, w)) in buf.iter_mut().zip(&win).enumerate() {
            *b = Complex64::new(wave[start + i] * w, 0.0);
        }
        fft.process(&mut buf);
        for f in 0..bins {
            values[[f, t]] = buf[f];
        }
    }
    Ok(ComplexSpectrogram {
        values,
        config: *cfg,
    })
}

/// Weighted overlap-add inverse of [`stft`]. Returns `(T - 1) * hop + window` samples;
/// samples without any window support are zero.
pub fn istft(spec: &ComplexSpectrogram, cfg: &StftConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let (bins, frames) = spec.values.dim();
    if bins != cfg.bins() {
        return Err(Error::Domain(format!(
            "spectrogram has {bins} bins, config expects {}",
            cfg.bins()
        )));
    }
    if frames == 0 {
        return Err(Error::Domain("empty spectrogram".into()));
    }
    let n = cfg.fft_length;
    let len = (frames - 1) * cfg.hop_length + cfg.window_length;
    let win = cfg.window();
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let mut out = vec![0.0; len];
    let mut env = vec![0.0; len];
    let mut buf = vec![Complex64::default(); n];
    for t in 0..frames {
        for f in 0..bins {
            buf[f] = spec.values[[f, t]];
        }
        // Hermitian completion; DC and Nyquist are taken as real
        buf[0].im = 0.0;
        if n % 2 == 0 {
            buf[n / 2].im = 0.0;
        }
        for f in bins..n {
            buf[f] = buf[n - f].conj();
        }
        ifft.process(&mut buf);
        let start = t * cfg.hop_length;
        for i in 0..cfg.window_length {
            out[start + i] += buf[i].re / n as f64 * win[i];
            env[start + i] += win[i] * win[i];
        }
    }
    for (o, e) in out.iter_mut().zip(&env) {
        *o = if *e > 1e-10 { *o / e } else { 0.0 };
    }
    Ok(out)
}

/// [`stft`] of the signal padded per [`framed_layout`].
pub fn stft_framed(wave: &[f64], cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    if wave.is_empty() {
        return Err(Error::Domain("empty signal".into()));
    }
    let layout = framed_layout(wave.len(), cfg);
    let mut padded = vec![0.0; layout.padded_len(wave.len())];
    padded[layout.left..layout.left + wave.len()].copy_from_slice(wave);
    stft(&padded, cfg)
}

/// Inverse of [`stft_framed`], trimmed to `len` samples.
pub fn istft_framed(spec: &ComplexSpectrogram, cfg: &StftConfig, len: usize) -> Result<Vec<f64>> {
    let layout = framed_layout(len, cfg);
    if layout.frames != spec.frames() {
        return Err(Error::Domain(format!(
            "{} frames cannot produce {len} samples (expected {})",
            spec.frames(),
            layout.frames
        )));
    }
    let full = istft(spec, cfg)?;
    Ok(full[layout.left..layout.left + len].to_vec())
}
