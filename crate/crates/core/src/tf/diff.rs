//! STFT / inverse STFT as differentiable tensor programs: framing by index gathering,
//! the DFT as a matrix product, and overlap-add by index accumulation.

use candle_core::{DType, Device, Tensor};

use super::{framed_layout, frame_count, StftConfig};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct DiffStft {
    cfg: StftConfig,
    /// `window x 2F`: analysis window folded into `[cos | -sin]`.
    forward_basis: Tensor,
    /// `2F x window`: real inverse DFT rows with the synthesis window folded in.
    inverse_basis: Tensor,
    dtype: DType,
    device: Device,
}

impl DiffStft {
    pub fn new(cfg: StftConfig, dtype: DType, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.fft_length;
        let bins = cfg.bins();
        let wl = cfg.window_length;
        let win = cfg.window();
        let tau = std::f64::consts::TAU;
        let mut fwd = vec![0.0f64; wl * 2 * bins];
        for i in 0..wl {
            for k in 0..bins {
                let a = tau * (k * i % n) as f64 / n as f64;
                fwd[i * 2 * bins + k] = win[i] * a.cos();
                fwd[i * 2 * bins + bins + k] = -win[i] * a.sin();
            }
        }
        let mut inv = vec![0.0f64; 2 * bins * wl];
        for k in 0..bins {
            let edge = k == 0 || (n % 2 == 0 && k == n / 2);
            let weight = if edge { 1.0 } else { 2.0 } / n as f64;
            for i in 0..wl {
                let a = tau * (k * i % n) as f64 / n as f64;
                inv[k * wl + i] = weight * a.cos() * win[i];
                inv[(bins + k) * wl + i] = if edge { 0.0 } else { -weight * a.sin() * win[i] };
            }
        }
        Ok(Self {
            cfg,
            forward_basis: Tensor::from_vec(fwd, (wl, 2 * bins), device)?.to_dtype(dtype)?,
            inverse_basis: Tensor::from_vec(inv, (2 * bins, wl), device)?.to_dtype(dtype)?,
            dtype,
            device: device.clone(),
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    fn frame_index(&self, frames: usize) -> Result<Tensor> {
        let wl = self.cfg.window_length;
        let hop = self.cfg.hop_length;
        let idx: Vec<u32> = (0..frames)
            .flat_map(|t| (0..wl).map(move |i| (t * hop + i) as u32))
            .collect();
        Ok(Tensor::from_vec(idx, frames * wl, &self.device)?)
    }

    fn analyze(&self, wave: &Tensor, frames: usize) -> Result<(Tensor, Tensor)> {
        let (b, _) = wave.dims2()?;
        let wl = self.cfg.window_length;
        let bins = self.cfg.bins();
        let frames_t = wave
            .index_select(&self.frame_index(frames)?, 1)?
            .reshape((b * frames, wl))?;
        let spec = frames_t
            .matmul(&self.forward_basis)?
            .reshape((b, frames, 2 * bins))?
            .transpose(1, 2)?;
        let re = spec.narrow(1, 0, bins)?.contiguous()?;
        let im = spec.narrow(1, bins, bins)?.contiguous()?;
        Ok((re, im))
    }

    /// Unpadded STFT of `(B, L)` waves: real and imaginary parts, each `(B, F, T)`.
    pub fn forward(&self, wave: &Tensor) -> Result<(Tensor, Tensor)> {
        let (_, len) = wave.dims2()?;
        if len < self.cfg.window_length {
            return Err(Error::Domain(format!(
                "signal of {len} samples shorter than the {}-sample window",
                self.cfg.window_length
            )));
        }
        self.analyze(wave, frame_count(len, &self.cfg))
    }

    /// STFT after the zero padding of [`framed_layout`]; `T = ceil(L / hop) + 1`.
    pub fn forward_framed(&self, wave: &Tensor) -> Result<(Tensor, Tensor)> {
        let (_, len) = wave.dims2()?;
        let layout = framed_layout(len, &self.cfg);
        let padded = wave.pad_with_zeros(1, layout.left, layout.right)?;
        self.analyze(&padded, layout.frames)
    }

    /// Inverse of [`Self::forward_framed`]: `(B, F, T)` parts back to `(B, len)` waves.
    pub fn inverse_framed(&self, re: &Tensor, im: &Tensor, len: usize) -> Result<Tensor> {
        let (b, bins, frames) = re.dims3()?;
        if bins != self.cfg.bins() || im.dims3()? != (b, bins, frames) {
            return Err(Error::Domain(format!(
                "spectrum {:?}/{:?} does not match {} bins",
                re.dims(),
                im.dims(),
                self.cfg.bins()
            )));
        }
        let layout = framed_layout(len, &self.cfg);
        if layout.frames != frames {
            return Err(Error::Domain(format!(
                "{frames} frames cannot produce {len} samples (expected {})",
                layout.frames
            )));
        }
        let wl = self.cfg.window_length;
        let padded_len = layout.padded_len(len);
        let frames_t = Tensor::cat(&[re, im], 1)?
            .transpose(1, 2)?
            .reshape((b * frames, 2 * bins))?
            .matmul(&self.inverse_basis)?
            .reshape((b, frames * wl))?;
        let out = Tensor::zeros((b, padded_len), self.dtype, &self.device)?.index_add(
            &self.frame_index(frames)?,
            &frames_t,
            1,
        )?;
        let norm = Tensor::from_vec(self.inverse_envelope(frames, padded_len), padded_len, &self.device)?
            .to_dtype(self.dtype)?;
        Ok(out
            .broadcast_mul(&norm)?
            .narrow(1, layout.left, len)?
            .contiguous()?)
    }

    fn inverse_envelope(&self, frames: usize, len: usize) -> Vec<f64> {
        let win = self.cfg.window();
        let mut env = vec![0.0; len];
        for t in 0..frames {
            for (i, w) in win.iter().enumerate() {
                env[t * self.cfg.hop_length + i] += w * w;
            }
        }
        env.into_iter()
            .map(|e| if e > 1e-10 { 1.0 / e } else { 0.0 })
            .collect()
    }
}
