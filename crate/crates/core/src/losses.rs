//! Reconstruction, hinge adversarial and feature-matching objectives.
//!
//! The `f64` functions over plain slices are the reference definitions; [`ReconLoss`] and
//! the tensor-valued adversarial losses are the differentiable versions used in training.

use candle_core::{DType, Device, Tensor};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::discriminator::DiscOutputs;
use crate::tf::{mel_filterbank, multires_spectra, DiffStft, MultiResSpectrum, Resolution};
use crate::{Error, Result};

/// Offset inside the logarithm of the log-magnitude distance.
pub const LOG_MAG_OFFSET: f64 = 1e-5;
const SQRT_EPS: f64 = 1e-18;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub adv: f64,
    pub feat: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { adv: 1.0, feat: 2.0 }
    }
}

impl LossWeights {
    pub const RECONSTRUCTION_ONLY: LossWeights = LossWeights { adv: 0.0, feat: 0.0 };

    pub fn validate(&self) -> Result<()> {
        if !(self.adv.is_finite() && self.feat.is_finite() && self.adv >= 0.0 && self.feat >= 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0, got {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_t: f64,
    pub l_f: f64,
    pub l_rec: f64,
    pub l_adv: f64,
    pub l_feat: f64,
    pub l_g: f64,
    pub l_d: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.l_t, self.l_f, self.l_rec, self.l_adv, self.l_feat, self.l_g, self.l_d]
            .iter()
            .all(|v| v.is_finite())
    }
}

fn mean_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).mapv(f64::abs).mean().unwrap_or(0.0)
}

fn mean_sq_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).mapv(|d| d * d).mean().unwrap_or(0.0)
}

/// Distance at one resolution: `l1(mel) + ms(mel) + l1(mag) + ms(log(mag + offset))`, each a
/// mean over grid elements.
pub fn spectral_distance(a: &MultiResSpectrum, b: &MultiResSpectrum) -> f64 {
    let log = |m: &Array2<f64>| m.mapv(|v| (v + LOG_MAG_OFFSET).ln());
    mean_abs_diff(&a.mel, &b.mel)
        + mean_sq_diff(&a.mel, &b.mel)
        + mean_abs_diff(&a.magnitude, &b.magnitude)
        + mean_sq_diff(&log(&a.magnitude), &log(&b.magnitude))
}

/// `(L_t, L_f)` for a target `s` and an estimate `s_hat`.
pub fn recon_loss(s: &[f64], s_hat: &[f64], resolutions: &[Resolution], sample_rate: u32) -> Result<(f64, f64)> {
    if s.len() != s_hat.len() {
        return Err(Error::Domain(format!("length mismatch {} vs {}", s.len(), s_hat.len())));
    }
    if s.is_empty() {
        return Err(Error::Domain("empty signals".into()));
    }
    let l_t = s.iter().zip(s_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / s.len() as f64;
    let sa = multires_spectra(s, resolutions, sample_rate)?;
    let sb = multires_spectra(s_hat, resolutions, sample_rate)?;
    let l_f = sa.iter().zip(&sb).map(|(a, b)| spectral_distance(a, b)).sum();
    Ok((l_t, l_f))
}

/// Differentiable [`recon_loss`] over `(B, L)` batches.
#[derive(Debug, Clone)]
pub struct ReconLoss {
    scales: Vec<(DiffStft, Tensor)>,
}

impl ReconLoss {
    pub fn new(resolutions: &[Resolution], sample_rate: u32, dtype: DType, device: &Device) -> Result<Self> {
        if resolutions.is_empty() {
            return Err(Error::Config("empty resolution list".into()));
        }
        let scales = resolutions
            .iter()
            .map(|r| {
                let fb = mel_filterbank(r.mel_bands, r.stft.fft_length, sample_rate)?;
                let (m, f) = fb.dim();
                let fb = Tensor::from_vec(fb.into_raw_vec_and_offset().0, (m, f), device)?.to_dtype(dtype)?;
                Ok((DiffStft::new(r.stft, dtype, device)?, fb))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { scales })
    }

    fn spectra(stft: &DiffStft, fb: &Tensor, wave: &Tensor) -> Result<(Tensor, Tensor)> {
        let (re, im) = stft.forward_framed(wave)?;
        let mag = ((re.sqr()? + im.sqr()?)? + SQRT_EPS)?.sqrt()?;
        let mel = fb.broadcast_matmul(&mag)?;
        Ok((mag, mel))
    }

    /// Scalar tensors `(L_t, L_f)`.
    pub fn forward(&self, s: &Tensor, s_hat: &Tensor) -> Result<(Tensor, Tensor)> {
        if s.dims() != s_hat.dims() {
            return Err(Error::Domain(format!("shape mismatch {:?} vs {:?}", s.dims(), s_hat.dims())));
        }
        let l_t = (s - s_hat)?.abs()?.mean_all()?;
        let mut l_f: Option<Tensor> = None;
        for (stft, fb) in &self.scales {
            let (mag_a, mel_a) = Self::spectra(stft, fb, s)?;
            let (mag_b, mel_b) = Self::spectra(stft, fb, s_hat)?;
            let dmel = (&mel_a - &mel_b)?;
            let dlog = ((mag_a.clone() + LOG_MAG_OFFSET)?.log()? - (mag_b.clone() + LOG_MAG_OFFSET)?.log()?)?;
            let term = (((dmel.abs()?.mean_all()? + dmel.sqr()?.mean_all()?)?
                + (&mag_a - &mag_b)?.abs()?.mean_all()?)?
                + dlog.sqr()?.mean_all()?)?;
            l_f = Some(match l_f {
                Some(acc) => (acc + term)?,
                None => term,
            });
        }
        Ok((l_t, l_f.expect("at least one scale")))
    }
}

fn hinge_mean(scores: &[Tensor], sign: f64) -> Result<Tensor> {
    if scores.is_empty() {
        return Err(Error::Domain("no discriminator outputs".into()));
    }
    let k = scores.len() as f64;
    let mut acc: Option<Tensor> = None;
    for s in scores {
        // [1 - sign * D]_+ averaged over frames (and batch)
        let h = (s.affine(-sign, 1.0)?).relu()?.mean_all()?;
        acc = Some(match acc {
            Some(a) => (a + h)?,
            None => h,
        });
    }
    Ok((acc.unwrap() / k)?)
}

/// `(1/K) sum_k (1/N_k) sum_n [1 - D_kn(s_hat)]_+`.
pub fn adv_gen_loss(fake: &DiscOutputs) -> Result<Tensor> {
    hinge_mean(&fake.scores, 1.0)
}

/// `(1/K) sum_k (1/N_k) sum_n ([1 - D_kn(s)]_+ + [1 + D_kn(s_hat)]_+)`.
pub fn disc_loss(real: &DiscOutputs, fake: &DiscOutputs) -> Result<Tensor> {
    if real.scales() != fake.scales() {
        return Err(Error::Domain(format!(
            "{} real scales vs {} fake scales",
            real.scales(),
            fake.scales()
        )));
    }
    Ok((hinge_mean(&real.scores, 1.0)? + hinge_mean(&fake.scores, -1.0)?)?)
}

/// `(1/(K L)) sum_{k,l} (1/N_k) sum_n ||D^l_kn(s) - D^l_kn(s_hat)||_1`, the within-frame
/// norm taken as a mean over feature elements.
pub fn feat_match_loss(real: &DiscOutputs, fake: &DiscOutputs) -> Result<Tensor> {
    if real.features.len() != fake.features.len() || real.features.is_empty() {
        return Err(Error::Domain("feature scale counts differ".into()));
    }
    let mut acc: Option<Tensor> = None;
    let mut count = 0usize;
    for (fr, ff) in real.features.iter().zip(&fake.features) {
        if fr.len() != ff.len() {
            return Err(Error::Domain("feature layer counts differ".into()));
        }
        for (a, b) in fr.iter().zip(ff) {
            if a.dims() != b.dims() {
                return Err(Error::Domain(format!("feature shapes {:?} vs {:?}", a.dims(), b.dims())));
            }
            let d = (a - b)?.abs()?.mean_all()?;
            acc = Some(match acc {
                Some(x) => (x + d)?,
                None => d,
            });
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Domain("no feature layers".into()));
    }
    Ok((acc.unwrap() / count as f64)?)
}

/// `L_G = L_rec + lambda_adv L_adv + lambda_feat L_feat`.
pub fn total_gen_loss(l_rec: f64, l_adv: f64, l_feat: f64, weights: &LossWeights) -> Result<f64> {
    for (name, v) in [("L_rec", l_rec), ("L_adv", l_adv), ("L_feat", l_feat)] {
        if !v.is_finite() {
            return Err(Error::TrainingFault {
                step: 0,
                reason: format!("{name} is {v}"),
            });
        }
    }
    Ok(l_rec + weights.adv * l_adv + weights.feat * l_feat)
}

/// Tensor form of [`total_gen_loss`]; zero-weight terms are dropped from the graph.
pub fn weighted_gen_loss(l_rec: &Tensor, l_adv: Option<&Tensor>, l_feat: Option<&Tensor>, weights: &LossWeights) -> Result<Tensor> {
    let mut total = l_rec.clone();
    if weights.adv != 0.0 {
        if let Some(a) = l_adv {
            total = (total + (a * weights.adv)?)?;
        }
    }
    if weights.feat != 0.0 {
        if let Some(f) = l_feat {
            total = (total + (f * weights.feat)?)?;
        }
    }
    Ok(total)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}
