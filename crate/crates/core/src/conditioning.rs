//! Spatial conditioning primitives: DoA one-hot codes and their per-block projections,
//! alignment of discriminative features to the encoder grid, channel-softmax spatial
//! attention, bounded-mask fusion and FiLM.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::nn::{sigmoid, softmax, Conv2d, Conv2dSpec, Linear, ParamBuilder};
use crate::{Error, Result};

/// Which conditions the generator receives besides the mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditioningMode {
    /// Mixture and direction of arrival.
    XPhi,
    /// Mixture and discriminative features.
    XDl,
    /// Mixture, direction of arrival and discriminative features.
    XPhiDl,
}

impl ConditioningMode {
    pub const ALL: [ConditioningMode; 3] = [Self::XPhi, Self::XDl, Self::XPhiDl];

    pub fn uses_doa(self) -> bool {
        matches!(self, Self::XPhi | Self::XPhiDl)
    }

    pub fn uses_features(self) -> bool {
        matches!(self, Self::XDl | Self::XPhiDl)
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::XPhi => "X,phi",
            Self::XDl => "X,D_L",
            Self::XPhiDl => "X,phi,D_L",
        }
    }
}

impl std::fmt::Display for ConditioningMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for ConditioningMode {
    type Err = Error;
    /// Accepts the snake_case config names (`x_phi`, `x_dl`, `x_phi_dl`).
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x_phi" => Ok(Self::XPhi),
            "x_dl" => Ok(Self::XDl),
            "x_phi_dl" => Ok(Self::XPhiDl),
            other => Err(Error::Config(format!("unknown conditioning mode {other}"))),
        }
    }
}

/// One-hot direction code over `D` grid directions.
#[derive(Debug, Clone, PartialEq)]
pub struct DoAOneHot {
    pub index: usize,
    pub vector: Vec<f64>,
}

impl DoAOneHot {
    pub fn directions(&self) -> usize {
        self.vector.len()
    }

    pub fn degrees(&self, resolution: f64) -> f64 {
        self.index as f64 * resolution
    }

    /// `(B, D)` tensor of stacked codes.
    pub fn batch(codes: &[DoAOneHot], dtype: DType, device: &Device) -> Result<Tensor> {
        let d = codes.first().map(|c| c.directions()).unwrap_or(0);
        let data: Vec<f64> = codes.iter().flat_map(|c| c.vector.iter().copied()).collect();
        Ok(Tensor::from_vec(data, (codes.len(), d), device)?.to_dtype(dtype)?)
    }
}

pub fn encode_doa(index: usize, directions: usize) -> Result<DoAOneHot> {
    if index >= directions {
        return Err(Error::Domain(format!(
            "DoA index {index} outside 0..{directions}"
        )));
    }
    let mut vector = vec![0.0; directions];
    vector[index] = 1.0;
    Ok(DoAOneHot { index, vector })
}

/// Intermediate features of a discriminative model, `(B, C', F', T')`.
#[derive(Debug, Clone)]
pub struct CondFeatures {
    pub values: Tensor,
    pub provider: String,
    pub tap: String,
}

/// Linear map from the one-hot code to a `C_r x F_r` plane, repeated over time.
#[derive(Debug, Clone)]
pub struct DoaProjection {
    linear: Linear,
    channels: usize,
    freqs: usize,
}

impl DoaProjection {
    pub fn new(directions: usize, channels: usize, freqs: usize, pb: &mut ParamBuilder) -> Result<Self> {
        Ok(Self {
            linear: Linear::new(directions, channels * freqs, true, pb)?,
            channels,
            freqs,
        })
    }

    /// `(B, D)` codes to `(B, C_r, F_r, T)`; every frame is identical.
    pub fn forward(&self, codes: &Tensor, frames: usize) -> Result<Tensor> {
        let b = codes.dim(0)?;
        let plane = self
            .linear
            .forward(codes)
            .map_err(|e| Error::Config(format!("DoA projection: {e}")))?
            .reshape((b, self.channels, self.freqs, 1))?;
        Ok(plane
            .broadcast_as((b, self.channels, self.freqs, frames))?
            .contiguous()?)
    }
}

/// `(n_in, n_out)` linear interpolation matrix with aligned end points.
pub fn interpolation_matrix(n_in: usize, n_out: usize) -> Vec<f64> {
    let mut m = vec![0.0; n_in * n_out];
    for j in 0..n_out {
        let u = if n_out == 1 || n_in == 1 {
            0.0
        } else {
            j as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
        };
        let i0 = (u.floor() as usize).min(n_in - 1);
        let i1 = (i0 + 1).min(n_in - 1);
        let w = u - i0 as f64;
        m[i0 * n_out + j] += 1.0 - w;
        if i1 != i0 {
            m[i1 * n_out + j] += w;
        }
    }
    m
}

/// Linear interpolation of the last axis of `x` to `n_out` samples.
pub fn interpolate_last(x: &Tensor, n_out: usize) -> Result<Tensor> {
    let dims = x.dims().to_vec();
    let n_in = *dims.last().ok_or_else(|| Error::Domain("scalar input".into()))?;
    if n_in == n_out {
        return Ok(x.clone());
    }
    if n_in == 0 {
        return Err(Error::Domain("cannot interpolate an empty axis".into()));
    }
    let m = Tensor::from_vec(interpolation_matrix(n_in, n_out), (n_in, n_out), x.device())?
        .to_dtype(x.dtype())?;
    let rows: usize = dims[..dims.len() - 1].iter().product();
    let mut out_dims = dims.clone();
    *out_dims.last_mut().unwrap() = n_out;
    Ok(x.reshape((rows, n_in))?.matmul(&m)?.reshape(out_dims)?)
}

/// Brings `(B, C', F', T')` features onto a `(B, C_r, F_r, T)` encoder grid: linear
/// interpolation along time, then a frequency-strided convolution.
#[derive(Debug, Clone)]
pub struct CondAligner {
    conv: Conv2d,
    in_freqs: usize,
    out_freqs: usize,
}

impl CondAligner {
    pub fn new(
        in_channels: usize,
        in_freqs: usize,
        out_channels: usize,
        out_freqs: usize,
        pb: &mut ParamBuilder,
    ) -> Result<Self> {
        if in_freqs == 0 || out_freqs == 0 {
            return Err(Error::Config("empty frequency axis".into()));
        }
        let src = in_freqs.max(out_freqs);
        let stride = ((src as f64 / out_freqs as f64).round() as usize).max(1);
        let mut kf = if stride > 1 { stride + 1 } else { 3 };
        let mut total = (out_freqs - 1) * stride + kf;
        if total < src {
            kf += src - total;
            total = (out_freqs - 1) * stride + kf;
        }
        let pad = total - src;
        let spec = Conv2dSpec {
            in_channels,
            out_channels,
            kernel: (kf, 3),
            stride_f: stride,
            pad_f: (pad / 2, pad - pad / 2),
            pad_t: 1,
            weight_norm: false,
            bias: true,
        };
        debug_assert_eq!(spec.output_freq(src), out_freqs);
        Ok(Self {
            conv: Conv2d::new(spec, pb)?,
            in_freqs,
            out_freqs,
        })
    }

    pub fn forward(&self, features: &Tensor, frames: usize) -> Result<Tensor> {
        let (_, _, f, _) = features.dims4()?;
        if f != self.in_freqs {
            return Err(Error::Config(format!(
                "features have {f} frequency rows, aligner expects {}",
                self.in_freqs
            )));
        }
        let mut x = interpolate_last(features, frames)?;
        if self.in_freqs < self.out_freqs {
            x = interpolate_last(&x.transpose(2, 3)?.contiguous()?, self.out_freqs)?
                .transpose(2, 3)?
                .contiguous()?;
        }
        self.conv.forward(&x)
    }
}

/// Query of the attention for a conditioning mode. Terms not used by the mode are zero;
/// a term the mode needs but that is absent is a configuration error.
pub fn attention_query(
    mode: ConditioningMode,
    doa_plane: Option<&Tensor>,
    feature_plane: Option<&Tensor>,
) -> Result<Tensor> {
    let need = |t: Option<&Tensor>, what: &str| {
        t.cloned()
            .ok_or_else(|| Error::Config(format!("mode {mode} requires {what}")))
    };
    match mode {
        ConditioningMode::XPhi => need(doa_plane, "a DoA"),
        ConditioningMode::XDl => need(feature_plane, "discriminative features"),
        ConditioningMode::XPhiDl => {
            Ok((need(feature_plane, "discriminative features")? + need(doa_plane, "a DoA")?)?)
        }
    }
}

/// `A = softmax_C((query * E') / sqrt(C)) * E'`, softmax over the channel axis of
/// `(B, C, F, T)` grids.
pub fn spatial_attention(projected: &Tensor, query: &Tensor) -> Result<Tensor> {
    if projected.dims() != query.dims() {
        return Err(Error::Config(format!(
            "attention query {:?} does not match features {:?}",
            query.dims(),
            projected.dims()
        )));
    }
    let c = projected.dim(1)? as f64;
    let logits = ((query * projected)? / c.sqrt())?;
    Ok((softmax(&logits, 1)? * projected)?)
}

/// `M = 2 sigmoid(logits)`, `E* = E * M + A`. Returns `(E*, M)`.
pub fn fuse_mask(encoder: &Tensor, attention: &Tensor, mask_logits: &Tensor) -> Result<(Tensor, Tensor)> {
    if encoder.dims() != attention.dims() || encoder.dims() != mask_logits.dims() {
        return Err(Error::Domain("mask fusion inputs differ in shape".into()));
    }
    let mask = (sigmoid(mask_logits)? * 2.0)?;
    Ok((((encoder * &mask)? + attention)?, mask))
}

/// `y = x + (gamma * x + beta)` with broadcasting.
pub fn film(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
    let scaled = x
        .broadcast_mul(gamma)
        .and_then(|gx| gx.broadcast_add(beta))
        .map_err(|e| Error::Domain(format!("FiLM parameters do not broadcast to {:?}: {e}", x.dims())))?;
    if scaled.dims() != x.dims() {
        return Err(Error::Domain(format!(
            "FiLM parameters expand {:?} to {:?}",
            x.dims(),
            scaled.dims()
        )));
    }
    Ok((x + scaled)?)
}

/// Per-block spatial conditioning: 1x1 projection `E'`, DoA plane `P`, aligned features,
/// channel-softmax attention and the 3x3 mask head.
#[derive(Debug, Clone)]
pub struct SpatialConditioning {
    key_proj: Conv2d,
    doa: DoaProjection,
    aligner: Option<CondAligner>,
    mask_head: Conv2d,
    mode: ConditioningMode,
}

/// Outputs of one conditioning block.
#[derive(Debug, Clone)]
pub struct ConditionedBlock {
    pub conditioned: Tensor,
    pub doa_plane: Tensor,
    pub mask: Tensor,
}

impl SpatialConditioning {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mode: ConditioningMode,
        directions: usize,
        channels: usize,
        freqs: usize,
        feature_shape: Option<(usize, usize)>,
        weight_norm: bool,
        pb: &mut ParamBuilder,
    ) -> Result<Self> {
        let key_proj = Conv2d::new(
            Conv2dSpec::same(channels, channels, 1).with_weight_norm(weight_norm),
            &mut pb.pp("key"),
        )?;
        let doa = DoaProjection::new(directions, channels, freqs, &mut pb.pp("doa"))?;
        let aligner = match (mode.uses_features(), feature_shape) {
            (true, Some((c, f))) => Some(CondAligner::new(c, f, channels, freqs, &mut pb.pp("align"))?),
            (true, None) => {
                return Err(Error::Config(format!("mode {mode} needs a feature shape")))
            }
            (false, _) => None,
        };
        let mask_head = Conv2d::new(
            Conv2dSpec::same(channels, channels, 3).with_weight_norm(weight_norm),
            &mut pb.pp("mask"),
        )?;
        Ok(Self {
            key_proj,
            doa,
            aligner,
            mask_head,
            mode,
        })
    }

    /// `codes` is `(B, D)`; zero codes stand for an absent DoA.
    pub fn forward(&self, encoder: &Tensor, codes: &Tensor, features: Option<&Tensor>) -> Result<ConditionedBlock> {
        let frames = encoder.dim(3)?;
        let projected = self.key_proj.forward(encoder)?;
        let doa_plane = self.doa.forward(codes, frames)?;
        let feature_plane = match (&self.aligner, features) {
            (Some(a), Some(f)) => Some(a.forward(f, frames)?),
            (Some(_), None) => {
                return Err(Error::Config(format!(
                    "mode {} requires discriminative features",
                    self.mode
                )))
            }
            (None, _) => None,
        };
        let query = attention_query(
            self.mode,
            self.mode.uses_doa().then_some(&doa_plane),
            feature_plane.as_ref(),
        )?;
        let attention = spatial_attention(&projected, &query)?;
        let logits = self.mask_head.forward(&attention)?;
        let (conditioned, mask) = fuse_mask(encoder, &attention, &logits)?;
        Ok(ConditionedBlock {
            conditioned,
            doa_plane,
            mask,
        })
    }
}
