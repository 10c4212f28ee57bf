//! U-Net generator over the `3M x F x T` magnitude/phase grid.
//!
//! The encoder halves the frequency axis in every block and conditions the result on the
//! direction of arrival and, depending on the mode, on discriminative features. The latent
//! `C_L x T` sequence is modulated by a DoA FiLM and refined by a residual LSTM stack. The
//! decoder mirrors the encoder; every skip connection modulates the decoder state through
//! a FiLM whose parameters are predicted from the conditioned encoder features.

use candle_core::{DType, Device, Tensor, D};
use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conditioning::{film, ConditionedBlock, ConditioningMode, SpatialConditioning};
use crate::nn::{elu, Conv2d, Conv2dSpec, Linear, Lstm, ParamBuilder, ParamStore, UpConv2d};
use crate::tf::{assemble_input_framed, istft_framed, output_spectrum, GeneratorOutput, StftConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub mode: ConditioningMode,
    /// Number of DoA grid directions `D`.
    pub directions: usize,
    pub mics: usize,
    pub stft: StftConfig,
    /// Channels of the full-resolution input/output convolutions.
    pub pre_channels: usize,
    /// Output channels of each encoder block; the decoder mirrors the list.
    pub channels: Vec<usize>,
    pub latent: usize,
    pub lstm_layers: usize,
    pub weight_norm: bool,
    /// Adds the reference-microphone spectrum to the output grid so the network
    /// predicts a correction of the mixture.
    pub mixture_skip: bool,
    /// `(C', F')` of the discriminative features; required by modes that use them.
    pub feature_shape: Option<(usize, usize)>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self::desk(ConditioningMode::XPhi, 72)
    }
}

impl GeneratorConfig {
    /// Tested desk profile: 4 blocks, at most 64 channels, 64 latent channels.
    pub fn desk(mode: ConditioningMode, directions: usize) -> Self {
        Self {
            mode,
            directions,
            mics: 3,
            stft: StftConfig::generator(),
            pre_channels: 16,
            channels: vec![16, 32, 64, 64],
            latent: 64,
            lstm_layers: 2,
            weight_norm: true,
            mixture_skip: true,
            feature_shape: None,
        }
    }

    /// Eight blocks up to 384 channels with a 256-channel latent.
    pub fn paper(mode: ConditioningMode, directions: usize) -> Self {
        Self {
            pre_channels: 32,
            channels: vec![32, 64, 64, 128, 128, 256, 256, 384],
            latent: 256,
            ..Self::desk(mode, directions)
        }
    }

    /// Smallest useful profile, for numerical checks.
    pub fn tiny(mode: ConditioningMode, directions: usize) -> Self {
        Self {
            stft: StftConfig::new(32, 32, 8),
            pre_channels: 3,
            channels: vec![4, 4],
            latent: 5,
            lstm_layers: 1,
            ..Self::desk(mode, directions)
        }
    }

    pub fn blocks(&self) -> usize {
        self.channels.len()
    }

    pub fn input_channels(&self) -> usize {
        3 * self.mics
    }

    /// Frequency rows before the first block and after each block.
    pub fn freq_schedule(&self) -> Vec<usize> {
        let mut f = vec![self.stft.bins()];
        for _ in 0..self.blocks() {
            let last = *f.last().unwrap();
            f.push((last - 1) / 2 + 1);
        }
        f
    }

    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::Config("generator needs at least one nonempty block".into()));
        }
        if self.mics == 0 || self.directions == 0 || self.latent == 0 || self.pre_channels == 0 {
            return Err(Error::Config("generator dimensions must be positive".into()));
        }
        let f = self.freq_schedule();
        if f.windows(2).any(|w| w[0] < 2 || w[1] >= w[0]) {
            return Err(Error::Config(format!(
                "{} blocks cannot halve {} frequency rows",
                self.blocks(),
                self.stft.bins()
            )));
        }
        if self.mode.uses_features() && self.feature_shape.is_none() {
            return Err(Error::Config(format!("mode {} needs feature_shape", self.mode)));
        }
        Ok(())
    }
}

/// Conditioned encoder outputs kept for the decoder skips.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    pub blocks: Vec<ConditionedBlock>,
    /// `(B, C_L, T)`.
    pub latent: Tensor,
}

#[derive(Debug, Clone)]
struct EncoderBlock {
    down: Conv2d,
    cond: SpatialConditioning,
}

#[derive(Debug, Clone)]
struct DecoderBlock {
    gamma: Conv2d,
    beta: Conv2d,
    up: UpConv2d,
}

#[derive(Debug, Clone)]
pub struct Generator {
    config: GeneratorConfig,
    freqs: Vec<usize>,
    pre: Conv2d,
    encoder: Vec<EncoderBlock>,
    to_latent: Linear,
    film_gamma: Linear,
    film_beta: Linear,
    lstms: Vec<Lstm>,
    lstm_out: Linear,
    from_latent: Linear,
    decoder: Vec<DecoderBlock>,
    post: Conv2d,
}

impl Generator {
    /// Builds the network, registering its parameters under `pb`'s prefix.
    pub fn new(config: GeneratorConfig, pb: &mut ParamBuilder) -> Result<Self> {
        config.validate()?;
        let freqs = config.freq_schedule();
        let wn = config.weight_norm;
        let pre = Conv2d::new(
            Conv2dSpec::same(config.input_channels(), config.pre_channels, 3).with_weight_norm(wn),
            &mut pb.pp("pre"),
        )?;
        let mut encoder = Vec::new();
        let mut c_in = config.pre_channels;
        for (r, &c) in config.channels.iter().enumerate() {
            let mut bp = pb.pp(&format!("enc{r}"));
            let down = Conv2d::new(
                Conv2dSpec::same(c_in, c, 3).with_stride_f(2).with_weight_norm(wn),
                &mut bp.pp("down"),
            )?;
            let cond = SpatialConditioning::new(
                config.mode,
                config.directions,
                c,
                freqs[r + 1],
                config.feature_shape,
                wn,
                &mut bp.pp("cond"),
            )?;
            encoder.push(EncoderBlock { down, cond });
            c_in = c;
        }
        let c_last = *config.channels.last().unwrap();
        let f_last = *freqs.last().unwrap();
        let flat = c_last * f_last;
        let mut bn = pb.pp("bottleneck");
        let to_latent = Linear::new(flat, config.latent, true, &mut bn.pp("in"))?;
        let film_gamma = Linear::new(config.directions, config.latent, true, &mut bn.pp("film_gamma"))?;
        let film_beta = Linear::new(config.directions, config.latent, true, &mut bn.pp("film_beta"))?;
        let lstms = (0..config.lstm_layers)
            .map(|i| Lstm::new(config.latent, config.latent, &mut bn.pp(&format!("lstm{i}"))))
            .collect::<Result<Vec<_>>>()?;
        let lstm_out = Linear::zeros(config.latent, config.latent, &mut bn.pp("lstm_out"))?;
        let from_latent = Linear::new(config.latent, flat, true, &mut bn.pp("out"))?;
        let mut decoder = Vec::new();
        for r in (0..config.blocks()).rev() {
            let c = config.channels[r];
            let c_out = if r == 0 { config.pre_channels } else { config.channels[r - 1] };
            let mut bp = pb.pp(&format!("dec{r}"));
            let gamma = Conv2d::zeros(Conv2dSpec::same(2 * c, c, 3), &mut bp.pp("gamma"))?;
            let beta = Conv2d::zeros(Conv2dSpec::same(2 * c, c, 3), &mut bp.pp("beta"))?;
            let up = UpConv2d::new(c, c_out, wn, &mut bp.pp("up"))?;
            decoder.push(DecoderBlock { gamma, beta, up });
        }
        let post = Conv2d::new(
            Conv2dSpec::same(config.pre_channels, 3, 3).with_weight_norm(wn),
            &mut pb.pp("post"),
        )?;
        Ok(Self {
            config,
            freqs,
            pre,
            encoder,
            to_latent,
            film_gamma,
            film_beta,
            lstms,
            lstm_out,
            from_latent,
            decoder,
            post,
        })
    }

    /// Fresh parameter store seeded with `seed`.
    pub fn init(config: GeneratorConfig, seed: u64, dtype: DType, device: &Device) -> Result<(Self, ParamStore)> {
        let mut store = ParamStore::new(dtype, device);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Self::new(config, &mut ParamBuilder::new(&mut store, &mut rng))?;
        Ok((g, store))
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    /// Zeroes the codes in modes that do not use the direction, so the result cannot
    /// depend on it.
    fn effective_codes(&self, codes: &Tensor) -> Result<Tensor> {
        if codes.dim(D::Minus1)? != self.config.directions {
            return Err(Error::Config(format!(
                "DoA codes have {} entries, generator expects {}",
                codes.dim(D::Minus1)?,
                self.config.directions
            )));
        }
        if self.config.mode.uses_doa() {
            Ok(codes.clone())
        } else {
            Ok(codes.zeros_like()?)
        }
    }

    /// `x`: `(B, 3M, F, T)`; `codes`: `(B, D)`; `features`: `(B, C', F', T')`.
    pub fn encode(&self, x: &Tensor, codes: &Tensor, features: Option<&Tensor>) -> Result<EncoderTrace> {
        let (b, c, f, t) = x.dims4()?;
        if c != self.config.input_channels() || f != self.freqs[0] {
            return Err(Error::Config(format!(
                "input grid ({c}, {f}, {t}) does not match ({}, {}, T)",
                self.config.input_channels(),
                self.freqs[0]
            )));
        }
        let codes = self.effective_codes(codes)?;
        let features = if self.config.mode.uses_features() {
            Some(features.ok_or_else(|| {
                Error::Config(format!("mode {} requires discriminative features", self.config.mode))
            })?)
        } else {
            None
        };
        let mut h = self.pre.forward(x)?;
        let mut blocks = Vec::with_capacity(self.encoder.len());
        for block in &self.encoder {
            let e = block.down.forward(&elu(&h)?)?;
            let out = block.cond.forward(&e, &codes, features)?;
            h = out.conditioned.clone();
            blocks.push(out);
        }
        let (_, cr, fr, _) = h.dims4()?;
        let flat = h.permute((0, 3, 1, 2))?.reshape((b, t, cr * fr))?;
        let latent = self.to_latent.forward(&flat)?.transpose(1, 2)?;
        Ok(EncoderTrace { blocks, latent })
    }

    /// DoA FiLM (`gamma = relu`, `beta = tanh`) followed by the residual LSTM stack.
    /// Returns `(B, C_L, T)`.
    pub fn bottleneck(&self, latent: &Tensor, codes: &Tensor) -> Result<Tensor> {
        let codes = self.effective_codes(codes)?;
        let gamma = self.film_gamma.forward(&codes)?.relu()?.unsqueeze(2)?;
        let beta = self.film_beta.forward(&codes)?.tanh()?.unsqueeze(2)?;
        let g = film(latent, &gamma, &beta)?;
        let mut seq = g.transpose(1, 2)?.contiguous()?;
        let skip = seq.clone();
        for lstm in &self.lstms {
            seq = lstm.forward(&seq)?;
        }
        let out = (skip + self.lstm_out.forward(&seq)?)?;
        Ok(out.transpose(1, 2)?)
    }

    /// Decoder from the modulated latent back to the `(B, 3, F, T)` grid (before the
    /// optional mixture skip).
    pub fn decode(&self, trace: &EncoderTrace, latent: &Tensor) -> Result<Tensor> {
        let (b, _, t) = latent.dims3()?;
        let c_last = *self.config.channels.last().unwrap();
        let f_last = *self.freqs.last().unwrap();
        let mut h = self
            .from_latent
            .forward(&latent.transpose(1, 2)?)?
            .reshape((b, t, c_last, f_last))?
            .permute((0, 2, 3, 1))?
            .contiguous()?;
        for (i, block) in self.decoder.iter().enumerate() {
            let r = self.config.blocks() - 1 - i;
            let skip = &trace.blocks[r];
            let cond = Tensor::cat(&[&skip.doa_plane, &skip.conditioned], 1)?;
            let gamma = block.gamma.forward(&cond)?;
            let beta = block.beta.forward(&cond)?;
            h = film(&h, &gamma, &beta)?;
            h = block.up.forward(&elu(&h)?, self.freqs[r])?;
        }
        self.post.forward(&elu(&h)?)
    }

    /// Full grid-to-grid pass. `x` is the generator input grid.
    pub fn forward(&self, x: &Tensor, codes: &Tensor, features: Option<&Tensor>) -> Result<Tensor> {
        let trace = self.encode(x, codes, features)?;
        let latent = self.bottleneck(&trace.latent, codes)?;
        let out = self.decode(&trace, &latent)?;
        if self.config.mixture_skip {
            Ok((out + mixture_prior(x, self.config.mics)?)?)
        } else {
            Ok(out)
        }
    }

    /// Waveform-level inference: `(M, L)` mixture to the length-`L` estimate.
    pub fn extract(
        &self,
        mixture: &Array2<f64>,
        doa_index: usize,
        features: Option<&Tensor>,
        store: &ParamStore,
    ) -> Result<Vec<f64>> {
        if mixture.nrows() != self.config.mics {
            return Err(Error::Config(format!(
                "mixture has {} channels, generator expects {}",
                mixture.nrows(),
                self.config.mics
            )));
        }
        let dev = store.device();
        let dtype = store.dtype();
        let feats = assemble_input_framed(mixture, &self.config.stft)?;
        let x = array3_to_tensor(&feats.values, dtype, dev)?.unsqueeze(0)?;
        let code = crate::conditioning::encode_doa(doa_index, self.config.directions)?;
        let codes = crate::conditioning::DoAOneHot::batch(&[code], dtype, dev)?;
        let features = features.map(|f| f.to_dtype(dtype)).transpose()?;
        let out = self.forward(&x, &codes, features.as_ref())?.squeeze(0)?;
        let values = tensor_to_array3(&out)?;
        let spec = output_spectrum(&GeneratorOutput { values }, &self.config.stft)?;
        istft_framed(&spec, &self.config.stft, mixture.ncols())
    }
}

/// `[softplus^-1(|X_0|), Re X_0/|X_0|, Im X_0/|X_0|]` of the reference microphone, read off
/// the input grid. Carries no gradient.
pub fn mixture_prior(x: &Tensor, mics: usize) -> Result<Tensor> {
    let x = x.detach();
    let log_mag = x.narrow(1, 0, 1)?;
    let re = x.narrow(1, mics, 1)?;
    let im = x.narrow(1, 2 * mics, 1)?;
    let mag = log_mag.exp()?;
    // softplus^-1(y) = ln(e^y - 1) ~ ln y + y/2 for small y
    let small = (&log_mag + (&mag * 0.5)?)?;
    let large = (mag.maximum(1e-2)?.exp()? - 1.0)?.log()?;
    let pick = mag.lt(1e-2)?;
    let inv = pick.where_cond(&small, &large)?;
    Ok(Tensor::cat(&[&inv, &re, &im], 1)?)
}

pub fn array3_to_tensor(a: &Array3<f64>, dtype: DType, device: &Device) -> Result<Tensor> {
    let (c, f, t) = a.dim();
    let data: Vec<f64> = a.iter().copied().collect();
    Ok(Tensor::from_vec(data, (c, f, t), device)?.to_dtype(dtype)?)
}

pub fn tensor_to_array3(t: &Tensor) -> Result<Array3<f64>> {
    let (c, f, n) = t.dims3()?;
    let data = t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    Array3::from_shape_vec((c, f, n), data).map_err(|e| Error::Domain(e.to_string()))
}
