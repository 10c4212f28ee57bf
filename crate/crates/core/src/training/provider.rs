//! Discriminative feature providers.
//!
//! [`ToySpatialFilter`] is a small steerable mask estimator over the 512/512/256 STFT grid.
//! Its input combines the reference log-magnitude with an angle feature that compares the
//! observed inter-microphone phase differences against those expected for the steering
//! direction. The tap point is the output of the frequency LSTM.

use candle_core::{DType, Device, Tensor};
use ndarray::{Array2, Array3, Axis};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conditioning::CondFeatures;
use crate::generator::array3_to_tensor;
use crate::nn::{elu, sigmoid, Conv2d, Conv2dSpec, Lstm, ParamBuilder, ParamStore};
use crate::scene::ArrayPose;
use crate::tf::{stft_framed, StftConfig, MAG_FLOOR};
use crate::{Error, Result, SAMPLE_RATE, SPEED_OF_SOUND};

/// Source of conditioning features `D_L`. Implementations are frozen: extraction is
/// deterministic and never records gradients.
pub trait FeatureProvider {
    fn id(&self) -> &str;
    fn tap(&self) -> &str;
    fn sample_rate(&self) -> u32;
    /// `(C', F')` of the features.
    fn feature_shape(&self) -> (usize, usize);
    /// Features for an `M x L` mixture steered to `doa_index`; values are `(1, C', F', T')`.
    fn extract(&self, mixture: &Array2<f64>, doa_index: usize) -> Result<CondFeatures>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub stft: StftConfig,
    pub mics: usize,
    pub array_diameter: f64,
    pub directions: usize,
    pub channels: usize,
    pub hidden: usize,
    pub sample_rate: u32,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig::provider(),
            mics: 3,
            array_diameter: 0.1,
            directions: 72,
            channels: 8,
            hidden: 8,
            sample_rate: SAMPLE_RATE,
        }
    }
}

impl ProviderConfig {
    pub fn input_channels(&self) -> usize {
        2 + 2 * (self.mics - 1)
    }

    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        if self.mics < 2 {
            return Err(Error::Config("the spatial filter needs at least two microphones".into()));
        }
        if self.directions == 0 || 360 % self.directions != 0 || self.channels == 0 || self.hidden == 0 {
            return Err(Error::Config(format!("invalid provider dimensions {self:?}")));
        }
        Ok(())
    }
}

/// Steerable input grid `(2 + 2(M-1), F, T)`: `log|X_0|`, the angle feature, then cos/sin of
/// the phase differences between microphone 0 and every other microphone.
pub fn spatial_input(mixture: &Array2<f64>, doa_index: usize, cfg: &ProviderConfig) -> Result<Array3<f64>> {
    if mixture.nrows() != cfg.mics {
        return Err(Error::Config(format!(
            "mixture has {} channels, provider expects {}",
            mixture.nrows(),
            cfg.mics
        )));
    }
    if doa_index >= cfg.directions {
        return Err(Error::Domain(format!("DoA index {doa_index} outside 0..{}", cfg.directions)));
    }
    let specs = mixture
        .axis_iter(Axis(0))
        .map(|row| stft_framed(&row.to_vec(), &cfg.stft).map(|s| s.values))
        .collect::<Result<Vec<_>>>()?;
    let (f, t) = specs[0].dim();
    let m = cfg.mics;
    let pose = ArrayPose {
        center: [0.0; 3],
        rotation: 0.0,
        mic_count: m,
        diameter: cfg.array_diameter,
    };
    let mics = pose.mic_positions();
    let phi = (doa_index as f64 * 360.0 / cfg.directions as f64).to_radians();
    let u = [phi.cos(), phi.sin()];
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect();
    // expected X_i conj(X_j) phase per unit angular frequency
    let lag: Vec<f64> = pairs
        .iter()
        .map(|&(i, j)| ((mics[i][0] - mics[j][0]) * u[0] + (mics[i][1] - mics[j][1]) * u[1]) / SPEED_OF_SOUND)
        .collect();
    let mut out = Array3::<f64>::zeros((cfg.input_channels(), f, t));
    let unit = |c: Complex64| {
        let n = c.norm();
        if n > MAG_FLOOR * MAG_FLOOR {
            c / n
        } else {
            Complex64::new(1.0, 0.0)
        }
    };
    for fi in 0..f {
        let omega = std::f64::consts::TAU * fi as f64 * cfg.sample_rate as f64 / cfg.stft.fft_length as f64;
        for ti in 0..t {
            out[[0, fi, ti]] = specs[0][[fi, ti]].norm().max(MAG_FLOOR).ln();
            let mut af = 0.0;
            for (p, &(i, j)) in pairs.iter().enumerate() {
                let obs = unit(specs[i][[fi, ti]] * specs[j][[fi, ti]].conj());
                let expected = Complex64::from_polar(1.0, omega * lag[p]);
                af += (obs * expected.conj()).re;
            }
            out[[1, fi, ti]] = af / pairs.len() as f64;
            for j in 1..m {
                let d = unit(specs[0][[fi, ti]] * specs[j][[fi, ti]].conj());
                out[[2 * j, fi, ti]] = d.re;
                out[[2 * j + 1, fi, ti]] = d.im;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ToySpatialFilter {
    config: ProviderConfig,
    conv1: Conv2d,
    conv2: Conv2d,
    f_lstm: Lstm,
    head: Conv2d,
    dtype: DType,
    device: Device,
}

pub const TOY_PROVIDER_ID: &str = "toy-spatial-filter";
pub const TOY_TAP: &str = "f_lstm";

impl ToySpatialFilter {
    pub fn new(config: ProviderConfig, pb: &mut ParamBuilder) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let conv1 = Conv2d::new(Conv2dSpec::same(config.input_channels(), c, 3), &mut pb.pp("conv1"))?;
        let conv2 = Conv2d::new(Conv2dSpec::same(c, c, 3), &mut pb.pp("conv2"))?;
        let f_lstm = Lstm::new(c, config.hidden, &mut pb.pp("f_lstm"))?;
        let head = Conv2d::new(Conv2dSpec::same(config.hidden, 1, 1), &mut pb.pp("head"))?;
        Ok(Self {
            config,
            conv1,
            conv2,
            f_lstm,
            head,
            dtype: pb.dtype(),
            device: pb.device(),
        })
    }

    pub fn init(config: ProviderConfig, seed: u64, dtype: DType, device: &Device) -> Result<(Self, ParamStore)> {
        let mut store = ParamStore::new(dtype, device);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = Self::new(config, &mut ParamBuilder::new(&mut store, &mut rng))?;
        Ok((p, store))
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn input_tensor(&self, mixture: &Array2<f64>, doa_index: usize) -> Result<Tensor> {
        let x = spatial_input(mixture, doa_index, &self.config)?;
        Ok(array3_to_tensor(&x, self.dtype, &self.device)?.unsqueeze(0)?)
    }

    /// `(B, C_in, F, T)` inputs to the tap features `(B, H, F, T)`.
    pub fn tap_features(&self, x: &Tensor) -> Result<Tensor> {
        let h = elu(&self.conv1.forward(x)?)?;
        let h = elu(&self.conv2.forward(&h)?)?;
        let (b, c, f, t) = h.dims4()?;
        let seq = h.permute((0, 3, 2, 1))?.reshape((b * t, f, c))?;
        let out = self.f_lstm.forward(&seq)?;
        let hdim = self.config.hidden;
        Ok(out.reshape((b, t, f, hdim))?.permute((0, 3, 2, 1))?.contiguous()?)
    }

    /// Mask in `[0, 1]`, `(B, 1, F, T)`.
    pub fn mask(&self, x: &Tensor) -> Result<Tensor> {
        sigmoid(&self.head.forward(&self.tap_features(x)?)?)
    }
}

impl FeatureProvider for ToySpatialFilter {
    fn id(&self) -> &str {
        TOY_PROVIDER_ID
    }

    fn tap(&self) -> &str {
        TOY_TAP
    }

    fn sample_rate(&self) -> u32 {
        self.config.sample_rate
    }

    fn feature_shape(&self) -> (usize, usize) {
        (self.config.hidden, self.config.stft.bins())
    }

    fn extract(&self, mixture: &Array2<f64>, doa_index: usize) -> Result<CondFeatures> {
        let x = self.input_tensor(mixture, doa_index)?;
        let values = self.tap_features(&x)?.detach();
        Ok(CondFeatures {
            values,
            provider: TOY_PROVIDER_ID.to_string(),
            tap: TOY_TAP.to_string(),
        })
    }
}

/// Extraction with a sample-rate check against the generator's rate.
pub fn extract_features(
    provider: &dyn FeatureProvider,
    mixture: &Array2<f64>,
    doa_index: usize,
    sample_rate: u32,
) -> Result<CondFeatures> {
    if provider.sample_rate() != sample_rate {
        return Err(Error::Domain(format!(
            "provider runs at {} Hz, mixture is {} Hz",
            provider.sample_rate(),
            sample_rate
        )));
    }
    provider.extract(mixture, doa_index)
}
