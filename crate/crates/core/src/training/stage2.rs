use candle_core::{Device, Tensor};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{draw_batch, fault, random_crop, Checkpoint, FeatureProvider, LogRecord, LogSink, RngState, ToySpatialFilter, TrainConfig};
use crate::conditioning::{encode_doa, DoAOneHot};
use crate::discriminator::MultiScaleDiscriminator;
use crate::eval::{si_snr, Example, Extractor};
use crate::generator::{array3_to_tensor, Generator};
use crate::losses::{adv_gen_loss, disc_loss, feat_match_loss, scalar, weighted_gen_loss, LossReport, ReconLoss};
use crate::nn::{softplus, Adam, ParamStore};
use crate::tf::{assemble_input_framed, DiffStft};
use crate::{Error, Result};

/// Tensors of one training step.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `(B, 3M, F, T)` generator input.
    pub x: Tensor,
    /// `(B, D)` one-hot codes.
    pub codes: Tensor,
    /// `(B, C', F', T')`, present in modes that use discriminative features.
    pub features: Option<Tensor>,
    /// `(B, L)` dry targets.
    pub target: Tensor,
}

pub struct GanTrainer {
    pub config: TrainConfig,
    pub generator: Generator,
    pub g_store: ParamStore,
    pub disc: MultiScaleDiscriminator,
    pub d_store: ParamStore,
    pub g_adam: Adam,
    pub d_adam: Adam,
    pub step: u64,
    recon: ReconLoss,
    synth: DiffStft,
    rng: ChaCha8Rng,
}

const BATCH_STREAM: u64 = 0x4741_4e5f_4241_5443;

impl GanTrainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let dtype = config.precision.dtype();
        let dev = Device::Cpu;
        let gcfg = config.resolved_generator();
        let (generator, g_store) = Generator::init(gcfg.clone(), config.seed, dtype, &dev)?;
        let (disc, d_store) =
            MultiScaleDiscriminator::init(config.discriminator.clone(), config.seed.wrapping_add(1), dtype, &dev)?;
        let recon = ReconLoss::new(&config.resolutions, config.sample_rate, dtype, &dev)?;
        let synth = DiffStft::new(gcfg.stft, dtype, &dev)?;
        Ok(Self {
            g_adam: Adam::new(config.generator_optim),
            d_adam: Adam::new(config.discriminator_optim),
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ BATCH_STREAM),
            config,
            generator,
            g_store,
            disc,
            d_store,
            step: 0,
            recon,
            synth,
        })
    }

    /// Restores parameters, optimizer moments, the step counter and the data RNG.
    pub fn resume(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != "stage2" {
            return Err(Error::Checkpoint(format!("expected a stage2 checkpoint, found {}", ck.kind)));
        }
        let config: TrainConfig = serde_json::from_value(ck.config.clone())?;
        let mut t = Self::new(config)?;
        ck.load_store("generator", &t.g_store)?;
        ck.load_store("discriminator", &t.d_store)?;
        t.g_adam.first = ck.section("adam_g.m");
        t.g_adam.second = ck.section("adam_g.v");
        t.d_adam.first = ck.section("adam_d.m");
        t.d_adam.second = ck.section("adam_d.v");
        t.g_adam.steps = ck.step;
        t.d_adam.steps = ck.step;
        t.step = ck.step;
        t.rng = ck.rng.restore()?;
        Ok(t)
    }

    /// Full training state; the provider, when given, is embedded for inference.
    pub fn checkpoint(&self, provider: Option<&ParamStore>) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(
            "stage2",
            self.step,
            RngState::capture(self.config.seed ^ BATCH_STREAM, &self.rng),
            serde_json::to_value(&self.config)?,
        );
        ck.add_store("generator", &self.g_store);
        ck.add_store("discriminator", &self.d_store);
        ck.add_map("adam_g.m", &self.g_adam.first);
        ck.add_map("adam_g.v", &self.g_adam.second);
        ck.add_map("adam_d.m", &self.d_adam.first);
        ck.add_map("adam_d.v", &self.d_adam.second);
        if let Some(p) = provider {
            ck.add_store("provider", p);
        }
        Ok(ck)
    }

    fn check_provider(&self, provider: Option<&dyn FeatureProvider>) -> Result<()> {
        let mode = self.generator.config().mode;
        if mode.uses_features() {
            let p = provider.ok_or_else(|| Error::Config(format!("mode {mode} requires a frozen feature provider")))?;
            if Some(p.feature_shape()) != self.generator.config().feature_shape {
                return Err(Error::Config(format!(
                    "provider features {:?} do not match generator {:?}",
                    p.feature_shape(),
                    self.generator.config().feature_shape
                )));
            }
        }
        Ok(())
    }

    /// Builds the step tensors for `(mixture, target, doa_index)` crops of equal length.
    pub fn make_batch(&self, crops: &[(Array2<f64>, Vec<f64>, usize)], provider: Option<&dyn FeatureProvider>) -> Result<Batch> {
        self.check_provider(provider)?;
        let dtype = self.g_store.dtype();
        let dev = self.g_store.device();
        let gcfg = self.generator.config();
        let mut xs = Vec::with_capacity(crops.len());
        let mut codes = Vec::with_capacity(crops.len());
        let mut feats = Vec::new();
        let mut targets = Vec::with_capacity(crops.len());
        for (mix, tgt, doa) in crops {
            xs.push(array3_to_tensor(&assemble_input_framed(mix, &gcfg.stft)?.values, dtype, dev)?);
            codes.push(encode_doa(*doa, gcfg.directions)?);
            if gcfg.mode.uses_features() {
                let p = provider.expect("checked above");
                let f = super::extract_features(p, mix, *doa, self.config.sample_rate)?;
                feats.push(f.values.to_dtype(dtype)?);
            }
            targets.push(Tensor::from_vec(tgt.clone(), tgt.len(), dev)?.to_dtype(dtype)?);
        }
        Ok(Batch {
            x: Tensor::stack(&xs, 0)?,
            codes: DoAOneHot::batch(&codes, dtype, dev)?,
            features: if feats.is_empty() { None } else { Some(Tensor::cat(&feats, 0)?) },
            target: Tensor::stack(&targets, 0)?,
        })
    }

    /// `ISTFT(softplus(S_mag) (S_r + j S_i))` of a `(B, 3, F, T)` output grid.
    pub fn synthesize(&self, grid: &Tensor, len: usize) -> Result<Tensor> {
        let mag = softplus(&grid.narrow(1, 0, 1)?.squeeze(1)?)?;
        let re = (&mag * grid.narrow(1, 1, 1)?.squeeze(1)?)?;
        let im = (&mag * grid.narrow(1, 2, 1)?.squeeze(1)?)?;
        self.synth.inverse_framed(&re, &im, len)
    }

    /// Generator estimate `(B, L)` for a batch.
    pub fn generate(&self, batch: &Batch) -> Result<Tensor> {
        let grid = self.generator.forward(&batch.x, &batch.codes, batch.features.as_ref())?;
        self.synthesize(&grid, batch.target.dim(1)?)
    }

    /// One discriminator update followed by one generator update.
    pub fn gan_step(&mut self, batch: &Batch) -> Result<LossReport> {
        let step = self.step + 1;
        let w = self.config.weights;
        let s_hat = self.generate(batch)?;

        let real = self.disc.forward(&batch.target)?;
        let fake_d = self.disc.forward(&s_hat.detach())?;
        let l_d = disc_loss(&real, &fake_d)?;
        let l_d_value = scalar(&l_d)?;
        if !l_d_value.is_finite() {
            return Err(fault(step, format!("L_D is {l_d_value}")));
        }
        let grads = l_d.backward()?;
        self.d_adam.step(&self.d_store, &grads)?;

        let (l_t, l_f) = self.recon.forward(&batch.target, &s_hat)?;
        let l_rec = (&l_t + &l_f)?;
        let (l_adv, l_feat) = if w.adv != 0.0 || w.feat != 0.0 {
            let fake = self.disc.forward(&s_hat)?;
            let real = self.disc.forward(&batch.target)?.detach();
            (adv_gen_loss(&fake)?, feat_match_loss(&real, &fake)?)
        } else {
            (adv_gen_loss(&fake_d)?.detach(), feat_match_loss(&real, &fake_d)?.detach())
        };
        let l_g = weighted_gen_loss(&l_rec, Some(&l_adv), Some(&l_feat), &w)?;
        let report = LossReport {
            l_t: scalar(&l_t)?,
            l_f: scalar(&l_f)?,
            l_rec: scalar(&l_rec)?,
            l_adv: scalar(&l_adv)?,
            l_feat: scalar(&l_feat)?,
            l_g: scalar(&l_g)?,
            l_d: l_d_value,
        };
        if !report.is_finite() {
            return Err(fault(step, format!("non-finite loss {report:?}")));
        }
        let grads = l_g.backward()?;
        self.g_adam.step(&self.g_store, &grads)?;
        self.step = step;
        Ok(report)
    }

    /// Draws a random batch of crops from `train`.
    pub fn sample_batch(&mut self, train: &[Example], provider: Option<&dyn FeatureProvider>) -> Result<Batch> {
        let idx = draw_batch(train.len(), self.config.batch_size, &mut self.rng);
        let crops: Vec<_> = idx
            .iter()
            .map(|&i| {
                let (m, t) = random_crop(&train[i], self.config.segment_samples, &mut self.rng);
                (m, t, train[i].doa_index)
            })
            .collect();
        self.make_batch(&crops, provider)
    }

    /// Waveform estimate for one mixture with the current weights.
    pub fn extract(&self, mixture: &Array2<f64>, doa_index: usize, provider: Option<&dyn FeatureProvider>) -> Result<Vec<f64>> {
        self.check_provider(provider)?;
        let features = if self.generator.config().mode.uses_features() {
            Some(super::extract_features(provider.unwrap(), mixture, doa_index, self.config.sample_rate)?.values)
        } else {
            None
        };
        self.generator.extract(mixture, doa_index, features.as_ref(), &self.g_store)
    }

    /// Mean ΔSI-SNR (dB) over up to `validation_items` held-out examples.
    pub fn validate(&self, valid: &[Example], provider: Option<&dyn FeatureProvider>) -> Result<Option<f64>> {
        let n = valid.len().min(self.config.validation_items);
        if n == 0 {
            return Ok(None);
        }
        let mut total = 0.0;
        for ex in &valid[..n] {
            let est = self.extract(&ex.mixture, ex.doa_index, provider)?;
            total += si_snr(&est, &ex.target)? - si_snr(&ex.reference_mic(), &ex.target)?;
        }
        Ok(Some(total / n as f64))
    }

    /// Runs `gan_step` until the configured step count is reached.
    pub fn train(
        &mut self,
        train: &[Example],
        valid: &[Example],
        provider: Option<&dyn FeatureProvider>,
        log: LogSink,
    ) -> Result<()> {
        if train.is_empty() {
            return Err(fault(self.step, "empty training set"));
        }
        self.check_provider(provider)?;
        while self.step < self.config.steps {
            let batch = self.sample_batch(train, provider)?;
            let report = self.gan_step(&batch)?;
            let step = self.step;
            let validate = self.config.validation_every > 0 && step % self.config.validation_every == 0;
            let emit = self.config.log_every > 0 && (step % self.config.log_every == 0 || step == self.config.steps);
            if emit || validate {
                let mut rec = LogRecord::new(2, step);
                rec.losses = Some(report);
                if validate {
                    rec.validation = self.validate(valid, provider)?;
                }
                log(&rec);
            }
        }
        Ok(())
    }
}

/// Inference bundle restored from a stage-2 checkpoint.
pub struct TrainedExtractor {
    pub generator: Generator,
    pub store: ParamStore,
    pub provider: Option<(ToySpatialFilter, ParamStore)>,
    pub sample_rate: u32,
}

impl TrainedExtractor {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != "stage2" {
            return Err(Error::Checkpoint(format!("expected a stage2 checkpoint, found {}", ck.kind)));
        }
        let config: TrainConfig = serde_json::from_value(ck.config.clone())?;
        let dtype = config.precision.dtype();
        let (generator, store) = Generator::init(config.resolved_generator(), 0, dtype, &Device::Cpu)?;
        ck.load_store("generator", &store)?;
        let provider = if ck.section("provider").is_empty() {
            None
        } else {
            let (p, ps) = ToySpatialFilter::init(config.provider.clone(), 0, dtype, &Device::Cpu)?;
            ck.load_store("provider", &ps)?;
            Some((p, ps))
        };
        if generator.config().mode.uses_features() && provider.is_none() {
            return Err(Error::Config(format!(
                "mode {} needs a provider but the checkpoint has none",
                generator.config().mode
            )));
        }
        Ok(Self {
            generator,
            store,
            provider,
            sample_rate: config.sample_rate,
        })
    }

    pub fn mics(&self) -> usize {
        self.generator.config().mics
    }

    pub fn directions(&self) -> usize {
        self.generator.config().directions
    }
}

impl Extractor for TrainedExtractor {
    fn extract(&self, mixture: &Array2<f64>, doa_index: usize) -> Result<Vec<f64>> {
        let features = match (&self.provider, self.generator.config().mode.uses_features()) {
            (Some((p, _)), true) => Some(super::extract_features(p, mixture, doa_index, self.sample_rate)?.values),
            _ => None,
        };
        self.generator.extract(mixture, doa_index, features.as_ref(), &self.store)
    }
}

impl Extractor for GanTrainer {
    fn extract(&self, mixture: &Array2<f64>, doa_index: usize) -> Result<Vec<f64>> {
        GanTrainer::extract(self, mixture, doa_index, None)
    }
}
