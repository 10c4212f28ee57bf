use candle_core::{Device, Tensor};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::provider::spatial_input;
use super::{draw_batch, fault, random_crop, Checkpoint, LogRecord, LogSink, ProviderConfig, RngState, ToySpatialFilter, TrainConfig};
use crate::eval::Example;
use crate::generator::array3_to_tensor;
use crate::losses::scalar;
use crate::nn::{Adam, ParamStore};
use crate::tf::stft_framed;
use crate::{Error, Result};

pub struct Stage1Outcome {
    pub provider: ToySpatialFilter,
    pub store: ParamStore,
    pub adam: Adam,
    pub step: u64,
    pub rng: RngState,
    /// Loss on a fixed probe set of training crops before and after training.
    pub initial_train_loss: f64,
    pub final_train_loss: f64,
    pub initial_valid_loss: Option<f64>,
    pub final_valid_loss: Option<f64>,
}

/// Inputs, reference magnitudes and target magnitudes of a batch of crops, each `(B, ., F, T)`.
fn batch_tensors(
    crops: &[(Array2<f64>, Vec<f64>, usize)],
    cfg: &ProviderConfig,
    store: &ParamStore,
) -> Result<(Tensor, Tensor, Tensor)> {
    let dtype = store.dtype();
    let dev = store.device();
    let mut xs = Vec::with_capacity(crops.len());
    let mut targets = Vec::with_capacity(crops.len());
    for (mix, tgt, doa) in crops {
        let x = spatial_input(mix, *doa, cfg)?;
        xs.push(array3_to_tensor(&x, dtype, dev)?);
        let s = stft_framed(tgt, &cfg.stft)?.values.mapv(|c| c.norm());
        let (f, t) = s.dim();
        targets.push(Tensor::from_vec(s.into_raw_vec_and_offset().0, (1, f, t), dev)?.to_dtype(dtype)?);
    }
    let x = Tensor::stack(&xs, 0)?;
    let mix_mag = x.narrow(1, 0, 1)?.exp()?;
    Ok((x, mix_mag, Tensor::stack(&targets, 0)?))
}

/// Signal-approximation loss `mean |M |X_0| - |S||`.
fn sa_loss(provider: &ToySpatialFilter, x: &Tensor, mix_mag: &Tensor, target: &Tensor) -> Result<Tensor> {
    let mask = provider.mask(x)?;
    Ok(((mask * mix_mag)? - target)?.abs()?.mean_all()?)
}

fn probe_loss(
    examples: &[Example],
    cfg: &TrainConfig,
    provider: &ToySpatialFilter,
    store: &ParamStore,
) -> Result<Option<f64>> {
    if examples.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    let n = examples.len().min(8);
    for ex in &examples[..n] {
        let len = ex.len().min(cfg.segment_samples);
        let crop = (
            ex.mixture.slice(ndarray::s![.., ..len]).to_owned(),
            ex.target[..len].to_vec(),
            ex.doa_index,
        );
        let (x, m, t) = batch_tensors(&[crop], &cfg.provider, store)?;
        total += scalar(&sa_loss(provider, &x, &m, &t)?)?;
    }
    Ok(Some(total / n as f64))
}

/// Trains the toy spatial filter with a signal-approximation objective on magnitudes.
pub fn train_stage1(train: &[Example], valid: &[Example], cfg: &TrainConfig, log: LogSink) -> Result<Stage1Outcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(fault(0, "empty training set"));
    }
    let device = Device::Cpu;
    let (provider, store) = ToySpatialFilter::init(cfg.provider.clone(), cfg.seed, cfg.precision.dtype(), &device)?;
    let mut adam = Adam::new(cfg.provider_optim);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5354_4147_4531);
    let initial_train_loss = probe_loss(train, cfg, &provider, &store)?.unwrap();
    let initial_valid_loss = probe_loss(valid, cfg, &provider, &store)?;
    for step in 1..=cfg.steps {
        let idx = draw_batch(train.len(), cfg.batch_size, &mut rng);
        let crops: Vec<_> = idx
            .iter()
            .map(|&i| {
                let (m, t) = random_crop(&train[i], cfg.segment_samples, &mut rng);
                (m, t, train[i].doa_index)
            })
            .collect();
        let (x, m, t) = batch_tensors(&crops, &cfg.provider, &store)?;
        let loss = sa_loss(&provider, &x, &m, &t)?;
        let value = scalar(&loss)?;
        if !value.is_finite() {
            return Err(fault(step, format!("provider loss is {value}")));
        }
        let grads = loss.backward()?;
        let norm = adam.step(&store, &grads)?;
        if cfg.log_every > 0 && (step % cfg.log_every == 0 || step == cfg.steps) {
            let mut rec = LogRecord::new(1, step);
            rec.provider_loss = Some(value);
            rec.grad_norm_g = Some(norm);
            if cfg.validation_every > 0 && step % cfg.validation_every == 0 {
                rec.validation = probe_loss(valid, cfg, &provider, &store)?;
            }
            log(&rec);
        }
    }
    let final_train_loss = probe_loss(train, cfg, &provider, &store)?.unwrap();
    let final_valid_loss = probe_loss(valid, cfg, &provider, &store)?;
    Ok(Stage1Outcome {
        provider,
        store,
        adam,
        step: cfg.steps,
        rng: RngState::capture(cfg.seed, &rng),
        initial_train_loss,
        final_train_loss,
        initial_valid_loss,
        final_valid_loss,
    })
}

/// Stage-1 checkpoint: provider parameters, optimizer moments and the config echo.
pub fn provider_checkpoint(outcome: &Stage1Outcome, cfg: &TrainConfig) -> Result<Checkpoint> {
    let mut ck = Checkpoint::new("stage1", outcome.step, outcome.rng.clone(), serde_json::to_value(cfg)?);
    ck.add_store("provider", &outcome.store);
    ck.add_map("adam.m", &outcome.adam.first);
    ck.add_map("adam.v", &outcome.adam.second);
    Ok(ck)
}

/// Rebuilds the frozen provider of a stage-1 checkpoint.
pub fn load_provider(ck: &Checkpoint) -> Result<(ToySpatialFilter, ParamStore)> {
    if ck.kind != "stage1" {
        return Err(Error::Checkpoint(format!("expected a stage1 checkpoint, found {}", ck.kind)));
    }
    let cfg: TrainConfig = serde_json::from_value(ck.config.clone())?;
    let (provider, store) = ToySpatialFilter::init(cfg.provider, 0, cfg.precision.dtype(), &Device::Cpu)?;
    ck.load_store("provider", &store)?;
    Ok((provider, store))
}
