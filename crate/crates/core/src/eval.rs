//! Objective metrics, test-set evaluation and the spatial-selectivity sweep.

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::scene::DoaGrid;
use crate::{Error, Result};

/// Bound on |SI-SNR| so that exact (or null) recovery stays finite.
pub const SI_SNR_CAP: f64 = 60.0;

/// Anything that maps a mixture and a steering index to a single-channel estimate.
pub trait Extractor {
    fn extract(&self, mixture: &Array2<f64>, doa_index: usize) -> Result<Vec<f64>>;
}

impl<F: Fn(&Array2<f64>, usize) -> Result<Vec<f64>>> Extractor for F {
    fn extract(&self, mixture: &Array2<f64>, doa_index: usize) -> Result<Vec<f64>> {
        self(mixture, doa_index)
    }
}

/// One evaluation item.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    /// `M x L`.
    pub mixture: Array2<f64>,
    /// Dry target reference, `L` samples.
    pub target: Vec<f64>,
    pub doa_index: usize,
    pub snr_db: f64,
}

impl Example {
    pub fn len(&self) -> usize {
        self.mixture.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.mixture.ncols() == 0
    }

    pub fn reference_mic(&self) -> Vec<f64> {
        self.mixture.row(crate::scene::REFERENCE_MIC).to_vec()
    }
}

impl From<&crate::scene::MixtureItem> for Example {
    fn from(item: &crate::scene::MixtureItem) -> Self {
        Self {
            id: String::new(),
            mixture: item.mixture.clone(),
            target: item.dry_target.clone(),
            doa_index: item.doa_index,
            snr_db: item.snr_db,
        }
    }
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Scale-invariant SNR in dB: the estimate is projected onto the reference and the
/// projection energy compared with the residual energy. No mean removal. The result is
/// clamped to `[-60, 60]` dB.
pub fn si_snr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::Domain(format!(
            "length mismatch {} vs {}",
            estimate.len(),
            reference.len()
        )));
    }
    let rr = energy(reference);
    if rr <= 0.0 {
        return Err(Error::Domain("reference has no energy".into()));
    }
    let dot: f64 = estimate.iter().zip(reference).map(|(a, b)| a * b).sum();
    let alpha = dot / rr;
    let proj = alpha * alpha * rr;
    let resid: f64 = estimate
        .iter()
        .zip(reference)
        .map(|(e, r)| {
            let d = e - alpha * r;
            d * d
        })
        .sum();
    let db = if resid <= 0.0 {
        SI_SNR_CAP
    } else if proj <= 0.0 {
        -SI_SNR_CAP
    } else {
        10.0 * (proj / resid).log10()
    };
    Ok(db.clamp(-SI_SNR_CAP, SI_SNR_CAP))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegSnrConfig {
    pub frame_ms: f64,
    pub floor_db: f64,
    pub ceiling_db: f64,
    /// Frames whose reference level is below this (dBFS, mean-square) are skipped.
    pub silence_dbfs: f64,
}

impl Default for SegSnrConfig {
    fn default() -> Self {
        Self {
            frame_ms: 20.0,
            floor_db: -10.0,
            ceiling_db: 35.0,
            silence_dbfs: -60.0,
        }
    }
}

/// Per-frame clamped SNRs of the active frames.
pub fn seg_snr_frames(estimate: &[f64], reference: &[f64], cfg: &SegSnrConfig, sample_rate: u32) -> Result<Vec<f64>> {
    if estimate.len() != reference.len() {
        return Err(Error::Domain(format!(
            "length mismatch {} vs {}",
            estimate.len(),
            reference.len()
        )));
    }
    let frame = ((cfg.frame_ms * 1e-3 * sample_rate as f64).round() as usize).max(1);
    let mut out = Vec::new();
    for (r, e) in reference.chunks(frame).zip(estimate.chunks(frame)) {
        if r.len() < frame {
            break;
        }
        let sig = energy(r);
        let level = 10.0 * (sig / frame as f64).log10();
        if !(level >= cfg.silence_dbfs) {
            continue;
        }
        let noise: f64 = r.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum();
        let snr = if noise <= 0.0 {
            cfg.ceiling_db
        } else {
            10.0 * (sig / noise).log10()
        };
        out.push(snr.clamp(cfg.floor_db, cfg.ceiling_db));
    }
    Ok(out)
}

/// Segmental SNR: mean of the clamped per-frame SNRs over active frames.
pub fn seg_snr(estimate: &[f64], reference: &[f64], cfg: &SegSnrConfig, sample_rate: u32) -> Result<f64> {
    let frames = seg_snr_frames(estimate, reference, cfg, sample_rate)?;
    if frames.is_empty() {
        return Err(Error::Domain("no active frames".into()));
    }
    Ok(frames.iter().sum::<f64>() / frames.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemMetrics {
    pub id: String,
    pub snr_db: f64,
    pub doa_index: usize,
    pub si_snr: f64,
    pub si_snr_mixture: f64,
    pub delta_si_snr: f64,
    pub seg_snr: f64,
    pub seg_snr_mixture: f64,
    pub delta_seg_snr: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub si_snr: f64,
    pub delta_si_snr: f64,
    pub seg_snr: f64,
    pub delta_seg_snr: f64,
    pub delta_si_snr_std: f64,
}

impl Aggregate {
    fn of<'a>(items: impl Iterator<Item = &'a ItemMetrics>) -> Self {
        let items: Vec<_> = items.collect();
        let n = items.len();
        if n == 0 {
            return Self::default();
        }
        let mean = |f: &dyn Fn(&ItemMetrics) -> f64| items.iter().map(|i| f(i)).sum::<f64>() / n as f64;
        let d = mean(&|i| i.delta_si_snr);
        let var = items.iter().map(|i| (i.delta_si_snr - d).powi(2)).sum::<f64>() / n as f64;
        Self {
            count: n,
            si_snr: mean(&|i| i.si_snr),
            delta_si_snr: d,
            seg_snr: mean(&|i| i.seg_snr),
            delta_seg_snr: mean(&|i| i.delta_seg_snr),
            delta_si_snr_std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub items: Vec<ItemMetrics>,
    pub overall: Aggregate,
    /// Keyed by the item SNR rounded to whole dB.
    pub by_snr: BTreeMap<i64, Aggregate>,
    pub by_doa: BTreeMap<usize, Aggregate>,
    pub skipped: usize,
}

impl MetricsReport {
    pub fn from_items(items: Vec<ItemMetrics>, skipped: usize) -> Self {
        let mut snr_keys: Vec<i64> = items.iter().map(|i| i.snr_db.round() as i64).collect();
        snr_keys.sort_unstable();
        snr_keys.dedup();
        let mut doa_keys: Vec<usize> = items.iter().map(|i| i.doa_index).collect();
        doa_keys.sort_unstable();
        doa_keys.dedup();
        let by_snr = snr_keys
            .into_iter()
            .map(|k| (k, Aggregate::of(items.iter().filter(|i| i.snr_db.round() as i64 == k))))
            .collect();
        let by_doa = doa_keys
            .into_iter()
            .map(|k| (k, Aggregate::of(items.iter().filter(|i| i.doa_index == k))))
            .collect();
        Self {
            overall: Aggregate::of(items.iter()),
            items,
            by_snr,
            by_doa,
            skipped,
        }
    }

    /// One JSON record per item followed by one aggregate record.
    pub fn write_jsonl(&self, w: &mut dyn Write) -> Result<()> {
        for item in &self.items {
            serde_json::to_writer(&mut *w, &serde_json::json!({"record": "item", "item": item}))?;
            writeln!(w).map_err(|e| Error::io("<report>", e))?;
        }
        let agg = serde_json::json!({
            "record": "aggregate",
            "overall": self.overall,
            "by_snr": self.by_snr,
            "by_doa": self.by_doa,
            "skipped": self.skipped,
        });
        serde_json::to_writer(&mut *w, &agg)?;
        writeln!(w).map_err(|e| Error::io("<report>", e))?;
        Ok(())
    }
}

/// Metrics of `estimate` against the dry target, with deltas relative to the unprocessed
/// reference microphone.
pub fn item_metrics(example: &Example, estimate: &[f64], seg: &SegSnrConfig, sample_rate: u32) -> Result<ItemMetrics> {
    let mix = example.reference_mic();
    let si = si_snr(estimate, &example.target)?;
    let si_mix = si_snr(&mix, &example.target)?;
    let sg = seg_snr(estimate, &example.target, seg, sample_rate)?;
    let sg_mix = seg_snr(&mix, &example.target, seg, sample_rate)?;
    Ok(ItemMetrics {
        id: example.id.clone(),
        snr_db: example.snr_db,
        doa_index: example.doa_index,
        si_snr: si,
        si_snr_mixture: si_mix,
        delta_si_snr: si - si_mix,
        seg_snr: sg,
        seg_snr_mixture: sg_mix,
        delta_seg_snr: sg - sg_mix,
    })
}

/// Runs `model` on every example. Items without a usable reference are skipped and
/// counted; extraction failures abort.
pub fn evaluate(model: &dyn Extractor, examples: &[Example], seg: &SegSnrConfig, sample_rate: u32) -> Result<MetricsReport> {
    let mut items = Vec::with_capacity(examples.len());
    let mut skipped = 0;
    for ex in examples {
        if ex.target.len() != ex.len() || energy(&ex.target) <= 0.0 {
            log::warn!("skipping {}: missing or silent reference", ex.id);
            skipped += 1;
            continue;
        }
        let est = model.extract(&ex.mixture, ex.doa_index)?;
        match item_metrics(ex, &est, seg, sample_rate) {
            Ok(m) => items.push(m),
            Err(Error::Domain(reason)) => {
                log::warn!("skipping {}: {reason}", ex.id);
                skipped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(MetricsReport::from_items(items, skipped))
}

/// ΔSI-SNR as a function of the steering angle for one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectivityProfile {
    pub id: String,
    pub target_deg: f64,
    pub step_deg: f64,
    pub angles: Vec<f64>,
    pub delta_si_snr: Vec<f64>,
}

impl SelectivityProfile {
    pub fn argmax_deg(&self) -> f64 {
        let i = self
            .delta_si_snr
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        self.angles[i]
    }

    fn value_at(&self, deg: f64) -> f64 {
        let i = crate::scene::doa_to_index(deg, self.step_deg);
        self.delta_si_snr[i]
    }

    pub fn matched(&self) -> f64 {
        self.value_at(self.target_deg)
    }

    pub fn antipodal(&self) -> f64 {
        self.value_at(self.target_deg + 180.0)
    }

    /// Whether the argmax lies within `steps` grid steps of the target.
    pub fn peak_within(&self, steps: usize) -> bool {
        crate::scene::angular_distance(self.argmax_deg(), self.target_deg) <= steps as f64 * self.step_deg + 1e-9
    }

    /// Tab-separated `angle_deg<TAB>delta_si_snr_db` rows with a header.
    pub fn write_tsv(&self, w: &mut dyn Write) -> Result<()> {
        let io = |e| Error::io("<sweep>", e);
        writeln!(w, "angle_deg\tdelta_si_snr_db").map_err(io)?;
        for (a, v) in self.angles.iter().zip(&self.delta_si_snr) {
            writeln!(w, "{a}\t{v:.6}").map_err(io)?;
        }
        Ok(())
    }
}

/// Steers `model` over `[0, 360)` in `step_deg` increments and scores each output against
/// the scene's target. `grid` is the model's DoA grid; steering angles are rounded onto it.
pub fn selectivity_sweep(
    model: &dyn Extractor,
    scene: &Example,
    grid: &DoaGrid,
    step_deg: f64,
) -> Result<SelectivityProfile> {
    let steps = 360.0 / step_deg;
    if !(step_deg > 0.0) || (steps - steps.round()).abs() > 1e-9 {
        return Err(Error::Config(format!("sweep step {step_deg} does not divide 360")));
    }
    let n = steps.round() as usize;
    let target = &scene.target;
    let base = si_snr(&scene.reference_mic(), target)?;
    let mut angles = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let a = i as f64 * step_deg;
        let est = model.extract(&scene.mixture, grid.index(a))?;
        angles.push(a);
        values.push(si_snr(&est, target)? - base);
    }
    Ok(SelectivityProfile {
        id: scene.id.clone(),
        target_deg: grid.degrees(scene.doa_index),
        step_deg,
        angles,
        delta_si_snr: values,
    })
}
