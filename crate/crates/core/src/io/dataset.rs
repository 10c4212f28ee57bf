use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{save_manifest, ManifestRecord, SceneSummary, Split};
use super::wav::{read_mono, write_mono, write_wav};
use crate::scene::voice::{synth_voice, SpeakerProfile};
use crate::scene::{render_mixture, sample_scene, MixtureItem, SimulationConfig};
use crate::{Error, Result};

/// Target placement protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioMode {
    /// Target always at 0 degrees.
    Fixed,
    /// Targets spread evenly over all grid directions.
    #[default]
    Steerable,
}

impl std::str::FromStr for ScenarioMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(Self::Fixed),
            "steerable" => Ok(Self::Steerable),
            other => Err(Error::Config(format!("unknown scenario mode {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub count: usize,
    pub mode: ScenarioMode,
    pub item_seconds: f64,
    pub snr_levels: Vec<f64>,
    /// Share of items (and of corpus utterances) held out for validation.
    pub valid_fraction: f64,
    /// Tag every item as test data instead of splitting train/valid.
    pub test: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            count: 100,
            mode: ScenarioMode::Steerable,
            item_seconds: 4.0,
            snr_levels: vec![-5.0, 0.0, 5.0],
            valid_fraction: 0.1,
            test: false,
        }
    }
}

impl DatasetConfig {
    /// Test profile: 10 s items.
    pub fn test_profile(count: usize, mode: ScenarioMode) -> Self {
        Self {
            count,
            mode,
            item_seconds: 10.0,
            test: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.item_seconds > 0.0) || self.snr_levels.is_empty() || self.snr_levels.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config(format!("invalid dataset config {self:?}")));
        }
        if !(0.0..1.0).contains(&self.valid_fraction) {
            return Err(Error::Config("valid_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Clean mono utterances.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub names: Vec<String>,
    pub utterances: Vec<Vec<f64>>,
}

impl Corpus {
    /// Every `.wav` file below `dir`, in path order.
    pub fn from_dir(dir: &Path, sample_rate: u32) -> Result<Self> {
        let mut files = Vec::new();
        collect_wavs(dir, &mut files)?;
        files.sort();
        let mut c = Corpus::default();
        for f in files {
            let (x, fs) = read_mono(&f)?;
            if fs != sample_rate {
                return Err(Error::Config(format!("{}: {fs} Hz, expected {sample_rate}", f.display())));
            }
            c.names.push(f.strip_prefix(dir).unwrap_or(&f).display().to_string());
            c.utterances.push(x);
        }
        if c.utterances.is_empty() {
            return Err(Error::Config(format!("no WAV files under {}", dir.display())));
        }
        Ok(c)
    }

    /// Speech-like synthetic utterances from `count` random speakers.
    pub fn synthetic(count: usize, seconds: f64, seed: u64, sample_rate: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = (seconds * sample_rate as f64) as usize;
        let mut c = Corpus::default();
        for i in 0..count {
            let profile = SpeakerProfile::random(&mut rng);
            c.names.push(format!("synthetic_{i:05}.wav"));
            c.utterances.push(synth_voice(rng.random(), len, sample_rate, profile));
        }
        c
    }

    pub fn write(&self, dir: &Path, sample_rate: u32) -> Result<()> {
        for (name, x) in self.names.iter().zip(&self.utterances) {
            write_mono(&dir.join(name), x, sample_rate)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }
}

fn collect_wavs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for e in entries {
        let path = e.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_wavs(&path, out)?;
        } else if path.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")) {
            out.push(path);
        }
    }
    Ok(())
}

fn excerpt(x: &[f64], len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if x.len() <= len {
        let mut v = x.to_vec();
        v.resize(len, 0.0);
        return v;
    }
    let start = rng.random_range(0..=x.len() - len);
    x[start..start + len].to_vec()
}

/// Plan for item `i`: split, DoA index and SNR.
pub fn item_plan(i: usize, ds: &DatasetConfig, directions: usize) -> (Split, usize, f64) {
    let split = if ds.test {
        Split::Test
    } else if ds.valid_fraction > 0.0 && {
        let period = (1.0 / ds.valid_fraction).round().max(1.0) as usize;
        i % period == period - 1
    } {
        Split::Valid
    } else {
        Split::Train
    };
    let levels = ds.snr_levels.len();
    let (doa, snr) = match ds.mode {
        ScenarioMode::Fixed => (0, ds.snr_levels[i % levels]),
        ScenarioMode::Steerable => (i % directions, ds.snr_levels[(i / directions) % levels]),
    };
    (split, doa, snr)
}

/// Simulates item `i` of a dataset from `corpus`.
pub fn simulate_item(
    i: usize,
    corpus: &Corpus,
    sim: &SimulationConfig,
    ds: &DatasetConfig,
    seed: u64,
) -> Result<(MixtureItem, Split)> {
    if corpus.is_empty() {
        return Err(Error::Config("empty corpus".into()));
    }
    let grid = sim.grid()?;
    let (split, doa, snr) = item_plan(i, ds, grid.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64 + 1);
    let mut cfg = sim.clone();
    cfg.target_doa_deg = Some(grid.degrees(doa));
    let scene = sample_scene(rng.random(), &cfg)?;

    // utterance pools: the last share of the corpus is reserved for validation
    let n = corpus.len();
    let n_valid = if ds.test || ds.valid_fraction == 0.0 {
        0
    } else {
        ((n as f64 * ds.valid_fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1))
    };
    let pool: Vec<usize> = match split {
        Split::Valid if n_valid > 0 => (n - n_valid..n).collect(),
        Split::Train if n_valid > 0 && n > n_valid => (0..n - n_valid).collect(),
        _ => (0..n).collect(),
    };
    let k = scene.interferer_count();
    let t_idx = pool[rng.random_range(0..pool.len())];
    let others: Vec<usize> = if pool.len() > k {
        pool.iter().copied().filter(|&u| u != t_idx).collect()
    } else {
        (0..n).filter(|&u| u != t_idx).collect()
    };
    if others.is_empty() && k > 0 {
        return Err(Error::Config("corpus needs at least two utterances for interferers".into()));
    }
    let len = (ds.item_seconds * sim.sample_rate as f64).round() as usize;
    let target = excerpt(&corpus.utterances[t_idx], len, &mut rng);
    let mut chosen = Vec::with_capacity(k);
    for j in 0..k {
        let pick = if others.len() >= k {
            // distinct talkers
            loop {
                let u = others[rng.random_range(0..others.len())];
                if !chosen.contains(&u) {
                    break u;
                }
            }
        } else {
            others[j % others.len()]
        };
        chosen.push(pick);
    }
    let interferers: Vec<Vec<f64>> = chosen
        .iter()
        .map(|&u| excerpt(&corpus.utterances[u], len, &mut rng))
        .collect();
    let item = render_mixture(&scene, &target, &interferers, snr, doa, sim.sample_rate)?;
    Ok((item, split))
}

/// Simulates `ds.count` items into `out_dir` (WAV files plus `manifest.jsonl`) and returns
/// the manifest records.
pub fn simulate_dataset(
    corpus: &Corpus,
    sim: &SimulationConfig,
    ds: &DatasetConfig,
    seed: u64,
    out_dir: &Path,
    mut progress: impl FnMut(usize, usize),
) -> Result<Vec<ManifestRecord>> {
    sim.validate()?;
    ds.validate()?;
    if corpus.is_empty() {
        return Err(Error::Config("empty corpus".into()));
    }
    std::fs::create_dir_all(out_dir.join("audio")).map_err(|e| Error::io(out_dir, e))?;
    let grid = sim.grid()?;
    let mut records = Vec::with_capacity(ds.count);
    for i in 0..ds.count {
        let (item, split) = simulate_item(i, corpus, sim, ds, seed)?;
        let id = format!("item_{i:06}");
        let mixture = PathBuf::from("audio").join(format!("{id}_mix.wav"));
        let target = PathBuf::from("audio").join(format!("{id}_target.wav"));
        write_wav(&out_dir.join(&mixture), &item.mixture, sim.sample_rate)?;
        write_mono(&out_dir.join(&target), &item.dry_target, sim.sample_rate)?;
        records.push(ManifestRecord {
            id,
            mixture,
            target,
            snr_db: item.snr_db,
            doa_index: item.doa_index,
            doa_degrees: grid.degrees(item.doa_index),
            scene: SceneSummary {
                room: item.scene.room.dims(),
                t60: item.scene.room.t60,
                interferers: item.scene.interferer_count(),
            },
            split,
        });
        progress(i + 1, ds.count);
    }
    save_manifest(&out_dir.join("manifest.jsonl"), &records)?;
    Ok(records)
}
