//! Command-line surface: simulate datasets, train both stages, run inference, evaluate and
//! sweep. Every command resolves and validates its configuration before writing anything.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use candle_core::Device;
use clap::{Args, Parser, Subcommand, ValueEnum};

use steer_tse::eval::{evaluate, selectivity_sweep, Example, Extractor};
use steer_tse::io::{
    load_examples, load_manifest, manifest_root, read_wav, simulate_dataset, write_mono, Corpus, ScenarioMode, Split,
};
use steer_tse::scene::DoaGrid;
use steer_tse::training::{
    load_provider, provider_checkpoint, train_stage1, FeatureProvider, GanTrainer, LogRecord, TrainedExtractor,
};
use steer_tse::{Checkpoint, ConditioningMode, Error, ExperimentConfig};

/// Environment variable naming the clean-speech corpus directory.
pub const CORPUS_ENV: &str = "STEER_TSE_CORPUS";

pub const CONFIG_ECHO: &str = "config.toml";
pub const LOG_FILE: &str = "train.log.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const REPORT_DIR: &str = "reports";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAULT: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "steer-tse", version, about = "Spatially steerable target speaker extraction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate reverberant multi-talker mixtures from a clean-speech corpus.
    Simulate(SimulateArgs),
    /// Train the spatial filter (stage 1) or the conditioned GAN (stage 2).
    Train(TrainArgs),
    /// Extract the talker at a given direction from a multichannel WAV file.
    Infer(InferArgs),
    /// Score a checkpoint on a manifest.
    Evaluate(EvalArgs),
    /// Steering sweep over all directions for manifest scenes.
    Sweep(SweepArgs),
    /// Write a synthetic speech-like corpus of mono WAV files.
    MakeCorpus(MakeCorpusArgs),
    /// Print the fully-defaulted configuration.
    ShowConfig(ConfigArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Default,
    Toy,
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// TOML experiment configuration; omitted keys take defaults.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Base configuration used when no file is given.
    #[arg(long, value_enum, default_value = "default")]
    pub preset: Preset,
    /// Overrides the experiment and training seeds.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory for WAV files and `manifest.jsonl`.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Clean-speech corpus; defaults to the STEER_TSE_CORPUS environment variable.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long, value_parser = parse_scenario)]
    pub mode: Option<ScenarioMode>,
    /// Test profile: 10 s items, all tagged as test.
    #[arg(long)]
    pub test: bool,
    /// Validate and print the plan without writing.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Manifest of simulated training and validation items.
    #[arg(long, short)]
    pub manifest: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub stage: u8,
    /// Run directory.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Conditioning mode for stage 2.
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<ConditioningMode>,
    /// Stage-1 checkpoint supplying the frozen feature provider.
    #[arg(long)]
    pub provider: Option<PathBuf>,
    /// Stage-2 checkpoint to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
    /// Stage-2 checkpoint interval in steps; 0 saves only the final state.
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: u64,
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Multichannel input WAV.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Mono output WAV.
    #[arg(long, short)]
    pub output: PathBuf,
    /// Steering direction in degrees.
    #[arg(long, allow_hyphen_values = true)]
    pub doa: f64,
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, short)]
    pub manifest: PathBuf,
    /// Report directory.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Restrict to one split tag.
    #[arg(long, value_parser = parse_split)]
    pub split: Option<Split>,
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, short)]
    pub manifest: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Steering step in degrees; defaults to the configured sweep step.
    #[arg(long)]
    pub step: Option<f64>,
    /// Number of scenes to sweep.
    #[arg(long, default_value_t = 20)]
    pub scenes: usize,
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args)]
pub struct MakeCorpusArgs {
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 40)]
    pub count: usize,
    #[arg(long, default_value_t = 8.0)]
    pub seconds: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_scenario(s: &str) -> Result<ScenarioMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<ConditioningMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "valid" => Ok(Split::Valid),
        "test" => Ok(Split::Test),
        other => Err(format!("unknown split {other}")),
    }
}

/// Failure tagged with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: if e.is_usage() { EXIT_USAGE } else { EXIT_FAULT },
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

pub fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train(a),
        Command::Infer(a) => infer(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Sweep(a) => sweep(a),
        Command::MakeCorpus(a) => make_corpus(a),
        Command::ShowConfig(a) => {
            print!("{}", resolve_config(&a)?.to_toml_string()?);
            Ok(())
        }
    }
}

/// Loads, overrides and validates the configuration. Any failure here is a usage error.
pub fn resolve_config(args: &ConfigArgs) -> CliResult<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| Failure::usage(e.to_string()))?,
        None => match args.preset {
            Preset::Default => ExperimentConfig::default(),
            Preset::Toy => ExperimentConfig::toy(),
        },
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
    Ok(cfg)
}

fn io_fault(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: EXIT_FAULT,
        message: format!("{}: {e}", path.display()),
    }
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| io_fault(path, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| io_fault(path, e))
}

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::usage(format!("{what} {} does not exist", path.display())))
    }
}

fn simulate(a: SimulateArgs) -> CliResult<()> {
    let mut cfg = resolve_config(&a.config)?;
    if let Some(n) = a.count {
        cfg.dataset.count = n;
    }
    if let Some(m) = a.mode {
        cfg.dataset.mode = m;
    }
    if a.test {
        cfg.dataset.test = true;
        cfg.dataset.item_seconds = 10.0;
    }
    cfg.validate()?;
    let corpus_dir = a
        .corpus
        .clone()
        .or_else(|| std::env::var_os(CORPUS_ENV).map(PathBuf::from))
        .ok_or_else(|| Failure::usage(format!("no corpus: pass --corpus or set {CORPUS_ENV}")))?;
    if !corpus_dir.is_dir() {
        return Err(Failure::usage(format!("corpus {} is not a directory", corpus_dir.display())));
    }
    println!(
        "simulate {} {:?} items of {} s into {}",
        cfg.dataset.count,
        cfg.dataset.mode,
        cfg.dataset.item_seconds,
        a.out.display()
    );
    if a.dry_run {
        return Ok(());
    }
    let corpus = Corpus::from_dir(&corpus_dir, cfg.simulation.sample_rate)?;
    create_dir(&a.out)?;
    write_text(&a.out.join(CONFIG_ECHO), &cfg.to_toml_string()?)?;
    let records = simulate_dataset(&corpus, &cfg.simulation, &cfg.dataset, cfg.seed, &a.out, |i, n| {
        if i % 50 == 0 || i == n {
            log::info!("simulated {i}/{n}");
        }
    })?;
    println!("wrote {} records to {}", records.len(), a.out.join("manifest.jsonl").display());
    Ok(())
}

fn split_examples(manifest: &Path, sample_rate: u32) -> CliResult<(Vec<Example>, Vec<Example>)> {
    let records = load_manifest(manifest)?;
    let root = manifest_root(manifest);
    let (tr, va): (Vec<_>, Vec<_>) = records.into_iter().partition(|r| r.split != Split::Valid);
    let tr: Vec<_> = tr.into_iter().filter(|r| r.split == Split::Train).collect();
    Ok((load_examples(&root, &tr, sample_rate)?, load_examples(&root, &va, sample_rate)?))
}

fn train(a: TrainArgs) -> CliResult<()> {
    let cfg = resolve_config(&a.config)?;
    let mut tc = cfg.train.clone();
    tc.stage = a.stage;
    if let Some(m) = a.mode {
        tc.generator.mode = m;
    }
    if let Some(s) = a.steps {
        tc.steps = s;
    }
    tc.validate()?;
    require_file(&a.manifest, "manifest")?;
    if a.stage == 1 && a.resume.is_some() {
        return Err(Failure::usage("--resume applies to stage 2 only"));
    }
    let needs_provider = a.stage == 2 && tc.generator.mode.uses_features();
    match (&a.provider, needs_provider) {
        (Some(p), _) => require_file(p, "provider checkpoint")?,
        (None, true) => {
            return Err(Failure::usage(format!("mode {} needs --provider <stage1 checkpoint>", tc.generator.mode)))
        }
        (None, false) => {}
    }
    if let Some(r) = &a.resume {
        require_file(r, "resume checkpoint")?;
    }
    println!(
        "train stage {} mode {} for {} steps into {}",
        tc.stage,
        tc.generator.mode,
        tc.steps,
        a.out.display()
    );
    if a.dry_run {
        return Ok(());
    }

    let mut echo = cfg.clone();
    echo.train = tc.clone();
    create_dir(&a.out.join(CHECKPOINT_DIR))?;
    write_text(&a.out.join(CONFIG_ECHO), &echo.to_toml_string()?)?;
    let log_path = a.out.join(LOG_FILE);
    let log_file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| io_fault(&log_path, e))?;
    let mut log_writer = BufWriter::new(log_file);
    let mut sink = |r: &LogRecord| {
        if let Ok(line) = serde_json::to_string(r) {
            let _ = writeln!(log_writer, "{line}");
            let _ = log_writer.flush();
            log::info!("{line}");
        }
    };

    let (train_set, valid_set) = split_examples(&a.manifest, tc.sample_rate)?;
    if a.stage == 1 {
        let outcome = train_stage1(&train_set, &valid_set, &tc, &mut sink)?;
        let path = a.out.join(CHECKPOINT_DIR).join("stage1.ckpt");
        provider_checkpoint(&outcome, &tc)?.save(&path)?;
        println!(
            "stage 1 loss {:.4} -> {:.4}; checkpoint {}",
            outcome.initial_train_loss,
            outcome.final_train_loss,
            path.display()
        );
        return Ok(());
    }

    let provider = match &a.provider {
        Some(p) => Some(load_provider(&Checkpoint::load(p, &Device::Cpu)?)?),
        None => None,
    };
    let feature_provider: Option<&dyn FeatureProvider> = if tc.generator.mode.uses_features() {
        provider.as_ref().map(|(p, _)| p as &dyn FeatureProvider)
    } else {
        None
    };
    let provider_store = provider.as_ref().filter(|_| feature_provider.is_some()).map(|(_, s)| s);
    let mut trainer = match &a.resume {
        Some(r) => {
            let mut t = GanTrainer::resume(&Checkpoint::load(r, &Device::Cpu)?)?;
            t.config.steps = tc.steps;
            t
        }
        None => GanTrainer::new(tc.clone())?,
    };
    let total = trainer.config.steps;
    let chunk = if a.checkpoint_every == 0 { total } else { a.checkpoint_every };
    while trainer.step < total {
        trainer.config.steps = (trainer.step + chunk).min(total);
        trainer.train(&train_set, &valid_set, feature_provider, &mut sink)?;
        trainer.config.steps = total;
        if trainer.step < total {
            let path = a.out.join(CHECKPOINT_DIR).join(format!("step_{:08}.ckpt", trainer.step));
            trainer.checkpoint(provider_store)?.save(&path)?;
        }
    }
    let path = a.out.join(CHECKPOINT_DIR).join("stage2.ckpt");
    trainer.checkpoint(provider_store)?.save(&path)?;
    println!("stage 2 finished at step {}; checkpoint {}", trainer.step, path.display());
    Ok(())
}

fn load_extractor(path: &Path) -> CliResult<TrainedExtractor> {
    require_file(path, "checkpoint")?;
    Ok(TrainedExtractor::from_checkpoint(&Checkpoint::load(path, &Device::Cpu)?)?)
}

fn extractor_grid(model: &TrainedExtractor) -> CliResult<DoaGrid> {
    Ok(DoaGrid::new(360.0 / model.directions() as f64)?)
}

fn infer(a: InferArgs) -> CliResult<()> {
    if !a.doa.is_finite() {
        return Err(Failure::usage("--doa must be finite"));
    }
    require_file(&a.input, "input")?;
    let model = load_extractor(&a.checkpoint)?;
    let grid = extractor_grid(&model)?;
    let (mixture, fs) = read_wav(&a.input)?;
    if mixture.nrows() != model.mics() {
        return Err(Failure::usage(format!(
            "input has {} channels, the checkpoint expects {}",
            mixture.nrows(),
            model.mics()
        )));
    }
    if fs != model.sample_rate {
        return Err(Failure::usage(format!("input is {fs} Hz, the checkpoint expects {}", model.sample_rate)));
    }
    let index = grid.index(a.doa);
    println!("steering to {} deg (index {index})", grid.degrees(index));
    if a.dry_run {
        return Ok(());
    }
    let out = model.extract(&mixture, index)?;
    write_mono(&a.output, &out, fs)?;
    println!("wrote {} samples to {}", out.len(), a.output.display());
    Ok(())
}

fn manifest_examples(manifest: &Path, split: Option<Split>, sample_rate: u32) -> CliResult<Vec<Example>> {
    let records: Vec<_> = load_manifest(manifest)?
        .into_iter()
        .filter(|r| split.is_none_or(|s| r.split == s))
        .collect();
    if records.is_empty() {
        return Err(Failure::usage(format!("{} has no matching records", manifest.display())));
    }
    Ok(load_examples(&manifest_root(manifest), &records, sample_rate)?)
}

fn evaluate_cmd(a: EvalArgs) -> CliResult<()> {
    let cfg = resolve_config(&a.config)?;
    require_file(&a.manifest, "manifest")?;
    require_file(&a.checkpoint, "checkpoint")?;
    if a.dry_run {
        println!("evaluate {} on {}", a.checkpoint.display(), a.manifest.display());
        return Ok(());
    }
    let model = load_extractor(&a.checkpoint)?;
    let examples = manifest_examples(&a.manifest, a.split, model.sample_rate)?;
    let report = evaluate(&model, &examples, &cfg.evaluation.seg_snr, model.sample_rate)?;
    let dir = a.out.join(REPORT_DIR);
    create_dir(&dir)?;
    let path = dir.join(METRICS_FILE);
    let file = fs::File::create(&path).map_err(|e| io_fault(&path, e))?;
    let mut w = BufWriter::new(file);
    report.write_jsonl(&mut w)?;
    w.flush().map_err(|e| io_fault(&path, e))?;
    let summary = serde_json::json!({
        "overall": report.overall,
        "by_snr": report.by_snr,
        "skipped": report.skipped,
    });
    write_text(&dir.join(SUMMARY_FILE), &serde_json::to_string_pretty(&summary).map_err(Error::from)?)?;
    println!(
        "{} items: SI-SNR {:.2} dB (delta {:+.2}), SegSNR {:.2} dB (delta {:+.2})",
        report.overall.count,
        report.overall.si_snr,
        report.overall.delta_si_snr,
        report.overall.seg_snr,
        report.overall.delta_seg_snr
    );
    for (snr, agg) in &report.by_snr {
        println!("  {snr:+} dB: {} items, delta SI-SNR {:+.2}", agg.count, agg.delta_si_snr);
    }
    if report.skipped > 0 {
        return Err(Failure {
            code: EXIT_FAULT,
            message: format!("{} items could not be scored", report.skipped),
        });
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> CliResult<()> {
    let cfg = resolve_config(&a.config)?;
    let step = a.step.unwrap_or(cfg.evaluation.sweep_step_deg);
    let n = 360.0 / step;
    if !(step > 0.0) || (n - n.round()).abs() > 1e-9 {
        return Err(Failure::usage(format!("sweep step {step} does not divide 360")));
    }
    require_file(&a.manifest, "manifest")?;
    require_file(&a.checkpoint, "checkpoint")?;
    if a.dry_run {
        println!("sweep {} scenes at {step} deg", a.scenes);
        return Ok(());
    }
    let model = load_extractor(&a.checkpoint)?;
    let grid = extractor_grid(&model)?;
    let mut examples = manifest_examples(&a.manifest, None, model.sample_rate)?;
    examples.truncate(a.scenes);
    let dir = a.out.join(REPORT_DIR);
    create_dir(&dir)?;
    let mut peaks = 0;
    for ex in &examples {
        let profile = selectivity_sweep(&model, ex, &grid, step)?;
        let path = dir.join(format!("sweep_{}.tsv", ex.id));
        let file = fs::File::create(&path).map_err(|e| io_fault(&path, e))?;
        let mut w = BufWriter::new(file);
        profile.write_tsv(&mut w)?;
        w.flush().map_err(|e| io_fault(&path, e))?;
        peaks += profile.peak_within(1) as usize;
        println!(
            "{}: target {} deg, argmax {} deg, matched {:+.2} dB, antipode {:+.2} dB",
            ex.id,
            profile.target_deg,
            profile.argmax_deg(),
            profile.matched(),
            profile.antipodal()
        );
    }
    println!("peak within one step on {peaks}/{} scenes", examples.len());
    Ok(())
}

fn make_corpus(a: MakeCorpusArgs) -> CliResult<()> {
    if a.count < 2 || !(a.seconds > 0.0) {
        return Err(Failure::usage("need at least two utterances of positive length"));
    }
    create_dir(&a.out)?;
    let corpus = Corpus::synthetic(a.count, a.seconds, a.seed, steer_tse::SAMPLE_RATE);
    corpus.write(&a.out, steer_tse::SAMPLE_RATE)?;
    println!("wrote {} utterances to {}", corpus.len(), a.out.display());
    Ok(())
}
