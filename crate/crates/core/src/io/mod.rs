//! Audio files, dataset manifests, experiment configuration and dataset simulation.

mod config;
mod dataset;
mod manifest;
mod wav;

pub use config::{EvalConfig, ExperimentConfig};
pub use dataset::{item_plan, simulate_dataset, simulate_item, Corpus, DatasetConfig, ScenarioMode};
pub use manifest::{
    load_examples, load_manifest, manifest_root, parse_manifest, save_manifest, write_manifest, ManifestRecord,
    SceneSummary, Split,
};
pub use wav::{read_mono, read_wav, write_mono, write_wav};
