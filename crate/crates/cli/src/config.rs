//! Settings file and default values. Flags override the file, which
//! overrides the defaults.

use std::path::{Path, PathBuf};

use gsn_core::force::{DegreeFeatures, ModelKind};
use gsn_core::train::{InitPolicy, LossDomain, TargetEncoding};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

pub const K: usize = 64;
pub const DT: f64 = 0.005;
pub const DAMPING: f64 = 0.05;
pub const MU: f64 = 2.5;
pub const LR: f64 = 0.03;
pub const EPOCHS: usize = 200;
pub const STEPS: usize = 120;
pub const P_HIDDEN: f64 = 0.2;
pub const VALIDATION_FRACTION: f64 = 0.1;
pub const SEEDS: usize = 5;
pub const DEFAULT_GRID: &str = "2000:20000:16;2000:40000:16;2000:20000:32;4000:40000:16;4000:80000:32";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub deterministic: Option<bool>,
    pub input: Option<PathBuf>,
    pub p_hidden: Option<f64>,
    pub split_seed: Option<u64>,
    pub exact_split: Option<bool>,
    pub k: Option<usize>,
    pub dt: Option<f64>,
    pub damping: Option<f64>,
    pub steps: Option<usize>,
    pub semi_implicit: Option<bool>,
    pub model: Option<ModelKind>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub mu: Option<f64>,
    pub loss_domain: Option<LossDomain>,
    pub targets: Option<TargetEncoding>,
    pub init_policy: Option<InitPolicy>,
    pub degree_features: Option<DegreeFeatures>,
    pub validation_fraction: Option<f64>,
    pub checkpoint_every: Option<usize>,
    pub params: Option<PathBuf>,
    pub seeds: Option<usize>,
    pub calibrate: Option<bool>,
    pub binary: Option<bool>,
    pub grid: Option<String>,
    pub repeats: Option<usize>,
    pub sim_steps: Option<usize>,
    pub min_sample_ms: Option<f64>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

pub fn pick_flag(flag: bool, file: Option<bool>) -> bool {
    flag || file.unwrap_or(false)
}
