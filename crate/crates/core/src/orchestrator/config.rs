use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_util::read_json;
use crate::model::ModelConfig;
use crate::search::SearchConfig;
use crate::supernet::ErrorAccum;

/// Everything a full prune-and-search run needs. Loaded from one JSON
/// document; missing fields take the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Dense checkpoint directory.
    pub checkpoint: PathBuf,
    /// Token file for calibration and search fitness.
    pub calibration_corpus: PathBuf,
    /// Held-out token file for the final perplexity report.
    pub eval_corpus: Option<PathBuf>,
    pub seq_len: usize,
    pub calibration_tokens: usize,
    pub target_sparsity: f64,
    pub iterations: usize,
    pub initial_interval: f64,
    pub ladder_size: usize,
    pub ffn_group_size: usize,
    pub lambda_frac: f64,
    pub error_accum: ErrorAccum,
    pub search: SearchConfig,
    pub seed: u64,
    pub out: PathBuf,
    /// Where supernet iterations are written; defaults to `{out}/supernet`.
    pub store_root: Option<PathBuf>,
    /// Keep superseded supernet iterations instead of deleting them.
    pub keep_stores: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            checkpoint: PathBuf::from("model"),
            calibration_corpus: PathBuf::from("calib.bin"),
            eval_corpus: None,
            seq_len: 64,
            calibration_tokens: 8192,
            target_sparsity: 0.5,
            iterations: 4,
            initial_interval: 0.125,
            ladder_size: 9,
            ffn_group_size: 16,
            lambda_frac: 0.01,
            error_accum: ErrorAccum::Expectation,
            search: SearchConfig::default(),
            seed: 0,
            out: PathBuf::from("tyr-out"),
            store_root: None,
            keep_stores: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn store_root(&self) -> PathBuf {
        self.store_root
            .clone()
            .unwrap_or_else(|| self.out.join("supernet"))
    }

    /// One iteration with a single-point ladder at the target: plain
    /// isotropic local pruning with no search.
    pub fn isotropic(&self) -> Self {
        let mut c = self.clone();
        c.iterations = 1;
        c.ladder_size = 1;
        c.search.generations = 0;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.target_sparsity > 0.0 && self.target_sparsity < 1.0) {
            return Err(Error::Config(format!(
                "target sparsity must lie in (0, 1), got {}",
                self.target_sparsity
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if !(self.initial_interval > 0.0 && self.initial_interval <= 1.0) {
            return Err(Error::Config(format!(
                "initial interval must lie in (0, 1], got {}",
                self.initial_interval
            )));
        }
        if self.ladder_size == 0 || self.ladder_size % 2 == 0 {
            return Err(Error::Config(format!("ladder size must be odd, got {}", self.ladder_size)));
        }
        if self.seq_len == 0 || self.calibration_tokens == 0 {
            return Err(Error::Config("seq_len and calibration_tokens must be positive".into()));
        }
        if !(self.lambda_frac >= 0.0) {
            return Err(Error::Config("lambda_frac must be nonnegative".into()));
        }
        self.search.validate()
    }

    /// Model-dependent checks. Returns warnings for ladder steps finer than
    /// one unit, which quantization will collapse.
    pub fn check_model(&self, model: &ModelConfig) -> Result<Vec<String>> {
        model.validate()?;
        model.validate_ffn_grouping(self.ffn_group_size)?;
        if self.seq_len > model.max_seq_len {
            return Err(Error::Config(format!(
                "seq_len {} exceeds the model's max_seq_len {}",
                self.seq_len, model.max_seq_len
            )));
        }
        let finest = self.initial_interval / f64::powi(2.0, self.iterations as i32 - 1);
        let mut warnings = Vec::new();
        for (what, units) in [
            ("attention heads", model.n_heads),
            ("ffn groups", model.d_ffn / self.ffn_group_size),
        ] {
            if self.ladder_size > 1 && finest * (units as f64) < 1.0 {
                warnings.push(format!(
                    "interval {finest} is finer than one of {units} {what}; ladder points will repeat"
                ));
            }
        }
        Ok(warnings)
    }
}
