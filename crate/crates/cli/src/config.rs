//! Flat key=value experiment configuration.
//!
//! One `key = value` per line, `#` comments, every key validated against the
//! schema below; unknown keys are rejected. Serialization is canonical
//! (schema order), so parse -> serialize -> parse is the identity.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use recon_core::error::{Error, Result};
use recon_core::network::{ModelConfig, ModelMode, ReconBlock};
use recon_core::pipeline::MaskSpec;
use recon_core::training::TrainConfig;

/// Numeric precision of datasets, training, and evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

/// Sampling pattern selector shared by acquisition, retro, and eval masks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pattern {
    Uniform,
    Gaussian,
}

impl Pattern {
    pub fn name(self) -> &'static str {
        match self {
            Pattern::Uniform => "uniform",
            Pattern::Gaussian => "gaussian",
        }
    }
}

/// One mask specification: pattern, acceleration, central band.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskConfig {
    pub pattern: Pattern,
    pub r: usize,
    pub center_lines: usize,
}

impl MaskConfig {
    pub fn spec(&self) -> MaskSpec {
        match self.pattern {
            Pattern::Uniform => MaskSpec::Uniform {
                r: self.r,
                center_lines: self.center_lines,
            },
            Pattern::Gaussian => MaskSpec::Gaussian {
                r: self.r,
                center_lines: self.center_lines,
            },
        }
    }
}

/// Fully validated experiment configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub precision: Precision,
    pub out_dir: PathBuf,

    pub phantom_nx: usize,
    pub phantom_ny: usize,
    pub phantom_nt: usize,

    pub nc: usize,

    pub acq: MaskConfig,
    pub retro: MaskConfig,
    pub retro_draws: usize,

    pub model_mode: ModelMode,
    pub model_block: ReconBlock,
    pub model_iters: usize,
    pub model_width: usize,
    /// `None` = hard backfill.
    pub dc_lambda: Option<f64>,

    pub train_lr0: f64,
    pub train_decay: f64,
    pub train_batch: usize,
    pub train_epochs: usize,

    pub eval_mask: MaskConfig,
    /// Column for the y-t profile.
    pub eval_x_index: usize,
    /// Upper bound of the error-map display range (lower bound 0).
    pub eval_error_range: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1234,
            precision: Precision::F32,
            out_dir: PathBuf::from("run"),
            phantom_nx: 32,
            phantom_ny: 32,
            phantom_nt: 8,
            nc: 4,
            acq: MaskConfig {
                pattern: Pattern::Uniform,
                r: 4,
                center_lines: 4,
            },
            retro: MaskConfig {
                pattern: Pattern::Gaussian,
                r: 4,
                center_lines: 4,
            },
            retro_draws: 64,
            model_mode: ModelMode::MultiChannel,
            model_block: ReconBlock::Admm3,
            model_iters: 2,
            model_width: 16,
            dc_lambda: None,
            train_lr0: 0.001,
            train_decay: 0.98,
            train_batch: 2,
            train_epochs: 50,
            eval_mask: MaskConfig {
                pattern: Pattern::Gaussian,
                r: 4,
                center_lines: 4,
            },
            eval_x_index: 16,
            eval_error_range: 0.25,
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "seed",
    "precision",
    "out.dir",
    "phantom.nx",
    "phantom.ny",
    "phantom.nt",
    "coils.nc",
    "acq.pattern",
    "acq.r",
    "acq.center_lines",
    "retro.pattern",
    "retro.r",
    "retro.center_lines",
    "retro.draws",
    "model.mode",
    "model.block",
    "model.iters",
    "model.width",
    "model.dc_lambda",
    "train.lr0",
    "train.decay",
    "train.batch",
    "train.epochs",
    "eval.pattern",
    "eval.r",
    "eval.center_lines",
    "eval.x_index",
    "eval.error_range",
];

fn parse_pattern(v: &str) -> Result<Pattern> {
    match v {
        "uniform" => Ok(Pattern::Uniform),
        "gaussian" => Ok(Pattern::Gaussian),
        other => Err(Error::Config(format!(
            "pattern must be uniform or gaussian, got {}",
            other
        ))),
    }
}

impl ExperimentConfig {
    /// Parses key=value text against the schema, starting from defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let key = k.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!(
                    "line {}: unknown key {}",
                    lineno + 1,
                    key
                )));
            }
            if map.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("duplicate key {}", key)));
            }
        }
        let mut cfg = Self::default();
        let get = |k: &str| map.get(k).map(|s| s.as_str());
        let num = |k: &str, v: &str| -> Result<usize> {
            v.parse()
                .map_err(|_| Error::Config(format!("{} must be an integer, got {}", k, v)))
        };
        let float = |k: &str, v: &str| -> Result<f64> {
            v.parse()
                .map_err(|_| Error::Config(format!("{} must be a number, got {}", k, v)))
        };

        if let Some(v) = get("seed") {
            cfg.seed = v
                .parse()
                .map_err(|_| Error::Config(format!("seed must be a u64, got {}", v)))?;
        }
        if let Some(v) = get("precision") {
            cfg.precision = match v {
                "f32" => Precision::F32,
                "f64" => Precision::F64,
                other => {
                    return Err(Error::Config(format!(
                        "precision must be f32 or f64, got {}",
                        other
                    )))
                }
            };
        }
        if let Some(v) = get("out.dir") {
            cfg.out_dir = PathBuf::from(v);
        }
        if let Some(v) = get("phantom.nx") {
            cfg.phantom_nx = num("phantom.nx", v)?;
        }
        if let Some(v) = get("phantom.ny") {
            cfg.phantom_ny = num("phantom.ny", v)?;
        }
        if let Some(v) = get("phantom.nt") {
            cfg.phantom_nt = num("phantom.nt", v)?;
        }
        if let Some(v) = get("coils.nc") {
            cfg.nc = num("coils.nc", v)?;
        }
        if let Some(v) = get("acq.pattern") {
            cfg.acq.pattern = parse_pattern(v)?;
        }
        if let Some(v) = get("acq.r") {
            cfg.acq.r = num("acq.r", v)?;
        }
        if let Some(v) = get("acq.center_lines") {
            cfg.acq.center_lines = num("acq.center_lines", v)?;
        }
        if let Some(v) = get("retro.pattern") {
            cfg.retro.pattern = parse_pattern(v)?;
        }
        if let Some(v) = get("retro.r") {
            cfg.retro.r = num("retro.r", v)?;
        }
        if let Some(v) = get("retro.center_lines") {
            cfg.retro.center_lines = num("retro.center_lines", v)?;
        }
        if let Some(v) = get("retro.draws") {
            cfg.retro_draws = num("retro.draws", v)?;
        }
        if let Some(v) = get("model.mode") {
            cfg.model_mode = match v {
                "multichannel" => ModelMode::MultiChannel,
                "single-channel" => ModelMode::SingleChannel,
                other => {
                    return Err(Error::Config(format!(
                        "model.mode must be multichannel or single-channel, got {}",
                        other
                    )))
                }
            };
        }
        if let Some(v) = get("model.block") {
            cfg.model_block = match v {
                "admm3" => ReconBlock::Admm3,
                "d5c5" => ReconBlock::D5C5,
                other => {
                    return Err(Error::Config(format!(
                        "model.block must be admm3 or d5c5, got {}",
                        other
                    )))
                }
            };
        }
        if let Some(v) = get("model.iters") {
            cfg.model_iters = num("model.iters", v)?;
        }
        if let Some(v) = get("model.width") {
            cfg.model_width = num("model.width", v)?;
        }
        if let Some(v) = get("model.dc_lambda") {
            cfg.dc_lambda = match v {
                "inf" => None,
                other => Some(float("model.dc_lambda", other)?),
            };
        }
        if let Some(v) = get("train.lr0") {
            cfg.train_lr0 = float("train.lr0", v)?;
        }
        if let Some(v) = get("train.decay") {
            cfg.train_decay = float("train.decay", v)?;
        }
        if let Some(v) = get("train.batch") {
            cfg.train_batch = num("train.batch", v)?;
        }
        if let Some(v) = get("train.epochs") {
            cfg.train_epochs = num("train.epochs", v)?;
        }
        if let Some(v) = get("eval.pattern") {
            cfg.eval_mask.pattern = parse_pattern(v)?;
        }
        if let Some(v) = get("eval.r") {
            cfg.eval_mask.r = num("eval.r", v)?;
        }
        if let Some(v) = get("eval.center_lines") {
            cfg.eval_mask.center_lines = num("eval.center_lines", v)?;
        }
        if let Some(v) = get("eval.x_index") {
            cfg.eval_x_index = num("eval.x_index", v)?;
        }
        if let Some(v) = get("eval.error_range") {
            cfg.eval_error_range = float("eval.error_range", v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("phantom.nx", self.phantom_nx), ("phantom.ny", self.phantom_ny)] {
            if !v.is_power_of_two() {
                return Err(Error::Config(format!(
                    "{} must be a power of two, got {}",
                    name, v
                )));
            }
        }
        if self.phantom_nt == 0 {
            return Err(Error::Config("phantom.nt must be positive".into()));
        }
        if self.nc == 0 {
            return Err(Error::Config("coils.nc must be positive".into()));
        }
        for (name, m) in [
            ("acq", &self.acq),
            ("retro", &self.retro),
            ("eval", &self.eval_mask),
        ] {
            if !matches!(m.r, 4 | 8) {
                return Err(Error::Config(format!(
                    "{}.r must be 4 or 8, got {}",
                    name, m.r
                )));
            }
            if m.center_lines % 2 != 0 {
                return Err(Error::Config(format!(
                    "{}.center_lines must be even",
                    name
                )));
            }
        }
        if self.retro_draws == 0 {
            return Err(Error::Config("retro.draws must be positive".into()));
        }
        if self.eval_x_index >= self.phantom_nx {
            return Err(Error::Config(format!(
                "eval.x_index {} outside nx {}",
                self.eval_x_index, self.phantom_nx
            )));
        }
        if self.eval_error_range <= 0.0 {
            return Err(Error::Config("eval.error_range must be positive".into()));
        }
        self.model_config().validate()?;
        self.train_config().validate()?;
        Ok(())
    }

    /// Canonical serialization in schema order.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "precision = {}", self.precision.name());
        let _ = writeln!(s, "out.dir = {}", self.out_dir.display());
        let _ = writeln!(s, "phantom.nx = {}", self.phantom_nx);
        let _ = writeln!(s, "phantom.ny = {}", self.phantom_ny);
        let _ = writeln!(s, "phantom.nt = {}", self.phantom_nt);
        let _ = writeln!(s, "coils.nc = {}", self.nc);
        let _ = writeln!(s, "acq.pattern = {}", self.acq.pattern.name());
        let _ = writeln!(s, "acq.r = {}", self.acq.r);
        let _ = writeln!(s, "acq.center_lines = {}", self.acq.center_lines);
        let _ = writeln!(s, "retro.pattern = {}", self.retro.pattern.name());
        let _ = writeln!(s, "retro.r = {}", self.retro.r);
        let _ = writeln!(s, "retro.center_lines = {}", self.retro.center_lines);
        let _ = writeln!(s, "retro.draws = {}", self.retro_draws);
        let _ = writeln!(
            s,
            "model.mode = {}",
            match self.model_mode {
                ModelMode::MultiChannel => "multichannel",
                ModelMode::SingleChannel => "single-channel",
            }
        );
        let _ = writeln!(
            s,
            "model.block = {}",
            match self.model_block {
                ReconBlock::Admm3 => "admm3",
                ReconBlock::D5C5 => "d5c5",
            }
        );
        let _ = writeln!(s, "model.iters = {}", self.model_iters);
        let _ = writeln!(s, "model.width = {}", self.model_width);
        let _ = writeln!(
            s,
            "model.dc_lambda = {}",
            match self.dc_lambda {
                None => "inf".to_string(),
                Some(l) => format!("{}", l),
            }
        );
        let _ = writeln!(s, "train.lr0 = {}", self.train_lr0);
        let _ = writeln!(s, "train.decay = {}", self.train_decay);
        let _ = writeln!(s, "train.batch = {}", self.train_batch);
        let _ = writeln!(s, "train.epochs = {}", self.train_epochs);
        let _ = writeln!(s, "eval.pattern = {}", self.eval_mask.pattern.name());
        let _ = writeln!(s, "eval.r = {}", self.eval_mask.r);
        let _ = writeln!(s, "eval.center_lines = {}", self.eval_mask.center_lines);
        let _ = writeln!(s, "eval.x_index = {}", self.eval_x_index);
        let _ = writeln!(s, "eval.error_range = {}", self.eval_error_range);
        s
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            mode: self.model_mode,
            block: self.model_block,
            n_iters: self.model_iters,
            width: self.model_width,
            dc_lambda: self.dc_lambda,
            nc: self.nc,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr0: self.train_lr0,
            decay: self.train_decay,
            batch: self.train_batch,
            epochs: self.train_epochs,
            seed: self.seed.wrapping_add(crate::commands::SEED_TRAIN),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_and_round_trip() {
        let cfg = ExperimentConfig::default();
        let text = cfg.serialize();
        let parsed = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(cfg, parsed);
        // identity under a second round
        assert_eq!(parsed.serialize(), text);
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let cfg = ExperimentConfig::parse(
            "# experiment\n\nseed = 7\n  # indented comment\nacq.r = 8\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.acq.r, 8);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = ExperimentConfig::parse("bogus.key = 1\n");
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn duplicate_key_rejected() {
        let err = ExperimentConfig::parse("seed = 1\nseed = 2\n");
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(ExperimentConfig::parse("acq.r = 3\n").is_err());
        assert!(ExperimentConfig::parse("phantom.nx = 33\n").is_err());
        assert!(ExperimentConfig::parse("precision = f16\n").is_err());
        assert!(ExperimentConfig::parse("model.dc_lambda = -1\n").is_err());
        assert!(ExperimentConfig::parse("eval.x_index = 32\n").is_err());
    }

    #[test]
    fn dc_lambda_inf_and_float() {
        let inf = ExperimentConfig::parse("model.dc_lambda = inf\n").unwrap();
        assert_eq!(inf.dc_lambda, None);
        let soft = ExperimentConfig::parse("model.dc_lambda = 2.5\n").unwrap();
        assert_eq!(soft.dc_lambda, Some(2.5));
    }
}
