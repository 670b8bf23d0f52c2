//! Experiment configuration: presets, flat `key = value` files, flag overrides.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nmm::linalg::Precision;
use nmm::mixture::{MixtureSpec, NmmConfig};
use nmm::training::TrainConfig;

use crate::UsageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Ptb,
    Ltcb,
}

impl FromStr for Preset {
    type Err = UsageError;

    fn from_str(s: &str) -> Result<Self, UsageError> {
        match s {
            "ptb" => Ok(Preset::Ptb),
            "ltcb" => Ok(Preset::Ltcb),
            other => Err(UsageError(format!("unknown preset `{other}` (expected ptb or ltcb)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub toy_fixture: bool,
    pub vocab_cap: usize,
    pub spec: Option<String>,
    pub embedding_size: usize,
    /// `0` builds a standalone model without a mixture layer.
    pub mixture_size: usize,
    pub fnn_depth: usize,
    pub train_config: TrainConfig,
    pub precision: Precision,
    pub include_eos: bool,
    pub out: PathBuf,
}

/// Keys accepted in config files, in echo order.
pub const KEYS: &[&str] = &[
    "train",
    "valid",
    "test",
    "toy_fixture",
    "vocab_cap",
    "spec",
    "embedding_size",
    "mixture_size",
    "fnn_depth",
    "learning_rate",
    "momentum",
    "weight_decay",
    "model_dropout",
    "batch_size",
    "bptt_steps",
    "max_epochs",
    "min_improvement",
    "clip",
    "seed",
    "precision",
    "include_eos",
    "out",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, UsageError> {
    value
        .parse()
        .map_err(|_| UsageError(format!("invalid value `{value}` for `{key}`")))
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let (train_config, embedding_size, mixture_size) = match preset {
            Preset::Ptb => (TrainConfig::ptb(), 100, 400),
            Preset::Ltcb => (TrainConfig::ltcb(), 200, 600),
        };
        Self {
            train: None,
            valid: None,
            test: None,
            toy_fixture: false,
            vocab_cap: match preset {
                Preset::Ptb => 10_000,
                Preset::Ltcb => 80_000,
            },
            spec: None,
            embedding_size,
            mixture_size,
            fnn_depth: 1,
            train_config,
            precision: Precision::F32,
            include_eos: true,
            out: PathBuf::from("run"),
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), UsageError> {
        let t = &mut self.train_config;
        match key {
            "train" => self.train = path(value),
            "valid" => self.valid = path(value),
            "test" => self.test = path(value),
            "toy_fixture" => self.toy_fixture = parse(key, value)?,
            "vocab_cap" => self.vocab_cap = parse(key, value)?,
            "spec" => self.spec = (!value.is_empty()).then(|| value.to_string()),
            "embedding_size" => self.embedding_size = parse(key, value)?,
            "mixture_size" => self.mixture_size = parse(key, value)?,
            "fnn_depth" => self.fnn_depth = parse(key, value)?,
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "momentum" => t.momentum = parse(key, value)?,
            "weight_decay" => t.weight_decay = parse(key, value)?,
            "model_dropout" => t.model_dropout = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "bptt_steps" => t.bptt_steps = parse(key, value)?,
            "max_epochs" => t.max_epochs = parse(key, value)?,
            "min_improvement" => t.min_improvement = parse(key, value)?,
            "clip" => {
                let c: f64 = parse(key, value)?;
                t.clip = (c != 0.0).then_some(c);
            }
            "seed" => t.seed = parse(key, value)?,
            "precision" => {
                self.precision = Precision::parse(value)
                    .ok_or_else(|| UsageError(format!("invalid precision `{value}` (expected f32 or f64)")))?
            }
            "include_eos" => self.include_eos = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            other => return Err(UsageError(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies a flat `key = value` file. `#` starts a comment.
    pub fn apply_file(&mut self, text: &str, origin: &Path) -> Result<(), UsageError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| UsageError(format!("{}:{}: expected `key = value`", origin.display(), n + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| UsageError(format!("{}:{}: {}", origin.display(), n + 1, e.0)))?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> String {
        let t = &self.train_config;
        let p = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        match key {
            "train" => p(&self.train),
            "valid" => p(&self.valid),
            "test" => p(&self.test),
            "toy_fixture" => self.toy_fixture.to_string(),
            "vocab_cap" => self.vocab_cap.to_string(),
            "spec" => self.spec.clone().unwrap_or_default(),
            "embedding_size" => self.embedding_size.to_string(),
            "mixture_size" => self.mixture_size.to_string(),
            "fnn_depth" => self.fnn_depth.to_string(),
            "learning_rate" => t.learning_rate.to_string(),
            "momentum" => t.momentum.to_string(),
            "weight_decay" => t.weight_decay.to_string(),
            "model_dropout" => t.model_dropout.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "bptt_steps" => t.bptt_steps.to_string(),
            "max_epochs" => t.max_epochs.to_string(),
            "min_improvement" => t.min_improvement.to_string(),
            "clip" => t.clip.unwrap_or(0.0).to_string(),
            "seed" => t.seed.to_string(),
            "precision" => self.precision.as_str().to_string(),
            "include_eos" => self.include_eos.to_string(),
            "out" => self.out.display().to_string(),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// Effective configuration in the same format `apply_file` reads.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key));
        }
        out
    }

    pub fn mixture_spec(&self) -> Result<MixtureSpec, UsageError> {
        let text = self
            .spec
            .as_deref()
            .ok_or_else(|| UsageError("a model spec is required".into()))?;
        MixtureSpec::parse(text).map_err(|e| UsageError(format!("spec `{text}`: {e}")))
    }

    pub fn model_config(&self, vocab_size: usize) -> Result<NmmConfig, UsageError> {
        let cfg = NmmConfig::new(
            self.mixture_spec()?,
            self.embedding_size,
            (self.mixture_size > 0).then_some(self.mixture_size),
            vocab_size,
        )
        .with_fnn_depth(self.fnn_depth);
        cfg.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(cfg)
    }

    /// Everything that can be checked before any work starts.
    pub fn validate(&self) -> Result<(), UsageError> {
        self.train_config.validate().map_err(|e| UsageError(e.to_string()))?;
        if self.vocab_cap == 0 {
            return Err(UsageError("vocab_cap must be at least 1".into()));
        }
        // vocabulary size is unknown yet; any size above the reserved ids validates the layout
        self.model_config(self.vocab_cap + 2)?;
        if !self.toy_fixture {
            for (name, p) in [("train", &self.train), ("valid", &self.valid)] {
                let p = p
                    .as_ref()
                    .ok_or_else(|| UsageError(format!("--{name} is required without --toy-fixture")))?;
                check_file(p)?;
            }
            if let Some(p) = &self.test {
                check_file(p)?;
            }
        }
        Ok(())
    }
}

pub fn check_file(p: &Path) -> Result<(), UsageError> {
    if p.exists() && !p.is_dir() {
        Ok(())
    } else {
        Err(UsageError(format!("cannot read `{}`", p.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_carry_the_published_hyperparameters() {
        let p = ExperimentConfig::preset(Preset::Ptb);
        assert_eq!(p.train_config, TrainConfig::ptb());
        let l = ExperimentConfig::preset(Preset::Ltcb);
        assert_eq!(l.train_config.batch_size, 400);
        assert_eq!(l.train_config.momentum, 0.0);
        assert_eq!(l.train_config.model_dropout, 0.0);
        assert_eq!(l.train_config.weight_decay, 0.0);
    }

    #[test]
    fn echo_reloads_to_the_same_config() {
        let mut c = ExperimentConfig::preset(Preset::Ltcb);
        c.set("spec", "R100+F200^2-4").unwrap();
        c.set("clip", "5").unwrap();
        c.set("learning_rate", "0.123").unwrap();
        c.set("train", "a b/train.txt").unwrap();
        c.set("precision", "f64").unwrap();
        let mut back = ExperimentConfig::preset(Preset::Ptb);
        back.apply_file(&c.render(), Path::new("echo")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn file_errors_name_the_line() {
        let mut c = ExperimentConfig::preset(Preset::Ptb);
        let err = c
            .apply_file("# comment\n\nseed = 3\nbogus = 1\n", Path::new("x.cfg"))
            .unwrap_err();
        assert_eq!(err.0, "x.cfg:4: unknown config key `bogus`");
        let err = c.apply_file("batch_size = many", Path::new("x.cfg")).unwrap_err();
        assert!(err.0.contains("x.cfg:1"), "{}", err.0);
        assert_eq!(c.train_config.seed, 3);
    }

    #[test]
    fn validation_rejects_bad_values_before_work() {
        let mut c = ExperimentConfig::preset(Preset::Ptb);
        c.toy_fixture = true;
        assert!(c.validate().is_err());
        c.set("spec", "R8").unwrap();
        c.validate().unwrap();
        c.set("model_dropout", "1.5").unwrap();
        assert!(c.validate().is_err());
        c.set("model_dropout", "0.4").unwrap();
        c.set("spec", "F8^1").unwrap();
        assert!(c.validate().is_err());
        c.set("spec", "R8").unwrap();
        c.toy_fixture = false;
        assert!(c.validate().unwrap_err().0.contains("--train"));
    }
}
