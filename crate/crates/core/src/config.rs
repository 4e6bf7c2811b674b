//! Flat `key = value` experiment configuration and presets.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::genproc::{Family, ProcessConfig};
use crate::losses::LossKind;
use crate::metrics::DEFAULT_PAIR_BUDGET;
use crate::training::TrainConfig;

/// Environment variable overriding `out_dir`.
pub const OUT_DIR_ENV: &str = "MCINFONCE_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub out_dir: PathBuf,
    pub dim: usize,
    pub enc_dim: usize,
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub family: Family,
    pub kappa_pos: f64,
    pub batches: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub mc_samples: usize,
    pub negatives: usize,
    pub phasewise: bool,
    pub seed: u64,
    pub loss: LossKind,
    pub hib_a: f64,
    pub hib_b: f64,
    pub eval_every: usize,
    pub eval_samples: usize,
    pub pair_budget: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        preset("desk").expect("built-in preset")
    }
}

/// Names of the built-in presets.
pub const PRESETS: &[&str] = &[
    "desk",
    "desk-dirac",
    "ambiguous-fullscale",
    "clear-fullscale",
    "injective-fullscale",
    "d2-fullscale",
    "gaussian-fullscale",
    "laplace-fullscale",
];

fn fullscale(name: &str) -> ExperimentConfig {
    ExperimentConfig {
        name: name.into(),
        out_dir: PathBuf::from("out").join(name),
        dim: 10,
        enc_dim: 10,
        kappa_min: 16.0,
        kappa_max: 32.0,
        family: Family::Vmf,
        kappa_pos: 20.0,
        batches: 100_000,
        batch_size: 512,
        lr: 1e-4,
        mc_samples: 512,
        negatives: 32,
        phasewise: true,
        seed: 0,
        loss: LossKind::McInfoNce,
        hib_a: 1.0,
        hib_b: 0.0,
        eval_every: 5000,
        eval_samples: 10_000,
        pair_budget: DEFAULT_PAIR_BUDGET,
    }
}

/// Built-in configurations: desk-scale runs for local checks and the
/// full-scale rows of the controlled experiments.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let desk = ExperimentConfig {
        name: "desk".into(),
        out_dir: PathBuf::from("out/desk"),
        dim: 3,
        enc_dim: 3,
        batches: 2000,
        batch_size: 128,
        lr: 1e-3,
        mc_samples: 16,
        negatives: 8,
        phasewise: true,
        eval_every: 200,
        eval_samples: 2000,
        ..fullscale("desk")
    };
    Ok(match name {
        "desk" => desk,
        "desk-dirac" => ExperimentConfig {
            name: name.into(),
            out_dir: PathBuf::from("out").join(name),
            family: Family::Dirac,
            ..desk
        },
        "ambiguous-fullscale" => fullscale(name),
        "clear-fullscale" => ExperimentConfig {
            kappa_min: 64.0,
            kappa_max: 128.0,
            ..fullscale(name)
        },
        "injective-fullscale" => ExperimentConfig {
            family: Family::Dirac,
            ..fullscale(name)
        },
        "d2-fullscale" => ExperimentConfig {
            dim: 2,
            enc_dim: 2,
            batches: 8192,
            ..fullscale(name)
        },
        "gaussian-fullscale" => ExperimentConfig {
            family: Family::Gaussian,
            ..fullscale(name)
        },
        "laplace-fullscale" => ExperimentConfig {
            family: Family::Laplace,
            ..fullscale(name)
        },
        _ => {
            return Err(Error::Config(format!(
                "unknown preset {name:?}; known presets: {}",
                PRESETS.join(", ")
            )))
        }
    })
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for key {key:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "invalid boolean {value:?} for key {key:?}"
        ))),
    }
}

impl ExperimentConfig {
    /// Keys accepted by [`ExperimentConfig::set`], in echo order.
    pub const KEYS: &'static [&'static str] = &[
        "name",
        "out_dir",
        "dim",
        "enc_dim",
        "kappa_min",
        "kappa_max",
        "family",
        "kappa_pos",
        "batches",
        "batch_size",
        "lr",
        "mc_samples",
        "negatives",
        "phasewise",
        "seed",
        "loss",
        "hib_a",
        "hib_b",
        "eval_every",
        "eval_samples",
        "pair_budget",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "name" => self.name = value.trim().to_string(),
            "out_dir" => self.out_dir = PathBuf::from(value.trim()),
            "dim" => self.dim = parse(key, value)?,
            "enc_dim" => self.enc_dim = parse(key, value)?,
            "kappa_min" => self.kappa_min = parse(key, value)?,
            "kappa_max" => self.kappa_max = parse(key, value)?,
            "family" => self.family = parse(key, value)?,
            "kappa_pos" => self.kappa_pos = parse(key, value)?,
            "batches" => self.batches = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "mc_samples" => self.mc_samples = parse(key, value)?,
            "negatives" => self.negatives = parse(key, value)?,
            "phasewise" => self.phasewise = parse_bool(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "loss" => self.loss = parse(key, value)?,
            "hib_a" => self.hib_a = parse(key, value)?,
            "hib_b" => self.hib_b = parse(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "eval_samples" => self.eval_samples = parse(key, value)?,
            "pair_budget" => self.pair_budget = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<String> {
        Ok(match key {
            "name" => self.name.clone(),
            "out_dir" => self.out_dir.display().to_string(),
            "dim" => self.dim.to_string(),
            "enc_dim" => self.enc_dim.to_string(),
            "kappa_min" => format!("{:?}", self.kappa_min),
            "kappa_max" => format!("{:?}", self.kappa_max),
            "family" => self.family.to_string(),
            "kappa_pos" => format!("{:?}", self.kappa_pos),
            "batches" => self.batches.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "lr" => format!("{:?}", self.lr),
            "mc_samples" => self.mc_samples.to_string(),
            "negatives" => self.negatives.to_string(),
            "phasewise" => self.phasewise.to_string(),
            "seed" => self.seed.to_string(),
            "loss" => self.loss.to_string(),
            "hib_a" => format!("{:?}", self.hib_a),
            "hib_b" => format!("{:?}", self.hib_b),
            "eval_every" => self.eval_every.to_string(),
            "eval_samples" => self.eval_samples.to_string(),
            "pair_budget" => self.pair_budget.to_string(),
            _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
        })
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value, got {raw:?}", n + 1))
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Applies a single `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {kv:?} is not key=value")))?;
        self.set(k.trim(), v)
    }

    /// The resolved configuration as `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in Self::KEYS {
            let _ = writeln!(s, "{k} = {}", self.get(k).expect("known key"));
        }
        s
    }

    pub fn process_config(&self) -> ProcessConfig {
        ProcessConfig {
            dim: self.dim,
            kappa_min: self.kappa_min,
            kappa_max: self.kappa_max,
            family: self.family,
            kappa_pos: self.kappa_pos,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batches: self.batches,
            batch_size: self.batch_size,
            lr: self.lr,
            k: self.mc_samples,
            m: self.negatives,
            kappa_pos: self.kappa_pos,
            phasewise: self.phasewise,
            seed: self.seed,
            loss: self.loss,
            hib_a: self.hib_a,
            hib_b: self.hib_b,
            eval_every: self.eval_every,
            eval_samples: self.eval_samples,
            pair_budget: self.pair_budget,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Config("name must not be empty".into()));
        }
        if self.dim < 2 || self.enc_dim < 2 {
            return Err(Error::Config(format!(
                "dim and enc_dim must be >= 2, got {} and {}",
                self.dim, self.enc_dim
            )));
        }
        if self.family != Family::Dirac
            && !(self.kappa_min > 1.0
                && self.kappa_max >= self.kappa_min
                && self.kappa_max.is_finite())
        {
            return Err(Error::Config(format!(
                "kappa range must satisfy 1 < kappa_min <= kappa_max < inf, got [{}, {}]",
                self.kappa_min, self.kappa_max
            )));
        }
        self.train_config().validate()
    }
}
