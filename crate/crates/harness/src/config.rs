//! Flat `key = value` configuration files.
//!
//! One assignment per line, `#` starts a comment, blank lines are ignored.
//! Lists are comma separated. Unknown or repeated keys are errors. See
//! `docs/config.md` for the full key reference.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dphr_core::{Directions, EncoderMode, SynthConfig, TrainConfig, Variant};

use crate::error::{HarnessError, Result};

/// Everything one invocation of the harness needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub ks: Vec<usize>,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            variants: vec![
                Variant::Baseline,
                Variant::RdaOnly,
                Variant::PalwOnly,
                Variant::Dphr,
            ],
            seeds: vec![0],
            ks: vec![1, 5, 10],
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Every accepted key, in documentation order.
pub const KEYS: &[&str] = &[
    "n_classes",
    "dim",
    "noise_sigma",
    "view_offset_sigma",
    "hard_pair_fraction",
    "hard_pair_angle",
    "seed",
    "mode",
    "lr",
    "epochs",
    "batch_size",
    "margin",
    "w_min",
    "w_max",
    "window",
    "sigma_min",
    "sigma_max",
    "delta_min",
    "delta_max",
    "gamma",
    "beta",
    "variant",
    "normalize",
    "directions",
    "embed_dim",
    "her_temperature",
    "her_clip",
    "variants",
    "seeds",
    "ks",
    "out_dir",
];

fn parse_value<T: FromStr>(value: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| format!("invalid value '{value}': {e}"))
}

fn parse_bool(value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        other => Err(format!("invalid boolean '{other}'")),
    }
}

fn parse_list<T: FromStr>(value: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse_value)
        .collect()
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Parses config text on top of the defaults. `origin` only labels errors.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let err = |msg: String| HarnessError::Parse {
                path: origin.to_path_buf(),
                line: line_no,
                msg,
            };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected 'key = value', got '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(err(format!("unknown key '{key}'")));
            }
            if !seen.insert(key.to_string()) {
                return Err(err(format!("duplicate key '{key}'")));
            }
            cfg.set(key, value).map_err(err)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let s = &mut self.synth;
        let t = &mut self.train;
        match key {
            "n_classes" => s.n_classes = parse_value(value)?,
            "dim" => s.dim = parse_value(value)?,
            "noise_sigma" => s.noise_sigma = parse_value(value)?,
            "view_offset_sigma" => s.view_offset_sigma = parse_value(value)?,
            "hard_pair_fraction" => s.hard_pair_fraction = parse_value(value)?,
            "hard_pair_angle" => s.hard_pair_angle = parse_value(value)?,
            "seed" => {
                let seed: u64 = parse_value(value)?;
                s.seed = seed;
                t.seed = seed;
            }
            "mode" => t.mode = value.parse::<EncoderMode>().map_err(|e| e.to_string())?,
            "lr" => t.lr = parse_value(value)?,
            "epochs" => t.epochs = parse_value(value)?,
            "batch_size" => t.batch_size = parse_value(value)?,
            "margin" => t.margin = parse_value(value)?,
            "w_min" => t.weights.lo = parse_value(value)?,
            "w_max" => t.weights.hi = parse_value(value)?,
            "window" => t.palw.window = parse_value(value)?,
            "sigma_min" => t.palw.sigma_min = parse_value(value)?,
            "sigma_max" => t.palw.sigma_max = parse_value(value)?,
            "delta_min" => t.palw.delta_min = parse_value(value)?,
            "delta_max" => t.palw.delta_max = parse_value(value)?,
            "gamma" => t.palw.gamma = parse_value(value)?,
            "beta" => t.palw.beta = parse_value(value)?,
            "variant" => t.variant = value.parse::<Variant>().map_err(|e| e.to_string())?,
            "normalize" => t.normalize = parse_bool(value)?,
            "directions" => {
                t.directions = value.parse::<Directions>().map_err(|e| e.to_string())?
            }
            "embed_dim" => t.embed_dim = Some(parse_value(value)?),
            "her_temperature" => t.her.temperature = parse_value(value)?,
            "her_clip" => t.her.clip = parse_value(value)?,
            "variants" => {
                self.variants = value
                    .split(',')
                    .map(str::trim)
                    .filter(|v| !v.is_empty())
                    .map(|v| v.parse::<Variant>().map_err(|e| e.to_string()))
                    .collect::<std::result::Result<_, _>>()?
            }
            "seeds" => self.seeds = parse_list(value)?,
            "ks" => self.ks = parse_list(value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            _ => unreachable!("key list checked by caller"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("seed list must not be empty".into()));
        }
        if self.variants.is_empty() {
            return Err(HarnessError::Config(
                "variant list must not be empty".into(),
            ));
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(HarnessError::Config(
                "ks must be a non-empty list of positive integers".into(),
            ));
        }
        self.synth.validate()?;
        self.train.validate(self.synth.n_classes)?;
        Ok(())
    }

    /// Copy with data and training seeds set to `seed`.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.synth.seed = seed;
        c.train.seed = seed;
        c
    }
}
