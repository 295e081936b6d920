//! Experiment configuration as `key = value` lines.
//!
//! `#` starts a comment anywhere on a line. Blank lines are ignored.
//! Unknown and repeated keys are rejected. [`ExperimentConfig::to_text`]
//! writes every key in a fixed order so parse and serialise round-trip.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::SynthSpec;
use crate::error::{Error, Result};
use crate::nn::Arch;

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub arch: Arch,
    pub seed: u64,
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub train_size: usize,
    pub eval_size: usize,
    pub jitter: usize,
    /// `None` selects the architecture default.
    pub pyramid_width: Option<usize>,
    pub max_iters: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub eval_interval: usize,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            arch: Arch::Fapn,
            seed: 0,
            classes: 4,
            height: 64,
            width: 64,
            train_size: 200,
            eval_size: 100,
            jitter: 1,
            pyramid_width: None,
            max_iters: 500,
            base_lr: 0.01,
            weight_decay: 1e-4,
            eval_interval: 100,
            out: PathBuf::from("runs/default"),
        }
    }
}

pub const KEYS: [&str; 14] = [
    "arch",
    "seed",
    "classes",
    "height",
    "width",
    "train_size",
    "eval_size",
    "jitter",
    "pyramid_width",
    "max_iters",
    "base_lr",
    "weight_decay",
    "eval_interval",
    "out",
];

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "arch" => self.arch = v.parse()?,
            "seed" => self.seed = parse_num(key, v)?,
            "classes" => self.classes = parse_num(key, v)?,
            "height" => self.height = parse_num(key, v)?,
            "width" => self.width = parse_num(key, v)?,
            "train_size" => self.train_size = parse_num(key, v)?,
            "eval_size" => self.eval_size = parse_num(key, v)?,
            "jitter" => self.jitter = parse_num(key, v)?,
            "pyramid_width" => {
                self.pyramid_width = if v == "auto" { None } else { Some(parse_num(key, v)?) }
            }
            "max_iters" => self.max_iters = parse_num(key, v)?,
            "base_lr" => self.base_lr = parse_num(key, v)?,
            "weight_decay" => self.weight_decay = parse_num(key, v)?,
            "eval_interval" => self.eval_interval = parse_num(key, v)?,
            "out" => {
                if v.is_empty() {
                    return Err(Error::config("out", "empty path"));
                }
                self.out = PathBuf::from(v)
            }
            other => return Err(Error::config(other, "unknown key")),
        }
        Ok(())
    }

    /// `key=value` override as given on the command line.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::config(kv, "override must look like key=value"))?;
        self.set(k, v)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(line, format!("line {}: expected `key = value`", lineno + 1)))?;
            let k = k.trim();
            if seen.iter().any(|s| s == k) {
                return Err(Error::config(k, format!("line {}: duplicate key", lineno + 1)));
            }
            cfg.set(k, v)?;
            seen.push(k.to_string());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn value_of(&self, key: &str) -> Option<String> {
        Some(match key {
            "arch" => self.arch.name().to_string(),
            "seed" => self.seed.to_string(),
            "classes" => self.classes.to_string(),
            "height" => self.height.to_string(),
            "width" => self.width.to_string(),
            "train_size" => self.train_size.to_string(),
            "eval_size" => self.eval_size.to_string(),
            "jitter" => self.jitter.to_string(),
            "pyramid_width" => self.pyramid_width.map_or_else(|| "auto".into(), |w| w.to_string()),
            "max_iters" => self.max_iters.to_string(),
            "base_lr" => format!("{:?}", self.base_lr),
            "weight_decay" => format!("{:?}", self.weight_decay),
            "eval_interval" => self.eval_interval.to_string(),
            "out" => self.out.display().to_string(),
            _ => return None,
        })
    }

    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.value_of(k).unwrap_or_default()))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.synth_spec().validate()?;
        if self.train_size == 0 {
            return Err(Error::config("train_size", "must be >= 1"));
        }
        if self.eval_size == 0 {
            return Err(Error::config("eval_size", "must be >= 1"));
        }
        if self.max_iters == 0 {
            return Err(Error::config("max_iters", "must be >= 1"));
        }
        if self.eval_interval == 0 {
            return Err(Error::config("eval_interval", "must be >= 1"));
        }
        if self.pyramid_width == Some(0) {
            return Err(Error::config("pyramid_width", "must be >= 1 or auto"));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::config("base_lr", "must be finite and > 0"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay", "must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            height: self.height,
            width: self.width,
            classes: self.classes,
            jitter: self.jitter,
        }
    }

    /// Resolved D'.
    pub fn resolved_width(&self) -> usize {
        self.pyramid_width.unwrap_or_else(|| self.arch.default_width())
    }
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_round_trip() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::parse(&c.to_text()).unwrap(), c);
        assert_eq!(c.resolved_width(), 256);
    }

    #[test]
    fn comments_and_blanks() {
        let c = ExperimentConfig::parse("# header\n\narch = fpn   # trailing\nseed=7\npyramid_width = 32\n").unwrap();
        assert_eq!(c.arch, Arch::Fpn);
        assert_eq!(c.seed, 7);
        assert_eq!(c.resolved_width(), 32);
    }

    #[test]
    fn unknown_key_names_key() {
        let err = ExperimentConfig::parse("learning_rate = 0.1\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "learning_rate"));
    }

    #[test]
    fn rejects_duplicates_and_bad_values() {
        assert!(ExperimentConfig::parse("seed = 1\nseed = 2\n").is_err());
        assert!(matches!(
            ExperimentConfig::parse("height = 40\n"),
            Err(Error::Config { .. })
        ));
        assert!(ExperimentConfig::parse("base_lr = -1\n").is_err());
        assert!(ExperimentConfig::parse("arch = resnet\n").is_err());
        assert!(ExperimentConfig::parse("seed 1\n").is_err());
    }

    #[test]
    fn overrides() {
        let mut c = ExperimentConfig::default();
        c.apply_override("max_iters=20").unwrap();
        assert_eq!(c.max_iters, 20);
        assert!(c.apply_override("max_iters").is_err());
        assert!(c.apply_override("nope=1").is_err());
    }

    proptest! {
        #[test]
        fn round_trip(
            arch in 0usize..7,
            seed in any::<u64>(),
            classes in 2usize..9,
            hm in 1usize..4,
            wm in 1usize..4,
            jitter in 0usize..3,
            width in proptest::option::of(1usize..300),
            lr in 1e-6f64..1.0,
            wd in 0.0f64..1e-2,
            iters in 1usize..10_000,
        ) {
            let c = ExperimentConfig {
                arch: Arch::ALL[arch],
                seed,
                classes,
                height: 32 * hm,
                width: 32 * wm,
                jitter,
                pyramid_width: width,
                base_lr: lr,
                weight_decay: wd,
                max_iters: iters,
                ..ExperimentConfig::default()
            };
            let text = c.to_text();
            let back = ExperimentConfig::parse(&text).unwrap();
            prop_assert_eq!(&back, &c);
            prop_assert_eq!(back.to_text(), text);
        }
    }
}
