//! Run configuration. Files are flat `key = value` lines; `#` starts a
//! comment. Command-line flags are applied afterwards and win.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metapath::{parse_meta_paths, DEFAULT_PAIR_CAP};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {reason}")]
    BadValue { key: String, reason: String },
}

pub const WINDOW_VARIANTS: [usize; 3] = [3, 5, 7];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub window_length: usize,
    pub hidden_width: usize,
    /// Output width `d`; equals the community count. Inferred from labels
    /// when unset.
    pub communities: Option<usize>,
    pub attention_dim: usize,
    /// `a1-e1-a2-e2-a3` strings; derived from the data when empty.
    pub meta_paths: Vec<String>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub train_label_fraction: f64,
    pub seed: u64,
    pub input: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    /// Labeled node type; inferred when unset.
    pub target_type: Option<u32>,
    pub pair_cap: usize,
    pub keep_self_pairs: bool,
    pub attention_rescale: bool,
    pub use_rescac: bool,
    pub plateau_epochs: usize,
    pub plateau_tolerance: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            window_length: 3,
            hidden_width: 16,
            communities: None,
            attention_dim: 8,
            meta_paths: Vec::new(),
            learning_rate: 0.001,
            epochs: 200,
            train_label_fraction: 0.8,
            seed: 0,
            input: None,
            output_dir: None,
            target_type: None,
            pair_cap: DEFAULT_PAIR_CAP,
            keep_self_pairs: false,
            attention_rescale: false,
            use_rescac: true,
            plateau_epochs: 30,
            plateau_tolerance: 1e-6,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue { key: key.to_string(), reason: e.to_string() })
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        match key.trim() {
            "window" | "window_length" => self.window_length = parse(key, value)?,
            "hidden" | "hidden_width" => self.hidden_width = parse(key, value)?,
            "communities" | "d" => self.communities = Some(parse(key, value)?),
            "attention_dim" | "d_a" => self.attention_dim = parse(key, value)?,
            "meta_paths" => {
                parse_meta_paths(value)
                    .map_err(|e| ConfigError::BadValue { key: key.to_string(), reason: e.to_string() })?;
                self.meta_paths = value.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
            }
            "lr" | "learning_rate" => self.learning_rate = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "label_rate" | "train_label_fraction" => self.train_label_fraction = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "in" | "input" => self.input = Some(PathBuf::from(value)),
            "out" | "output_dir" => self.output_dir = Some(PathBuf::from(value)),
            "target_type" => self.target_type = Some(parse(key, value)?),
            "pair_cap" => self.pair_cap = parse(key, value)?,
            "keep_self_pairs" => self.keep_self_pairs = parse(key, value)?,
            "attention_rescale" => {
                // `N` is accepted as an alias for enabling the rescale
                self.attention_rescale = value.eq_ignore_ascii_case("n") || parse::<bool>(key, value)?;
            }
            "use_rescac" => self.use_rescac = parse(key, value)?,
            "plateau_epochs" => self.plateau_epochs = parse(key, value)?,
            "plateau_tolerance" => self.plateau_tolerance = parse(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, reason: String| Err(ConfigError::BadValue { key: key.to_string(), reason });
        if !WINDOW_VARIANTS.contains(&self.window_length) {
            return bad("window", format!("{} is not one of 3, 5, 7", self.window_length));
        }
        if self.hidden_width == 0 {
            return bad("hidden", "must be positive".into());
        }
        if self.attention_dim == 0 {
            return bad("attention_dim", "must be positive".into());
        }
        if self.communities == Some(0) {
            return bad("communities", "must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("lr", format!("{} must be positive", self.learning_rate));
        }
        if !(self.train_label_fraction > 0.0 && self.train_label_fraction <= 1.0) {
            return bad("label_rate", format!("{} not in (0, 1]", self.train_label_fraction));
        }
        if self.pair_cap == 0 {
            return bad("pair_cap", "must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_overrides() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("# comment\nwindow = 5\nlr=0.01  # inline\nmeta_paths = 0-0-1-0-0, 0-1-2-1-0\n").unwrap();
        assert_eq!(cfg.window_length, 5);
        assert_eq!(cfg.learning_rate, 0.01);
        assert_eq!(cfg.meta_paths.len(), 2);
        cfg.set("window", "7").unwrap();
        assert_eq!(cfg.window_length, 7);
        cfg.set("attention_rescale", "N").unwrap();
        assert!(cfg.attention_rescale);
    }

    #[test]
    fn errors() {
        let mut cfg = RunConfig::default();
        assert!(matches!(cfg.apply_text("window 3"), Err(ConfigError::Syntax { line: 1 })));
        assert!(matches!(cfg.set("colour", "red"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(cfg.set("epochs", "-1"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(cfg.set("meta_paths", "0-1"), Err(ConfigError::BadValue { .. })));
        cfg.window_length = 4;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn defaults_are_valid() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.learning_rate, 0.001);
        assert_eq!(cfg.epochs, 200);
        assert_eq!(cfg.train_label_fraction, 0.8);
    }
}
