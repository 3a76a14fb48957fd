//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::entity_linker::LinkerParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TaggerMode {
    /// Exact knowledge-base name matching only.
    #[default]
    Gazetteer,
    /// Mentions from a tag file only.
    External,
    /// Both sources, merged per line.
    Merged,
}

impl fmt::Display for TaggerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaggerMode::Gazetteer => "gazetteer",
            TaggerMode::External => "external",
            TaggerMode::Merged => "merged",
        })
    }
}

impl FromStr for TaggerMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gazetteer" => Ok(TaggerMode::Gazetteer),
            "external" => Ok(TaggerMode::External),
            "merged" => Ok(TaggerMode::Merged),
            other => Err(format!("unknown tagger mode `{other}`")),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config line {line}: expected `key = value`")]
    Malformed { line: usize },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`: {reason}")]
    BadValue { key: String, value: String, reason: String },
}

/// Resource paths and linker settings. Unset paths mean the bundled
/// resource (or, for embeddings and tags, none).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Config {
    pub kb_concepts: Option<PathBuf>,
    pub kb_attributes: Option<PathBuf>,
    pub grammar: Option<PathBuf>,
    pub negation_rules: Option<PathBuf>,
    pub intent_rules: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub tags: Option<PathBuf>,
    pub linker: LinkerParams,
    pub tagger: TaggerMode,
}

pub const KEYS: &[&str] = &[
    "kb_concepts",
    "kb_attributes",
    "grammar",
    "negation_rules",
    "intent_rules",
    "embeddings",
    "tags",
    "eps",
    "min_points",
    "theta",
    "tagger",
];

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, path.parent())
    }

    /// Parses config text. Relative paths are resolved against `base`.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Malformed { line: i + 1 })?;
            config.set(key.trim(), value.trim(), base)?;
        }
        Ok(config)
    }

    /// Sets one key, as from a config line or a command-line override.
    pub fn set(&mut self, key: &str, value: &str, base: Option<&Path>) -> Result<(), ConfigError> {
        let bad = |reason: &str| ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
            reason: reason.to_string(),
        };
        let path = || {
            let p = PathBuf::from(value);
            match base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p,
            }
        };
        match key {
            "kb_concepts" => self.kb_concepts = Some(path()),
            "kb_attributes" => self.kb_attributes = Some(path()),
            "grammar" => self.grammar = Some(path()),
            "negation_rules" => self.negation_rules = Some(path()),
            "intent_rules" => self.intent_rules = Some(path()),
            "embeddings" => self.embeddings = Some(path()),
            "tags" => self.tags = Some(path()),
            "eps" => {
                let eps: f64 = value.parse().map_err(|_| bad("not a number"))?;
                if !(eps > 0.0 && eps.is_finite()) {
                    return Err(bad("must be positive"));
                }
                self.linker.eps = eps;
            }
            "min_points" => {
                let m: usize = value.parse().map_err(|_| bad("not a whole number"))?;
                if m == 0 {
                    return Err(bad("must be at least 1"));
                }
                self.linker.min_points = m;
            }
            "theta" => {
                let t: f64 = value.parse().map_err(|_| bad("not a number"))?;
                if !(0.0..=1.0).contains(&t) {
                    return Err(bad("must lie in [0, 1]"));
                }
                self.linker.theta = t;
            }
            "tagger" => self.tagger = value.parse().map_err(|e: String| bad(&e))?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Every key with its effective value, for logging into output headers.
    pub fn to_map(&self) -> BTreeMap<&'static str, String> {
        let path = |p: &Option<PathBuf>, unset: &str| p.as_ref().map_or(unset.to_string(), |p| p.display().to_string());
        BTreeMap::from([
            ("kb_concepts", path(&self.kb_concepts, "bundled")),
            ("kb_attributes", path(&self.kb_attributes, "bundled")),
            ("grammar", path(&self.grammar, "bundled")),
            ("negation_rules", path(&self.negation_rules, "bundled")),
            ("intent_rules", path(&self.intent_rules, "bundled")),
            ("embeddings", path(&self.embeddings, "none")),
            ("tags", path(&self.tags, "none")),
            ("eps", self.linker.eps.to_string()),
            ("min_points", self.linker.min_points.to_string()),
            ("theta", self.linker.theta.to_string()),
            ("tagger", self.tagger.to_string()),
        ])
    }
}
