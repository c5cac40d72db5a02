//! JSON run configuration.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::harness::compare::MIN_SEEDS;
use crate::harness::{TrainConfig, Variant};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Gradcheck,
    Cost,
    Train,
    Compare,
    Descriptors,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Command::Gradcheck => "gradcheck",
            Command::Cost => "cost",
            Command::Train => "train",
            Command::Compare => "compare",
            Command::Descriptors => "descriptors",
        })
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.to_string()))
            .map_err(|_| Error::UnknownName(s.to_string()))
    }
}

/// Settings for every subcommand that reads a config file. All
/// [`TrainConfig`] keys sit at the top level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    #[serde(flatten)]
    pub train: TrainConfig,
    /// Variant compared against `variant` by `compare`.
    pub variant_b: Variant,
    /// Seeds used by `compare`.
    pub seeds: Vec<u64>,
    /// Directory for weights, metrics and summaries.
    pub out: Option<PathBuf>,
    /// Directory holding cached `train.psaw` / `val.psaw` datasets.
    pub dataset_cache: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: Command::Train,
            train: TrainConfig::default(),
            variant_b: "psa-parallel".parse().expect("valid variant"),
            seeds: vec![0, 1, 2, 3, 4],
            out: None,
            dataset_cache: None,
        }
    }
}

fn default_map() -> Map<String, Value> {
    match serde_json::to_value(RunConfig::default()).expect("defaults serialize") {
        Value::Object(m) => m,
        _ => unreachable!("RunConfig serializes to an object"),
    }
}

/// Every key a config file may set.
pub fn known_keys() -> Vec<String> {
    default_map().keys().cloned().collect()
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if let Some(kind) = self.variant_b.attention() {
            kind.validate_channels(self.train.width)
                .map_err(|e| Error::OutOfRange {
                    key: "variant_b".into(),
                    message: e.to_string(),
                })?;
        }
        if self.command == Command::Compare && self.seeds.len() < MIN_SEEDS {
            return Err(Error::OutOfRange {
                key: "seeds".into(),
                message: format!("compare needs at least {MIN_SEEDS} seeds"),
            });
        }
        Ok(())
    }

    /// The `TrainConfig` for the second arm of `compare`.
    pub fn train_b(&self) -> TrainConfig {
        TrainConfig {
            variant: self.variant_b,
            ..self.train.clone()
        }
    }
}

/// Parses a JSON object into a validated config; absent keys take their
/// defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| Error::MalformedJson(e.to_string()))?;
    let Value::Object(user) = value else {
        return Err(Error::MalformedJson(
            "configuration must be a JSON object".into(),
        ));
    };
    let defaults = default_map();
    if let Some(key) = user.keys().find(|k| !defaults.contains_key(*k)) {
        return Err(Error::UnknownKey(key.clone()));
    }
    // Try each key alone first so a type error names its key.
    for (key, v) in &user {
        let mut single = defaults.clone();
        single.insert(key.clone(), v.clone());
        serde_json::from_value::<RunConfig>(Value::Object(single)).map_err(|e| {
            Error::OutOfRange {
                key: key.clone(),
                message: e.to_string(),
            }
        })?;
    }
    let mut merged = defaults;
    merged.extend(user);
    let cfg: RunConfig = serde_json::from_value(Value::Object(merged))
        .map_err(|e| Error::MalformedJson(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}
