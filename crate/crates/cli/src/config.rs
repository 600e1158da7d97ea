//! Run configuration: one JSON file holding the model, training and path
//! settings, with dotted `key=value` overrides applied before parsing.

use std::path::{Path, PathBuf};

use radgraph::model::ModelConfig;
use radgraph::train::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

/// Filesystem locations used by `train`. Relative paths resolve against
/// the working directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Training corpus directory.
    pub dataset: Option<PathBuf>,
    /// Held-out corpus; metrics fall back to the training set without one.
    pub validation: Option<PathBuf>,
    /// Checkpoint manifest to initialize from instead of a fresh model.
    pub checkpoint: Option<PathBuf>,
    /// Run directory receiving the checkpoint, config copy and metrics.
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub paths: Paths,
}

impl RunConfig {
    /// Parses `text`, applies `overrides` and validates. Every unknown key
    /// is reported, not just the first.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut tree: Value =
            serde_json::from_str(text).map_err(|e| CliError::validation(format!("config is not valid JSON: {e}")))?;
        if !tree.is_object() {
            return Err(CliError::validation("config must be a JSON object"));
        }
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        let defaults = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
        let mut unknown = Vec::new();
        unknown_keys(&tree, &defaults, "", &mut unknown);
        if !unknown.is_empty() {
            return Err(CliError::validation(format!("unknown config keys: {}", unknown.join(", "))));
        }
        let config: RunConfig =
            serde_json::from_value(tree).map_err(|e| CliError::validation(format!("invalid config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        Self::parse(&text, overrides)
    }

    /// Collects every model and training problem into one error.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut problems = Vec::new();
        if let Err(radgraph::model::ModelError::InvalidConfig(e)) = self.model.validate() {
            problems.extend(e);
        }
        if let Err(radgraph::train::TrainError::InvalidConfig(e)) = self.train.validate() {
            problems.extend(e);
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::validation(format!("invalid config: {}", problems.join("; "))))
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Records keys of `tree` with no counterpart in `reference`. Only
/// object-valued reference nodes are descended into.
fn unknown_keys(tree: &Value, reference: &Value, prefix: &str, out: &mut Vec<String>) {
    let (Value::Object(t), Value::Object(r)) = (tree, reference) else {
        return;
    };
    for (k, v) in t {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match r.get(k) {
            Some(rv) => unknown_keys(v, rv, &path, out),
            None => out.push(path),
        }
    }
}

/// Applies `a.b.c=value`. The value is read as JSON when it parses and as
/// a plain string otherwise, so `train.mode=vanilla` needs no quotes.
pub fn apply_override(tree: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::validation(format!("override {assignment:?} is not key=value")))?;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::validation(format!("override key {key:?} is malformed")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = tree;
    for p in &parts[..parts.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::validation(format!("override {key:?} descends into a non-object")))?;
        node = obj.entry(p.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| CliError::validation(format!("override {key:?} descends into a non-object")))?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
