//! JSON run configuration with `section.key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::training::TrainConfig;

fn default_min_count() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Canonical `label<TAB>text` corpora.
    pub train: PathBuf,
    pub dev: PathBuf,
    #[serde(default)]
    pub test: Option<PathBuf>,
    #[serde(default = "default_min_count")]
    pub min_count: usize,
    /// Pretrained vectors, `token v1 … vd` per line.
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
    #[serde(default)]
    pub freeze_embeddings: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: EncoderConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub output_dir: PathBuf,
}

impl RunConfig {
    /// Parses `text`, applies `overrides` (`a.b=value`, value read as JSON
    /// and taken as a string otherwise) and resolves relative data paths
    /// against `base_dir`.
    pub fn from_json(text: &str, overrides: &[String], base_dir: &Path) -> Result<Self> {
        let mut value: Value = serde_json::from_str(text).map_err(|e| Error::config(format!("config: {e}")))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::config(format!("config: {e}")))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        resolve(&mut cfg.data.train);
        resolve(&mut cfg.data.dev);
        cfg.data.test.as_mut().map(resolve);
        cfg.data.embeddings.as_mut().map(resolve);
        if !cfg.output_dir.as_os_str().is_empty() {
            resolve(&mut cfg.output_dir);
        }
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it are relative to the
    /// file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::from_json(&text, overrides, base)
    }

    /// Checks every precondition that can be checked without training.
    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| prefix("model", e))?;
        self.train.validate().map_err(|e| prefix("train", e))?;
        let files = [("data.train", Some(&self.data.train)), ("data.dev", Some(&self.data.dev))]
            .into_iter()
            .chain([("data.test", self.data.test.as_ref()), ("data.embeddings", self.data.embeddings.as_ref())]);
        for (field, path) in files {
            if let Some(p) = path {
                if !p.is_file() {
                    return Err(Error::config(format!("{field}: no such file {}", p.display())));
                }
            }
        }
        if self.data.min_count == 0 {
            return Err(Error::config("data.min_count must be at least 1"));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(Error::config("output_dir must not be empty"));
        }
        if self.output_dir.is_file() {
            return Err(Error::config(format!("output_dir: {} is a file", self.output_dir.display())));
        }
        Ok(())
    }
}

fn prefix(section: &str, e: Error) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("{section}: {m}")),
        other => other,
    }
}

fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override `{assignment}` is not key=value")))?;
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::config(format!("override `{key}`: `{}` is not a section", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Err(Error::config("empty override key"))
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "model": {"cell_kind": "clstm", "bidirectional": true, "input_dim": 8, "hidden": 12, "groups": 3, "classes": 5, "use_bias": false},
        "train": {"learning_rate": 0.01, "weight_decay": 1e-4, "batch_size": 4, "max_epochs": 2, "seed": 7},
        "data": {"train": "train.tsv", "dev": "dev.tsv"},
        "output_dir": "out"
    }"#;

    #[test]
    fn parses_and_overrides() {
        let ov = vec!["train.seed=11".to_string(), "model.cell_kind=lstm".into(), "model.groups=1".into()];
        let cfg = RunConfig::from_json(BASE, &ov, Path::new("/data")).unwrap();
        assert_eq!(cfg.train.seed, 11);
        assert_eq!(cfg.model.cell_kind, crate::cells::CellKind::Lstm);
        assert_eq!(cfg.data.train, PathBuf::from("/data/train.tsv"));
        assert_eq!(cfg.data.min_count, 1);
        assert_eq!(cfg.train.gradient_clip_norm, None);
    }

    #[test]
    fn rejects_unknown_keys() {
        let err = RunConfig::from_json(BASE, &["train.momentum=0.9".into()], Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("momentum"), "{err}");
        assert!(RunConfig::from_json(BASE, &["nokey".into()], Path::new(".")).is_err());
        assert!(RunConfig::from_json("{", &[], Path::new(".")).is_err());
    }

    #[test]
    fn validation_names_the_field() {
        let cfg = RunConfig::from_json(BASE, &[], Path::new("/nonexistent")).unwrap();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("data.train"), "{err}");
        let cfg = RunConfig::from_json(BASE, &["model.groups=5".into()], Path::new(".")).unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("model:"));
    }
}
