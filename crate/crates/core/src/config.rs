//! Run configuration: one TOML file with `section.key=value` overrides.
//!
//! Every field has a default, so an empty file is a valid configuration.
//! Keys that do not belong to the schema are rejected rather than ignored.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::adversary::AdversaryConfig;
use crate::augmentation::AugmentMode;
use crate::error::{Error, Result};
use crate::generator::{Awareness, DecodeConfig, GeneratorConfig};
use crate::oracle::BalanceMode;
use crate::rl::{FinetuneConfig, PretrainConfig};
use crate::types::{DecodeStrategy, Relation};

pub const NLI_ENDPOINT_VAR: &str = "RELPARA_NLI_ENDPOINT";
pub const SIMILARITY_ENDPOINT_VAR: &str = "RELPARA_SIMILARITY_ENDPOINT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliKind {
    /// Rule backend over token sets, optionally with a synonym file.
    #[default]
    Synthetic,
    Http,
    /// No oracle; commands that need one fail with a configuration error.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityKind {
    #[default]
    Overlap,
    Http,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub nli: NliKind,
    pub nli_endpoint: Option<String>,
    /// One synonym group per line, whitespace separated.
    pub synonyms: Option<PathBuf>,
    pub similarity: SimilarityKind,
    pub similarity_endpoint: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeakLabelConfig {
    pub balance: Option<BalanceMode>,
    pub seed: u64,
}

impl Default for WeakLabelConfig {
    fn default() -> Self {
        Self { balance: Some(BalanceMode::Upsample), seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateConfig {
    pub strategy: DecodeStrategy,
    pub decode: DecodeConfig,
    /// Samples drawn per input by `rerank`.
    pub k: usize,
    pub seed: u64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self { strategy: DecodeStrategy::Beam, decode: DecodeConfig::default(), k: 20, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub mode: AugmentMode,
    pub relations: Vec<Relation>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { mode: AugmentMode::Aware, relations: vec![Relation::Eq, Relation::Fwd, Relation::Rev] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Whether generator inputs carry a control token.
    pub awareness: Awareness,
    pub backends: BackendConfig,
    pub weak_label: WeakLabelConfig,
    pub generator: GeneratorConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub adversary: AdversaryConfig,
    pub generate: GenerateConfig,
    pub augment: AugmentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            awareness: Awareness::Aware,
            backends: BackendConfig::default(),
            weak_label: WeakLabelConfig::default(),
            generator: GeneratorConfig::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            adversary: AdversaryConfig::default(),
            generate: GenerateConfig::default(),
            augment: AugmentConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads `path` (or starts from defaults), applies `overrides` of the
    /// form `section.key=value` and environment endpoint overrides, and
    /// validates the result.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| match e.kind() {
                    std::io::ErrorKind::NotFound => Error::MissingInput(p.to_path_buf()),
                    _ => e.into(),
                })?;
                text.parse::<Table>().map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: RunConfig =
            Value::Table(table.clone()).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let canonical = Value::try_from(&cfg).map_err(|e| Error::Config(e.to_string()))?;
        let mut unknown = Vec::new();
        unknown_keys(&Value::Table(table), &canonical, "", &mut unknown);
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))));
        }
        if let Ok(ep) = std::env::var(NLI_ENDPOINT_VAR) {
            cfg.backends.nli = NliKind::Http;
            cfg.backends.nli_endpoint = Some(ep);
        }
        if let Ok(ep) = std::env::var(SIMILARITY_ENDPOINT_VAR) {
            cfg.backends.similarity = SimilarityKind::Http;
            cfg.backends.similarity_endpoint = Some(ep);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.pretrain.validate()?;
        self.finetune.validate()?;
        self.generate.decode.validate()?;
        if self.generate.k == 0 {
            return Err(Error::Config("generate.k must be at least 1".into()));
        }
        if self.backends.nli == NliKind::Http && self.backends.nli_endpoint.is_none() {
            return Err(Error::Config("backends.nli = \"http\" needs backends.nli_endpoint".into()));
        }
        if self.backends.similarity == SimilarityKind::Http && self.backends.similarity_endpoint.is_none() {
            return Err(Error::Config("backends.similarity = \"http\" needs backends.similarity_endpoint".into()));
        }
        for r in &self.augment.relations {
            r.control_index().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Sets `section.key` in `table`; the value is read as a TOML literal and
/// falls back to a plain string.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("bad override key {path:?}")));
    }
    let value = format!("v = {}", raw.trim())
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.trim().to_string()));
    let (last, parents) = keys.split_last().unwrap();
    let mut cur = table;
    for k in parents {
        cur = cur
            .entry(k.to_string())
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{path}: {k} is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn unknown_keys(given: &Value, canonical: &Value, prefix: &str, out: &mut Vec<String>) {
    let Value::Table(given) = given else { return };
    let canonical = canonical.as_table();
    for (k, v) in given {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match canonical.and_then(|c| c.get(k)) {
            Some(c) => unknown_keys(v, c, &path, out),
            None => out.push(path),
        }
    }
}
