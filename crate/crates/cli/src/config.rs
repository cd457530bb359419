use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use ttl_core::classifier::ClassifierConfig;
use ttl_core::embedding::{ProviderConfig, ProviderKind};

/// Settings read from `ttl.toml`. Every field is optional; command-line
/// flags take precedence.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub provider: Option<String>,
    pub model: Option<String>,
    pub endpoint: Option<String>,
    pub dim: Option<usize>,
    pub batch_size: Option<usize>,
    pub k: Option<usize>,
    pub lc: Option<usize>,
}

impl FileConfig {
    /// Reads `path` when given, otherwise `./ttl.toml` when it exists.
    pub fn load(path: Option<&Path>) -> Result<FileConfig> {
        let (path, required) = match path {
            Some(p) => (p, true),
            None => (Path::new("ttl.toml"), false),
        };
        if !required && !path.exists() {
            return Ok(FileConfig::default());
        }
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Provider and K flags shared by the commands that classify.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct ProviderFlags {
    /// Labels per artifact.
    #[arg(long)]
    pub k: Option<usize>,
    /// `deterministic-hash` or `remote`.
    #[arg(long)]
    pub provider: Option<String>,
    /// Model id for the remote provider.
    #[arg(long)]
    pub model: Option<String>,
    /// Base URL of the remote embedding service.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Embedding dimension.
    #[arg(long)]
    pub dim: Option<usize>,
}

impl ProviderFlags {
    /// Classifier configuration from flags over file over `base`.
    pub fn resolve(&self, file: &FileConfig, base: &ClassifierConfig) -> Result<ClassifierConfig> {
        let mut cfg = base.clone();
        if let Some(k) = self.k.or(file.k) {
            cfg.k = k;
        }
        let kind: ProviderKind = match self.provider.as_deref().or(file.provider.as_deref()) {
            Some(s) => s.parse().map_err(anyhow::Error::msg)?,
            None => base.provider.provider,
        };
        let dim = self.dim.or(file.dim).unwrap_or(base.provider.dim);
        let mut provider = match kind {
            ProviderKind::DeterministicHash => ProviderConfig::deterministic(dim),
            ProviderKind::Remote => {
                let Some(endpoint) = self
                    .endpoint
                    .clone()
                    .or_else(|| file.endpoint.clone())
                    .or_else(|| base.provider.endpoint.clone())
                else {
                    bail!("the remote provider needs --endpoint or `endpoint` in ttl.toml");
                };
                let Some(model) = self
                    .model
                    .clone()
                    .or_else(|| file.model.clone())
                    .or_else(|| {
                        (base.provider.provider == ProviderKind::Remote)
                            .then(|| base.provider.model_id.clone())
                    })
                else {
                    bail!("the remote provider needs --model or `model` in ttl.toml");
                };
                ProviderConfig::remote(endpoint, model, dim)
            }
        };
        if let Some(b) = file.batch_size {
            provider.batch_size = b;
        }
        cfg.provider = provider;
        Ok(cfg)
    }
}
