//! Experiment configuration file (TOML).
//!
//! Every key has a default, so an empty file is a valid configuration of the
//! default 15-client, 3-DGP task. Unknown keys are rejected with the key name.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ocfl_core::clustering::ClusteringConfig;
use ocfl_core::datagen::{FeatureSpace, SplitPlan};
use ocfl_core::federation::{BaselineConfig, FederationConfig, ModelConfig, TriggerConfig};
use ocfl_core::model::{OptimizerConfig, ServerOptConfig};
use ocfl_core::xai::{FeatureOrder, IndeConfig, IndeMode, TargetClass};
use ocfl_core::Exec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Name of the resolved configuration written into every run directory.
pub const RESOLVED_CONFIG: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Label used by `report`; defaults to the run directory name.
    pub name: Option<String>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub rounds: usize,
    pub data: SplitPlan,
    pub features: FeatureSpace,
    pub model: ModelConfig,
    pub client_opt: OptimizerConfig,
    pub server_opt: ServerOptConfig,
    pub strategy: BaselineConfig,
    pub clustering: ClusteringConfig,
    pub trigger: TriggerConfig,
    pub inde: Option<InDeSettings>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let fed = FederationConfig::default();
        Self {
            name: None,
            seeds: vec![0],
            output_dir: PathBuf::from("runs/default"),
            rounds: fed.rounds,
            data: SplitPlan::default(),
            features: FeatureSpace::default(),
            model: fed.model,
            client_opt: fed.client_opt,
            server_opt: fed.server_opt,
            strategy: fed.baseline,
            clustering: fed.clustering,
            trigger: fed.trigger,
            inde: None,
        }
    }
}

/// Insertion/deletion settings shared by every requested mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InDeSettings {
    pub modes: Vec<IndeMode>,
    pub sample_size: f64,
    pub step: usize,
    pub baseline_value: f64,
    pub order: FeatureOrder,
    pub target: TargetClass,
}

impl Default for InDeSettings {
    fn default() -> Self {
        let d = IndeConfig::default();
        Self {
            modes: IndeMode::ALL.to_vec(),
            sample_size: d.sample_size,
            step: d.step,
            baseline_value: d.baseline_value,
            order: d.order,
            target: d.target,
        }
    }
}

impl InDeSettings {
    pub fn for_mode(&self, mode: IndeMode, exec: Exec) -> IndeConfig {
        IndeConfig {
            mode,
            sample_size: self.sample_size,
            step: self.step,
            baseline_value: self.baseline_value,
            order: self.order,
            target: self.target,
            exec,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            bail!("inde.modes must not be empty");
        }
        self.for_mode(IndeMode::InDistribution, Exec::Sequential).validate()?;
        Ok(())
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| anyhow::anyhow!("config parse error: {}", e.message()).context(format_span(text, e.span())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("seeds must not be empty");
        }
        self.data.validate()?;
        self.features.validate()?;
        self.data.label_subspaces(self.features.global_classes)?;
        self.federation(Exec::Sequential).validate()?;
        if let Some(inde) = &self.inde {
            inde.validate()?;
        }
        Ok(())
    }

    pub fn federation(&self, exec: Exec) -> FederationConfig {
        FederationConfig {
            rounds: self.rounds,
            model: self.model.clone(),
            client_opt: self.client_opt.clone(),
            server_opt: self.server_opt.clone(),
            baseline: self.strategy.clone(),
            clustering: self.clustering.clone(),
            trigger: self.trigger.clone(),
            exec,
        }
    }

    /// Canonical TOML of the fully resolved configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    /// SHA-256 of the canonical TOML, independent of `seeds` and
    /// `output_dir` so the same experiment hashes equally wherever it runs.
    pub fn hash(&self) -> String {
        let canon = Self { seeds: Vec::new(), output_dir: PathBuf::new(), ..self.clone() };
        hex::encode(Sha256::digest(canon.to_toml().as_bytes()))
    }
}

fn format_span(text: &str, span: Option<std::ops::Range<usize>>) -> String {
    match span {
        Some(r) => {
            let line = text[..r.start.min(text.len())].matches('\n').count() + 1;
            format!("at line {line}: `{}`", text.get(r).unwrap_or("").trim())
        }
        None => "while parsing".to_string(),
    }
}

/// Parses `--seeds`: a comma-separated list of seeds or `a..b` ranges.
pub fn parse_seeds(list: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
            if a >= b {
                bail!("empty seed range {part}");
            }
            out.extend(a..b);
        } else {
            out.push(part.parse().with_context(|| format!("bad seed `{part}`"))?);
        }
    }
    if out.is_empty() {
        bail!("no seeds in `{list}`");
    }
    Ok(out)
}
