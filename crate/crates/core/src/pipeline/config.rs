use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::alignment::AlignmentConfig;
use crate::detect::DetectorConfig;
use crate::embedding::FeatureMethod;
use crate::error::{Error, Result};
use crate::exposure::ExposureConfig;
use crate::llm::{BackendSpec, LlmConfig, RetryPolicy};
use crate::tag::SynthConfig;

/// Synthetic benchmark parameters; unset generator knobs keep the
/// [`SynthConfig::new`] defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_id_classes: usize,
    pub n_ood_classes: usize,
    pub nodes_per_class: usize,
    pub keywords_per_text: Option<usize>,
    pub filler_per_text: Option<usize>,
    pub intra_p: Option<f64>,
    pub inter_p: Option<f64>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_id_classes: 3,
            n_ood_classes: 2,
            nodes_per_class: 60,
            keywords_per_text: None,
            filler_per_text: None,
            intra_p: None,
            inter_p: None,
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// The harder benchmark setting used by the acceptance run: one class
    /// keyword per text, eight filler words, inter-class edge probability 0.02.
    pub fn benchmark(seed: u64) -> Self {
        Self {
            keywords_per_text: Some(1),
            filler_per_text: Some(8),
            inter_p: Some(0.02),
            seed,
            ..Self::default()
        }
    }

    pub fn to_config(&self) -> SynthConfig {
        let mut c = SynthConfig::new(self.n_id_classes, self.n_ood_classes, self.nodes_per_class, self.seed);
        if let Some(v) = self.keywords_per_text {
            c.keywords_per_text = v;
        }
        if let Some(v) = self.filler_per_text {
            c.filler_per_text = v;
        }
        if let Some(v) = self.intra_p {
            c.intra_p = v;
        }
        if let Some(v) = self.inter_p {
            c.inter_p = v;
        }
        c
    }
}

fn default_ratios() -> (f64, f64, f64) {
    (0.6, 0.2, 0.2)
}

/// Where the graph comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    Synth(SynthSpec),
    /// `nodes` is JSONL, `edges` tab-separated. Without `split`, one is built
    /// from `id_classes` and `ratios`.
    Files {
        nodes: PathBuf,
        edges: PathBuf,
        #[serde(default)]
        split: Option<PathBuf>,
        #[serde(default)]
        id_classes: Vec<String>,
        #[serde(default = "default_ratios")]
        ratios: (f64, f64, f64),
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        domain_hint: Option<String>,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synth(SynthSpec::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub method: FeatureMethod,
    pub dim: usize,
    pub seed: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            method: FeatureMethod::HashedBagOfWords,
            dim: 256,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Histogram bins for the report and the density file.
    pub bins: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { bins: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Largest allowed grid.
    pub max_points: usize,
    /// Dotted config keys mapped to the values to try.
    pub grid: std::collections::BTreeMap<String, Vec<toml::Value>>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            max_points: 64,
            grid: Default::default(),
        }
    }
}

/// The whole pipeline in one document. Every section has defaults, so an
/// empty file runs the synthetic benchmark with the keyword oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Train with the exposure regularizer. `false` gives the unplugged
    /// baseline: no LLM queries and `β` treated as 0.
    pub plug: bool,
    pub data: DataSource,
    pub features: FeatureConfig,
    pub alignment: AlignmentConfig,
    pub exposure: ExposureConfig,
    /// LLM backend. A keyword oracle with no rules on synthetic data uses
    /// the generator's own class keywords.
    pub llm: LlmConfig,
    pub detector: DetectorConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            plug: true,
            data: DataSource::default(),
            features: FeatureConfig::default(),
            alignment: AlignmentConfig::default(),
            exposure: ExposureConfig::default(),
            llm: LlmConfig {
                backend: BackendSpec::KeywordOracle {
                    rules: Vec::new(),
                    fallback: "Other".into(),
                },
                retry: RetryPolicy::default(),
                cache_dir: None,
            },
            detector: DetectorConfig::default(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

fn toml_error(path: &str, text: &str, e: toml::de::Error) -> Error {
    let line = e.span().map_or(0, |s| text[..s.start.min(text.len())].lines().count().max(1));
    Error::Parse {
        path: path.to_string(),
        line,
        message: e.message().to_string(),
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| toml_error("<config>", text, e))?;
        c.validate()?;
        Ok(c)
    }

    /// Reads a TOML file. Relative data paths are taken from the file's
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c: Self = toml::from_str(&text).map_err(|e| toml_error(&path.display().to_string(), &text, e))?;
        if let (DataSource::Files { nodes, edges, split, .. }, Some(base)) = (&mut c.data, path.parent()) {
            for p in [Some(nodes), Some(edges), split.as_mut()].into_iter().flatten() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.alignment.validate()?;
        self.exposure.validate()?;
        self.detector.validate()?;
        if self.features.dim == 0 {
            return Err(Error::Config("features.dim must be at least 1".into()));
        }
        if self.eval.bins == 0 {
            return Err(Error::Config("eval.bins must be at least 1".into()));
        }
        if let DataSource::Files { nodes, edges, split, .. } = &self.data {
            for p in [Some(nodes), Some(edges), split.as_ref()].into_iter().flatten() {
                if !p.exists() {
                    return Err(Error::Config(format!("data file {} does not exist", p.display())));
                }
            }
        }
        if let DataSource::Synth(s) = &self.data {
            s.to_config().validate()?;
        }
        Ok(())
    }

    /// Sets a dotted key (`exposure.clusters`) to a TOML value and revalidates.
    pub fn with_override(&self, key: &str, value: toml::Value) -> Result<Self> {
        let mut doc = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        let mut slot = &mut doc;
        for part in key.split('.') {
            slot = slot
                .get_mut(part)
                .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
        }
        *slot = value;
        let c: Self = doc.try_into().map_err(|e: toml::de::Error| Error::Config(format!("{key}: {}", e.message())))?;
        c.validate()?;
        Ok(c)
    }

    /// Parses `key=value`, reading the value as TOML and falling back to a
    /// bare string.
    pub fn with_assignment(&self, assignment: &str) -> Result<Self> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {assignment:?}")))?;
        self.with_override(key.trim(), parse_value(raw.trim()))
    }
}

/// Reads a TOML scalar or array; anything unparseable becomes a string.
pub fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
