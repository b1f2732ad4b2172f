//! Run configuration: a TOML file with command-line overrides on top.
//!
//! ```toml
//! corpus = "data/corpus"
//! out = "reports"
//! backend = "mock"          # or "real"
//! parallelism = 4
//!
//! [llm]                     # BackendConfig
//! model_name = "gpt-3.5-turbo"
//!
//! [split]
//! ratios = [0.8, 0.1, 0.1]
//! seed = 7
//!
//! [demos]
//! strategy = "random"       # or "curated" with ids = [...]
//! k = 4
//! seed = 7
//! repeat_count = 3
//!
//! [knowledge]
//! include_pw = true
//!
//! [eval]
//! count_modes = ["cumulative", "exact"]
//! splits = ["test"]
//!
//! [joint]
//! contexts = "reports/contexts.json"
//! splits = ["train", "test"]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{SplitName, SplitSpec};
use crate::eval::{Aggregation, CountMode};
use crate::llm::BackendConfig;
use crate::prompting::{DemoSelection, DemoStrategy, KnowledgeConfig};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Real,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mock" => Ok(Self::Mock),
            "real" => Ok(Self::Real),
            other => Err(format!("unknown backend {other:?} (expected real or mock)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub ratios: [f64; 3],
    pub seed: u64,
    /// Existing manifest to reuse instead of splitting.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { ratios: [0.8, 0.1, 0.1], seed: 0, manifest: None }
    }
}

impl SplitConfig {
    pub fn spec(&self) -> Result<SplitSpec, crate::corpus::CorpusError> {
        SplitSpec::new(self.ratios, self.seed)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    #[default]
    Random,
    Curated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    pub strategy: StrategyKind,
    pub k: usize,
    pub seed: u64,
    pub repeat_count: usize,
    pub ids: Vec<String>,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self { strategy: StrategyKind::Random, k: 0, seed: 0, repeat_count: 3, ids: Vec::new() }
    }
}

impl DemoConfig {
    pub fn selection(&self) -> DemoSelection {
        self.selection_with_k(self.k)
    }

    pub fn selection_with_k(&self, k: usize) -> DemoSelection {
        match self.strategy {
            StrategyKind::Random => DemoSelection::random(k, self.seed, self.repeat_count),
            StrategyKind::Curated => DemoSelection { strategy: DemoStrategy::Curated { ids: self.ids.clone() }, k: self.ids.len() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnowledgeSection {
    pub include_pw: bool,
    pub include_pph: bool,
    pub include_iph: bool,
    /// Directory with replacement `pw.txt`, `pph.txt`, `iph.txt`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

impl Default for KnowledgeSection {
    fn default() -> Self {
        Self { include_pw: true, include_pph: true, include_iph: true, dir: None }
    }
}

impl KnowledgeSection {
    pub fn base(&self) -> Result<KnowledgeConfig, crate::prompting::PromptError> {
        match &self.dir {
            Some(dir) => KnowledgeConfig::all().load_texts(dir),
            None => Ok(KnowledgeConfig::all()),
        }
    }

    pub fn resolve(&self) -> Result<KnowledgeConfig, crate::prompting::PromptError> {
        let mut k = self.base()?;
        k.include_pw = self.include_pw;
        k.include_pph = self.include_pph;
        k.include_iph = self.include_iph;
        Ok(k)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub count_modes: Vec<CountMode>,
    pub aggregation: Aggregation,
    pub splits: Vec<SplitName>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            count_modes: vec![CountMode::Cumulative, CountMode::Exact],
            aggregation: Aggregation::Micro,
            splits: vec![SplitName::Test],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub shots: Vec<usize>,
    /// Demonstration count used for the per-level knowledge variants.
    pub knowledge_k: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { shots: vec![0, 4, 8, 16], knowledge_k: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JointConfig {
    /// JSON map from sample id to context utterance.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub contexts: Option<PathBuf>,
    pub splits: Vec<SplitName>,
    /// Fixed reference F0; the corpus geometric mean when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f0: Option<f64>,
}

impl Default for JointConfig {
    fn default() -> Self {
        Self { contexts: None, splits: vec![SplitName::Train, SplitName::Test], f0: None }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackKind {
    #[default]
    Echo,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockConfig {
    pub fallback: FallbackKind,
    /// JSON lines with `digest` and `text` fields (transcripts qualify).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixtures: Option<PathBuf>,
    /// Simulated latency per request, milliseconds.
    pub latency_ms: u64,
    pub prefix_support: bool,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self { fallback: FallbackKind::Echo, fixtures: None, latency_ms: 0, prefix_support: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub out: PathBuf,
    pub backend: BackendKind,
    pub parallelism: usize,
    /// Completion cache directory; `<out>/cache` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    /// HTTP transcript file for the real backend.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transcript: Option<PathBuf>,
    pub llm: BackendConfig,
    pub split: SplitConfig,
    pub demos: DemoConfig,
    pub knowledge: KnowledgeSection,
    pub eval: EvalConfig,
    pub ablation: AblationConfig,
    pub joint: JointConfig,
    pub mock: MockConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::from("corpus"),
            out: PathBuf::from("reports"),
            backend: BackendKind::Mock,
            parallelism: 4,
            cache_dir: None,
            transcript: None,
            llm: BackendConfig::default(),
            split: SplitConfig::default(),
            demos: DemoConfig::default(),
            knowledge: KnowledgeSection::default(),
            eval: EvalConfig::default(),
            ablation: AblationConfig::default(),
            joint: JointConfig::default(),
            mock: MockConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub backend: Option<BackendKind>,
    pub seed: Option<u64>,
    pub parallelism: Option<usize>,
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("{0}")]
    Invalid(String),
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Reads `path`; relative paths inside are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut config = Self::from_toml(&text).map_err(|source| ConfigError::Parse { path: path.to_path_buf(), source })?;
        if let Some(base) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            config.rebase(base);
        }
        Ok(config)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus);
        fix(&mut self.out);
        for p in [
            self.cache_dir.as_mut(),
            self.transcript.as_mut(),
            self.split.manifest.as_mut(),
            self.knowledge.dir.as_mut(),
            self.joint.contexts.as_mut(),
            self.mock.fixtures.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    /// `--seed` sets both the split seed and the demonstration seed.
    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(out) = &overrides.out {
            self.out = out.clone();
        }
        if let Some(corpus) = &overrides.corpus {
            self.corpus = corpus.clone();
        }
        if let Some(backend) = overrides.backend {
            self.backend = backend;
        }
        if let Some(seed) = overrides.seed {
            self.split.seed = seed;
            self.demos.seed = seed;
        }
        if let Some(p) = overrides.parallelism {
            self.parallelism = p;
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.parallelism == 0 {
            return invalid("parallelism must be >= 1".into());
        }
        self.llm.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.split.spec().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.demos.k > crate::prompting::MAX_DEMOS {
            return invalid(format!("demos.k = {} exceeds {}", self.demos.k, crate::prompting::MAX_DEMOS));
        }
        if self.eval.count_modes.is_empty() {
            return invalid("eval.count_modes is empty".into());
        }
        if self.joint.f0.is_some_and(|f| !(f > 0.0)) {
            return invalid("joint.f0 must be > 0".into());
        }
        Ok(())
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.out.join("cache"))
    }

    /// Fully resolved configuration as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
