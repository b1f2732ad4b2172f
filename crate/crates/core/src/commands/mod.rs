//! Experiment drivers behind the `prosody` binary. Each writes its reports,
//! a resolved-config echo and a version stamp into the output directory.
//! Reports carry no timestamps or latencies, so identical configurations on
//! the mock backend reproduce them byte for byte.

mod context;
mod joint;
mod psp;

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use crate::config::{BackendKind, ConfigError, FallbackKind, RunConfig};
use crate::corpus::{apply_manifest, load_corpus, split_ids, Corpus, CorpusError, CorpusSplit, SplitManifest};
use crate::llm::{ChatBackend, CompletionCache, HttpBackend, LlmError, MockBackend, MockFallback};

pub use context::{cmd_gen_context, ContextSummary};
pub use joint::{cmd_eval_joint, JointSummary, PrefixMode};
pub use psp::{cmd_ablation, cmd_eval_psp, AblationCell, AblationSummary, PspSummary};

pub const VERSION: &str = concat!("prosody-core ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Prompt(#[from] crate::prompting::PromptError),
    #[error(transparent)]
    Backend(#[from] LlmError),
    #[error(transparent)]
    Features(#[from] crate::features::FeatureError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Invalid(String),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CommandError + '_ {
    move |source| CommandError::Io { path: path.to_path_buf(), source }
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<(), CommandError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    std::fs::write(path, contents).map_err(io_err(path))
}

pub(crate) fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

/// Writes `<command>_config.toml` and `VERSION` next to the reports.
pub(crate) fn echo_config(config: &RunConfig, command: &str) -> Result<(), CommandError> {
    let text = format!("# {VERSION}\n# command: {command}\n{}", config.to_toml());
    write_file(&config.out.join(format!("{command}_config.toml")), &text)?;
    write_file(&config.out.join("VERSION"), &format!("{VERSION}\n"))
}

/// Loaded corpus plus its split manifest.
pub(crate) struct Workspace {
    pub corpus: Corpus,
    pub manifest: SplitManifest,
}

impl Workspace {
    pub fn load(config: &RunConfig) -> Result<Self, CommandError> {
        config.validate()?;
        let (corpus, report) = load_corpus(&config.corpus)?;
        if report.error_count() > 0 {
            log::warn!("corpus validation: {} problems", report.error_count());
        }
        let manifest = match &config.split.manifest {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(io_err(path))?;
                SplitManifest::from_json(&text)?
            }
            None => split_ids(&corpus.ids(), &config.split.spec()?)?,
        };
        Ok(Self { corpus, manifest })
    }

    pub fn split(&self) -> Result<CorpusSplit<'_>, CommandError> {
        Ok(apply_manifest(&self.corpus, &self.manifest)?)
    }
}

/// Reads JSON lines carrying `digest` and `text` (transcripts and cache
/// files both qualify).
pub fn read_fixtures(path: &Path) -> Result<HashMap<String, String>, CommandError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut fixtures = HashMap::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| CommandError::Invalid(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if let (Some(d), Some(t)) = (value["digest"].as_str(), value["text"].as_str()) {
            fixtures.insert(d.to_string(), t.to_string());
        }
    }
    Ok(fixtures)
}

/// The configured backend. `ground_truth` feeds the mock's echo fallback.
pub fn build_backend(config: &RunConfig, ground_truth: HashMap<String, String>) -> Result<Box<dyn ChatBackend>, CommandError> {
    match config.backend {
        BackendKind::Mock => {
            let fixtures = match &config.mock.fixtures {
                Some(path) => read_fixtures(path)?,
                None => HashMap::new(),
            };
            let fallback = match config.mock.fallback {
                FallbackKind::Echo => MockFallback::EchoGroundTruth,
                FallbackKind::Fail => MockFallback::Fail,
            };
            Ok(Box::new(
                MockBackend::new(config.llm.model_name.clone(), fixtures, fallback)
                    .with_ground_truth(ground_truth)
                    .with_latency(Duration::from_millis(config.mock.latency_ms))
                    .with_prefix_support(config.mock.prefix_support),
            ))
        }
        BackendKind::Real => {
            let mut backend = HttpBackend::new(config.llm.clone().with_env_key())?;
            if let Some(path) = &config.transcript {
                backend = backend.with_transcript(path).map_err(io_err(path))?;
            }
            Ok(Box::new(backend))
        }
    }
}

pub(crate) fn open_cache(config: &RunConfig) -> Result<CompletionCache, CommandError> {
    let dir = config.cache_dir();
    CompletionCache::open(&dir).map_err(io_err(&dir))
}

pub(crate) fn read_contexts(path: &Path) -> Result<BTreeMap<String, String>, CommandError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CommandError::Invalid(format!("{}: {e}", path.display())))
}
