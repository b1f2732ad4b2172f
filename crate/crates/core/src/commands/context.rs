use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use super::{build_backend, echo_config, open_cache, to_json, write_file, CommandError, Workspace, VERSION};
use crate::config::RunConfig;
use crate::llm::{complete_batch, CachedBackend, CompletionRequest};
use crate::prompting::{build_context_prompt, clean_context_reply};

#[derive(Debug, Clone, Serialize)]
pub struct ContextSummary {
    pub version: &'static str,
    pub model: String,
    pub requested: usize,
    pub generated: usize,
    /// Ids whose request failed or whose reply was empty.
    pub failed: Vec<String>,
    #[serde(skip)]
    pub new_requests: usize,
    #[serde(skip)]
    pub contexts: BTreeMap<String, String>,
}

/// Mock replies in echo mode: an existing context when the sample has one,
/// otherwise a question built from the sentence.
fn mock_replies(ws: &Workspace) -> HashMap<String, String> {
    ws.corpus
        .samples
        .iter()
        .map(|s| {
            let utterance = s.context_utterance.clone().unwrap_or_else(|| format!("关于{}，你怎么看？", s.plain_text()));
            (s.id.clone(), format!("A: \"{utterance}\""))
        })
        .collect()
}

/// Asks the model for the turn preceding each corpus sentence and writes
/// `contexts.json` (id → utterance).
pub fn cmd_gen_context(config: &RunConfig) -> Result<ContextSummary, CommandError> {
    let ws = Workspace::load(config)?;
    let backend = build_backend(config, mock_replies(&ws))?;
    let cache = open_cache(config)?;
    let cached = CachedBackend::new(backend.as_ref(), &cache);

    let mut requests = Vec::new();
    for s in &ws.corpus.samples {
        requests.push(CompletionRequest::new(build_context_prompt(&s.plain_text())?.with_tag(s.id.clone())));
    }
    let results = complete_batch(&cached, &requests, config.parallelism);

    let mut contexts = BTreeMap::new();
    let mut failed = Vec::new();
    for (s, r) in ws.corpus.samples.iter().zip(&results) {
        match r.is_ok().then(|| clean_context_reply(&r.text)).flatten() {
            Some(utterance) => {
                contexts.insert(s.id.clone(), utterance);
            }
            None => {
                log::warn!("no context for {}: {}", s.id, r.error.as_deref().unwrap_or("empty reply"));
                failed.push(s.id.clone());
            }
        }
    }
    let summary = ContextSummary {
        version: VERSION,
        model: backend.model_name().to_string(),
        requested: requests.len(),
        generated: contexts.len(),
        failed,
        new_requests: cached.misses(),
        contexts,
    };
    echo_config(config, "gen-context")?;
    write_file(&config.out.join("contexts.json"), &to_json(&summary.contexts))?;
    write_file(&config.out.join("contexts_summary.json"), &to_json(&summary))?;
    Ok(summary)
}
