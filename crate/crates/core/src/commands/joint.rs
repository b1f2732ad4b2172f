use std::collections::HashMap;

use serde::Serialize;

use super::{build_backend, echo_config, open_cache, read_contexts, to_json, write_file, CommandError, Workspace, VERSION};
use crate::codec::JointTarget;
use crate::config::RunConfig;
use crate::corpus::{attach_contexts, SplitName};
use crate::features::{ReferenceF0, ReferenceMethod};
use crate::joint::{aggregate_joint, eval_joint_sample, render_joint_table, scatter_csv, JointReport, NumericField};
use crate::llm::{complete_batch, CachedBackend, CompletionRequest};
use crate::prompting::build_joint_prompt;

/// How the ground-truth response is forced in front of the model output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PrefixMode {
    /// Sent as the start of the assistant turn and continued by the server.
    Assistant,
    /// Put in front of the raw output before decoding.
    Prepend,
}

#[derive(Debug, Clone, Serialize)]
pub struct JointRow {
    pub split: SplitName,
    pub report: JointReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct JointSummary {
    pub version: &'static str,
    pub model: String,
    pub prefix_mode: PrefixMode,
    pub reference_f0: f64,
    pub reference_method: ReferenceMethod,
    pub rows: Vec<JointRow>,
    #[serde(skip)]
    pub new_requests: usize,
}

/// Joint response + feature evaluation with the ground-truth response as
/// generation prefix.
pub fn cmd_eval_joint(config: &RunConfig) -> Result<JointSummary, CommandError> {
    let mut ws = Workspace::load(config)?;
    let contexts_path = config.joint.contexts.clone().unwrap_or_else(|| config.out.join("contexts.json"));
    let contexts = read_contexts(&contexts_path)?;
    attach_contexts(&mut ws.corpus, &contexts)?;
    let reference = match config.joint.f0 {
        Some(f0) => ReferenceF0::fixed(f0)?,
        None => ws.corpus.reference_f0()?,
    };
    ws.corpus.compute_features(reference);

    let mut targets: HashMap<String, JointTarget> = HashMap::new();
    for s in &ws.corpus.samples {
        if let Some(features) = &s.response_features {
            targets.insert(s.id.clone(), JointTarget::new(s.plain_text(), features.clone()).map_err(|e| CommandError::Invalid(e.to_string()))?);
        }
    }
    let ground_truth = targets.iter().map(|(id, t)| (id.clone(), t.encoded.clone())).collect();
    let backend = build_backend(config, ground_truth)?;
    let cache = open_cache(config)?;
    let cached = CachedBackend::new(backend.as_ref(), &cache);
    let prefix_mode = if backend.supports_assistant_prefix() { PrefixMode::Assistant } else { PrefixMode::Prepend };

    let split = ws.split()?;
    let mut rows = Vec::new();
    for &name in &config.joint.splits {
        let samples: Vec<_> = split
            .part(name)
            .iter()
            .filter(|s| s.context_utterance.is_some() && targets.contains_key(&s.id))
            .collect();
        if samples.is_empty() {
            log::warn!("{} split has no samples with context and features", name.as_str());
            continue;
        }
        let requests: Vec<CompletionRequest> = samples
            .iter()
            .map(|s| {
                let prompt = build_joint_prompt(s.context_utterance.as_deref().expect("filtered")).with_tag(s.id.clone());
                CompletionRequest::with_prefix(prompt, s.plain_text())
            })
            .collect();
        let results = complete_batch(&cached, &requests, config.parallelism);
        let evaluated: Vec<_> = samples
            .iter()
            .zip(&results)
            .map(|(s, r)| {
                let target = &targets[&s.id];
                if r.is_ok() {
                    eval_joint_sample(&r.text, target)
                } else {
                    Default::default()
                }
            })
            .collect();
        let report = aggregate_joint(&evaluated).map_err(|e| CommandError::Invalid(e.to_string()))?;
        for field in NumericField::ALL {
            let pairs: Vec<_> = report.scatter.iter().filter(|p| p.field == field).copied().collect();
            let path = config.out.join(format!("scatter_{}_{}.csv", name.as_str(), field.as_str()));
            write_file(&path, &scatter_csv(&pairs))?;
        }
        rows.push(JointRow { split: name, report });
    }
    if rows.is_empty() {
        return Err(CommandError::Invalid("no split has samples with context and features".into()));
    }
    let summary = JointSummary {
        version: VERSION,
        model: backend.model_name().to_string(),
        prefix_mode,
        reference_f0: reference.f0(),
        reference_method: reference.method(),
        rows,
        new_requests: cached.misses(),
    };
    let table_rows: Vec<(String, JointReport)> = summary
        .rows
        .iter()
        .map(|r| (format!("{} split", r.split.as_str()), r.report.clone()))
        .collect();
    let table = format!("prefix mode: {}\n{}", match prefix_mode {
        PrefixMode::Assistant => "assistant",
        PrefixMode::Prepend => "prepend",
    }, render_joint_table(&table_rows));
    echo_config(config, "eval-joint")?;
    write_file(&config.out.join("joint_report.json"), &to_json(&summary))?;
    write_file(&config.out.join("joint_report.txt"), &table)?;
    Ok(summary)
}
