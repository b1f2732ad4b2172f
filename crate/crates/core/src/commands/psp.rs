use std::collections::HashMap;
use std::fmt::Write as _;

use serde::Serialize;

use super::{build_backend, echo_config, open_cache, to_json, write_file, CommandError, Workspace, VERSION};
use crate::config::RunConfig;
use crate::corpus::{CorpusSample, SplitName};
use crate::eval::{aggregate_samples, render_table, score_sample, BenchmarkRow, CorpusScores, CountMode, LevelScores};
use crate::llm::{complete_batch, CachedBackend, ChatBackend, CompletionRequest, CompletionResult};
use crate::markup::ProsodyLevel;
use crate::prompting::{build_psp_prompt, expected_message_count, select_demos, Demo, DemoSelection, KnowledgeConfig};

#[derive(Debug, Clone, Serialize)]
pub struct DrawReport {
    pub draw: usize,
    pub errors: usize,
    pub scores: Vec<CorpusScores>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModeMean {
    pub mode: CountMode,
    pub scores: LevelScores,
}

#[derive(Debug, Clone, Serialize)]
pub struct PspReport {
    pub version: &'static str,
    pub model: String,
    pub splits: Vec<SplitName>,
    pub samples: usize,
    pub demos: DemoSelection,
    pub knowledge: [bool; 3],
    pub message_count: usize,
    pub draws: Vec<DrawReport>,
    pub mean: Vec<ModeMean>,
}

#[derive(Debug, Clone)]
pub struct PspSummary {
    pub report: PspReport,
    pub requests: usize,
    pub new_requests: usize,
}

struct Transcript<'a> {
    draw: usize,
    id: &'a str,
    digest: String,
    result: &'a CompletionResult,
}

#[derive(Serialize)]
struct TranscriptLine<'a> {
    draw: usize,
    id: &'a str,
    digest: &'a str,
    prediction: &'a str,
    error: Option<&'a str>,
    parsable: bool,
    fidelity: f64,
}

/// Results of every (draw, sample) pair, draws in order.
struct PspRun {
    results: Vec<Vec<CompletionResult>>,
    digests: Vec<Vec<String>>,
    message_count: usize,
}

fn run_draws(
    backend: &dyn ChatBackend,
    samples: &[&CorpusSample],
    knowledge: &KnowledgeConfig,
    draws: &[Vec<Demo>],
    parallelism: usize,
) -> Result<PspRun, CommandError> {
    let mut requests = Vec::with_capacity(samples.len() * draws.len());
    let mut message_count = 0;
    for demos in draws {
        for s in samples {
            let prompt = build_psp_prompt(&s.plain_text(), knowledge, demos)?.with_tag(s.id.clone());
            message_count = prompt.messages.len();
            requests.push(CompletionRequest::new(prompt));
        }
    }
    let digests: Vec<String> = requests.iter().map(|r| r.prompt.digest()).collect();
    let flat = complete_batch(backend, &requests, parallelism);
    let n = samples.len().max(1);
    Ok(PspRun {
        results: flat.chunks(n).map(<[_]>::to_vec).collect(),
        digests: digests.chunks(n).map(<[_]>::to_vec).collect(),
        message_count,
    })
}

fn score_draw(samples: &[&CorpusSample], results: &[CompletionResult], config: &RunConfig) -> Result<Vec<CorpusScores>, CommandError> {
    config
        .eval
        .count_modes
        .iter()
        .map(|&mode| {
            let scored: Vec<_> = samples
                .iter()
                .zip(results)
                .map(|(s, r)| score_sample(r.is_ok().then_some(r.text.as_str()), &s.annotated, mode))
                .collect();
            aggregate_samples(&scored, mode, config.eval.aggregation).map_err(|e| CommandError::Invalid(e.to_string()))
        })
        .collect()
}

fn means(draws: &[DrawReport], modes: &[CountMode]) -> Vec<ModeMean> {
    modes
        .iter()
        .enumerate()
        .map(|(i, &mode)| {
            let all: Vec<LevelScores> = draws.iter().map(|d| d.scores[i].scores).collect();
            ModeMean { mode, scores: LevelScores::mean(&all).expect("at least one draw") }
        })
        .collect()
}

fn eval_samples<'a>(ws: &'a Workspace, splits: &[SplitName]) -> Result<Vec<&'a CorpusSample>, CommandError> {
    let split = ws.split()?;
    let samples: Vec<&CorpusSample> = splits.iter().flat_map(|&name| split.part(name).iter().copied()).collect();
    if samples.is_empty() {
        return Err(CommandError::Invalid("no samples in the evaluated splits".into()));
    }
    Ok(samples)
}

fn ground_truth(ws: &Workspace) -> HashMap<String, String> {
    ws.corpus.samples.iter().map(|s| (s.id.clone(), s.markup())).collect()
}

fn demo_draws(ws: &Workspace, selection: &DemoSelection) -> Result<Vec<Vec<Demo>>, CommandError> {
    if selection.k == 0 && matches!(selection.strategy, crate::prompting::DemoStrategy::Random { .. }) {
        return Ok(vec![Vec::new()]);
    }
    Ok(select_demos(&ws.split()?.train, selection)?)
}

/// Prosodic structure prediction benchmark.
pub fn cmd_eval_psp(config: &RunConfig) -> Result<PspSummary, CommandError> {
    let ws = Workspace::load(config)?;
    let samples = eval_samples(&ws, &config.eval.splits)?;
    let knowledge = config.knowledge.resolve()?;
    let selection = config.demos.selection();
    let draws = demo_draws(&ws, &selection)?;

    let backend = build_backend(config, ground_truth(&ws))?;
    let cache = open_cache(config)?;
    let cached = CachedBackend::new(backend.as_ref(), &cache);
    let run = run_draws(&cached, &samples, &knowledge, &draws, config.parallelism)?;

    let mut draw_reports = Vec::new();
    let mut transcript = Vec::new();
    for (d, results) in run.results.iter().enumerate() {
        draw_reports.push(DrawReport {
            draw: d + 1,
            errors: results.iter().filter(|r| !r.is_ok()).count(),
            scores: score_draw(&samples, results, config)?,
        });
        for (i, r) in results.iter().enumerate() {
            transcript.push(Transcript { draw: d + 1, id: &samples[i].id, digest: run.digests[d][i].clone(), result: r });
        }
    }
    let report = PspReport {
        version: VERSION,
        model: backend.model_name().to_string(),
        splits: config.eval.splits.clone(),
        samples: samples.len(),
        demos: selection,
        knowledge: knowledge.enabled(),
        message_count: run.message_count,
        mean: means(&draw_reports, &config.eval.count_modes),
        draws: draw_reports,
    };

    let mut lines = String::new();
    let by_id: HashMap<&str, &CorpusSample> = samples.iter().map(|s| (s.id.as_str(), *s)).collect();
    for t in &transcript {
        let primary = config.eval.count_modes[0];
        let ok = t.result.is_ok();
        let score = score_sample(ok.then_some(t.result.text.as_str()), &by_id[t.id].annotated, primary);
        let line = TranscriptLine {
            draw: t.draw,
            id: t.id,
            digest: &t.digest,
            prediction: &t.result.text,
            error: t.result.error.as_deref(),
            parsable: score.parsable,
            fidelity: score.fidelity,
        };
        let _ = writeln!(lines, "{}", serde_json::to_string(&line).expect("serializes"));
    }

    let out = &config.out;
    echo_config(config, "eval-psp")?;
    write_file(&out.join("psp_report.json"), &to_json(&report))?;
    write_file(&out.join("psp_report.txt"), &psp_table(&report))?;
    write_file(&out.join("psp_transcript.jsonl"), &lines)?;
    Ok(PspSummary { report, requests: samples.len() * draws.len(), new_requests: cached.misses() })
}

fn psp_table(report: &PspReport) -> String {
    let mut out = String::new();
    for (i, mean) in report.mean.iter().enumerate() {
        let mut rows: Vec<BenchmarkRow> = report
            .draws
            .iter()
            .map(|d| BenchmarkRow {
                model: report.model.clone(),
                variation: format!("draw {}", d.draw),
                scores: d.scores[i].scores,
            })
            .collect();
        if report.draws.len() > 1 {
            rows.push(BenchmarkRow { model: report.model.clone(), variation: "mean".into(), scores: mean.scores });
        }
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "[{} counting]", mean.mode.as_str());
        out.push_str(&render_table(&rows));
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationCell {
    pub name: String,
    pub k: usize,
    pub knowledge: [bool; 3],
    pub message_count: usize,
    pub expected_message_count: usize,
    pub draws: usize,
    /// Mean over draws, first configured count mode.
    pub scores: LevelScores,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub version: &'static str,
    pub model: String,
    pub mode: CountMode,
    pub samples: usize,
    pub seed: u64,
    pub repeat_count: usize,
    pub cells: Vec<AblationCell>,
}

#[derive(Debug, Clone)]
pub struct AblationSummary {
    pub report: AblationReport,
    pub requests: usize,
    pub new_requests: usize,
}

/// `shots × {with, without knowledge}` followed by the per-level knowledge
/// variants (without #1, without #2, without #3, all) at `knowledge_k`.
pub fn ablation_cells(config: &RunConfig) -> Vec<(String, usize, KnowledgeConfig)> {
    let mut cells = Vec::new();
    for &k in &config.ablation.shots {
        cells.push((format!("k={k} w/ knowledge"), k, KnowledgeConfig::all()));
        cells.push((format!("k={k} w/o knowledge"), k, KnowledgeConfig::none()));
    }
    let k = config.ablation.knowledge_k;
    for level in ProsodyLevel::SCORED {
        cells.push((format!("w/o #{}", level.as_u8()), k, KnowledgeConfig::without(level)));
    }
    cells.push(("all".to_string(), k, KnowledgeConfig::all()));
    cells
}

pub fn cmd_ablation(config: &RunConfig) -> Result<AblationSummary, CommandError> {
    let ws = Workspace::load(config)?;
    let samples = eval_samples(&ws, &config.eval.splits)?;
    let base = config.knowledge.base()?;
    let backend = build_backend(config, ground_truth(&ws))?;
    let cache = open_cache(config)?;
    let cached = CachedBackend::new(backend.as_ref(), &cache);
    let mode = config.eval.count_modes[0];
    let mut cells = Vec::new();
    let mut requests = 0;
    for (name, k, flags) in ablation_cells(config) {
        let knowledge = KnowledgeConfig { texts: base.texts.clone(), ..flags };
        let selection = DemoSelection::random(k, config.demos.seed, config.demos.repeat_count);
        let draws = demo_draws(&ws, &selection)?;
        let run = run_draws(&cached, &samples, &knowledge, &draws, config.parallelism)?;
        requests += samples.len() * draws.len();
        let mut per_draw = Vec::new();
        for results in &run.results {
            let scored: Vec<_> = samples
                .iter()
                .zip(results)
                .map(|(s, r)| score_sample(r.is_ok().then_some(r.text.as_str()), &s.annotated, mode))
                .collect();
            per_draw.push(
                aggregate_samples(&scored, mode, config.eval.aggregation)
                    .map_err(|e| CommandError::Invalid(e.to_string()))?
                    .scores,
            );
        }
        cells.push(AblationCell {
            name,
            k,
            knowledge: knowledge.enabled(),
            message_count: run.message_count,
            expected_message_count: expected_message_count(k, knowledge.any_enabled()),
            draws: draws.len(),
            scores: LevelScores::mean(&per_draw).expect("at least one draw"),
        });
    }
    let report = AblationReport {
        version: VERSION,
        model: backend.model_name().to_string(),
        mode,
        samples: samples.len(),
        seed: config.demos.seed,
        repeat_count: config.demos.repeat_count,
        cells,
    };
    echo_config(config, "ablation")?;
    write_file(&config.out.join("ablation.json"), &to_json(&report))?;
    write_file(&config.out.join("ablation.txt"), &ablation_table(&report))?;
    Ok(AblationSummary { report, requests, new_requests: cached.misses() })
}

fn ablation_table(report: &AblationReport) -> String {
    let header = ["Cell", "k", "Knowledge", "Messages", "PW #1", "PPH #2", "IPH #3", "Average"];
    let rows: Vec<Vec<String>> = report
        .cells
        .iter()
        .map(|c| {
            let f = c.scores.f_scores();
            let knowledge: String = c
                .knowledge
                .iter()
                .zip(["#1", "#2", "#3"])
                .filter(|(on, _)| **on)
                .map(|(_, n)| n)
                .collect::<Vec<_>>()
                .join(",");
            vec![
                c.name.clone(),
                c.k.to_string(),
                if knowledge.is_empty() { "-".into() } else { knowledge },
                c.message_count.to_string(),
                format!("{:.2}", f[0] * 100.0),
                format!("{:.2}", f[1] * 100.0),
                format!("{:.2}", f[2] * 100.0),
                format!("{:.2}", c.scores.average_f * 100.0),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &rows {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let mut emit = |cells: Vec<String>| {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| if i == 0 || i == 2 { format!("{c:<w$}", w = widths[i]) } else { format!("{c:>w$}", w = widths[i]) })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    emit(header.iter().map(|h| h.to_string()).collect());
    for row in rows {
        emit(row);
    }
    out
}
