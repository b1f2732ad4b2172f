use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use prosody_core::codec::encode_target;
use prosody_core::commands::{cmd_ablation, cmd_eval_joint, cmd_eval_psp, cmd_gen_context};
use prosody_core::config::{BackendKind, Overrides, RunConfig};
use prosody_core::corpus::{attach_contexts, load_corpus, split_ids, SplitName, SplitSpec, INDEX_FILE, INTERVAL_DIR};
use prosody_core::eval::{corpus_fscore, Aggregation, BenchmarkRow, CountMode};
use prosody_core::features::{hz_to_d, FeatureSequence, ReferenceF0};
use prosody_core::ingest::{char_spans_from_phones, format_intervals, parse_prosody_labels, parse_textgrid_tier};
use prosody_core::markup::{parse_annotated_report, render_annotated, strip_markup, AnnotatedSentence, ParsePolicy};
use prosody_core::prompting::{export_finetune_records, FinetuneTask};

type Error = Box<dyn std::error::Error>;

#[derive(Parser)]
#[command(name = "prosody", version, about = "Prosodic structure and feature tooling for Chinese TTS front-ends")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["real", "mock"])]
    backend: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    /// Corpus root (overrides the config file).
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Prosodic structure prediction benchmark.
    EvalPsp,
    /// Demonstration-count and knowledge ablation grid.
    Ablation,
    /// Generate the preceding dialogue turn for every sentence.
    GenContext,
    /// Joint response and linguistic feature evaluation.
    EvalJoint,
    /// Markup to JSON.
    Parse {
        /// Markup; read from stdin when omitted.
        text: Option<String>,
        #[arg(long)]
        strict: bool,
    },
    /// JSON (`{"chars":..,"boundaries":..}`) to markup.
    Render { json: Option<String> },
    /// Remove prosody markers.
    Strip { text: Option<String> },
    /// Frequency to D-value.
    Dvalue {
        #[arg(long)]
        f: f64,
        #[arg(long)]
        f0: f64,
    },
    /// Encode a joint response+features target.
    Encode {
        /// Sample id in the corpus.
        #[arg(long, conflicts_with = "features")]
        id: Option<String>,
        /// Feature records as JSON (with --response).
        #[arg(long, requires = "response")]
        features: Option<PathBuf>,
        #[arg(long)]
        response: Option<String>,
        /// Fixed reference F0; the corpus geometric mean otherwise.
        #[arg(long)]
        f0: Option<f64>,
    },
    /// Deterministic train/valid/test split manifest.
    Split {
        /// Split synthetic ids 0..n instead of a corpus.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value = "8:1:1")]
        ratios: String,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Fine-tuning records as JSON lines.
    ExportFinetune {
        #[arg(long, value_parser = ["psp", "joint"], default_value = "psp")]
        task: String,
        #[arg(long, value_parser = ["train", "valid", "test", "all"], default_value = "train")]
        split: String,
        #[arg(long, default_value = "8:1:1")]
        ratios: String,
        /// Context map (id → utterance) for the joint task.
        #[arg(long)]
        contexts: Option<PathBuf>,
        #[arg(long)]
        f0: Option<f64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score predicted markup lines against reference lines.
    Score {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, value_parser = ["cumulative", "exact"], default_value = "cumulative")]
        mode: String,
        #[arg(long)]
        r#macro: bool,
    },
    /// Convert a prosody label file and TextGrids into the corpus layout.
    Ingest {
        #[arg(long)]
        labels: PathBuf,
        /// Directory of `<id>.TextGrid` files.
        #[arg(long)]
        textgrids: Option<PathBuf>,
        #[arg(long, default_value = "phones")]
        tier: String,
        #[arg(long)]
        output: PathBuf,
    },
}

fn text_arg(arg: Option<String>) -> Result<String, Error> {
    match arg {
        Some(t) if t != "-" => Ok(t),
        _ => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s)?;
            Ok(s.trim_end_matches(['\n', '\r']).to_string())
        }
    }
}

fn run_config(global: &Global) -> Result<RunConfig, Error> {
    let mut config = match &global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    config.apply(&Overrides {
        out: global.out.clone(),
        backend: global.backend.as_deref().map(str::parse::<BackendKind>).transpose()?,
        seed: global.seed,
        parallelism: global.parallelism,
        corpus: global.corpus.clone(),
    });
    config.validate()?;
    Ok(config)
}

fn emit(output: Option<&Path>, text: &str) -> Result<(), Error> {
    match output {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn corpus_root(global: &Global) -> Result<PathBuf, Error> {
    Ok(run_config(global)?.corpus)
}

fn reference_f0(corpus: &prosody_core::Corpus, f0: Option<f64>) -> Result<ReferenceF0, Error> {
    Ok(match f0 {
        Some(f) => ReferenceF0::fixed(f)?,
        None => corpus.reference_f0()?,
    })
}

fn run(cli: Cli) -> Result<(), Error> {
    let global = &cli.global;
    match cli.command {
        Command::EvalPsp => {
            let config = run_config(global)?;
            let summary = cmd_eval_psp(&config)?;
            print!("{}", std::fs::read_to_string(config.out.join("psp_report.txt"))?);
            let errors: usize = summary.report.draws.iter().map(|d| d.errors).sum();
            eprintln!("{} requests ({} sent, {} model errors)", summary.requests, summary.new_requests, errors);
        }
        Command::Ablation => {
            let config = run_config(global)?;
            let summary = cmd_ablation(&config)?;
            print!("{}", std::fs::read_to_string(config.out.join("ablation.txt"))?);
            eprintln!("{} cells, {} requests ({} sent)", summary.report.cells.len(), summary.requests, summary.new_requests);
        }
        Command::GenContext => {
            let config = run_config(global)?;
            let summary = cmd_gen_context(&config)?;
            println!("{} of {} contexts generated, {} failed", summary.generated, summary.requested, summary.failed.len());
            eprintln!("{} requests sent", summary.new_requests);
        }
        Command::EvalJoint => {
            let config = run_config(global)?;
            let summary = cmd_eval_joint(&config)?;
            print!("{}", std::fs::read_to_string(config.out.join("joint_report.txt"))?);
            eprintln!("{} requests sent", summary.new_requests);
        }
        Command::Parse { text, strict } => {
            let policy = if strict { ParsePolicy::Strict } else { ParsePolicy::Lenient };
            let report = parse_annotated_report(&text_arg(text)?, policy)?;
            for w in &report.warnings {
                eprintln!("warning: {w:?}");
            }
            println!("{}", serde_json::to_string(&report.sentence)?);
        }
        Command::Render { json } => {
            let sentence: AnnotatedSentence = serde_json::from_str(&text_arg(json)?)?;
            println!("{}", render_annotated(&sentence));
        }
        Command::Strip { text } => println!("{}", strip_markup(&text_arg(text)?)),
        Command::Dvalue { f, f0 } => println!("{:.2}", hz_to_d(f, ReferenceF0::fixed(f0)?)?),
        Command::Encode { id, features, response, f0 } => {
            let encoded = match (id, features) {
                (Some(id), _) => {
                    let (mut corpus, _) = load_corpus(&corpus_root(global)?)?;
                    let reference = reference_f0(&corpus, f0)?;
                    corpus.compute_features(reference);
                    let sample = corpus.get(&id).ok_or_else(|| format!("unknown sample id {id}"))?;
                    let features = sample.response_features.as_ref().ok_or_else(|| format!("sample {id} has no features"))?;
                    encode_target(&sample.plain_text(), features)?
                }
                (None, Some(path)) => {
                    let features: FeatureSequence = serde_json::from_str(&std::fs::read_to_string(path)?)?;
                    encode_target(response.as_deref().unwrap_or_default(), &features)?
                }
                (None, None) => return Err("give --id or --features with --response".into()),
            };
            println!("{encoded}");
        }
        Command::Split { n, ratios, output } => {
            let seed = global.seed.unwrap_or(0);
            let spec = SplitSpec::parse_ratios(&ratios, seed)?;
            let ids: Vec<String> = match n {
                Some(n) => (0..n).map(|i| format!("{i:06}")).collect(),
                None => load_corpus(&corpus_root(global)?)?.0.ids(),
            };
            emit(output.as_deref(), &split_ids(&ids, &spec)?.to_json())?;
        }
        Command::ExportFinetune { task, split, ratios, contexts, f0, output } => {
            let (mut corpus, _) = load_corpus(&corpus_root(global)?)?;
            let task = if task == "joint" { FinetuneTask::Joint } else { FinetuneTask::Psp };
            if task == FinetuneTask::Joint {
                let path = contexts.ok_or("--contexts is required for the joint task")?;
                let map: BTreeMap<String, String> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
                attach_contexts(&mut corpus, &map)?;
                let reference = reference_f0(&corpus, f0)?;
                corpus.compute_features(reference);
            }
            let manifest = split_ids(&corpus.ids(), &SplitSpec::parse_ratios(&ratios, global.seed.unwrap_or(0))?)?;
            let ids: Vec<String> = match split.as_str() {
                "all" => corpus.ids(),
                "train" => manifest.part(SplitName::Train).to_vec(),
                "valid" => manifest.part(SplitName::Valid).to_vec(),
                _ => manifest.part(SplitName::Test).to_vec(),
            };
            let mut samples = corpus.select(&ids)?;
            if task == FinetuneTask::Joint {
                samples.retain(|s| s.context_utterance.is_some());
            }
            let records = export_finetune_records(&samples, task)?;
            let text: String = records.iter().map(|r| r.to_json_line() + "\n").collect();
            emit(output.as_deref(), &text)?;
        }
        Command::Score { pred, reference, mode, r#macro } => {
            let preds = std::fs::read_to_string(pred)?;
            let refs = std::fs::read_to_string(reference)?;
            let (preds, refs): (Vec<&str>, Vec<&str>) = (preds.lines().collect(), refs.lines().collect());
            if preds.len() != refs.len() {
                return Err(format!("{} predictions for {} references", preds.len(), refs.len()).into());
            }
            let mode = if mode == "exact" { CountMode::Exact } else { CountMode::Cumulative };
            let aggregation = if r#macro { Aggregation::Macro } else { Aggregation::Micro };
            let scores = corpus_fscore(preds.iter().map(|p| Some(*p)).zip(refs.iter().copied()), mode, aggregation)?;
            let row = BenchmarkRow { model: "predictions".into(), variation: mode.as_str().into(), scores: scores.scores };
            print!("{}", prosody_core::eval::render_table(&[row]));
        }
        Command::Ingest { labels, textgrids, tier, output } => {
            let entries = parse_prosody_labels(&std::fs::read_to_string(labels)?)?;
            std::fs::create_dir_all(&output)?;
            let index: String = entries.iter().map(|e| e.to_line() + "\n").collect();
            std::fs::write(output.join(INDEX_FILE), index)?;
            let mut spans_written = 0;
            if let Some(dir) = textgrids {
                std::fs::create_dir_all(output.join(INTERVAL_DIR))?;
                for e in &entries {
                    let path = dir.join(format!("{}.TextGrid", e.id));
                    if !path.exists() {
                        continue;
                    }
                    let phones = parse_textgrid_tier(&std::fs::read_to_string(&path)?, Some(&tier))?;
                    let chars: Vec<char> = strip_markup(&e.annotated).chars().collect();
                    match char_spans_from_phones(&chars, &e.pinyin, &phones) {
                        Ok(spans) => {
                            std::fs::write(output.join(INTERVAL_DIR).join(format!("{}.tsv", e.id)), format_intervals(&spans))?;
                            spans_written += 1;
                        }
                        Err(err) => eprintln!("{}: {err}", e.id),
                    }
                }
            }
            println!("{} samples, {} interval files", entries.len(), spans_written);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
