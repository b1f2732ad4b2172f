//! Prosodic structure prediction and linguistic feature tooling for Chinese
//! TTS front-ends, plus a harness for evaluating LLMs on both tasks.

pub mod align;
pub mod codec;
pub mod commands;
pub mod config;
pub mod corpus;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod joint;
pub mod llm;
pub mod markup;
pub mod pinyin;
pub mod prompting;
pub mod rng;

pub use codec::{decode_target, encode_target, DecodePolicy, Decoded, JointTarget};
pub use corpus::{load_corpus, Corpus, CorpusSample, SplitManifest, SplitSpec};
pub use eval::{boundary_counts, corpus_fscore, Aggregation, CountMode, Counts, LevelScores};
pub use features::{hz_to_d, d_to_hz, FeatureRecord, FeatureSequence, ReferenceF0};
pub use markup::{parse_annotated, render_annotated, strip_markup, AnnotatedSentence, ParsePolicy, ProsodyLevel};
