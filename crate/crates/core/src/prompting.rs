//! Prompt assembly for prosodic structure prediction, dialogue-context
//! generation and fine-tuning export.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec::encode_target;
use crate::corpus::CorpusSample;
use crate::markup::{parse_annotated, strip_markup, ParsePolicy, ProsodyLevel};
use crate::rng::SplitMix64;

pub const MAX_DEMOS: usize = 16;

pub const PSP_PREFIX: &str = "Please perform prosodic prediction on the given sentence:";

pub const CONTEXT_INSTRUCTION: &str = "Please generate the most likely sentence spoken by A based on B's response.";

pub const PSP_SYSTEM: &str = "You annotate Chinese sentences with prosodic boundaries for speech synthesis. \
Insert #1 after a prosodic word, #2 after a prosodic phrase and #3 after an intonation phrase. \
Reply with the annotated sentence only, keeping every character unchanged.";

const KNOWLEDGE_HEADER: &str = "Background on Chinese prosodic structure:";
const DEMO_HEADER: &str = "The following turns are annotated examples.";

const BUNDLED_KNOWLEDGE: [&str; 3] = [
    include_str!("../resources/knowledge/pw.txt"),
    include_str!("../resources/knowledge/pph.txt"),
    include_str!("../resources/knowledge/iph.txt"),
];
const KNOWLEDGE_FILES: [&str; 3] = ["pw.txt", "pph.txt", "iph.txt"];

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("{0} demonstrations exceed the limit of {MAX_DEMOS}")]
    TooManyDemos(usize),
    #[error("demonstration {index} is invalid: {reason}")]
    InvalidDemo { index: usize, reason: String },
    #[error("training split has {available} samples, {needed} demonstrations requested")]
    InsufficientTrainingData { needed: usize, available: usize },
    #[error("curated demonstration id {0:?} is not in the training split")]
    UnknownCuratedId(String),
    #[error("response text is empty")]
    EmptyResponse,
    #[error("sample {0} has no generated context utterance")]
    MissingContext(String),
    #[error("sample {0} has no response features")]
    MissingFeatures(String),
    #[error("knowledge file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Codec(#[from] crate::codec::CodecError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
}

impl Message {
    pub fn new(role: Role, text: impl Into<String>) -> Self {
        Self { role, text: text.into() }
    }
}

/// Ordered chat messages. `tag` names the sample the prompt was built for;
/// it travels with the prompt but is not part of its digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub messages: Vec<Message>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

impl Prompt {
    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = Some(tag.into());
        self
    }

    /// Hex SHA-256 over `role:byte_len:text\n` for every message.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for m in &self.messages {
            hasher.update(format!("{}:{}:", m.role, m.text.len()).as_bytes());
            hasher.update(m.text.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }

    pub fn last_user_text(&self) -> &str {
        self.messages.last().map(|m| m.text.as_str()).unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeConfig {
    pub include_pw: bool,
    pub include_pph: bool,
    pub include_iph: bool,
    #[serde(skip)]
    pub texts: [String; 3],
}

impl Default for KnowledgeConfig {
    fn default() -> Self {
        Self::all()
    }
}

impl KnowledgeConfig {
    pub fn all() -> Self {
        Self {
            include_pw: true,
            include_pph: true,
            include_iph: true,
            texts: BUNDLED_KNOWLEDGE.map(|t| t.trim().to_string()),
        }
    }

    pub fn none() -> Self {
        Self { include_pw: false, include_pph: false, include_iph: false, ..Self::all() }
    }

    /// All levels except `level`.
    pub fn without(level: ProsodyLevel) -> Self {
        let mut k = Self::all();
        k.set(level, false);
        k
    }

    pub fn set(&mut self, level: ProsodyLevel, on: bool) {
        match level {
            ProsodyLevel::Pw => self.include_pw = on,
            ProsodyLevel::Pph => self.include_pph = on,
            ProsodyLevel::Iph => self.include_iph = on,
            ProsodyLevel::None => {}
        }
    }

    pub fn enabled(&self) -> [bool; 3] {
        [self.include_pw, self.include_pph, self.include_iph]
    }

    pub fn any_enabled(&self) -> bool {
        self.enabled().iter().any(|&b| b)
    }

    /// Replaces passages with `pw.txt`, `pph.txt`, `iph.txt` from `dir`
    /// where those files exist.
    pub fn load_texts(mut self, dir: &Path) -> Result<Self, PromptError> {
        for (slot, name) in self.texts.iter_mut().zip(KNOWLEDGE_FILES) {
            let path = dir.join(name);
            if path.exists() {
                *slot = std::fs::read_to_string(&path)
                    .map_err(|source| PromptError::Io { path: path.display().to_string(), source })?
                    .trim()
                    .to_string();
            }
        }
        Ok(self)
    }

    fn block(&self) -> Option<String> {
        if !self.any_enabled() {
            return None;
        }
        let mut out = String::from(KNOWLEDGE_HEADER);
        for (text, on) in self.texts.iter().zip(self.enabled()) {
            if on {
                out.push_str("\n\n");
                out.push_str(text);
            }
        }
        Some(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demo {
    pub input: String,
    /// Annotated markup.
    pub output: String,
}

impl Demo {
    pub fn from_sample(sample: &CorpusSample) -> Self {
        Self { input: sample.plain_text(), output: sample.markup() }
    }
}

fn check_demo(index: usize, demo: &Demo) -> Result<(), PromptError> {
    let parsed = parse_annotated(&demo.output, ParsePolicy::Strict)
        .map_err(|e| PromptError::InvalidDemo { index, reason: e.to_string() })?;
    if parsed.text() != strip_markup(&demo.input) {
        return Err(PromptError::InvalidDemo { index, reason: "output characters differ from input".into() });
    }
    Ok(())
}

/// `system → [knowledge] → (user, assistant)* → user`.
pub fn build_psp_prompt(sentence: &str, knowledge: &KnowledgeConfig, demos: &[Demo]) -> Result<Prompt, PromptError> {
    if demos.len() > MAX_DEMOS {
        return Err(PromptError::TooManyDemos(demos.len()));
    }
    for (i, d) in demos.iter().enumerate() {
        check_demo(i, d)?;
    }
    let mut system = PSP_SYSTEM.to_string();
    if !demos.is_empty() {
        system.push(' ');
        system.push_str(DEMO_HEADER);
    }
    let mut messages = vec![Message::new(Role::System, system)];
    if let Some(block) = knowledge.block() {
        messages.push(Message::new(Role::System, block));
    }
    for d in demos {
        messages.push(Message::new(Role::User, format!("{PSP_PREFIX}{}", d.input)));
        messages.push(Message::new(Role::Assistant, d.output.clone()));
    }
    messages.push(Message::new(Role::User, format!("{PSP_PREFIX}{sentence}")));
    Ok(Prompt { messages, tag: None })
}

/// Number of messages `build_psp_prompt` produces.
pub fn expected_message_count(k: usize, knowledge: bool) -> usize {
    2 + 2 * k + usize::from(knowledge)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "lowercase")]
pub enum DemoStrategy {
    Random { seed: u64, repeat_count: usize },
    Curated { ids: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoSelection {
    #[serde(flatten)]
    pub strategy: DemoStrategy,
    /// Ignored for curated lists, which use every listed id.
    #[serde(default)]
    pub k: usize,
}

impl DemoSelection {
    pub fn random(k: usize, seed: u64, repeat_count: usize) -> Self {
        Self { strategy: DemoStrategy::Random { seed, repeat_count }, k }
    }

    pub fn curated(ids: Vec<String>) -> Self {
        let k = ids.len();
        Self { strategy: DemoStrategy::Curated { ids }, k }
    }

    pub fn draws(&self) -> usize {
        match &self.strategy {
            DemoStrategy::Random { repeat_count, .. } => (*repeat_count).max(1),
            DemoStrategy::Curated { .. } => 1,
        }
    }
}

/// One demo list per draw. Random draws sample without replacement from the
/// training split sorted by id; draw `i` uses sub-seed `derive(seed, i)`.
pub fn select_demos(train: &[&CorpusSample], selection: &DemoSelection) -> Result<Vec<Vec<Demo>>, PromptError> {
    match &selection.strategy {
        DemoStrategy::Random { seed, repeat_count } => {
            let k = selection.k;
            if k > MAX_DEMOS {
                return Err(PromptError::TooManyDemos(k));
            }
            if train.len() < k {
                return Err(PromptError::InsufficientTrainingData { needed: k, available: train.len() });
            }
            let mut sorted: Vec<&CorpusSample> = train.to_vec();
            sorted.sort_by(|a, b| a.id.cmp(&b.id));
            Ok((0..(*repeat_count).max(1))
                .map(|draw| {
                    let mut order: Vec<usize> = (0..sorted.len()).collect();
                    SplitMix64::new(SplitMix64::derive(*seed, draw as u64)).shuffle(&mut order);
                    order[..k].iter().map(|&i| Demo::from_sample(sorted[i])).collect()
                })
                .collect())
        }
        DemoStrategy::Curated { ids } => {
            if ids.len() > MAX_DEMOS {
                return Err(PromptError::TooManyDemos(ids.len()));
            }
            let demos = ids
                .iter()
                .map(|id| {
                    train
                        .iter()
                        .find(|s| &s.id == id)
                        .map(|s| Demo::from_sample(s))
                        .ok_or_else(|| PromptError::UnknownCuratedId(id.clone()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(vec![demos])
        }
    }
}

pub fn build_context_prompt(response_b: &str) -> Result<Prompt, PromptError> {
    let response = response_b.trim();
    if response.is_empty() {
        return Err(PromptError::EmptyResponse);
    }
    Ok(Prompt {
        messages: vec![
            Message::new(Role::System, CONTEXT_INSTRUCTION),
            Message::new(Role::User, format!("A:\nB: \"{response}\"")),
        ],
        tag: None,
    })
}

/// Extracts A's utterance from a context-generation completion:
/// drops a leading `A:` and surrounding quotes.
pub fn clean_context_reply(reply: &str) -> Option<String> {
    let mut line = reply.trim().lines().find(|l| !l.trim().is_empty())?.trim();
    for prefix in ["A:", "A："] {
        if let Some(rest) = line.strip_prefix(prefix) {
            line = rest.trim();
        }
    }
    let quotes: &[char] = &['"', '“', '”', '\'', '「', '」'];
    let cleaned = line.trim_matches(quotes).trim();
    (!cleaned.is_empty()).then(|| cleaned.to_string())
}

/// Joint-task prompt: the context utterance as the single user turn.
pub fn build_joint_prompt(context: &str) -> Prompt {
    Prompt { messages: vec![Message::new(Role::User, context)], tag: None }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinetuneTask {
    Psp,
    Joint,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub prompt: String,
    pub completion: String,
    pub loss_on_completion_only: bool,
}

impl FinetuneRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("plain strings serialize")
    }
}

pub fn export_finetune_records(samples: &[&CorpusSample], task: FinetuneTask) -> Result<Vec<FinetuneRecord>, PromptError> {
    samples
        .iter()
        .map(|s| {
            let (prompt, completion) = match task {
                FinetuneTask::Psp => (format!("{PSP_PREFIX}{}", s.plain_text()), s.markup()),
                FinetuneTask::Joint => {
                    let context = s.context_utterance.clone().ok_or_else(|| PromptError::MissingContext(s.id.clone()))?;
                    let features = s.response_features.as_ref().ok_or_else(|| PromptError::MissingFeatures(s.id.clone()))?;
                    (context, encode_target(&s.plain_text(), features)?)
                }
            };
            Ok(FinetuneRecord { prompt, completion, loss_on_completion_only: true })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(id: &str, markup: &str) -> CorpusSample {
        let a = parse_annotated(markup, ParsePolicy::Lenient).unwrap();
        let n = a.len();
        CorpusSample::from_text(id, a, vec!["a1".into(); n])
    }

    fn train(n: usize) -> Vec<CorpusSample> {
        (0..n).map(|i| sample(&format!("{i:03}"), "你好#1世界")).collect()
    }

    #[test]
    fn zero_shot_without_knowledge_has_two_messages() {
        let p = build_psp_prompt("你好世界", &KnowledgeConfig::none(), &[]).unwrap();
        assert_eq!(p.messages.len(), 2);
        assert_eq!(p.messages[0].role, Role::System);
        assert_eq!(p.messages[1].text, "Please perform prosodic prediction on the given sentence:你好世界");
    }

    #[test]
    fn demo_structure() {
        let demos: Vec<Demo> = ["你好#1世界", "早上#2好", "谢谢#1你", "再见"]
            .iter()
            .map(|m| Demo { input: strip_markup(m), output: m.to_string() })
            .collect();
        let p = build_psp_prompt("天气好", &KnowledgeConfig::all(), &demos).unwrap();
        assert_eq!(p.messages.len(), 2 + 8 + 1);
        assert_eq!(p.messages.len(), expected_message_count(4, true));
        assert_eq!(p.messages[1].role, Role::System);
        for (i, d) in demos.iter().enumerate() {
            assert_eq!(p.messages[2 + 2 * i].role, Role::User);
            assert_eq!(p.messages[3 + 2 * i], Message::new(Role::Assistant, d.output.clone()));
        }
        assert_eq!(p.messages.last().unwrap().role, Role::User);
    }

    #[test]
    fn demo_limits() {
        let d = Demo { input: "你好".into(), output: "你#1好".into() };
        assert!(matches!(build_psp_prompt("x", &KnowledgeConfig::none(), &vec![d.clone(); 17]), Err(PromptError::TooManyDemos(17))));
        assert!(build_psp_prompt("x", &KnowledgeConfig::none(), &vec![d; 16]).is_ok());
        let bad = Demo { input: "你好".into(), output: "你#9好".into() };
        assert!(matches!(build_psp_prompt("x", &KnowledgeConfig::none(), &[bad]), Err(PromptError::InvalidDemo { index: 0, .. })));
        let mismatch = Demo { input: "你们".into(), output: "你#1好".into() };
        assert!(matches!(build_psp_prompt("x", &KnowledgeConfig::none(), &[mismatch]), Err(PromptError::InvalidDemo { .. })));
    }

    #[test]
    fn knowledge_block_contains_enabled_levels_only() {
        let all = KnowledgeConfig::all();
        for level in ProsodyLevel::SCORED {
            let k = KnowledgeConfig::without(level);
            let block = k.block().unwrap();
            for (i, text) in all.texts.iter().enumerate() {
                assert_eq!(block.contains(text.as_str()), i != level.scored_index().unwrap());
            }
        }
        assert!(KnowledgeConfig::none().block().is_none());
    }

    #[test]
    fn knowledge_override_directory() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("pph.txt"), "custom phrase text\n").unwrap();
        let k = KnowledgeConfig::all().load_texts(dir.path()).unwrap();
        assert_eq!(k.texts[1], "custom phrase text");
        assert_eq!(k.texts[0], KnowledgeConfig::all().texts[0]);
    }

    #[test]
    fn digest_ignores_tag_and_is_stable() {
        let p = build_psp_prompt("你好", &KnowledgeConfig::all(), &[]).unwrap();
        let q = p.clone().with_tag("000001");
        assert_eq!(p.digest(), q.digest());
        assert_eq!(p.digest().len(), 64);
        let r = build_psp_prompt("你们", &KnowledgeConfig::all(), &[]).unwrap();
        assert_ne!(p.digest(), r.digest());
        // role and text boundaries are unambiguous
        let a = Prompt { messages: vec![Message::new(Role::User, "ab")], tag: None };
        let b = Prompt { messages: vec![Message::new(Role::User, "a"), Message::new(Role::User, "b")], tag: None };
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn random_selection() {
        let t = train(20);
        let refs: Vec<&CorpusSample> = t.iter().collect();
        let sel = DemoSelection::random(4, 11, 3);
        let a = select_demos(&refs, &sel).unwrap();
        assert_eq!(a, select_demos(&refs, &sel).unwrap());
        assert_eq!(a.len(), 3);
        assert!(a.iter().all(|d| d.len() == 4));
        // input order of the split does not matter
        let mut rev = refs.clone();
        rev.reverse();
        assert_eq!(a, select_demos(&rev, &sel).unwrap());
        assert!(matches!(
            select_demos(&refs[..3], &sel),
            Err(PromptError::InsufficientTrainingData { needed: 4, available: 3 })
        ));
    }

    #[test]
    fn random_draws_are_without_replacement() {
        let t: Vec<CorpusSample> = (0..20).map(|i| sample(&format!("{i:03}"), &"好".repeat(i + 1))).collect();
        let refs: Vec<&CorpusSample> = t.iter().collect();
        for draw in select_demos(&refs, &DemoSelection::random(16, 5, 3)).unwrap() {
            let mut inputs: Vec<&str> = draw.iter().map(|d| d.input.as_str()).collect();
            inputs.sort();
            inputs.dedup();
            assert_eq!(inputs.len(), 16);
        }
    }

    #[test]
    fn curated_selection() {
        let t: Vec<CorpusSample> = (0..10).map(|i| sample(&format!("id{i}"), &"好".repeat(i + 1))).collect();
        let refs: Vec<&CorpusSample> = t.iter().collect();
        let got = select_demos(&refs, &DemoSelection::curated(vec!["id7".into(), "id3".into()])).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0][0].input.chars().count(), 8);
        assert_eq!(got[0][1].input.chars().count(), 4);
        assert!(matches!(
            select_demos(&refs, &DemoSelection::curated(vec!["nope".into()])),
            Err(PromptError::UnknownCuratedId(_))
        ));
    }

    #[test]
    fn context_prompt() {
        let p = build_context_prompt("the Husky disappeared.").unwrap();
        assert_eq!(p.messages[0].text, "Please generate the most likely sentence spoken by A based on B's response.");
        assert!(p.messages[1].text.ends_with("B: \"the Husky disappeared.\""));
        assert_eq!(p.messages[1].text, "A:\nB: \"the Husky disappeared.\"");
        assert_eq!(p, build_context_prompt("the Husky disappeared.").unwrap());
        assert!(matches!(build_context_prompt("  "), Err(PromptError::EmptyResponse)));
    }

    #[test]
    fn context_reply_cleanup() {
        assert_eq!(clean_context_reply("A: \"Where did the Husky go?\"").as_deref(), Some("Where did the Husky go?"));
        assert_eq!(clean_context_reply("你去哪儿了？").as_deref(), Some("你去哪儿了？"));
        assert_eq!(clean_context_reply("A：“你去哪儿了？”").as_deref(), Some("你去哪儿了？"));
        assert_eq!(clean_context_reply("A: \"\""), None);
        assert_eq!(clean_context_reply(""), None);
    }

    #[test]
    fn finetune_export() {
        let s = sample("000001", "你好#1世界#4");
        let psp = export_finetune_records(&[&s], FinetuneTask::Psp).unwrap();
        assert_eq!(psp[0].prompt, "Please perform prosodic prediction on the given sentence:你好世界");
        assert_eq!(psp[0].completion, "你好#1世界");
        assert!(psp[0].to_json_line().contains("\"loss_on_completion_only\":true"));
        assert!(matches!(export_finetune_records(&[&s], FinetuneTask::Joint), Err(PromptError::MissingContext(_))));
        assert!(export_finetune_records(&[], FinetuneTask::Joint).unwrap().is_empty());

        let mut s = s;
        s.context_utterance = Some("你在说什么？".into());
        s.response_features = Some(crate::features::FeatureSequence::new(
            s.annotated
                .chars()
                .iter()
                .zip(s.annotated.boundaries())
                .map(|(&ch, &prosody)| crate::features::FeatureRecord {
                    ch,
                    duration_ms: 100,
                    pinyin: "a1".into(),
                    prosody,
                    pitch_high_d: None,
                    pitch_low_d: None,
                })
                .collect(),
        ));
        let joint = export_finetune_records(&[&s], FinetuneTask::Joint).unwrap();
        assert_eq!(joint[0].prompt, "你在说什么？");
        assert!(joint[0].completion.starts_with("你好世界\n###FEATURES###\n"));
    }

    proptest! {
        #[test]
        fn prompt_shape(k in 0usize..=16, pw: bool, pph: bool, iph: bool, s in crate::markup::tests::arb_sentence(12)) {
            let demo = Demo { input: s.text(), output: s.to_string() };
            let knowledge = KnowledgeConfig { include_pw: pw, include_pph: pph, include_iph: iph, ..KnowledgeConfig::all() };
            let p = build_psp_prompt(&s.text(), &knowledge, &vec![demo; k]).unwrap();
            prop_assert_eq!(p.messages.len(), expected_message_count(k, pw || pph || iph));
            prop_assert_eq!(p.messages.last().unwrap().role, Role::User);
            let start = 1 + usize::from(pw || pph || iph);
            for (i, m) in p.messages[start..p.messages.len() - 1].iter().enumerate() {
                prop_assert_eq!(m.role, if i % 2 == 0 { Role::User } else { Role::Assistant });
                if m.role == Role::Assistant {
                    prop_assert!(parse_annotated(&m.text, ParsePolicy::Strict).is_ok());
                }
            }
            prop_assert_eq!(&p, &build_psp_prompt(&s.text(), &knowledge, &vec![Demo { input: s.text(), output: s.to_string() }; k]).unwrap());
        }
    }
}
