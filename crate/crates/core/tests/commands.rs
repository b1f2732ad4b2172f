mod common;

use std::collections::BTreeMap;

use common::{config, fixture_corpus, report_files, synthetic_corpus};
use prosody_core::codec::encode_target;
use prosody_core::commands::{cmd_ablation, cmd_eval_joint, cmd_eval_psp, cmd_gen_context, PrefixMode};
use prosody_core::config::{BackendKind, FallbackKind};
use prosody_core::corpus::load_corpus;
use prosody_core::features::FeatureSequence;
use prosody_core::prompting::{build_context_prompt, build_joint_prompt};

fn write_fixtures(path: &std::path::Path, entries: &[(String, String)]) {
    let body: String = entries
        .iter()
        .map(|(d, t)| serde_json::json!({"digest": d, "text": t}).to_string() + "\n")
        .collect();
    std::fs::write(path, body).unwrap();
}

#[test]
fn psp_echo_scores_perfectly_and_reproducibly() {
    let out = tempfile::tempdir().unwrap();
    let c = config(&fixture_corpus(), out.path());
    let first = cmd_eval_psp(&c).unwrap();
    for mean in &first.report.mean {
        assert_eq!(mean.scores.f_scores(), [1.0; 3]);
    }
    assert_eq!(first.report.message_count, 3);
    let before = report_files(out.path());
    let second = cmd_eval_psp(&c).unwrap();
    assert_eq!(second.new_requests, 0);
    assert_eq!(before, report_files(out.path()));
}

#[test]
fn random_demos_report_three_draws_and_mean() {
    let out = tempfile::tempdir().unwrap();
    let mut c = config(&fixture_corpus(), out.path());
    c.demos.k = 4;
    c.demos.repeat_count = 3;
    let s = cmd_eval_psp(&c).unwrap();
    assert_eq!(s.report.draws.len(), 3);
    assert_eq!(s.report.message_count, 2 + 8 + 1);
    let table = std::fs::read_to_string(out.path().join("psp_report.txt")).unwrap();
    for label in ["draw 1", "draw 2", "draw 3", "mean"] {
        assert!(table.contains(label), "{table}");
    }
    let transcript = std::fs::read_to_string(out.path().join("psp_transcript.jsonl")).unwrap();
    assert_eq!(transcript.lines().count(), 3 * s.report.samples);
}

#[test]
fn unreachable_backend_is_data_not_failure() {
    let out = tempfile::tempdir().unwrap();
    let mut c = config(&fixture_corpus(), out.path());
    c.backend = BackendKind::Real;
    c.llm.base_url = "http://127.0.0.1:9/v1".into();
    c.llm.max_retries = 0;
    c.llm.backoff_base = 0.0;
    c.llm.request_timeout = 2.0;
    let s = cmd_eval_psp(&c).unwrap();
    let draw = &s.report.draws[0];
    assert_eq!(draw.errors, s.report.samples);
    for scores in &draw.scores {
        assert_eq!(scores.unparsable, s.report.samples);
        for level in scores.scores.levels {
            assert_eq!(level.tp, 0);
            if level.fn_ > 0 {
                assert_eq!(level.recall, 0.0);
            }
        }
    }
}

#[test]
fn context_generation_strips_speaker_and_quotes() {
    let out = tempfile::tempdir().unwrap();
    let mut c = config(&fixture_corpus(), out.path());
    let (corpus, _) = load_corpus(&fixture_corpus()).unwrap();
    let first = &corpus.samples[0];
    let fixtures = out.path().join("fixtures.jsonl");
    let digest = build_context_prompt(&first.plain_text()).unwrap().digest();
    write_fixtures(&fixtures, &[(digest, "A: \"Where did the Husky go?\"".into())]);
    c.mock.fixtures = Some(fixtures);
    c.mock.fallback = FallbackKind::Fail;
    let s = cmd_gen_context(&c).unwrap();
    assert_eq!(s.contexts[&first.id], "Where did the Husky go?");
    assert_eq!(s.generated, 1);
    assert_eq!(s.failed.len(), corpus.len() - 1);
    let written: BTreeMap<String, String> =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("contexts.json")).unwrap()).unwrap();
    assert_eq!(written, s.contexts);
}

#[test]
fn context_rerun_hits_the_cache() {
    let out = tempfile::tempdir().unwrap();
    let c = config(&fixture_corpus(), out.path());
    let first = cmd_gen_context(&c).unwrap();
    assert_eq!(first.new_requests, 12);
    let second = cmd_gen_context(&c).unwrap();
    assert_eq!(second.new_requests, 0);
    assert_eq!(first.contexts, second.contexts);
}

#[test]
fn joint_echo_is_perfect_in_both_prefix_modes() {
    for prefix_support in [true, false] {
        let out = tempfile::tempdir().unwrap();
        let mut c = config(&fixture_corpus(), out.path());
        c.mock.prefix_support = prefix_support;
        cmd_gen_context(&c).unwrap();
        let s = cmd_eval_joint(&c).unwrap();
        let expected = if prefix_support { PrefixMode::Assistant } else { PrefixMode::Prepend };
        assert_eq!(s.prefix_mode, expected);
        assert_eq!(s.rows.len(), 2);
        for row in &s.rows {
            let r = &row.report;
            assert_eq!(
                [r.parsable_rate, r.matched_char_rate, r.matched_pinyin_rate, r.matched_prosody_rate],
                [1.0; 4]
            );
        }
        let csv = std::fs::read_to_string(out.path().join("scatter_test_duration.csv")).unwrap();
        assert!(csv.starts_with("field,pred,ref\n"));
    }
}

#[test]
fn joint_dropped_records_give_pooled_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_dir = dir.path().join("corpus");
    synthetic_corpus(&corpus_dir, 20);
    let out = dir.path().join("out");
    let mut c = config(&corpus_dir, &out);
    c.joint.f0 = Some(180.0);

    let (mut corpus, _) = load_corpus(&corpus_dir).unwrap();
    let contexts: BTreeMap<String, String> = corpus.ids().into_iter().map(|id| (id.clone(), format!("上一句 {id}"))).collect();
    let contexts_path = dir.path().join("contexts.json");
    std::fs::write(&contexts_path, serde_json::to_string(&contexts).unwrap()).unwrap();
    c.joint.contexts = Some(contexts_path);

    corpus.compute_features(prosody_core::ReferenceF0::fixed(180.0).unwrap());
    let mut fixtures = Vec::new();
    for s in &corpus.samples {
        let mut kept = s.response_features.clone().unwrap().records;
        kept.remove(1);
        let body = prosody_core::codec::encode_records(&FeatureSequence::new(kept));
        let text = format!("{}\n###FEATURES###\n{body}", s.plain_text());
        fixtures.push((build_joint_prompt(&contexts[&s.id]).digest(), text));
    }
    let fixtures_path = dir.path().join("fixtures.jsonl");
    write_fixtures(&fixtures_path, &fixtures);
    c.mock.fixtures = Some(fixtures_path);
    c.mock.fallback = FallbackKind::Fail;

    let s = cmd_eval_joint(&c).unwrap();
    let split = prosody_core::corpus::split_ids(&corpus.ids(), &c.split.spec().unwrap()).unwrap();
    for row in &s.rows {
        let ids = split.part(row.split);
        let total: usize = ids.iter().map(|id| corpus.get(id).unwrap().annotated.len()).sum();
        let expected = (total - ids.len()) as f64 / total as f64;
        assert_eq!(row.report.matched_char_rate, expected, "{:?}", row.split);
        assert_eq!(row.report.parsable_rate, 1.0);
        assert_eq!(row.report.matched_pinyin_rate, 1.0);
    }
    // the reference targets are still encodable
    let sample = &corpus.samples[0];
    assert!(encode_target(&sample.plain_text(), sample.response_features.as_ref().unwrap()).is_ok());
}

#[test]
fn ablation_grid_has_twelve_cells() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_dir = dir.path().join("corpus");
    synthetic_corpus(&corpus_dir, 30);
    let out = dir.path().join("out");
    let mut c = config(&corpus_dir, &out);
    c.demos.repeat_count = 3;
    let s = cmd_ablation(&c).unwrap();
    let cells = &s.report.cells;
    assert_eq!(cells.len(), 12);
    for cell in cells {
        assert_eq!(cell.message_count, cell.expected_message_count, "{}", cell.name);
        assert_eq!(cell.scores.f_scores(), [1.0; 3], "{}", cell.name);
    }
    let zero = cells.iter().find(|c| c.name == "k=0 w/o knowledge").unwrap();
    assert_eq!(zero.message_count, 2);
    let names: Vec<&str> = cells.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(&names[8..], ["w/o #1", "w/o #2", "w/o #3", "all"]);
    // the "all" variant repeats the k=4 with-knowledge cell
    assert!(s.new_requests < s.requests);
}

#[test]
fn config_errors_are_reported() {
    let out = tempfile::tempdir().unwrap();
    let c = config(&out.path().join("missing"), out.path());
    assert!(cmd_eval_psp(&c).is_err());
}
