use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn prosody(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prosody")).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn fixture_corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/corpus")
}

#[test]
fn dvalue_of_an_octave() {
    assert_eq!(stdout(&prosody(&["dvalue", "--f", "220", "--f0", "110"])), "5.00\n");
}

#[test]
fn dvalue_rejects_non_positive_pitch() {
    let out = prosody(&["dvalue", "--f", "0", "--f0", "110"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn parse_render_strip() {
    let json = stdout(&prosody(&["parse", "你好#1世界#4"]));
    let value: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(value["boundaries"], serde_json::json!([0, 1, 0, 0]));
    assert_eq!(stdout(&prosody(&["render", json.trim()])), "你好#1世界\n");
    assert_eq!(stdout(&prosody(&["strip", "你好#1世界#4"])), "你好世界\n");
}

#[test]
fn parse_reads_stdin() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_prosody"))
        .arg("strip")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all("春眠#2不觉晓#4".as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(stdout(&out), "春眠不觉晓\n");
}

#[test]
fn strict_parse_fails_with_exit_code() {
    let out = prosody(&["parse", "--strict", "你#1#2好"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn split_sizes() {
    let json = stdout(&prosody(&["split", "--n", "10000", "--seed", "7"]));
    let value: serde_json::Value = serde_json::from_str(&json).unwrap();
    let len = |k: &str| value[k].as_array().unwrap().len();
    assert_eq!((len("train"), len("valid"), len("test")), (8000, 1000, 1000));
    assert_eq!(json, stdout(&prosody(&["split", "--n", "10000", "--seed", "7"])));
}

#[test]
fn score_prints_table() {
    let dir = tempfile::tempdir().unwrap();
    let pred = dir.path().join("pred.txt");
    let reference = dir.path().join("ref.txt");
    std::fs::write(&pred, "你好#1世界\n春眠#2不觉\n").unwrap();
    std::fs::write(&reference, "你好#1世界\n春眠#1不觉\n").unwrap();
    let table = stdout(&prosody(&["score", "--pred", pred.to_str().unwrap(), "--ref", reference.to_str().unwrap()]));
    assert!(table.contains("PW #1") && table.contains("100.00"), "{table}");
}

#[test]
fn eval_psp_on_fixture() {
    let out = tempfile::tempdir().unwrap();
    let corpus = fixture_corpus();
    let run = prosody(&[
        "eval-psp",
        "--corpus",
        corpus.to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
        "--backend",
        "mock",
        "--seed",
        "7",
    ]);
    stdout(&run);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("psp_report.json")).unwrap()).unwrap();
    assert_eq!(report["mean"][0]["scores"]["average_f"], 1.0);
    assert!(out.path().join("eval-psp_config.toml").exists());
}

#[test]
fn missing_corpus_is_an_error() {
    let out = tempfile::tempdir().unwrap();
    let run = prosody(&["eval-psp", "--corpus", "/nonexistent", "--out", out.path().to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(1));
}
