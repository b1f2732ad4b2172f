#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use prosody_core::config::RunConfig;

pub fn fixture_corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus")
}

const CHARS: &[(char, &str)] = &[
    ('天', "tian1"), ('地', "di4"), ('人', "ren2"), ('山', "shan1"), ('水', "shui3"),
    ('风', "feng1"), ('花', "hua1"), ('雪', "xue3"), ('月', "yue4"), ('星', "xing1"),
];

/// Writes `n` samples with intervals and pitch under `root`. Sentence `i`
/// has `3 + i % 6` characters; boundaries cycle through all levels.
pub fn synthetic_corpus(root: &Path, n: usize) {
    std::fs::create_dir_all(root.join("intervals")).unwrap();
    std::fs::create_dir_all(root.join("pitch")).unwrap();
    let mut index = String::new();
    for i in 0..n {
        let id = format!("s{i:04}");
        let len = 3 + i % 6;
        let mut markup = String::new();
        let mut pinyin = Vec::new();
        let mut intervals = String::new();
        let mut pitch = String::new();
        for j in 0..len {
            let (ch, py) = CHARS[(i * 7 + j * 3) % CHARS.len()];
            markup.push(ch);
            if j + 1 < len {
                match (i + j) % 5 {
                    1 => markup.push_str("#1"),
                    2 => markup.push_str("#2"),
                    3 => markup.push_str("#3"),
                    _ => {}
                }
            }
            pinyin.push(py);
            let start = 0.1 + 0.2 * j as f64;
            let _ = writeln!(intervals, "{ch}\t{:.3}\t{:.3}\t{py}", start, start + 0.2);
        }
        markup.push_str("#4");
        let frames = ((0.1 + 0.2 * len as f64 + 0.1) / 0.01).round() as usize;
        for f in 0..frames {
            let hz = if f < 10 { 0.0 } else { 150.0 + ((f * 13 + i) % 90) as f64 };
            let _ = writeln!(pitch, "{:.3}\t{hz:.1}", f as f64 * 0.01);
        }
        let _ = writeln!(index, "{id}\t{markup}\t{}", pinyin.join(" "));
        std::fs::write(root.join("intervals").join(format!("{id}.tsv")), intervals).unwrap();
        std::fs::write(root.join("pitch").join(format!("{id}.tsv")), pitch).unwrap();
    }
    std::fs::write(root.join("index.tsv"), index).unwrap();
}

pub fn config(corpus: &Path, out: &Path) -> RunConfig {
    let mut c = RunConfig { corpus: corpus.to_path_buf(), out: out.to_path_buf(), ..Default::default() };
    c.split.seed = 7;
    c.demos.seed = 7;
    c
}

/// Report files of an output directory, excluding the completion cache.
pub fn report_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}
