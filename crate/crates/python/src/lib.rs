//! Python bindings. Structured results cross the boundary as JSON and are
//! turned into plain dicts and lists with the `json` module.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyModule;

use prosody_core::align::align_chars;
use prosody_core::codec::{decode_target, encode_target, DecodePolicy};
use prosody_core::corpus::{split_ids, SplitSpec};
use prosody_core::eval::{corpus_fscore, Aggregation, CountMode};
use prosody_core::features::{d_to_hz, hz_to_d, FeatureSequence, ReferenceF0};
use prosody_core::markup::{parse_annotated, render_annotated, strip_markup, AnnotatedSentence, ParsePolicy, ProsodyLevel};
use prosody_core::prompting::{build_psp_prompt, Demo, KnowledgeConfig};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_error)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: serde::de::DeserializeOwned>(py: Python<'_>, value: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py.import("json")?.call_method1("dumps", (value,))?.extract()?;
    serde_json::from_str(&text).map_err(value_error)
}

/// An annotated sentence: characters and the boundary level after each.
#[pyclass(name = "Sentence", module = "prosody_py", frozen)]
struct PySentence {
    inner: AnnotatedSentence,
}

#[pymethods]
impl PySentence {
    #[new]
    fn new(text: &str, boundaries: Vec<u32>) -> PyResult<Self> {
        let levels = boundaries
            .into_iter()
            .map(|b| u8::try_from(b).ok().and_then(ProsodyLevel::from_u8).ok_or_else(|| value_error(format!("invalid boundary level {b}"))))
            .collect::<PyResult<Vec<_>>>()?;
        let inner = AnnotatedSentence::new(text.chars().collect(), levels).map_err(value_error)?;
        Ok(Self { inner })
    }

    #[getter]
    fn text(&self) -> String {
        self.inner.text()
    }

    #[getter]
    fn boundaries(&self) -> Vec<u32> {
        self.inner.boundaries().iter().map(|b| u32::from(b.as_u8())).collect()
    }

    fn render(&self) -> String {
        render_annotated(&self.inner)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Sentence({:?})", render_annotated(&self.inner))
    }
}

#[pyfunction]
#[pyo3(signature = (text, strict = false))]
fn parse(text: &str, strict: bool) -> PyResult<PySentence> {
    let policy = if strict { ParsePolicy::Strict } else { ParsePolicy::Lenient };
    parse_annotated(text, policy).map(|inner| PySentence { inner }).map_err(value_error)
}

#[pyfunction]
fn strip(text: &str) -> String {
    strip_markup(text)
}

#[pyfunction]
fn dvalue(hz: f64, f0: f64) -> PyResult<f64> {
    hz_to_d(hz, ReferenceF0::fixed(f0).map_err(value_error)?).map_err(value_error)
}

#[pyfunction]
fn hz(d: f64, f0: f64) -> PyResult<f64> {
    Ok(d_to_hz(d, ReferenceF0::fixed(f0).map_err(value_error)?))
}

/// Corpus F-scores of `(prediction, reference)` markup pairs; a `None`
/// prediction counts as a failed request.
#[pyfunction]
#[pyo3(signature = (pairs, mode = "cumulative", macro_average = false))]
fn score<'py>(py: Python<'py>, pairs: Vec<(Option<String>, String)>, mode: &str, macro_average: bool) -> PyResult<Bound<'py, PyAny>> {
    let mode = match mode {
        "cumulative" => CountMode::Cumulative,
        "exact" => CountMode::Exact,
        other => return Err(value_error(format!("unknown count mode {other:?}"))),
    };
    let aggregation = if macro_average { Aggregation::Macro } else { Aggregation::Micro };
    let scores = corpus_fscore(pairs.iter().map(|(p, r)| (p.as_deref(), r.as_str())), mode, aggregation).map_err(value_error)?;
    to_py(py, &scores)
}

#[pyfunction]
fn align(reference: &str, predicted: &str) -> Vec<(usize, usize)> {
    align_chars(reference, predicted).pairs
}

/// Encodes a response and its feature records (dicts with `ch`,
/// `duration_ms`, `pinyin`, `prosody`, `pitch_high_d`, `pitch_low_d`).
#[pyfunction]
fn encode(py: Python<'_>, response: &str, records: &Bound<'_, PyAny>) -> PyResult<String> {
    let features: FeatureSequence = from_py(py, records)?;
    encode_target(response, &features).map_err(value_error)
}

#[pyfunction]
#[pyo3(signature = (text, strict = false))]
fn decode<'py>(py: Python<'py>, text: &str, strict: bool) -> PyResult<Bound<'py, PyAny>> {
    let policy = if strict { DecodePolicy::Strict } else { DecodePolicy::Lenient };
    to_py(py, &decode_target(text, policy).map_err(value_error)?)
}

/// Chat messages of a prosodic structure prediction prompt.
#[pyfunction]
#[pyo3(signature = (sentence, demos = Vec::new(), knowledge = true))]
fn psp_prompt<'py>(py: Python<'py>, sentence: &str, demos: Vec<(String, String)>, knowledge: bool) -> PyResult<Bound<'py, PyAny>> {
    let demos: Vec<Demo> = demos.into_iter().map(|(input, output)| Demo { input, output }).collect();
    let config = if knowledge { KnowledgeConfig::all() } else { KnowledgeConfig::none() };
    let prompt = build_psp_prompt(sentence, &config, &demos).map_err(value_error)?;
    to_py(py, &prompt.messages)
}

#[pyfunction]
fn prompt_digest(py: Python<'_>, messages: &Bound<'_, PyAny>) -> PyResult<String> {
    let messages = from_py(py, messages)?;
    Ok(prosody_core::prompting::Prompt { messages, tag: None }.digest())
}

#[pyfunction]
#[pyo3(signature = (ids, ratios = (0.8, 0.1, 0.1), seed = 0))]
fn split<'py>(py: Python<'py>, ids: Vec<String>, ratios: (f64, f64, f64), seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let spec = SplitSpec::new([ratios.0, ratios.1, ratios.2], seed).map_err(value_error)?;
    to_py(py, &split_ids(&ids, &spec).map_err(value_error)?)
}

#[pymodule]
fn prosody_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySentence>()?;
    m.add_function(wrap_pyfunction!(parse, m)?)?;
    m.add_function(wrap_pyfunction!(strip, m)?)?;
    m.add_function(wrap_pyfunction!(dvalue, m)?)?;
    m.add_function(wrap_pyfunction!(hz, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(align, m)?)?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(psp_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(prompt_digest, m)?)?;
    m.add_function(wrap_pyfunction!(split, m)?)?;
    Ok(())
}
