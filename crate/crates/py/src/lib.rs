//! Python bindings: fixed-point pads and blinding, the local trainer and
//! validator, verdict auditing and the scenario runner.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use glimmer_core::aggregation::{self, GlobalModel};
use glimmer_core::client::{self, Normalization};
use glimmer_core::confidential::{self, AuditResult, Challenge, NONCE_LEN};
use glimmer_core::crypto::{self, BlindedVector, FixedWeight, ModelVector, Pad, VerifyingKey};
use glimmer_core::pipeline::{self, ValidationPolicy};
use glimmer_core::sim::{self, scenarios, RunOptions, Transport};
use glimmer_core::tee;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn normalization(name: &str) -> PyResult<Normalization> {
    match name {
        "joint" => Ok(Normalization::Joint),
        "conditional" => Ok(Normalization::Conditional),
        other => Err(PyValueError::new_err(format!("unknown normalization {other:?}"))),
    }
}

/// SHA-256 measurement of enclave code.
#[pyfunction]
fn measure<'py>(py: Python<'py>, code: &[u8]) -> Bound<'py, PyBytes> {
    PyBytes::new_bound(py, &tee::measure(code).to_bytes())
}

/// `n` zero-sum pads of length `v`, as lists of raw u64 entries.
#[pyfunction]
fn gen_pads(round_id: u64, n: usize, v: usize, seed: [u8; 32]) -> PyResult<Vec<Vec<u64>>> {
    let pads = crypto::gen_pads(round_id, n, v, seed).map_err(value_err)?;
    Ok(pads.into_iter().map(|p| p.entries.clone()).collect())
}

#[pyfunction]
fn blind(round_id: u64, x: Vec<u64>, pad: Vec<u64>) -> PyResult<Vec<u64>> {
    let y = crypto::blind(&ModelVector::from_raw(round_id, x), &Pad { round_id, entries: pad }).map_err(value_err)?;
    Ok(y.entries)
}

/// Sums blinded vectors and dropout pads mod 2^64.
#[pyfunction]
#[pyo3(signature = (ys, dropout_pads=Vec::new()))]
fn aggregate_unblind(ys: Vec<Vec<u64>>, dropout_pads: Vec<Vec<u64>>) -> PyResult<Vec<u64>> {
    let ys: Vec<BlindedVector> = ys.into_iter().map(|entries| BlindedVector { round_id: 0, entries }).collect();
    let pads: Vec<Pad> = dropout_pads.into_iter().map(|entries| Pad { round_id: 0, entries }).collect();
    crypto::aggregate_unblind(&ys, &pads).map_err(value_err)
}

/// Bigram model of a word sequence, flattened row-major.
#[pyfunction]
#[pyo3(signature = (words, vocab_size, normalization="joint"))]
fn train_local(words: Vec<u32>, vocab_size: usize, normalization: &str) -> PyResult<Vec<u64>> {
    if let Some(w) = words.iter().find(|w| **w as usize >= vocab_size) {
        return Err(PyValueError::new_err(format!("word id {w} outside vocabulary of {vocab_size}")));
    }
    Ok(client::train_local(&words, vocab_size, self::normalization(normalization)?).raw())
}

/// `(valid, reason)` for the range policy with bounds in whole units.
#[pyfunction]
#[pyo3(signature = (x, lo=0, hi=1))]
fn validate_range(x: Vec<u64>, lo: u64, hi: u64) -> (bool, String) {
    let policy =
        ValidationPolicy { lo: FixedWeight::from_units(lo), hi: FixedWeight::from_units(hi), ..ValidationPolicy::range() };
    let v = pipeline::validate_range(&ModelVector::from_raw(0, x), &policy);
    (v.valid, v.reason.code().to_owned())
}

#[pyfunction]
fn predict_next(sums: Vec<u64>, vocab_size: usize, word: u32, k: usize) -> Vec<u32> {
    let g = GlobalModel { round_id: 0, sums, submitter_count: 0 };
    aggregation::predict_next(&g, vocab_size, word, k)
}

/// `"pass"` or the failure name for one outbound verdict message.
#[pyfunction]
fn audit_message(message: &[u8], round_id: u64, nonce: [u8; NONCE_LEN], verdict_key: [u8; 32]) -> PyResult<String> {
    let vk = VerifyingKey::from_bytes(&verdict_key).map_err(value_err)?;
    Ok(match confidential::audit_message(message, &Challenge { round_id, nonce }, &vk) {
        AuditResult::Pass => "pass".into(),
        AuditResult::Fail(f) => format!("{f:?}"),
    })
}

/// Result of one scenario run.
#[pyclass(frozen)]
struct Run {
    report: sim::RunReport,
    transcript: Vec<sim::TranscriptEntry>,
}

#[pymethods]
impl Run {
    #[getter]
    fn violations(&self) -> u64 {
        self.report.violations()
    }

    fn report_jsonl(&self) -> String {
        self.report.to_jsonl()
    }

    fn transcript_jsonl(&self) -> String {
        sim::transcript_to_jsonl(&self.transcript)
    }

    /// `(round, exact, accepted client ids)` per round.
    fn rounds(&self) -> Vec<(u64, Option<bool>, Vec<u64>)> {
        self.report.rounds().map(|r| (r.round, r.exact, r.accepted.clone())).collect()
    }

    /// Top successors of `word` in the final round.
    fn predictions(&self, word: &str) -> Vec<String> {
        self.report.rounds().last().and_then(|r| r.predictions.get(word).cloned()).unwrap_or_default()
    }

    fn __repr__(&self) -> String {
        format!("Run(rounds={}, violations={})", self.report.rounds().count(), self.report.violations())
    }
}

/// Runs a bundled scenario by name, or scenario source text.
#[pyfunction]
#[pyo3(signature = (scenario, seed=None, transport="bus"))]
fn run_scenario(py: Python<'_>, scenario: &str, seed: Option<u64>, transport: &str) -> PyResult<Run> {
    let source = scenarios::bundled_source(scenario).unwrap_or(scenario);
    let config = sim::parse_config(source).map_err(value_err)?;
    let transport: Transport = transport.parse().map_err(value_err)?;
    let opts = RunOptions { seed, transport, ..RunOptions::default() };
    let out = py.allow_threads(|| sim::run_scenario(&config, &opts)).map_err(value_err)?;
    Ok(Run { report: out.report, transcript: out.transcript })
}

#[pyfunction]
fn list_scenarios() -> Vec<(&'static str, String)> {
    scenarios::BUNDLED.iter().map(|(name, src)| (*name, scenarios::summary(src))).collect()
}

#[pymodule]
fn glimmer(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SCALE", crypto::SCALE)?;
    m.add_class::<Run>()?;
    m.add_function(wrap_pyfunction!(measure, m)?)?;
    m.add_function(wrap_pyfunction!(gen_pads, m)?)?;
    m.add_function(wrap_pyfunction!(blind, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate_unblind, m)?)?;
    m.add_function(wrap_pyfunction!(train_local, m)?)?;
    m.add_function(wrap_pyfunction!(validate_range, m)?)?;
    m.add_function(wrap_pyfunction!(predict_next, m)?)?;
    m.add_function(wrap_pyfunction!(audit_message, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(list_scenarios, m)?)?;
    Ok(())
}
