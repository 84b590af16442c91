//! Python bindings: harden, verify and run programs given as IR text.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use ctlin::cfl::SelectScheme;
use ctlin::interp::{ExecInput, InterpConfig, Program};
use ctlin::ir::{parse_module, print_module, Module};
use ctlin::pipeline::{self, PipelineConfig};
use ctlin::verifier::{random_inputs, secret_vectors, verify_all, SecretPlan};

fn module(src: &str) -> PyResult<Module> {
    parse_module(src).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Returns `(hardened_ir, report_json)`.
#[pyfunction]
#[pyo3(signature = (src, lambda_ = 64, scheme = 5, seed = 0, skip_cloning = false, skip_natural = false, skip_promotion = false))]
fn harden(src: &str, lambda_: u64, scheme: u32, seed: u64, skip_cloning: bool, skip_natural: bool, skip_promotion: bool) -> PyResult<(String, String)> {
    let m = module(src)?;
    let scheme = SelectScheme::from_index(scheme).ok_or_else(|| PyValueError::new_err("scheme must be 1..5"))?;
    let cfg = PipelineConfig { lambda: lambda_, scheme, seed, skip_cloning, skip_natural, skip_promotion, ..PipelineConfig::default() };
    let h = pipeline::harden(&m, &cfg).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((print_module(&h.hardened), h.report.to_text()))
}

/// Returns `(passed, report_json)`.
#[pyfunction]
#[pyo3(signature = (original, hardened, lambda_ = 64, pairs = 100, inputs = 1000, public = Vec::new(), seed = 0))]
fn verify(original: &str, hardened: &str, lambda_: u64, pairs: usize, inputs: usize, public: Vec<u64>, seed: u64) -> PyResult<(bool, String)> {
    let (o, h) = (module(original)?, module(hardened)?);
    let secrets = secret_vectors(&o, &SecretPlan { pairs, seed, ..SecretPlan::default() });
    let ins = random_inputs(&o, inputs, 32768, seed);
    let r = verify_all(&o, &h, &public, &secrets, &ins, &InterpConfig::with_lambda(lambda_));
    Ok((r.passed(), r.to_text()))
}

/// Runs a program; returns `(result, instructions_executed, memory_events)`.
/// `result` is `None` when the run aborts.
#[pyfunction]
#[pyo3(signature = (src, public = Vec::new(), secret = Vec::new(), lambda_ = 64))]
fn run(src: &str, public: Vec<u64>, secret: Vec<u64>, lambda_: u64) -> PyResult<(Option<u64>, usize, usize)> {
    let m = module(src)?;
    let p = Program::new(&m).map_err(|e| PyValueError::new_err(format!("{e:?}")))?;
    let t = p.run(&ExecInput::new(public, secret), &InterpConfig::with_lambda(lambda_));
    Ok((t.result().ok(), t.insts.len(), t.events.len()))
}

#[pyfunction]
fn corpus(name: &str) -> PyResult<String> {
    ctlin::corpus::get(name).map(str::to_string).ok_or_else(|| PyValueError::new_err(format!("no bundled program `{name}`")))
}

#[pyfunction]
fn corpus_names() -> Vec<&'static str> {
    ctlin::corpus::ALL.iter().map(|(n, _)| *n).collect()
}

#[pymodule(name = "ctlin")]
fn ctlin_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(harden, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(corpus, m)?)?;
    m.add_function(wrap_pyfunction!(corpus_names, m)?)?;
    Ok(())
}
