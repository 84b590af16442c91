//! Profiling input suites: generation, parsing and printing.
//!
//! A suite line is `pub: 1, 2 ; sec: 0x1f`. Either half may be empty or
//! missing; `#` starts a comment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::interp::ExecInput;
use crate::ir::{InstKind, Module};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SuiteSpec {
    /// Values are drawn from `0..space`.
    pub space: u64,
    /// One input per equal-width slice of the space.
    pub partitions: u64,
    pub seed: u64,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        SuiteSpec { space: 32768, partitions: 128, seed: 0 }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SuiteError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
}

/// (public slots, secret slots) the entry function reads.
pub fn input_shape(m: &Module) -> (usize, usize) {
    let Some(f) = m.entry_function() else { return (0, 0) };
    let public = f.params.iter().filter(|p| !p.secret).count();
    let mut secret = f.params.iter().filter(|p| p.secret).count();
    for g in &m.functions {
        for i in g.insts() {
            if let InstKind::Secret { index, .. } = i.kind {
                secret = secret.max(index as usize + 1);
            }
        }
    }
    (public, secret)
}

/// One input per partition; every slot of input `i` is uniform in the
/// partition's slice.
pub fn default_suite(m: &Module, spec: &SuiteSpec) -> Vec<ExecInput> {
    let (np, ns) = input_shape(m);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let parts = spec.partitions.max(1);
    let width = (spec.space / parts).max(1);
    (0..parts)
        .map(|i| {
            let lo = i * width;
            let mut draw = |n: usize| -> Vec<u64> { (0..n).map(|_| rng.gen_range(lo..lo + width)).collect() };
            let public = draw(np);
            let secret = draw(ns);
            ExecInput::new(public, secret)
        })
        .collect()
}

fn parse_values(s: &str, line: usize) -> Result<Vec<u64>, SuiteError> {
    s.split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| {
            let r = match v.strip_prefix("0x").or_else(|| v.strip_prefix("0X")) {
                Some(h) => u64::from_str_radix(h, 16),
                None => v.parse::<u64>(),
            };
            r.map_err(|_| SuiteError::Syntax { line, msg: format!("bad value `{v}`") })
        })
        .collect()
}

pub fn parse_suite(text: &str) -> Result<Vec<ExecInput>, SuiteError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut input = ExecInput::new(vec![], vec![]);
        for part in line.split(';') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            let Some((key, vals)) = part.split_once(':') else {
                return Err(SuiteError::Syntax { line: n + 1, msg: format!("expected `pub:` or `sec:` in `{part}`") });
            };
            let vals = parse_values(vals, n + 1)?;
            match key.trim() {
                "pub" => input.public = vals,
                "sec" => input.secret = vals,
                k => return Err(SuiteError::Syntax { line: n + 1, msg: format!("unknown key `{k}`") }),
            }
        }
        out.push(input);
    }
    Ok(out)
}

pub fn format_suite(suite: &[ExecInput]) -> String {
    let join = |v: &[u64]| v.iter().map(u64::to_string).collect::<Vec<_>>().join(", ");
    suite.iter().map(|i| format!("pub: {} ; sec: {}\n", join(&i.public), join(&i.secret))).collect()
}
