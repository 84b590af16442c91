//! Differential trace verification.
//!
//! Each check runs the interpreter over a set of inputs and compares the
//! traces against the first run. A failure carries the first index where
//! two traces differ and the inputs that reproduce it.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::interp::{DecoyViolation, ExecInput, InterpConfig, Program, Trace};
use crate::intrinsics::{is_reserved, BOUND_CELL_PREFIX};
use crate::ir::{InstId, Module};
use crate::profiler::input_shape;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    PcSecurity,
    Obliviousness,
    Equivalence,
    Decoy,
}

impl Check {
    pub fn name(self) -> &'static str {
        match self {
            Check::PcSecurity => "pc_security",
            Check::Obliviousness => "obliviousness",
            Check::Equivalence => "equivalence",
            Check::Decoy => "decoy",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    /// Traces diverged only in runs whose loop bound had to grow: the
    /// residual one-off perturbation of an under-trained bound.
    Warn,
    Fail,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Witness {
    pub first: (Vec<u64>, Vec<u64>),
    pub second: Option<(Vec<u64>, Vec<u64>)>,
    /// First differing position in the compared sequences.
    pub index: Option<usize>,
    pub left: String,
    pub right: String,
    pub inst: Option<InstId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub check: Check,
    pub status: Status,
    pub runs: usize,
    pub witness: Option<Witness>,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.status != Status::Fail
    }

    fn pass(check: Check, runs: usize) -> Verdict {
        Verdict { check, status: Status::Pass, runs, witness: None }
    }

    fn fail(check: Check, runs: usize, w: Witness) -> Verdict {
        Verdict { check, status: Status::Fail, runs, witness: Some(w) }
    }
}

fn pair(i: &ExecInput) -> (Vec<u64>, Vec<u64>) {
    (i.public.clone(), i.secret.clone())
}

fn first_diff<T: PartialEq>(a: &[T], b: &[T]) -> Option<usize> {
    let n = a.len().min(b.len());
    (0..n).find(|&i| a[i] != b[i]).or((a.len() != b.len()).then_some(n))
}

/// Whether any `ct.k.*` bound cell ended above its initial value.
fn grew_bound(m: &Module, t: &Trace) -> bool {
    m.globals.iter().filter(|g| g.name.starts_with(BOUND_CELL_PREFIX)).any(|g| {
        let init = g.init.as_deref().map(le).unwrap_or(0);
        t.globals.get(&g.name).is_some_and(|b| le(b) > init)
    })
}

fn le(b: &[u8]) -> u64 {
    let mut w = [0u8; 8];
    let n = b.len().min(8);
    w[..n].copy_from_slice(&b[..n]);
    u64::from_le_bytes(w)
}

fn runs(m: &Module, public: &[u64], secrets: &[Vec<u64>], cfg: &InterpConfig) -> Result<Vec<(ExecInput, Trace)>, String> {
    let prog = Program::new(m).map_err(|e| format!("{e:?}"))?;
    Ok(secrets
        .iter()
        .map(|s| {
            let inp = ExecInput::new(public.to_vec(), s.clone());
            let t = prog.run(&inp, cfg);
            (inp, t)
        })
        .collect())
}

fn malformed(check: Check, e: String) -> Verdict {
    Verdict::fail(check, 0, Witness { first: (vec![], vec![]), second: None, index: None, left: e, right: String::new(), inst: None })
}

/// Compares `key(trace)` of every run against the first one.
fn differential<T: PartialEq + std::fmt::Debug>(
    check: Check,
    m: &Module,
    all: &[(ExecInput, Trace)],
    key: impl Fn(&Trace) -> Vec<T>,
    culprit: impl Fn(&Trace, usize) -> Option<InstId>,
) -> Verdict {
    let Some((i0, t0)) = all.first() else { return Verdict::pass(check, 0) };
    for (inp, t) in all {
        if let Err(e) = t.result() {
            return Verdict::fail(check, all.len(), Witness { first: pair(inp), second: None, index: None, left: format!("{e:?}"), right: String::new(), inst: e.inst() });
        }
    }
    let k0 = key(t0);
    let mut warned = None;
    for (inp, t) in &all[1..] {
        let k = key(t);
        if let Some(ix) = first_diff(&k0, &k) {
            let w = Witness {
                first: pair(i0),
                second: Some(pair(inp)),
                index: Some(ix),
                left: k0.get(ix).map_or("end".into(), |v| format!("{v:?}")),
                right: k.get(ix).map_or("end".into(), |v| format!("{v:?}")),
                inst: culprit(t0, ix).or_else(|| culprit(t, ix)),
            };
            if grew_bound(m, t) || grew_bound(m, t0) {
                warned.get_or_insert(w);
                continue;
            }
            return Verdict::fail(check, all.len(), w);
        }
    }
    match warned {
        Some(w) => Verdict { check, status: Status::Warn, runs: all.len(), witness: Some(w) },
        None => Verdict::pass(check, all.len()),
    }
}

/// Identical executed-instruction traces for every secret vector.
pub fn check_pc_security(m: &Module, public: &[u64], secrets: &[Vec<u64>], cfg: &InterpConfig) -> Verdict {
    let all = match runs(m, public, secrets, cfg) {
        Ok(a) => a,
        Err(e) => return malformed(Check::PcSecurity, e),
    };
    differential(Check::PcSecurity, m, &all, |t| t.insts.clone(), |t, i| t.insts.get(i.saturating_sub(1)).copied())
}

/// Identical λ-quantized memory event traces for every secret vector.
pub fn check_obliviousness(m: &Module, public: &[u64], secrets: &[Vec<u64>], cfg: &InterpConfig) -> Verdict {
    let all = match runs(m, public, secrets, cfg) {
        Ok(a) => a,
        Err(e) => return malformed(Check::Obliviousness, e),
    };
    let l = cfg.lambda.max(1);
    differential(Check::Obliviousness, m, &all, |t| t.quantized(l), |t, i| t.events.get(i).map(|e| e.inst))
}

/// Same outputs and same final contents of the original's globals.
pub fn check_equivalence(orig: &Module, hardened: &Module, inputs: &[ExecInput], cfg: &InterpConfig) -> Verdict {
    let c = Check::Equivalence;
    let (po, ph) = match (Program::new(orig), Program::new(hardened)) {
        (Ok(a), Ok(b)) => (a, b),
        (a, b) => return malformed(c, format!("{:?} / {:?}", a.err(), b.err())),
    };
    for inp in inputs {
        let (a, b) = (po.run(inp, cfg), ph.run(inp, cfg));
        let w = |left: String, right: String, inst| Witness { first: pair(inp), second: None, index: None, left, right, inst };
        match (a.result(), b.result()) {
            (Ok(x), Ok(y)) if x != y => return Verdict::fail(c, inputs.len(), w(x.to_string(), y.to_string(), None)),
            (Ok(_), Ok(_)) | (Err(_), Err(_)) => {}
            (x, y) => {
                let inst = y.as_ref().err().and_then(|e| e.inst());
                return Verdict::fail(c, inputs.len(), w(format!("{x:?}"), format!("{y:?}"), inst));
            }
        }
        if a.result().is_err() {
            continue;
        }
        for g in &orig.globals {
            if is_reserved(&g.name) {
                continue;
            }
            if a.globals.get(&g.name) != b.globals.get(&g.name) {
                return Verdict::fail(c, inputs.len(), w(format!("@{} differs", g.name), String::new(), None));
            }
        }
    }
    Verdict::pass(c, inputs.len())
}

/// No decoy store changes memory, no raw access or abort happens while
/// taken = 0.
pub fn check_decoy_invariants(hardened: &Module, public: &[u64], secrets: &[Vec<u64>], cfg: &InterpConfig) -> Verdict {
    let c = Check::Decoy;
    let all = match runs(hardened, public, secrets, cfg) {
        Ok(a) => a,
        Err(e) => return malformed(c, e),
    };
    for (inp, t) in &all {
        if let Some(v) = t.decoy.first() {
            let inst = match v {
                DecoyViolation::StoreChangedMemory { inst, .. } | DecoyViolation::RawAccess { inst, .. } => Some(*inst),
                DecoyViolation::Abort(a) => a.inst(),
            };
            return Verdict::fail(c, all.len(), Witness { first: pair(inp), second: None, index: None, left: format!("{v:?}"), right: String::new(), inst });
        }
    }
    Verdict::pass(c, all.len())
}

/// How secret vectors are drawn for the differential checks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SecretPlan {
    pub pairs: usize,
    pub space: u64,
    /// Every combination is enumerated when the total bit count fits 16.
    pub exhaustive_bits: u32,
    pub seed: u64,
}

impl Default for SecretPlan {
    fn default() -> Self {
        SecretPlan { pairs: 100, space: 32768, exhaustive_bits: 8, seed: 0 }
    }
}

pub fn secret_vectors(m: &Module, plan: &SecretPlan) -> Vec<Vec<u64>> {
    let (_, ns) = input_shape(m);
    let ns = ns.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut out: Vec<Vec<u64>> = (0..plan.pairs * 2).map(|_| (0..ns).map(|_| rng.gen_range(0..plan.space)).collect()).collect();
    let bits = plan.exhaustive_bits * ns as u32;
    if plan.exhaustive_bits > 0 && bits <= 16 {
        let per = 1u64 << plan.exhaustive_bits;
        for code in 0..(1u64 << bits) {
            out.push((0..ns).map(|k| (code >> (k as u32 * plan.exhaustive_bits)) % per).collect());
        }
    }
    out
}

/// Random whole inputs: public and secret slots uniform in `0..space`.
pub fn random_inputs(m: &Module, n: usize, space: u64, seed: u64) -> Vec<ExecInput> {
    let (np, ns) = input_shape(m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let p = (0..np).map(|_| rng.gen_range(0..space)).collect();
            let s = (0..ns).map(|_| rng.gen_range(0..space)).collect();
            ExecInput::new(p, s)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct VerifyReport {
    pub verdicts: Vec<Verdict>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(Verdict::passed)
    }

    /// Key-sorted JSON.
    pub fn to_text(&self) -> String {
        let v = serde_json::to_value(self).expect("report serializes");
        serde_json::to_string_pretty(&v).expect("report serializes") + "\n"
    }

    pub fn summary(&self) -> BTreeMap<&'static str, Status> {
        self.verdicts.iter().map(|v| (v.check.name(), v.status)).collect()
    }
}

/// All four checks with one public input vector.
pub fn verify_all(orig: &Module, hardened: &Module, public: &[u64], secrets: &[Vec<u64>], inputs: &[ExecInput], cfg: &InterpConfig) -> VerifyReport {
    VerifyReport {
        verdicts: vec![
            check_pc_security(hardened, public, secrets, cfg),
            check_obliviousness(hardened, public, secrets, cfg),
            check_equivalence(orig, hardened, inputs, cfg),
            check_decoy_invariants(hardened, public, secrets, cfg),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::Fault;
    use crate::ir::parse_module;

    const LEAKY: &str = "global @t : [4096 x i8]
func @main() -> i64 {
e:
  %s0 = secret i64 0
  %s = and i64 %s0, 4095
  %c = icmp lt %s, 64
  condbr %c, a, x
a:
  %p = gep [4096 x i8] @t, 0, %s
  %v = load i8, %p
  br x
x:
  ret 0
}";

    fn secrets(v: &[u64]) -> Vec<Vec<u64>> {
        v.iter().map(|&s| vec![s]).collect()
    }

    #[test]
    fn branch_on_secret_fails_pc_security_at_the_branch() {
        let m = parse_module(LEAKY).unwrap();
        let v = check_pc_security(&m, &[], &secrets(&[1, 100]), &InterpConfig::default());
        assert_eq!(v.status, Status::Fail);
        let w = v.witness.unwrap();
        let br = m.functions[0].blocks[0].term.id;
        assert_eq!(w.inst, Some(br));
    }

    #[test]
    fn different_lines_fail_obliviousness() {
        let m = parse_module(LEAKY).unwrap();
        let v = check_obliviousness(&m, &[], &secrets(&[0, 63]), &InterpConfig::with_lambda(64));
        assert_eq!(v.status, Status::Pass);
        let v = check_obliviousness(&m, &[], &secrets(&[0, 32]), &InterpConfig::with_lambda(4));
        assert_eq!(v.status, Status::Fail);
        assert_eq!(v.witness.unwrap().index, Some(0));
    }

    #[test]
    fn secret_free_program_passes_trivially() {
        let m = parse_module("func @main() -> i64 {\ne:\n  %s = secret i64 0\n  ret 1\n}").unwrap();
        let s = secrets(&[0, 1, 2]);
        assert!(check_pc_security(&m, &[], &s, &InterpConfig::default()).passed());
        assert!(check_obliviousness(&m, &[], &s, &InterpConfig::default()).passed());
        assert!(check_decoy_invariants(&m, &[], &s, &InterpConfig::default()).passed());
    }

    #[test]
    fn equivalence_is_reflexive_and_catches_differences() {
        let m = parse_module(LEAKY).unwrap();
        let ins = random_inputs(&m, 20, 32768, 1);
        assert!(check_equivalence(&m, &m, &ins, &InterpConfig::default()).passed());
        let other = parse_module(&LEAKY.replace("ret 0", "ret 1")).unwrap();
        assert_eq!(check_equivalence(&m, &other, &ins, &InterpConfig::default()).status, Status::Fail);
    }

    #[test]
    fn skipped_write_back_breaks_equivalence() {
        let src = "global @t : [4 x i64]
func @main() -> i64 {
e:
  %s = secret i64 0
  %i = and i64 %s, 3
  %p = gep [4 x i64] @t, 0, %i
  call @ct.store.i64(%p, 5, 0)
  %q = gep [4 x i64] @t, 0, 0
  %v = load i64, %q
  ret %v
}
dfl 0 = lambda 64 [global @t 0 32 8 simple]";
        let m = parse_module(src).unwrap();
        let ins = random_inputs(&m, 8, 4, 2);
        let broken = InterpConfig { fault: Some(Fault::SkipWriteBack), ..Default::default() };
        let plain = parse_module(&src.replace("call @ct.store.i64(%p, 5, 0)", "store i64 5, %p")).unwrap();
        assert!(check_equivalence(&plain, &m, &ins, &InterpConfig::default()).passed());
        assert_eq!(check_equivalence(&plain, &m, &ins, &broken).status, Status::Fail);
    }

    #[test]
    fn secret_plan_enumerates_small_spaces() {
        let m = parse_module("func @main() -> i64 {\ne:\n  %s = secret i64 0\n  ret 1\n}").unwrap();
        let v = secret_vectors(&m, &SecretPlan::default());
        assert_eq!(v.len(), 200 + 256);
        assert!(v[200..].iter().enumerate().all(|(i, s)| s == &vec![i as u64]));
    }
}
