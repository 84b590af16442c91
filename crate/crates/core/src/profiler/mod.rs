//! Dynamic taint profiling over an input suite, loop-bound profiling, and
//! closure of the sensitive set over regions and calls.

pub mod closure;
pub mod suite;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

pub use closure::{close_sensitivity, SensitiveSet};
pub use suite::{default_suite, format_suite, input_shape, parse_suite, SuiteError, SuiteSpec};

use crate::interp::{ExecInput, InterpConfig, Program, Trace};
use crate::ir::{InstId, Module};
use crate::normalize::{RegionKind, Regions};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TaintReport {
    /// Tainted conditional branches that are not loop latches.
    pub branches: BTreeSet<InstId>,
    /// Loops (by latch id) whose exit decision is tainted.
    pub loops: BTreeSet<InstId>,
    pub reads: BTreeSet<InstId>,
    pub writes: BTreeSet<InstId>,
    pub divrem: BTreeSet<InstId>,
    /// Largest trip count observed per loop entry, at least 1, for every loop.
    pub bounds: BTreeMap<InstId, u64>,
    /// Functions in which some sink fired.
    pub functions: BTreeSet<String>,
    /// Runs that aborted, with their suite index.
    #[serde(skip)]
    pub aborted: Vec<usize>,
}

impl TaintReport {
    pub fn is_empty(&self) -> bool {
        self.branches.is_empty() && self.loops.is_empty() && self.reads.is_empty() && self.writes.is_empty() && self.divrem.is_empty()
    }

    pub fn merge(&mut self, other: &TaintReport) {
        self.branches.extend(other.branches.iter().copied());
        self.loops.extend(other.loops.iter().copied());
        self.reads.extend(other.reads.iter().copied());
        self.writes.extend(other.writes.iter().copied());
        self.divrem.extend(other.divrem.iter().copied());
        self.functions.extend(other.functions.iter().cloned());
        for (k, v) in &other.bounds {
            let e = self.bounds.entry(*k).or_insert(1);
            *e = (*e).max(*v);
        }
    }

    /// Deterministic key-sorted text.
    pub fn to_text(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Per loop: (function index, preheader block, latch block, latch id).
fn loop_blocks(m: &Module, trees: &Regions) -> Vec<(usize, usize, usize, InstId)> {
    let mut out = Vec::new();
    for (fi, f) in m.functions.iter().enumerate() {
        let Some(t) = trees.get(&f.name) else { continue };
        for r in &t.regions {
            if r.kind != RegionKind::Loop {
                continue;
            }
            let (Some(p), Some(l), Some(id)) = (r.preheader.as_ref(), r.latch.as_ref(), r.id) else { continue };
            if let (Some(pi), Some(li)) = (f.block_index(p), f.block_index(l)) {
                out.push((fi, pi, li, id));
            }
        }
    }
    out
}

/// Largest number of latch executions per loop entry in one trace.
pub fn loop_trips(m: &Module, trees: &Regions, t: &Trace) -> BTreeMap<InstId, u64> {
    let loops = loop_blocks(m, trees);
    let mut by_pre: HashMap<(u32, u32), Vec<InstId>> = HashMap::new();
    let mut by_latch: HashMap<(u32, u32), Vec<InstId>> = HashMap::new();
    for &(fi, pi, li, id) in &loops {
        by_pre.entry((fi as u32, pi as u32)).or_default().push(id);
        by_latch.entry((fi as u32, li as u32)).or_default().push(id);
    }
    let mut best: BTreeMap<InstId, u64> = BTreeMap::new();
    let mut cur: HashMap<(u32, InstId), u64> = HashMap::new();
    for v in &t.blocks {
        if let Some(ids) = by_pre.get(&(v.func, v.block)) {
            for &id in ids {
                if let Some(c) = cur.insert((v.frame, id), 0) {
                    let e = best.entry(id).or_insert(0);
                    *e = (*e).max(c);
                }
            }
        }
        if let Some(ids) = by_latch.get(&(v.func, v.block)) {
            for &id in ids {
                *cur.entry((v.frame, id)).or_insert(0) += 1;
            }
        }
    }
    for ((_, id), c) in cur {
        let e = best.entry(id).or_insert(0);
        *e = (*e).max(c);
    }
    best
}

/// Runs every suite input with taint tracking and merges the sinks hit.
pub fn taint_profile(m: &Module, trees: &Regions, suite: &[ExecInput], base: &InterpConfig) -> TaintReport {
    let mut report = TaintReport::default();
    let latches: BTreeSet<InstId> = loop_blocks(m, trees).iter().map(|l| l.3).collect();
    for &id in &latches {
        report.bounds.insert(id, 1);
    }
    let Ok(prog) = Program::new(m) else { return report };
    let cfg = InterpConfig { taint: true, record_blocks: true, ..base.clone() };
    for (k, input) in suite.iter().enumerate() {
        let t = prog.run(input, &cfg);
        if t.result().is_err() {
            report.aborted.push(k);
        }
        let obs = &t.taint;
        let mut one = TaintReport {
            branches: obs.branches.iter().filter(|b| !latches.contains(b)).copied().collect(),
            loops: obs.branches.iter().filter(|b| latches.contains(b)).copied().collect(),
            reads: obs.reads.clone(),
            writes: obs.writes.clone(),
            divrem: obs.divrem.clone(),
            functions: obs.functions.clone(),
            ..Default::default()
        };
        one.bounds = loop_trips(m, trees, &t).into_iter().map(|(id, c)| (id, c.max(1))).collect();
        report.merge(&one);
    }
    report
}
