//! The hardening driver: profile, analyze, transform, report.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::cfl::{linearize, LinearizeInput, LinearizeStats, SelectScheme};
use crate::dfl::{
    build_metadata, interpose_allocations, optimize_natural_striding, promote_stack_objects, DflAccessMetadata, SiteId, StorageClass,
};
use crate::interp::{ExecInput, InterpConfig, Program};
use crate::ir::{validate, InstId, InstKind, Module};
use crate::normalize::{normalize_module, region_trees, Regions};
use crate::profiler::{close_sensitivity, default_suite, taint_profile, SensitiveSet, SuiteSpec, TaintReport};
use crate::pta::{aggressive_clone, andersen_solve, refine_field_sensitivity, resolve_indirect_targets, CallGraph, PointsToSolution};

pub const LAMBDAS: [u64; 3] = [1, 4, 64];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PipelineConfig {
    pub lambda: u64,
    pub scheme: SelectScheme,
    /// Profiling inputs; `None` draws the default partitioned suite.
    pub suite: Option<Vec<ExecInput>>,
    pub seed: u64,
    pub budget: u64,
    pub skip_cloning: bool,
    pub skip_natural: bool,
    pub skip_promotion: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            lambda: 64,
            scheme: SelectScheme::default(),
            suite: None,
            seed: 0,
            budget: InterpConfig::default().budget,
            skip_cloning: false,
            skip_natural: false,
            skip_promotion: false,
        }
    }
}

impl PipelineConfig {
    pub fn interp(&self) -> InterpConfig {
        InterpConfig { lambda: self.lambda, budget: self.budget, ..InterpConfig::default() }
    }

    pub fn check(&self) -> Result<(), PipelineError> {
        if !LAMBDAS.contains(&self.lambda) {
            return Err(PipelineError::new("config", format!("lambda must be one of 1, 4, 64, got {}", self.lambda)));
        }
        Ok(())
    }

    fn suite_for(&self, m: &Module) -> Vec<ExecInput> {
        match &self.suite {
            Some(s) => s.clone(),
            None => default_suite(m, &SuiteSpec { seed: self.seed, ..SuiteSpec::default() }),
        }
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
#[error("{stage}: {message}")]
pub struct PipelineError {
    pub stage: &'static str,
    pub message: String,
}

impl PipelineError {
    fn new(stage: &'static str, message: impl Into<String>) -> Self {
        PipelineError { stage, message: message.into() }
    }
}

fn revalidate(stage: &'static str, m: &Module) -> Result<(), PipelineError> {
    match validate(m).first() {
        Some(d) => Err(PipelineError::new(stage, format!("produced invalid IR: {d}"))),
        None => Ok(()),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct HardenReport {
    pub branches: usize,
    pub loops: usize,
    pub reads: usize,
    pub writes: usize,
    pub divisions: usize,
    pub functions: Vec<String>,
    pub whole: Vec<String>,
    pub clones: usize,
    pub promoted: Vec<String>,
    pub natural: usize,
    /// Mean DFL portions per sensitive access.
    pub mean_portions: f64,
    pub mean_objects: f64,
    /// Profiled trip bound per linearized loop, by latch id.
    pub bounds: BTreeMap<InstId, u64>,
    pub size_original: usize,
    pub size_hardened: usize,
    pub stats: LinearizeStats,
}

impl HardenReport {
    /// Key-sorted JSON.
    pub fn to_text(&self) -> String {
        let v = serde_json::to_value(self).expect("report serializes");
        serde_json::to_string_pretty(&v).expect("report serializes") + "\n"
    }
}

/// Everything a harden run produced, for callers that inspect stages.
#[derive(Clone, Debug)]
pub struct Hardened {
    /// Normalized (and cloned) module the transformation started from.
    pub normalized: Module,
    pub hardened: Module,
    pub trees: Regions,
    pub taint: TaintReport,
    pub sensitive: SensitiveSet,
    pub points_to: PointsToSolution,
    pub metadata: BTreeMap<InstId, DflAccessMetadata>,
    pub report: HardenReport,
}

fn profile(m: &Module, trees: &Regions, suite: &[ExecInput], cfg: &PipelineConfig) -> (TaintReport, SensitiveSet) {
    let r = taint_profile(m, trees, suite, &cfg.interp());
    let ss = close_sensitivity(m, &r, trees);
    (r, ss)
}

fn solve(m: &Module) -> PointsToSolution {
    refine_field_sensitivity(&andersen_solve(m), m)
}

pub fn harden(m: &Module, cfg: &PipelineConfig) -> Result<Hardened, PipelineError> {
    cfg.check()?;
    revalidate("parse", m)?;
    let boot = andersen_solve(m);
    let targets = resolve_indirect_targets(m, &boot);
    let (mut n, mut trees) = normalize_module(m, &targets).map_err(|e| PipelineError::new("normalize", e.to_string()))?;
    revalidate("normalize", &n)?;
    let suite = cfg.suite_for(&n);
    let (mut taint, mut ss) = profile(&n, &trees, &suite, cfg);
    let mut report = HardenReport { size_original: m.size(), ..HardenReport::default() };

    if !cfg.skip_cloning && !ss.is_empty() {
        let cg = CallGraph::build(&n);
        let (c, map) = aggressive_clone(&n, &ss.functions, &cg).map_err(|e| PipelineError::new("clone", e.to_string()))?;
        revalidate("clone", &c)?;
        if !map.is_empty() {
            report.clones = map.clones.values().map(Vec::len).sum();
            trees = region_trees(&c).map_err(|e| PipelineError::new("clone", e.to_string()))?;
            n = c;
            (taint, ss) = profile(&n, &trees, &suite, cfg);
        }
    }

    if ss.is_empty() {
        report.size_hardened = n.size();
        let mut h = n.clone();
        h.renumber();
        return Ok(Hardened {
            hardened: h,
            points_to: solve(&n),
            normalized: n,
            trees,
            taint,
            sensitive: ss,
            metadata: BTreeMap::new(),
            report,
        });
    }

    let mut pts = solve(&n);
    if !cfg.skip_promotion {
        let stack: BTreeSet<SiteId> = sites_of(&pts, &ss.accesses).into_iter().filter(|s| s.class() == StorageClass::Stack).collect();
        if !stack.is_empty() {
            let (p, moved) = promote_stack_objects(&n, &CallGraph::build(&n), &stack);
            revalidate("promote", &p)?;
            report.promoted = moved.keys().map(|s| s.to_string()).collect();
            if !moved.is_empty() {
                n = p;
                pts = solve(&n);
            }
        }
    }

    let mut meta = build_metadata(&n, &pts, &ss.accesses, cfg.lambda).map_err(|e| PipelineError::new("metadata", e.to_string()))?;
    let sites: BTreeSet<SiteId> = meta.values().flat_map(|md| md.entries.iter().map(|e| e.site.clone())).collect();
    let n = interpose_allocations(&n, &sites);
    revalidate("interpose", &n)?;
    if !cfg.skip_natural {
        meta = optimize_natural_striding(&n, &trees, &ss.loops, &meta);
    }
    let input = LinearizeInput { ss: &ss, meta: &meta, bounds: &taint.bounds, scheme: cfg.scheme };
    let (mut h, stats) = linearize(&n, &input).map_err(|e| PipelineError::new("linearize", e.to_string()))?;
    revalidate("linearize", &h)?;
    // Emitted text reparses to sequential ids.
    h.renumber();

    let loads = |want_load: bool| {
        ss.accesses
            .iter()
            .filter(|id| matches!((n.inst(**id).map(|i| &i.kind), want_load), (Some(InstKind::Load { .. }), true) | (Some(InstKind::Store { .. }), false)))
            .count()
    };
    report.branches = ss.branches.len();
    report.loops = ss.loops.len();
    report.reads = loads(true);
    report.writes = loads(false);
    report.divisions = ss.divrem.len();
    report.functions = ss.functions.iter().cloned().collect();
    report.whole = ss.whole.iter().cloned().collect();
    report.natural = meta.values().filter(|m| m.natural).count();
    report.mean_portions = pts.mean_portions(&ss.accesses);
    report.mean_objects = pts.mean_objects(&ss.accesses);
    report.bounds = taint.bounds.iter().filter(|(l, _)| ss.loops.contains(l)).map(|(l, k)| (*l, *k)).collect();
    report.size_hardened = h.size();
    report.stats = stats;
    Ok(Hardened { normalized: n, hardened: h, trees, taint, sensitive: ss, points_to: pts, metadata: meta, report })
}

fn sites_of(pts: &PointsToSolution, accesses: &BTreeSet<InstId>) -> BTreeSet<SiteId> {
    accesses.iter().flat_map(|a| pts.portions(*a).iter().map(|p| p.site.clone())).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AccessStats {
    pub portions: usize,
    pub touches_per_instance: u64,
    pub natural: bool,
    /// Block touches observed over the suite.
    pub touches: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CostReport {
    /// Keyed by metadata id.
    pub accesses: BTreeMap<u32, AccessStats>,
    pub mean_portions: f64,
    pub touches: u64,
    pub cost: f64,
    pub instructions: u64,
    pub runs: usize,
    pub size: usize,
    pub size_ratio: Option<f64>,
}

impl CostReport {
    pub fn to_text(&self) -> String {
        let v = serde_json::to_value(self).expect("report serializes");
        serde_json::to_string_pretty(&v).expect("report serializes") + "\n"
    }
}

/// Striding cost of a hardened module over `inputs`.
pub fn cost_report(h: &Module, original: Option<&Module>, inputs: &[ExecInput], cfg: &InterpConfig) -> Result<CostReport, PipelineError> {
    let prog = Program::new(h).map_err(|e| PipelineError::new("stats", format!("{e:?}")))?;
    let mut r = CostReport { size: h.size(), runs: inputs.len(), ..CostReport::default() };
    r.size_ratio = original.map(|o| h.size() as f64 / o.size().max(1) as f64);
    let mut meta_of: BTreeMap<InstId, u32> = BTreeMap::new();
    for f in &h.functions {
        for i in f.insts() {
            if let InstKind::Call { callee, args } = &i.kind {
                if callee.starts_with("ct.load.") || callee.starts_with("ct.store.") {
                    if let Some(crate::ir::Operand::Const(k)) = args.get(if callee.starts_with("ct.load.") { 1 } else { 2 }) {
                        meta_of.insert(i.id, *k as u32);
                    }
                }
            }
        }
    }
    for (k, md) in &h.dfl {
        r.accesses.insert(
            *k,
            AccessStats { portions: md.entries.len(), touches_per_instance: md.touches_per_instance(), natural: md.natural, touches: 0 },
        );
    }
    if !h.dfl.is_empty() {
        r.mean_portions = h.dfl.values().map(|m| m.entries.len()).sum::<usize>() as f64 / h.dfl.len() as f64;
    }
    for inp in inputs {
        let t = prog.run(inp, cfg);
        r.touches += t.touches;
        r.cost += t.cost;
        r.instructions += t.insts.len() as u64;
        for (inst, n) in &t.touches_by_inst {
            if let Some(a) = meta_of.get(inst).and_then(|k| r.accesses.get_mut(k)) {
                a.touches += n;
            }
        }
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{parse_module, print_module};

    const TABLE: &str = "global @t : [32 x i64]
func @main() -> i64 {
e:
  %s0 = secret i64 0
  %s = and i64 %s0, 31
  %c = icmp lt %s, 16
  condbr %c, a, x
a:
  %p = gep [32 x i64] @t, 0, %s
  store i64 1, %p
  br x
x:
  %q = gep [32 x i64] @t, 0, 3
  %v = load i64, %q
  ret %v
}";

    #[test]
    fn secret_free_program_is_returned_normalized() {
        let m = parse_module("func @main(%a: i64) -> i64 {\ne:\n  %r = add i64 %a, 1\n  ret %r\n}").unwrap();
        let h = harden(&m, &PipelineConfig::default()).unwrap();
        assert_eq!(print_module(&h.hardened), print_module(&h.normalized));
        assert_eq!((h.report.branches, h.report.reads, h.report.writes), (0, 0, 0));
    }

    #[test]
    fn report_counts_and_round_trip() {
        let m = parse_module(TABLE).unwrap();
        let h = harden(&m, &PipelineConfig::default()).unwrap();
        assert_eq!((h.report.branches, h.report.writes), (1, 1));
        let text = print_module(&h.hardened);
        assert_eq!(parse_module(&text).unwrap(), h.hardened);
        let again = harden(&m, &PipelineConfig::default()).unwrap();
        assert_eq!(again.report.to_text(), h.report.to_text());
        assert_eq!(print_module(&again.hardened), text);
    }

    #[test]
    fn bad_lambda_is_a_config_error() {
        let m = parse_module(TABLE).unwrap();
        let e = harden(&m, &PipelineConfig { lambda: 8, ..Default::default() }).unwrap_err();
        assert_eq!(e.stage, "config");
    }

    #[test]
    fn single_global_touches_four_lines() {
        let m = parse_module(TABLE).unwrap();
        let h = harden(&m, &PipelineConfig::default()).unwrap();
        let ins: Vec<ExecInput> = (0..4).map(|s| ExecInput::new(vec![], vec![s * 9])).collect();
        let r = cost_report(&h.hardened, Some(&m), &ins, &InterpConfig::with_lambda(64)).unwrap();
        assert!(r.accesses.values().all(|a| a.touches_per_instance == 4));
        assert!(r.size_ratio.unwrap() >= 1.0);
    }
}
