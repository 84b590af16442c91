mod common;

use std::collections::{BTreeMap, BTreeSet};

use ctlin::cfl::SelectScheme;
use ctlin::corpus;
use ctlin::dfl::runtime::{stride, SiteLists, StrideOp};
use ctlin::dfl::{DflAccessMetadata, DflEntry, HandlerKind, SiteId};
use ctlin::interp::memory::{Memory, RegionKind as MemKind};
use ctlin::interp::{ExecInput, InterpConfig, Program, Trace};
use ctlin::ir::{parse_module, print_module, Cfg, Module, TermKind};
use ctlin::normalize::{normalize_module, normalize_regions, region_trees};
use ctlin::pipeline::{harden, PipelineConfig};
use ctlin::profiler::{default_suite, taint_profile, SuiteSpec};
use ctlin::pta::{andersen_solve, naive_solve, refine_field_sensitivity, TargetMap};
use ctlin::verifier::*;
use proptest::prelude::*;

fn inputs(n: u64) -> Vec<ExecInput> {
    (0..n).map(|i| ExecInput::new(vec![i * 7 % 300], vec![(i * 40_503) % 65_536])).collect()
}

fn same_outputs(a: &Module, b: &Module, ins: &[ExecInput]) -> Result<(), TestCaseError> {
    let (pa, pb) = (Program::new(a).unwrap(), Program::new(b).unwrap());
    for i in ins {
        let cfg = InterpConfig::default();
        let (ta, tb) = (pa.run(i, &cfg), pb.run(i, &cfg));
        prop_assert_eq!(ta.result(), tb.result(), "input {:?}", i);
        for g in &a.globals {
            prop_assert_eq!(ta.globals.get(&g.name), tb.globals.get(&g.name));
        }
    }
    Ok(())
}

#[test]
fn corpus_print_parse_is_a_fixpoint() {
    for (name, src) in corpus::ALL {
        let m = parse_module(src).unwrap();
        let text = print_module(&m);
        assert_eq!(parse_module(&text).unwrap(), m, "{name}");
        assert_eq!(print_module(&parse_module(&text).unwrap()), text, "{name}");
    }
}

#[test]
fn corpus_refinement_never_grows_byte_sets() {
    for (name, src) in corpus::ALL {
        let (m, _) = normalize_module(&parse_module(src).unwrap(), &TargetMap::new()).unwrap_or_else(|_| {
            let m = parse_module(src).unwrap();
            let t = ctlin::pta::resolve_indirect_targets(&m, &andersen_solve(&m));
            normalize_module(&m, &t).unwrap()
        });
        let coarse = andersen_solve(&m);
        let fine = refine_field_sensitivity(&coarse, &m);
        for id in coarse.accesses.keys() {
            let a: BTreeSet<_> = coarse.portions(*id).iter().flat_map(|p| p.bytes()).collect();
            let b: BTreeSet<_> = fine.portions(*id).iter().flat_map(|p| p.bytes()).collect();
            assert!(b.is_subset(&a), "{name} access {id}");
        }
    }
}

/// Brute force: `a` dominates `b` iff `b` is unreachable once `a` is removed.
fn brute_dominates(cfg: &Cfg, a: usize, b: usize) -> bool {
    if a == b {
        return true;
    }
    if a == 0 {
        return true;
    }
    let mut seen = vec![false; cfg.succs.len()];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(x) = stack.pop() {
        for &y in &cfg.succs[x] {
            if y != a && !seen[y] {
                seen[y] = true;
                stack.push(y);
            }
        }
    }
    !seen[b]
}

/// (condbr id, occurrence) → successor block, from the block visit log.
fn directions(m: &Module, t: &Trace) -> BTreeMap<(u32, u32, usize), u32> {
    let mut out = BTreeMap::new();
    let mut count: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    let mut last: BTreeMap<u32, (u32, u32)> = BTreeMap::new();
    for v in &t.blocks {
        if let Some(&(func, block)) = last.get(&v.frame) {
            let b = &m.functions[func as usize].blocks[block as usize];
            if matches!(b.term.kind, TermKind::CondBr { .. }) {
                let k = count.entry((func, b.term.id.0)).or_insert(0);
                out.insert((func, b.term.id.0, *k), v.block);
                *k += 1;
            }
        }
        last.insert(v.frame, (v.func, v.block));
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn print_parse_print_is_stable(body in common::stmts()) {
        let m = parse_module(&common::render(&body)).unwrap();
        let text = print_module(&m);
        let again = parse_module(&text).unwrap();
        prop_assert_eq!(&again, &m);
        prop_assert_eq!(print_module(&again), text);
    }

    #[test]
    fn dominators_match_brute_force(src in common::raw_cfg()) {
        let m = parse_module(&src).unwrap();
        let cfg = Cfg::build(&m.functions[0]);
        for a in 0..cfg.succs.len() {
            for b in 0..cfg.succs.len() {
                if cfg.reachable[a] && cfg.reachable[b] {
                    prop_assert_eq!(cfg.dominates(a, b), brute_dominates(&cfg, a, b), "{} dom {}", a, b);
                }
            }
        }
    }

    #[test]
    fn normalization_preserves_behavior_and_is_idempotent(body in common::stmts()) {
        let m = parse_module(&common::render(&body)).unwrap();
        let (n, _) = normalize_module(&m, &TargetMap::new()).unwrap();
        same_outputs(&m, &n, &inputs(40))?;
        let mut ids = ctlin::ir::IdGen::for_module(&n);
        for f in &n.functions {
            let (g, _) = normalize_regions(&n, f, &mut ids).unwrap();
            prop_assert_eq!(print_module(&Module { functions: vec![g], ..n.clone() }), print_module(&Module { functions: vec![f.clone()], ..n.clone() }));
        }
        // Every condbr's arms rejoin at the region exit.
        let trees = region_trees(&n).unwrap();
        for f in &n.functions {
            let cfg = Cfg::build(f);
            for r in &trees[&f.name].regions {
                let Some(id) = r.id else { continue };
                let Some((_, bi, _)) = n.locate(id) else { continue };
                let b = &f.blocks[bi];
                if let TermKind::CondBr { then_label, else_label, .. } = &b.term.kind {
                    if r.kind == ctlin::normalize::RegionKind::Branch {
                        let j = cfg.common_postdominator(cfg.index(then_label).unwrap(), cfg.index(else_label).unwrap());
                        prop_assert_eq!(j.map(|j| cfg.labels[j].clone()), r.exit.clone());
                    }
                }
            }
        }
    }

    #[test]
    fn andersen_matches_the_naive_iteration(body in common::stmts()) {
        let m = parse_module(&common::render(&body)).unwrap();
        prop_assert_eq!(andersen_solve(&m), naive_solve(&m));
    }

    #[test]
    fn coarse_trace_is_a_function_of_the_fine_one(body in common::stmts(), s in 0u64..65536) {
        let m = parse_module(&common::render(&body)).unwrap();
        let t = Program::new(&m).unwrap().run(&ExecInput::new(vec![3], vec![s]), &InterpConfig::default());
        for (fine, coarse) in [(1u64, 4u64), (4, 64), (1, 64)] {
            let lifted: Vec<_> = t.quantized(fine).into_iter().map(|(k, b)| (k, b / (coarse / fine))).collect();
            prop_assert_eq!(lifted, t.quantized(coarse));
        }
    }

    #[test]
    fn profiler_marks_every_branch_that_secrets_steer(body in common::stmts(), s1 in 0u64..65536, s2 in 0u64..65536) {
        let (m, trees) = normalize_module(&parse_module(&common::render(&body)).unwrap(), &TargetMap::new()).unwrap();
        let suite = vec![ExecInput::new(vec![3], vec![s1]), ExecInput::new(vec![3], vec![s2])];
        let r = taint_profile(&m, &trees, &suite, &InterpConfig::default());
        let cfg = InterpConfig { record_blocks: true, ..InterpConfig::default() };
        let p = Program::new(&m).unwrap();
        let (a, b) = (directions(&m, &p.run(&suite[0], &cfg)), directions(&m, &p.run(&suite[1], &cfg)));
        for (key, da) in &a {
            if let Some(db) = b.get(key) {
                if da != db {
                    let id = ctlin::ir::InstId(key.1);
                    prop_assert!(r.branches.contains(&id) || r.loops.contains(&id), "branch {} flips but is unmarked", id);
                }
            }
        }
    }

    #[test]
    fn hardened_random_programs_pass_every_check(body in common::stmts()) {
        let m = parse_module(&common::render(&body)).unwrap();
        let h = harden(&m, &PipelineConfig::default()).unwrap();
        let secrets = secret_vectors(&m, &SecretPlan { pairs: 16, exhaustive_bits: 0, ..SecretPlan::default() });
        let ins = random_inputs(&m, 64, 65536, 4);
        let r = verify_all(&m, &h.hardened, &[3], &secrets, &ins, &InterpConfig::with_lambda(64));
        for v in &r.verdicts {
            // Loops are profiled on the default suite, which covers every trip count here.
            prop_assert_eq!(v.status, Status::Pass, "{:?}: {:?}\n{}", v.check, v.witness, print_module(&h.hardened));
        }
    }

    #[test]
    fn hardening_is_deterministic(body in common::stmts()) {
        let m = parse_module(&common::render(&body)).unwrap();
        let a = harden(&m, &PipelineConfig::default()).unwrap();
        let b = harden(&m, &PipelineConfig::default()).unwrap();
        prop_assert_eq!(print_module(&a.hardened), print_module(&b.hardened));
        prop_assert_eq!(a.report.to_text(), b.report.to_text());
    }

    #[test]
    fn select_scheme_leaves_traces_unchanged(body in common::stmts(), s in 0u64..65536) {
        let m = parse_module(&common::render(&body)).unwrap();
        let input = ExecInput::new(vec![3], vec![s]);
        let mut seen = Vec::new();
        for scheme in SelectScheme::ALL {
            let h = harden(&m, &PipelineConfig { scheme, ..Default::default() }).unwrap();
            let t = Program::new(&h.hardened).unwrap().run(&input, &InterpConfig::with_lambda(1));
            seen.push((t.insts.len(), t.quantized(1), t.result()));
        }
        prop_assert!(seen.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn witness_index_is_the_first_difference(body in common::stmts()) {
        let m = parse_module(&common::render(&body)).unwrap();
        let secrets: Vec<Vec<u64>> = (0..8u64).map(|k| vec![k * 8191 % 65536]).collect();
        let cfg = InterpConfig::default();
        let v = check_pc_security(&m, &[3], &secrets, &cfg);
        if let (Status::Fail, Some(w)) = (v.status, &v.witness) {
            if let (Some(i), Some(second)) = (w.index, &w.second) {
                let p = Program::new(&m).unwrap();
                let a = p.run(&ExecInput::new(w.first.0.clone(), w.first.1.clone()), &cfg).insts;
                let b = p.run(&ExecInput::new(second.0.clone(), second.1.clone()), &cfg).insts;
                prop_assert_eq!(&a[..i], &b[..i]);
                prop_assert!(a.get(i) != b.get(i));
            }
        }
    }

    #[test]
    fn handlers_agree_and_touches_are_accounted(sizes in prop::collection::vec(1u64..40, 1..4), pick in any::<prop::sample::Index>(), v in any::<u64>()) {
        let lambda = 64;
        let mut base = Memory::new(false);
        let mut spots = Vec::new();
        for (g, s) in sizes.iter().enumerate() {
            let ri = base.alloc(MemKind::Global, SiteId::Global(format!("g{g}")), s * 8, 0, false);
            for w in 0..*s {
                spots.push(base.regions[ri].data + w * 8);
            }
        }
        let p = *pick.get(&spots);
        let mut outcomes = Vec::new();
        for handler in [HandlerKind::Simple, HandlerKind::Gather, HandlerKind::Bulk] {
            let entries = sizes.iter().enumerate().map(|(g, s)| DflEntry { site: SiteId::Global(format!("g{g}")), offset: 0, len: s * 8, stride: 8, handler }).collect();
            let meta = DflAccessMetadata { lambda, natural: false, entries };
            let mut mem = base.clone();
            let mut ev = Vec::new();
            let st = stride(&mut mem, &SiteLists::default(), &mut ev, ctlin::ir::InstId(0), &meta, 8, p, p, StrideOp::Store { value: v, drop_value: false }).unwrap();
            let mut ev2 = Vec::new();
            let ld = stride(&mut mem, &SiteLists::default(), &mut ev2, ctlin::ir::InstId(0), &meta, 8, p, p, StrideOp::Load).unwrap();
            prop_assert_eq!(ld.value, v);
            prop_assert_eq!(st.touches, meta.touches_per_instance());
            prop_assert_eq!(ld.touches, meta.touches_per_instance());
            let q: Vec<_> = ev.iter().chain(&ev2).map(|e| (e.kind, e.addr / lambda)).collect();
            outcomes.push((ld.value, q, mem.regions.iter().map(|r| r.bytes.clone()).collect::<Vec<_>>()));
        }
        prop_assert!(outcomes.windows(2).all(|w| w[0] == w[1]));
    }
}

#[test]
fn suite_profile_is_monotone_on_the_corpus() {
    for (name, src) in corpus::ALL {
        let m = parse_module(src).unwrap();
        let t = ctlin::pta::resolve_indirect_targets(&m, &andersen_solve(&m));
        let (n, trees) = normalize_module(&m, &t).unwrap();
        let suite = default_suite(&n, &SuiteSpec::default());
        let small = taint_profile(&n, &trees, &suite[..16], &InterpConfig::default());
        let big = taint_profile(&n, &trees, &suite, &InterpConfig::default());
        assert!(small.branches.is_subset(&big.branches), "{name}");
        assert!(small.reads.is_subset(&big.reads) && small.writes.is_subset(&big.writes), "{name}");
    }
}

#[test]
fn cloning_keeps_corpus_behavior() {
    for name in ["two_context", "icall_table"] {
        let m = corpus::module(name).unwrap();
        let h = harden(&m, &PipelineConfig::default()).unwrap();
        let ins = random_inputs(&m, 1000, 32768, 5);
        assert!(check_equivalence(&m, &h.normalized, &ins, &InterpConfig::default()).passed(), "{name}");
    }
}
