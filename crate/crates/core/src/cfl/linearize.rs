//! Branch and loop linearization with taken predicates.
//!
//! Every block of a linearized function runs under a predicate register,
//! the conjunction of the outcomes of the sensitive branches and loops
//! enclosing it. Sensitive branches execute both arms in sequence and merge
//! exit values with `ct.sel`; sensitive loops run for `max(k, real trips)`
//! iterations, where `k` lives in a per-loop global that grows whenever a
//! real execution needs more. Memory accesses under a predicate go through
//! `ct.load`/`ct.store` with a selected pointer, so decoy paths only touch
//! memory obliviously.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use thiserror::Error;

use super::sanitize::{ensure_division_routines, UDIV, UREM};
use super::SelectScheme;
use crate::dfl::DflAccessMetadata;
use crate::intrinsics::{Intrinsic, BOUND_CELL_PREFIX, TAKEN_CELL};
use crate::ir::{BinOp, Block, Function, GlobalDef, IdGen, Inst, InstId, InstKind, Module, Operand, Pred, TermKind, Terminator, Type};
use crate::normalize::{NormalizeError, RegionKind, RegionTree};
use crate::profiler::SensitiveSet;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LinearizeError {
    #[error(transparent)]
    Regions(#[from] NormalizeError),
    #[error("@{function}: access {inst} runs under a predicate but has no dfl record")]
    MissingMetadata { function: String, inst: InstId },
    #[error("@{function}, block {block}: {why}")]
    Shape { function: String, block: String, why: String },
}

pub struct LinearizeInput<'a> {
    pub ss: &'a SensitiveSet,
    /// DFL records of the sensitive accesses, by access id.
    pub meta: &'a BTreeMap<InstId, DflAccessMetadata>,
    /// Profiled trip bound per loop latch.
    pub bounds: &'a BTreeMap<InstId, u64>,
    pub scheme: SelectScheme,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, serde::Serialize)]
pub struct LinearizeStats {
    pub branches: usize,
    pub loops: usize,
    pub dfl_accesses: usize,
    pub divisions: usize,
    pub predicated_calls: usize,
    pub hooks: usize,
}

/// Taken predicate of a block: a register, or always true.
type Ctx = Option<String>;

fn ctx_op(c: &Ctx) -> Operand {
    c.as_ref().map_or(Operand::Const(1), |r| Operand::reg(r.clone()))
}

struct BranchPlan {
    entry: String,
    cond: Operand,
    first_then: String,
    first_else: String,
    exit: String,
    then_arm: BTreeSet<String>,
    then_last: Option<String>,
    tp: Ctx,
    cb: String,
    ncb: String,
    t_then: String,
    t_else: String,
}

struct LoopPlan {
    id: InstId,
    pre: String,
    header: String,
    latch: String,
    exit: String,
    body: BTreeSet<String>,
    tp: Ctx,
    t_it: String,
}

enum Plan {
    Branch(BranchPlan),
    Loop(LoopPlan),
}

struct Names<'f> {
    f: &'f Function,
    taken: HashSet<String>,
}

impl Names<'_> {
    fn fresh(&mut self, hint: &str) -> String {
        self.f.fresh_reg(hint, &mut self.taken)
    }
}

fn assign(ids: &mut IdGen, result: Option<String>, kind: InstKind) -> Inst {
    Inst { id: ids.next(), result, kind }
}

fn preds(f: &Function) -> HashMap<String, Vec<String>> {
    let mut p: HashMap<String, Vec<String>> = HashMap::new();
    for b in &f.blocks {
        for s in b.term.successors() {
            p.entry(s.to_string()).or_default().push(b.label.clone());
        }
    }
    p
}

/// Blocks reachable from `start` without entering `stop`.
fn reach(f: &Function, start: &str, stop: &str) -> BTreeSet<String> {
    let mut seen = BTreeSet::new();
    if start == stop {
        return seen;
    }
    let mut st = vec![start.to_string()];
    while let Some(b) = st.pop() {
        if b == stop || !seen.insert(b.clone()) {
            continue;
        }
        if let Some(blk) = f.block(&b) {
            st.extend(blk.term.successors().iter().map(|s| s.to_string()));
        }
    }
    seen
}

pub fn linearize(m: &Module, input: &LinearizeInput<'_>) -> Result<(Module, LinearizeStats), LinearizeError> {
    let mut out = m.clone();
    let mut ids = IdGen::for_module(m);
    let max_orig = m.max_id();
    let mut stats = LinearizeStats::default();
    let mut meta_ids: BTreeMap<InstId, u32> = BTreeMap::new();
    let mut next_meta = m.dfl.keys().next_back().map_or(0, |k| k + 1);
    for (id, md) in input.meta {
        meta_ids.insert(*id, next_meta);
        out.dfl.insert(next_meta, md.clone());
        next_meta += 1;
    }
    let mut cells: Vec<GlobalDef> = Vec::new();
    let mut need_div = false;
    let mut need_taken = false;
    for fi in 0..out.functions.len() {
        let f = out.functions[fi].clone();
        if f.blocks.is_empty() || f.name.starts_with(crate::intrinsics::PREFIX) {
            continue;
        }
        let r = linearize_function(&f, m, input, &mut ids, max_orig, &meta_ids, &mut stats, &mut cells)?;
        need_div |= r.1;
        need_taken |= r.2;
        out.functions[fi] = r.0;
    }
    if need_taken && out.global(TAKEN_CELL).is_none() {
        out.globals.push(GlobalDef { name: TAKEN_CELL.into(), ty: Type::I1, init: Some(vec![1]) });
    }
    out.globals.extend(cells);
    if need_div {
        ensure_division_routines(&mut out);
    }
    Ok((out, stats))
}

#[allow(clippy::too_many_arguments)]
fn linearize_function(
    f: &Function,
    m: &Module,
    input: &LinearizeInput<'_>,
    ids: &mut IdGen,
    max_orig: u32,
    meta_ids: &BTreeMap<InstId, u32>,
    stats: &mut LinearizeStats,
    cells: &mut Vec<GlobalDef>,
) -> Result<(Function, bool, bool), LinearizeError> {
    let ss = input.ss;
    let sel = Intrinsic::Select(input.scheme).name();
    let shape = |block: &str, why: &str| LinearizeError::Shape { function: f.name.clone(), block: block.into(), why: why.into() };
    let tree = RegionTree::build(f)?;
    let whole = ss.whole.contains(&f.name);
    let lin: BTreeSet<usize> = (1..tree.regions.len()).filter(|&i| whole || ss.region(&tree, i)).collect();
    let linearized = whole || !lin.is_empty();
    let mut names = Names { f, taken: HashSet::new() };
    let t0 = whole.then(|| names.fresh("t0"));
    let pr = preds(f);

    // Taken registers of each linearized region.
    let mut arm_names: HashMap<usize, (String, String)> = HashMap::new();
    let mut arms: HashMap<usize, (BTreeSet<String>, BTreeSet<String>)> = HashMap::new();
    for &i in &lin {
        let r = &tree.regions[i];
        match r.kind {
            RegionKind::Branch => {
                let b = f.block(&r.entry).unwrap();
                let TermKind::CondBr { then_label, else_label, .. } = &b.term.kind else {
                    return Err(shape(&r.entry, "branch region without a conditional branch"));
                };
                let x = r.exit.clone().unwrap();
                arms.insert(i, (reach(f, then_label, &x), reach(f, else_label, &x)));
                let base = format!("t{}", r.id.unwrap().0);
                arm_names.insert(i, (names.fresh(&format!("{base}.T")), names.fresh(&format!("{base}.F"))));
            }
            RegionKind::Loop => {
                let base = format!("t{}", r.id.unwrap().0);
                let it = names.fresh(&format!("{base}.it"));
                arm_names.insert(i, (it.clone(), it));
            }
            RegionKind::Linear => {}
        }
    }
    let ctx_of = |label: &str| -> Ctx {
        let mut r = tree.innermost(label);
        loop {
            if lin.contains(&r) {
                let reg = &tree.regions[r];
                match reg.kind {
                    RegionKind::Branch => {
                        let (ta, ea) = &arms[&r];
                        if ta.contains(label) {
                            return Some(arm_names[&r].0.clone());
                        }
                        if ea.contains(label) {
                            return Some(arm_names[&r].1.clone());
                        }
                    }
                    RegionKind::Loop => return Some(arm_names[&r].0.clone()),
                    RegionKind::Linear => {}
                }
            }
            match tree.regions[r].parent {
                Some(p) => r = p,
                None => return t0.clone(),
            }
        }
    };
    let ctx: HashMap<String, Ctx> = f.blocks.iter().map(|b| (b.label.clone(), ctx_of(&b.label))).collect();

    // Plans, innermost first.
    let mut order: Vec<usize> = lin.iter().copied().collect();
    order.sort_by_key(|&i| (tree.regions[i].blocks.len(), i));
    let mut plans = Vec::new();
    for &i in &order {
        let r = &tree.regions[i];
        match r.kind {
            RegionKind::Branch => {
                let b = f.block(&r.entry).unwrap();
                let TermKind::CondBr { cond, then_label, else_label } = &b.term.kind else { unreachable!() };
                let x = r.exit.clone().unwrap();
                let (ta, ea) = arms[&i].clone();
                let in_region: Vec<&String> = pr.get(&x).map(|v| v.iter().filter(|p| r.blocks.contains(*p)).collect()).unwrap_or_default();
                let then_preds: Vec<&String> = in_region.iter().copied().filter(|p| ta.contains(*p)).collect();
                let else_preds: Vec<&String> = in_region.iter().copied().filter(|p| ea.contains(*p)).collect();
                if then_preds.len() > 1 || else_preds.len() > 1 {
                    return Err(shape(&r.entry, "arm reaches the exit from two blocks"));
                }
                let cb = names.fresh(&format!("c{}", r.id.unwrap().0));
                let ncb = names.fresh(&format!("nc{}", r.id.unwrap().0));
                let (t_then, t_else) = arm_names[&i].clone();
                plans.push(Plan::Branch(BranchPlan {
                    entry: r.entry.clone(),
                    cond: cond.clone(),
                    first_then: then_label.clone(),
                    first_else: else_label.clone(),
                    exit: x,
                    then_arm: ta,
                    then_last: then_preds.first().map(|s| s.to_string()),
                    tp: ctx[&r.entry].clone(),
                    cb,
                    ncb,
                    t_then,
                    t_else,
                }));
            }
            RegionKind::Loop => {
                let body = r.blocks.clone();
                plans.push(Plan::Loop(LoopPlan {
                    id: r.id.unwrap(),
                    pre: r.preheader.clone().unwrap(),
                    header: r.entry.clone(),
                    latch: r.latch.clone().unwrap(),
                    exit: r.exit.clone().unwrap(),
                    body,
                    tp: ctx[r.preheader.as_ref().unwrap()].clone(),
                    t_it: arm_names[&i].0.clone(),
                }));
            }
            RegionKind::Linear => {}
        }
    }

    let mut g = f.clone();
    for p in plans {
        match p {
            Plan::Branch(p) => {
                stats.branches += 1;
                apply_branch(&mut g, &p, ids, &sel).map_err(|w| shape(&p.entry, w))?;
            }
            Plan::Loop(p) => {
                stats.loops += 1;
                let k = input.bounds.get(&p.id).copied().unwrap_or(1).max(1);
                let cell = format!("{BOUND_CELL_PREFIX}{}", p.id.0);
                cells.push(GlobalDef { name: cell.clone(), ty: Type::I64, init: Some(k.to_le_bytes().to_vec()) });
                apply_loop(&mut g, m, &p, ids, &sel, &cell, &mut names).map_err(|w| shape(&p.header, w))?;
            }
        }
    }

    // Instruction rewrites.
    let mut need_div = false;
    let mut need_taken = whole;
    for b in g.blocks.iter_mut() {
        let c = ctx[&b.label].clone();
        let mut out: Vec<Inst> = Vec::with_capacity(b.insts.len());
        for inst in std::mem::take(&mut b.insts) {
            if inst.id.0 > max_orig {
                out.push(inst);
                continue;
            }
            let id = inst.id;
            match &inst.kind {
                InstKind::Load { ty, ptr } | InstKind::Store { ty, ptr, .. } => {
                    let Some(&n) = meta_ids.get(&id) else {
                        if c.is_some() {
                            return Err(LinearizeError::MissingMetadata { function: f.name.clone(), inst: id });
                        }
                        out.push(inst);
                        continue;
                    };
                    stats.dfl_accesses += 1;
                    let natural = input.meta[&id].natural;
                    let p = match &c {
                        Some(t) => {
                            let ps = names.fresh("ps");
                            out.push(assign(ids, Some(ps.clone()), InstKind::Call { callee: sel.clone(), args: vec![Operand::reg(t.clone()), ptr.clone(), Operand::Const(0)] }));
                            Operand::reg(ps)
                        }
                        None => ptr.clone(),
                    };
                    let (callee, mut args) = match &inst.kind {
                        InstKind::Load { .. } => (Intrinsic::Load(ty.clone()).name(), vec![p, Operand::Const(n as u64)]),
                        InstKind::Store { val, .. } => (Intrinsic::Store(ty.clone()).name(), vec![p, val.clone(), Operand::Const(n as u64)]),
                        _ => unreachable!(),
                    };
                    if natural {
                        args.push(ptr.clone());
                    }
                    out.push(Inst { id, result: inst.result.clone(), kind: InstKind::Call { callee, args } });
                }
                InstKind::Bin { op, ty, lhs, rhs } if op.is_div_rem() && (c.is_some() || ss.divrem.contains(&id)) => {
                    stats.divisions += 1;
                    need_div = true;
                    let z = names.fresh("dz");
                    out.push(assign(ids, Some(z.clone()), InstKind::Icmp { pred: Pred::Eq, lhs: rhs.clone(), rhs: Operand::Const(0) }));
                    let bad = match &c {
                        Some(t) => {
                            let bad = names.fresh("dbad");
                            out.push(assign(ids, Some(bad.clone()), InstKind::Bin { op: BinOp::And, ty: Type::I1, lhs: Operand::reg(t.clone()), rhs: Operand::reg(z) }));
                            bad
                        }
                        None => z,
                    };
                    out.push(assign(ids, None, InstKind::Trap { cond: Operand::reg(bad) }));
                    let w = names.fresh("dw");
                    let callee = if *op == BinOp::Div { UDIV } else { UREM };
                    out.push(assign(ids, Some(w.clone()), InstKind::Call { callee: callee.into(), args: vec![lhs.clone(), rhs.clone()] }));
                    out.push(Inst { id, result: inst.result.clone(), kind: InstKind::Bin { op: BinOp::Add, ty: ty.clone(), lhs: Operand::reg(w), rhs: Operand::Const(0) } });
                }
                InstKind::Call { callee, .. } if ss.whole.contains(callee) => {
                    stats.predicated_calls += 1;
                    need_taken = true;
                    out.push(assign(ids, None, InstKind::Store { ty: Type::I1, val: ctx_op(&c), ptr: Operand::Global(TAKEN_CELL.into()) }));
                    out.push(inst);
                }
                InstKind::Trap { cond } if c.is_some() => {
                    let nz = names.fresh("tc");
                    out.push(assign(ids, Some(nz.clone()), InstKind::Icmp { pred: Pred::Ne, lhs: cond.clone(), rhs: Operand::Const(0) }));
                    let both = names.fresh("tc");
                    out.push(assign(ids, Some(both.clone()), InstKind::Bin { op: BinOp::And, ty: Type::I1, lhs: ctx_op(&c), rhs: Operand::reg(nz) }));
                    out.push(Inst { id, result: None, kind: InstKind::Trap { cond: Operand::reg(both) } });
                }
                InstKind::HeapFree { ptr, dfl } if c.is_some() => {
                    let pf = names.fresh("pf");
                    out.push(assign(ids, Some(pf.clone()), InstKind::Call { callee: sel.clone(), args: vec![ctx_op(&c), ptr.clone(), Operand::Const(0)] }));
                    out.push(Inst { id, result: None, kind: InstKind::HeapFree { ptr: Operand::reg(pf), dfl: *dfl } });
                }
                InstKind::ICall { .. } if c.is_some() => {
                    return Err(shape(&b.label, "indirect call under a predicate"));
                }
                _ => out.push(inst),
            }
        }
        b.insts = out;
    }

    if linearized {
        for (bi, b) in g.blocks.iter_mut().enumerate() {
            let at = b.first_non_phi();
            let mut pre = Vec::new();
            if bi == 0 {
                if let Some(t0) = &t0 {
                    pre.push(assign(ids, Some(t0.clone()), InstKind::Load { ty: Type::I1, ptr: Operand::Global(TAKEN_CELL.into()) }));
                }
            }
            pre.push(assign(ids, None, InstKind::Call { callee: Intrinsic::Hook.name(), args: vec![ctx_op(&ctx[&b.label])] }));
            stats.hooks += 1;
            b.insts.splice(at..at, pre);
        }
    }
    Ok((g, need_div, need_taken))
}

fn apply_branch(g: &mut Function, p: &BranchPlan, ids: &mut IdGen, sel: &str) -> Result<(), &'static str> {
    let tp = ctx_op(&p.tp);
    let x = &p.exit;
    let then_empty = &p.first_then == x;
    let else_empty = &p.first_else == x;
    {
        let b = g.block_mut(&p.entry).unwrap();
        b.insts.push(assign(ids, Some(p.cb.clone()), InstKind::Icmp { pred: Pred::Ne, lhs: p.cond.clone(), rhs: Operand::Const(0) }));
        b.insts.push(assign(ids, Some(p.ncb.clone()), InstKind::Bin { op: BinOp::Xor, ty: Type::I1, lhs: Operand::reg(p.cb.clone()), rhs: Operand::Const(1) }));
        b.insts.push(assign(ids, Some(p.t_then.clone()), InstKind::Bin { op: BinOp::And, ty: Type::I1, lhs: tp.clone(), rhs: Operand::reg(p.cb.clone()) }));
        b.insts.push(assign(ids, Some(p.t_else.clone()), InstKind::Bin { op: BinOp::And, ty: Type::I1, lhs: tp, rhs: Operand::reg(p.ncb.clone()) }));
        let first = if !then_empty { &p.first_then } else { &p.first_else };
        b.term = Terminator { id: b.term.id, kind: TermKind::Br(first.clone()) };
    }
    if !then_empty && !else_empty {
        let last = p.then_last.as_ref().ok_or("then arm never reaches the exit")?;
        crate::ir::edit::retarget(&mut g.block_mut(last).unwrap().term, x, &p.first_else);
        crate::ir::edit::rename_phi_pred(g.block_mut(&p.first_else).unwrap(), &p.entry, last);
    }
    let xb = g.block_mut(x).unwrap();
    let n = xb.first_non_phi();
    let phis: Vec<Inst> = xb.insts.drain(..n).collect();
    let mut sels = Vec::new();
    for phi in phis {
        let InstKind::Phi { incoming, .. } = &phi.kind else { unreachable!() };
        if incoming.len() != 2 {
            return Err("exit phi does not have two incoming values");
        }
        let then_side = |l: &str| p.then_arm.contains(l) || (then_empty && l == p.entry);
        let (vt, vf) = match (then_side(&incoming[0].0), then_side(&incoming[1].0)) {
            (true, false) => (incoming[0].1.clone(), incoming[1].1.clone()),
            (false, true) => (incoming[1].1.clone(), incoming[0].1.clone()),
            _ => return Err("exit phi incomings are not one per arm"),
        };
        sels.push(Inst { id: phi.id, result: phi.result.clone(), kind: InstKind::Call { callee: sel.into(), args: vec![Operand::reg(p.cb.clone()), vt, vf] } });
    }
    xb.insts.splice(0..0, sels);
    Ok(())
}

/// Registers defined in `body` and used outside it.
fn live_outs(g: &Function, body: &BTreeSet<String>) -> BTreeSet<String> {
    let defs: BTreeSet<&String> = g.blocks.iter().filter(|b| body.contains(&b.label)).flat_map(|b| b.insts.iter().filter_map(|i| i.result.as_ref())).collect();
    let mut live = BTreeSet::new();
    for b in g.blocks.iter().filter(|b| !body.contains(&b.label)) {
        let uses = b.insts.iter().flat_map(|i| i.operands()).chain(b.term.operand());
        for o in uses {
            if let Some(r) = o.as_reg() {
                if defs.contains(&r.to_string()) {
                    live.insert(r.to_string());
                }
            }
        }
    }
    live
}

#[allow(clippy::too_many_arguments)]
fn apply_loop(g: &mut Function, m: &Module, p: &LoopPlan, ids: &mut IdGen, sel: &str, cell: &str, names: &mut Names<'_>) -> Result<(), &'static str> {
    let types = g.reg_types(m);
    let live_out: Vec<(String, Type, String, String)> = live_outs(g, &p.body)
        .into_iter()
        .map(|v| {
            let ty = types.get(&v).cloned().unwrap_or(Type::I64);
            let real = names.fresh(&format!("{v}.real"));
            let keep = names.fresh(&format!("{v}.keep"));
            (v, ty, real, keep)
        })
        .collect();
    let kcur = names.fresh("k.cur");
    let cidx = names.fresh("c.idx");
    let kit = names.fresh("k.it");
    let cnext = names.fresh("c.next");
    let knext = names.fresh("k.next");
    let real_more = names.fresh("real.more");
    let more = names.fresh("more");
    let (cont0, cont, ge, grow, c2) = (names.fresh("cont"), names.fresh("cont"), names.fresh("ge"), names.fresh("grow"), names.fresh("c.grow"));

    let pre = g.block_mut(&p.pre).ok_or("missing preheader")?;
    pre.insts.push(assign(ids, Some(kcur.clone()), InstKind::Load { ty: Type::I64, ptr: Operand::Global(cell.into()) }));

    let lb = g.block(&p.latch).ok_or("missing latch")?;
    let TermKind::CondBr { cond, then_label, else_label } = lb.term.kind.clone() else {
        return Err("latch does not end in a conditional branch");
    };
    let stays_on_true = then_label == p.header;
    if !stays_on_true && else_label != p.header {
        return Err("latch does not branch back to the header");
    }

    let h = g.block_mut(&p.header).unwrap();
    let ph = |id, r: &str, ty: Type, a: Operand, b: Operand| crate::ir::edit::phi(id, r, ty, vec![(p.pre.clone(), a), (p.latch.clone(), b)]);
    let mut new_phis = vec![
        ph(ids.next(), &p.t_it, Type::I1, ctx_op(&p.tp), Operand::reg(real_more.clone())),
        ph(ids.next(), &cidx, Type::I64, Operand::Const(0), Operand::reg(cnext.clone())),
        ph(ids.next(), &kit, Type::I64, Operand::reg(kcur), Operand::reg(knext.clone())),
    ];
    for (_, ty, real, keep) in &live_out {
        new_phis.push(ph(ids.next(), real, ty.clone(), Operand::Const(0), Operand::reg(keep.clone())));
    }
    h.insts.splice(0..0, new_phis);

    let lb = g.block_mut(&p.latch).unwrap();
    let r = |s: &str| Operand::reg(s.to_string());
    let mut tail = vec![assign(ids, Some(cont0.clone()), InstKind::Icmp { pred: Pred::Ne, lhs: cond, rhs: Operand::Const(0) })];
    tail.push(assign(
        ids,
        Some(cont.clone()),
        InstKind::Bin { op: BinOp::Xor, ty: Type::I1, lhs: r(&cont0), rhs: Operand::Const(if stays_on_true { 0 } else { 1 }) },
    ));
    tail.push(assign(ids, Some(real_more.clone()), InstKind::Bin { op: BinOp::And, ty: Type::I1, lhs: r(&p.t_it), rhs: r(&cont) }));
    tail.push(assign(ids, Some(cnext.clone()), InstKind::Bin { op: BinOp::Add, ty: Type::I64, lhs: r(&cidx), rhs: Operand::Const(1) }));
    tail.push(assign(ids, Some(ge.clone()), InstKind::Icmp { pred: Pred::Ge, lhs: r(&cnext), rhs: r(&kit) }));
    tail.push(assign(ids, Some(grow.clone()), InstKind::Bin { op: BinOp::And, ty: Type::I1, lhs: r(&real_more), rhs: r(&ge) }));
    tail.push(assign(ids, Some(c2.clone()), InstKind::Bin { op: BinOp::Add, ty: Type::I64, lhs: r(&cnext), rhs: Operand::Const(1) }));
    tail.push(assign(ids, Some(knext.clone()), InstKind::Call { callee: sel.into(), args: vec![r(&grow), r(&c2), r(&kit)] }));
    tail.push(assign(ids, Some(more.clone()), InstKind::Icmp { pred: Pred::Lt, lhs: r(&cnext), rhs: r(&knext) }));
    for (v, _, real, keep) in &live_out {
        tail.push(assign(ids, Some(keep.clone()), InstKind::Call { callee: sel.into(), args: vec![r(&p.t_it), r(v), r(real)] }));
    }
    tail.push(assign(ids, None, InstKind::Store { ty: Type::I64, val: r(&knext), ptr: Operand::Global(cell.into()) }));
    lb.insts.extend(tail);
    lb.term.kind = TermKind::CondBr { cond: r(&more), then_label: p.header.clone(), else_label: p.exit.clone() };

    // Uses after the loop see the value of the last real iteration.
    for b in g.blocks.iter_mut().filter(|b| !p.body.contains(&b.label)) {
        rename_outside(b, &live_out);
    }
    Ok(())
}

fn rename_outside(b: &mut Block, live: &[(String, Type, String, String)]) {
    let map: HashMap<&str, &str> = live.iter().map(|(v, _, _, k)| (v.as_str(), k.as_str())).collect();
    let fix = |o: &mut Operand| {
        if let Some(k) = o.as_reg().and_then(|r| map.get(r)) {
            *o = Operand::reg(k.to_string());
        }
    };
    for i in b.insts.iter_mut() {
        if let InstKind::Phi { incoming, .. } = &mut i.kind {
            for (_, v) in incoming.iter_mut() {
                fix(v);
            }
        } else {
            for o in i.operands_mut() {
                fix(o);
            }
        }
    }
    if let Some(o) = b.term.operand_mut() {
        fix(o);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dfl::build_metadata;
    use crate::interp::{ExecInput, InterpConfig, Program};
    use crate::ir::{parse_module, print_module, validate};
    use crate::normalize::normalize_module;
    use crate::profiler::{close_sensitivity, taint_profile};
    use crate::pta::{andersen_solve, refine_field_sensitivity, TargetMap};

    fn harden(src: &str, profile: &[u64]) -> (Module, Module) {
        let (m, trees) = normalize_module(&parse_module(src).unwrap(), &TargetMap::new()).unwrap();
        let suite: Vec<ExecInput> = profile.iter().map(|&s| ExecInput::new(vec![], vec![s])).collect();
        let r = taint_profile(&m, &trees, &suite, &InterpConfig::default());
        let ss = close_sensitivity(&m, &r, &trees);
        let pts = refine_field_sensitivity(&andersen_solve(&m), &m);
        let meta = build_metadata(&m, &pts, &ss.accesses, 64).unwrap();
        let input = LinearizeInput { ss: &ss, meta: &meta, bounds: &r.bounds, scheme: SelectScheme::default() };
        let (h, _) = linearize(&m, &input).unwrap();
        let diags = validate(&h);
        assert!(diags.is_empty(), "{diags:?}\n{}", print_module(&h));
        (m, h)
    }

    /// Outputs agree with the original and traces agree across secrets.
    fn check(src: &str, profile: &[u64], probe: &[u64]) -> Module {
        let (m, h) = harden(src, profile);
        let (pm, ph) = (Program::new(&m).unwrap(), Program::new(&h).unwrap());
        let cfg = InterpConfig::with_lambda(64);
        let mut first: Option<(Vec<_>, usize)> = None;
        for &s in probe {
            let inp = ExecInput::new(vec![], vec![s]);
            let (a, b) = (pm.run(&inp, &cfg), ph.run(&inp, &cfg));
            assert_eq!(a.result(), b.result(), "secret {s}\n{}", print_module(&h));
            assert!(b.decoy.is_empty(), "secret {s}: {:?}", b.decoy);
            let obs = (b.quantized(64), b.insts.len());
            match &first {
                None => first = Some(obs),
                Some(f) => assert_eq!(f, &obs, "secret {s} changes the trace"),
            }
        }
        h
    }

    const TABLES: &str = "global @ta : [8192 x i8]
global @tb : [8192 x i8]
func @main() -> i64 {
e:
  %s0 = secret i64 0
  %s = and i64 %s0, 8191
  %c = icmp lt %s, 4096
  condbr %c, a, x
a:
  %pa = gep [8192 x i8] @ta, 0, %s
  %va = load i8, %pa
  %pb = gep [8192 x i8] @tb, 0, %s
  %vb = load i8, %pb
  %w = add i8 %va, %vb
  %w1 = add i8 %w, 1
  store i8 %w1, %pa
  br x
x:
  %r = phi i64 [e: 7, a: 9]
  ret %r
}";

    #[test]
    fn branch_over_tables_is_oblivious() {
        let h = check(TABLES, &[100, 5000], &[100, 5000, 0, 8191, 4095]);
        assert!(h.functions[0].insts().all(|i| !matches!(i.kind, InstKind::Load { ref ptr, .. } if !matches!(ptr, Operand::Global(_)))));
    }

    const LOOP: &str = "global @acc : [8 x i64]
func @main() -> i64 {
e:
  %s = secret i64 0
  %n = and i64 %s, 7
  br h
h:
  %i = phi i64 [e: 0, h: %i1]
  %sum = phi i64 [e: 0, h: %sum1]
  %sum1 = add i64 %sum, %i
  %i1 = add i64 %i, 1
  %c = icmp lt %i1, %n
  condbr %c, h, out
out:
  ret %sum1
}";

    #[test]
    fn secret_trip_count_is_padded_to_the_bound() {
        check(LOOP, &[0, 3, 7], &[0, 1, 2, 5, 7]);
    }

    #[test]
    fn bound_grows_past_the_profile() {
        let (m, h) = harden(LOOP, &[2]);
        let ph = Program::new(&h).unwrap();
        for s in [7, 3] {
            let inp = ExecInput::new(vec![], vec![s]);
            assert_eq!(ph.run(&inp, &InterpConfig::default()).result(), Program::new(&m).unwrap().run(&inp, &InterpConfig::default()).result());
        }
    }

    const NESTED: &str = "global @t : [64 x i64]
func @main() -> i64 {
e:
  %s = secret i64 0
  br h
h:
  %i = phi i64 [e: 0, l: %i1]
  %acc = phi i64 [e: 0, l: %acc1]
  %b = lshr i64 %s, %i
  %bit = and i64 %b, 1
  %c = icmp eq %bit, 1
  condbr %c, y, n
y:
  %p = gep [64 x i64] @t, 0, %i
  store i64 %i, %p
  %d = div i64 100, %bit
  br l
n:
  %z = add i64 %acc, 3
  br l
l:
  %acc1 = phi i64 [y: %d, n: %z]
  %i1 = add i64 %i, 1
  %k = icmp lt %i1, 6
  condbr %k, h, out
out:
  ret %acc1
}";

    #[test]
    fn branch_with_division_inside_a_public_loop() {
        let h = check(NESTED, &[0, 63, 21], &[0, 1, 63, 42, 21]);
        assert!(h.function(UDIV).is_some());
    }

    const CALL: &str = "global @t : [16 x i64]
func @put(%i: i64) -> i64 {
e:
  %p = gep [16 x i64] @t, 0, %i
  store i64 1, %p
  ret 0
}
func @main() -> i64 {
e:
  %s = secret i64 0
  %m = and i64 %s, 15
  %c = icmp lt %m, 8
  condbr %c, a, x
a:
  %r = call @put(%m)
  br x
x:
  %p = gep [16 x i64] @t, 0, 3
  %v = load i64, %p
  ret %v
}";

    #[test]
    fn callee_runs_under_the_callers_predicate() {
        let h = check(CALL, &[1, 9], &[1, 9, 3, 12]);
        assert!(h.global(TAKEN_CELL).is_some());
        let put = h.function("put").unwrap();
        assert!(put.insts().any(|i| matches!(&i.kind, InstKind::Load { ptr: Operand::Global(g), .. } if g == TAKEN_CELL)));
    }
}
