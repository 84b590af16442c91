//! Single-entry/single-exit region normalization and the region tree.
//!
//! Loops are put in a canonical do-while shape: a preheader, one latch that
//! is the only exiting block, and a dedicated exit. Loops that are not
//! already in that shape are rewired so that every back-edge and every exit
//! edge lands in a fresh latch which decides on a `done` phi. Each
//! conditional branch then gets an exit block whose predecessors all lie
//! inside the branch region.

use std::collections::{BTreeSet, HashMap, HashSet};

use super::NormalizeError;
use crate::ir::cfg::NaturalLoop;
use crate::ir::edit::{def_sites, fresh_label, insert_after, insert_before, phi, rename_phi_pred, replace_uses_where, retarget};
use crate::ir::*;

const MAX_ROUNDS: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RegionKind {
    Linear,
    Branch,
    Loop,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Region {
    pub kind: RegionKind,
    /// The branch's condbr, or the loop latch's condbr. `None` for the root.
    pub id: Option<InstId>,
    /// Branch block, loop header, or function entry.
    pub entry: String,
    pub exit: Option<String>,
    pub latch: Option<String>,
    pub preheader: Option<String>,
    pub blocks: BTreeSet<String>,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionTree {
    pub function: String,
    /// `regions[0]` is the whole function.
    pub regions: Vec<Region>,
}

impl RegionTree {
    pub fn build(f: &Function) -> Result<RegionTree, NormalizeError> {
        let cfg = Cfg::build(f);
        if !cfg.reducible {
            return Err(NormalizeError::Irreducible { function: f.name.clone() });
        }
        let lab = |i: usize| cfg.labels[i].clone();
        let err = |block: usize, why: &str| NormalizeError::NotSese { function: f.name.clone(), block: lab(block), why: why.into() };
        let mut regions = vec![Region {
            kind: RegionKind::Linear,
            id: None,
            entry: lab(0),
            exit: None,
            latch: None,
            preheader: None,
            blocks: (0..cfg.labels.len()).filter(|&b| cfg.reachable[b]).map(lab).collect(),
            parent: None,
            children: Vec::new(),
        }];
        let mut latches = HashSet::new();
        for lp in cfg.loops() {
            let Some(shape) = canonical_shape(f, &cfg, &lp) else {
                return Err(err(lp.header, "loop is not in canonical form"));
            };
            latches.insert(shape.latch);
            regions.push(Region {
                kind: RegionKind::Loop,
                id: Some(f.blocks[shape.latch].term.id),
                entry: lab(lp.header),
                exit: Some(lab(shape.exit)),
                latch: Some(lab(shape.latch)),
                preheader: Some(lab(shape.preheader)),
                blocks: lp.body.iter().map(|&b| lab(b)).collect(),
                parent: None,
                children: Vec::new(),
            });
        }
        for (bi, b) in f.blocks.iter().enumerate() {
            let TermKind::CondBr { then_label, else_label, .. } = &b.term.kind else { continue };
            if !cfg.reachable[bi] || latches.contains(&bi) {
                continue;
            }
            let Some(x) = cfg.ipdom[bi] else {
                return Err(err(bi, "branch has no postdominating exit"));
            };
            let blocks = cfg.reach_until(bi, x);
            for &r in &blocks {
                if r != bi && cfg.preds[r].iter().any(|p| !blocks.contains(p)) {
                    return Err(err(r, "region has a second entry"));
                }
            }
            if cfg.preds[x].iter().any(|p| !blocks.contains(p)) {
                return Err(err(x, "region exit is shared"));
            }
            let arm = |l: &str| {
                let i = cfg.index(l).unwrap();
                if i == x {
                    BTreeSet::new()
                } else {
                    cfg.reach_until(i, x)
                }
            };
            if !arm(then_label).is_disjoint(&arm(else_label)) {
                return Err(NormalizeError::Unstructured { function: f.name.clone(), block: lab(bi) });
            }
            regions.push(Region {
                kind: RegionKind::Branch,
                id: Some(b.term.id),
                entry: lab(bi),
                exit: Some(lab(x)),
                latch: None,
                preheader: None,
                blocks: blocks.iter().map(|&b| lab(b)).collect(),
                parent: None,
                children: Vec::new(),
            });
        }
        // Parent = smallest strictly larger region containing all blocks.
        for i in 1..regions.len() {
            let mut best: Option<usize> = None;
            for j in 0..regions.len() {
                if i == j {
                    continue;
                }
                let (ri, rj) = (&regions[i], &regions[j]);
                let larger = rj.blocks.len() > ri.blocks.len()
                    || (rj.blocks.len() == ri.blocks.len() && rj.kind > ri.kind && j != 0);
                if larger && ri.blocks.is_subset(&rj.blocks) {
                    let better = best.is_none_or(|b| {
                        let rb = &regions[b];
                        rj.blocks.len() < rb.blocks.len() || (rj.blocks.len() == rb.blocks.len() && rj.kind < rb.kind)
                    });
                    if better {
                        best = Some(j);
                    }
                }
            }
            regions[i].parent = Some(best.unwrap_or(0));
        }
        for i in 1..regions.len() {
            let p = regions[i].parent.unwrap();
            regions[p].children.push(i);
        }
        for r in regions.iter_mut() {
            let ids: Vec<usize> = r.children.clone();
            r.children = ids;
        }
        let mut tree = RegionTree { function: f.name.clone(), regions };
        tree.sort_children(f);
        Ok(tree)
    }

    fn sort_children(&mut self, f: &Function) {
        let pos = |r: &Region| f.block_index(&r.entry).unwrap_or(usize::MAX);
        for i in 0..self.regions.len() {
            let mut ch = self.regions[i].children.clone();
            ch.sort_by_key(|&c| (pos(&self.regions[c]), std::cmp::Reverse(self.regions[c].blocks.len())));
            self.regions[i].children = ch;
        }
    }

    pub fn root(&self) -> &Region {
        &self.regions[0]
    }

    pub fn by_id(&self, id: InstId) -> Option<usize> {
        self.regions.iter().position(|r| r.id == Some(id))
    }

    /// Index of the smallest region containing `block`.
    pub fn innermost(&self, block: &str) -> usize {
        let mut best = 0;
        for (i, r) in self.regions.iter().enumerate() {
            if r.blocks.contains(block) && r.blocks.len() <= self.regions[best].blocks.len() {
                best = i;
            }
        }
        best
    }

    /// `idx` and every region nested inside it.
    pub fn subtree(&self, idx: usize) -> Vec<usize> {
        let mut out = vec![idx];
        let mut i = 0;
        while i < out.len() {
            out.extend(self.regions[out[i]].children.iter().copied());
            i += 1;
        }
        out
    }

    /// Nesting structure as text, e.g. `linear(branch(branch),loop)`.
    pub fn shape(&self) -> String {
        fn go(t: &RegionTree, i: usize, out: &mut String) {
            let r = &t.regions[i];
            out.push_str(match r.kind {
                RegionKind::Linear => "linear",
                RegionKind::Branch => "branch",
                RegionKind::Loop => "loop",
            });
            if !r.children.is_empty() {
                out.push('(');
                for (k, &c) in r.children.iter().enumerate() {
                    if k > 0 {
                        out.push(',');
                    }
                    go(t, c, out);
                }
                out.push(')');
            }
        }
        let mut s = String::new();
        go(self, 0, &mut s);
        s
    }
}

struct LoopShape {
    preheader: usize,
    latch: usize,
    exit: usize,
}

fn exit_edges(cfg: &Cfg, lp: &NaturalLoop) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for &u in &lp.body {
        for &t in &cfg.succs[u] {
            if !lp.body.contains(&t) && !out.contains(&(u, t)) {
                out.push((u, t));
            }
        }
    }
    out
}

fn outside_preds(cfg: &Cfg, lp: &NaturalLoop) -> Vec<usize> {
    cfg.preds[lp.header].iter().copied().filter(|p| !lp.body.contains(p) && cfg.reachable[*p]).collect()
}

fn canonical_shape(f: &Function, cfg: &Cfg, lp: &NaturalLoop) -> Option<LoopShape> {
    let outside = outside_preds(cfg, lp);
    if outside.len() != 1 || cfg.succs[outside[0]].len() != 1 || lp.latches.len() != 1 {
        return None;
    }
    let exits = exit_edges(cfg, lp);
    let latch = lp.latches[0];
    if exits.len() != 1 || exits[0].0 != latch || cfg.preds[exits[0].1].len() != 1 {
        return None;
    }
    matches!(f.blocks[latch].term.kind, TermKind::CondBr { .. }).then_some(LoopShape { preheader: outside[0], latch, exit: exits[0].1 })
}

/// Normalizes one function. `m` supplies callee return types.
pub fn normalize_regions(m: &Module, f: &Function, ids: &mut IdGen) -> Result<(Function, RegionTree), NormalizeError> {
    let mut types = f.reg_types(m);
    let mut f = f.clone();
    remove_unreachable(&mut f);
    fold_trivial_branches(&mut f);
    if !Cfg::build(&f).reducible {
        return Err(NormalizeError::Irreducible { function: f.name.clone() });
    }
    let mut rounds = 0;
    loop {
        rounds += 1;
        if rounds > MAX_ROUNDS {
            return Err(NormalizeError::NoFixpoint { function: f.name.clone() });
        }
        let cfg = Cfg::build(&f);
        let mut loops = cfg.loops();
        loops.sort_by_key(|l| (l.body.len(), l.header));
        let mut changed = false;
        for lp in &loops {
            if canonicalize_loop(&mut f, &cfg, lp, &mut types, ids)? {
                changed = true;
                break;
            }
        }
        if !changed {
            break;
        }
    }
    loop {
        rounds += 1;
        if rounds > MAX_ROUNDS {
            return Err(NormalizeError::NoFixpoint { function: f.name.clone() });
        }
        let cfg = Cfg::build(&f);
        let latches: HashSet<usize> = cfg.loops().iter().flat_map(|l| l.latches.clone()).collect();
        let mut cands = Vec::new();
        for (bi, b) in f.blocks.iter().enumerate() {
            if !matches!(b.term.kind, TermKind::CondBr { .. }) || latches.contains(&bi) {
                continue;
            }
            if let Some(x) = cfg.ipdom[bi] {
                let r = cfg.reach_until(bi, x);
                cands.push((r.len(), bi, x, r));
            }
        }
        cands.sort_by_key(|c| (c.0, c.1));
        let mut changed = false;
        for (_, _, x, r) in cands {
            let inside: Vec<usize> = cfg.preds[x].iter().copied().filter(|p| r.contains(p)).collect();
            if inside.len() >= 2 && inside.len() < cfg.preds[x].len() {
                let labels: Vec<String> = inside.iter().map(|&p| cfg.labels[p].clone()).collect();
                split_exit(&mut f, &cfg.labels[x].clone(), &labels, ids);
                changed = true;
                break;
            }
        }
        if !changed {
            break;
        }
    }
    let tree = RegionTree::build(&f)?;
    Ok((f, tree))
}

fn remove_unreachable(f: &mut Function) {
    let cfg = Cfg::build(f);
    let dead: HashSet<String> = (0..cfg.labels.len()).filter(|&b| !cfg.reachable[b]).map(|b| cfg.labels[b].clone()).collect();
    if dead.is_empty() {
        return;
    }
    f.blocks.retain(|b| !dead.contains(&b.label));
    for b in f.blocks.iter_mut() {
        for i in b.insts.iter_mut() {
            if let InstKind::Phi { incoming, .. } = &mut i.kind {
                incoming.retain(|(l, _)| !dead.contains(l));
            }
        }
    }
}

fn fold_trivial_branches(f: &mut Function) {
    for b in f.blocks.iter_mut() {
        if let TermKind::CondBr { then_label, else_label, .. } = &b.term.kind {
            if then_label == else_label {
                b.term.kind = TermKind::Br(then_label.clone());
            }
        }
    }
}

/// Gives the blocks `inside` a private join in front of `exit`.
fn split_exit(f: &mut Function, exit: &str, inside: &[String], ids: &mut IdGen) {
    let mut reserved = HashSet::new();
    let mut regs = HashSet::new();
    let join = fresh_label(f, &format!("{exit}.join"), &mut reserved);
    for p in inside {
        retarget(&mut f.block_mut(p).unwrap().term, exit, &join);
    }
    let mut new_phis = Vec::new();
    let xi = f.block_index(exit).unwrap();
    let phis: Vec<(usize, String, Type, Vec<(String, Operand)>)> = f.blocks[xi]
        .insts
        .iter()
        .enumerate()
        .filter_map(|(k, i)| match &i.kind {
            InstKind::Phi { ty, incoming } => Some((k, i.result.clone().unwrap(), ty.clone(), incoming.clone())),
            _ => None,
        })
        .collect();
    for (k, r, ty, incoming) in phis {
        let (mine, rest): (Vec<_>, Vec<_>) = incoming.into_iter().partition(|(l, _)| inside.contains(l));
        let nr = f.fresh_reg(&format!("{r}.j"), &mut regs);
        new_phis.push(phi(ids.next(), &nr, ty, mine));
        let InstKind::Phi { incoming, .. } = &mut f.blocks[xi].insts[k].kind else { unreachable!() };
        *incoming = rest;
        incoming.push((join.clone(), Operand::reg(nr)));
        incoming.sort_by(|a, b| a.0.cmp(&b.0));
    }
    insert_before(f, exit, Block { label: join, insts: new_phis, term: Terminator { id: ids.next(), kind: TermKind::Br(exit.to_string()) } });
}

fn make_preheader(f: &mut Function, header: &str, outside: &[String], ids: &mut IdGen) {
    let mut reserved = HashSet::new();
    let mut regs = HashSet::new();
    let pre = fresh_label(f, &format!("{header}.pre"), &mut reserved);
    for o in outside {
        retarget(&mut f.block_mut(o).unwrap().term, header, &pre);
    }
    let hi = f.block_index(header).unwrap();
    let mut new_phis = Vec::new();
    if outside.len() == 1 {
        rename_phi_pred(&mut f.blocks[hi], &outside[0], &pre);
    } else {
        for k in 0..f.blocks[hi].insts.len() {
            let (r, ty, incoming) = match &f.blocks[hi].insts[k].kind {
                InstKind::Phi { ty, incoming } => (f.blocks[hi].insts[k].result.clone().unwrap(), ty.clone(), incoming.clone()),
                _ => break,
            };
            let (mine, rest): (Vec<_>, Vec<_>) = incoming.into_iter().partition(|(l, _)| outside.contains(l));
            let nr = f.fresh_reg(&format!("{r}.pre"), &mut regs);
            new_phis.push(phi(ids.next(), &nr, ty, mine));
            let InstKind::Phi { incoming, .. } = &mut f.blocks[hi].insts[k].kind else { unreachable!() };
            *incoming = rest;
            incoming.push((pre.clone(), Operand::reg(nr)));
            incoming.sort_by(|a, b| a.0.cmp(&b.0));
        }
    }
    insert_before(f, header, Block { label: pre, insts: new_phis, term: Terminator { id: ids.next(), kind: TermKind::Br(header.to_string()) } });
}

fn canonicalize_loop(f: &mut Function, cfg: &Cfg, lp: &NaturalLoop, types: &mut HashMap<String, Type>, ids: &mut IdGen) -> Result<bool, NormalizeError> {
    let outside = outside_preds(cfg, lp);
    if outside.is_empty() {
        return Err(NormalizeError::NotSese { function: f.name.clone(), block: cfg.labels[lp.header].clone(), why: "loop header is the function entry".into() });
    }
    if outside.len() != 1 || cfg.succs[outside[0]].len() != 1 {
        let labels: Vec<String> = outside.iter().map(|&o| cfg.labels[o].clone()).collect();
        make_preheader(f, &cfg.labels[lp.header].clone(), &labels, ids);
        return Ok(true);
    }
    if canonical_shape(f, cfg, lp).is_some() {
        return Ok(false);
    }
    let exits = exit_edges(cfg, lp);
    if exits.is_empty() {
        return Err(NormalizeError::NotSese { function: f.name.clone(), block: cfg.labels[lp.header].clone(), why: "loop never exits".into() });
    }
    rewire_loop(f, cfg, lp, &exits, types, ids);
    Ok(true)
}

struct Edge {
    from: usize,
    to: usize,
    exit: bool,
    label: String,
}

fn phi_value(b: &Block, k: usize, pred: &str) -> Operand {
    match &b.insts[k].kind {
        InstKind::Phi { incoming, .. } => incoming.iter().find(|(l, _)| l == pred).map(|(_, v)| v.clone()).unwrap_or(Operand::Const(0)),
        _ => Operand::Const(0),
    }
}

fn rewire_loop(f: &mut Function, cfg: &Cfg, lp: &NaturalLoop, exits: &[(usize, usize)], types: &mut HashMap<String, Type>, ids: &mut IdGen) {
    let lab = |i: usize| cfg.labels[i].clone();
    let h = lp.header;
    let hl = lab(h);
    let body: BTreeSet<String> = lp.body.iter().map(|&b| lab(b)).collect();
    let defs = def_sites(f);
    let mut reserved = HashSet::new();
    let mut regs = HashSet::new();

    let latch = fresh_label(f, &format!("{hl}.latch"), &mut reserved);
    let exit = fresh_label(f, &format!("{hl}.exit"), &mut reserved);
    let mut targets: Vec<usize> = Vec::new();
    for &(_, t) in exits {
        if !targets.contains(&t) {
            targets.push(t);
        }
    }
    let mut edges = Vec::new();
    for &u in &lp.latches {
        edges.push(Edge { from: u, to: h, exit: false, label: fresh_label(f, &format!("{}.to.{hl}", lab(u)), &mut reserved) });
    }
    for &(u, t) in exits {
        edges.push(Edge { from: u, to: t, exit: true, label: fresh_label(f, &format!("{}.to.{}", lab(u), lab(t)), &mut reserved) });
    }
    // Dispatch blocks after the dedicated exit, one per extra exit target.
    let mut chain = vec![exit.clone()];
    for k in 1..targets.len().saturating_sub(1) {
        chain.push(fresh_label(f, &format!("{exit}.{k}"), &mut reserved));
    }
    let dispatch = |ti: usize| chain[ti.min(chain.len() - 1)].clone();
    let new_labels: HashSet<String> = edges.iter().map(|e| e.label.clone()).chain([latch.clone()]).chain(chain.iter().cloned()).collect();

    let mut latch_phis = Vec::new();
    let done = f.fresh_reg(&format!("{hl}.done"), &mut regs);
    types.insert(done.clone(), Type::I1);
    latch_phis.push(phi(ids.next(), &done, Type::I1, edges.iter().map(|e| (e.label.clone(), Operand::Const(e.exit as u64))).collect()));

    // Header phis now take their back-edge value from the new latch.
    let hb = f.block_index(&hl).unwrap();
    let nphi = f.blocks[hb].first_non_phi();
    for k in 0..nphi {
        let r = f.blocks[hb].insts[k].result.clone().unwrap();
        let InstKind::Phi { ty, .. } = f.blocks[hb].insts[k].kind.clone() else { unreachable!() };
        let nr = f.fresh_reg(&format!("{r}.next"), &mut regs);
        types.insert(nr.clone(), ty.clone());
        let inc = edges
            .iter()
            .map(|e| (e.label.clone(), if e.exit { Operand::Const(0) } else { phi_value(&f.blocks[hb], k, &lab(e.from)) }))
            .collect();
        latch_phis.push(phi(ids.next(), &nr, ty, inc));
        let InstKind::Phi { incoming, .. } = &mut f.blocks[hb].insts[k].kind else { unreachable!() };
        incoming.retain(|(l, _)| !lp.latches.iter().any(|&u| lab(u) == *l));
        incoming.push((latch.clone(), Operand::reg(nr)));
        incoming.sort_by(|a, b| a.0.cmp(&b.0));
    }

    let sel = (targets.len() > 1).then(|| {
        let s = f.fresh_reg(&format!("{hl}.sel"), &mut regs);
        types.insert(s.clone(), Type::I64);
        let inc = edges
            .iter()
            .map(|e| (e.label.clone(), Operand::Const(if e.exit { targets.iter().position(|&t| t == e.to).unwrap() as u64 } else { 0 })))
            .collect();
        latch_phis.push(phi(ids.next(), &s, Type::I64, inc));
        s
    });

    // Exit-target phis: route their loop values through the latch.
    for (ti, &t) in targets.iter().enumerate() {
        let tl = lab(t);
        let tb = f.block_index(&tl).unwrap();
        let from_loop: Vec<String> = exits.iter().filter(|e| e.1 == t).map(|e| lab(e.0)).collect();
        for k in 0..f.blocks[tb].first_non_phi() {
            let r = f.blocks[tb].insts[k].result.clone().unwrap();
            let InstKind::Phi { ty, .. } = f.blocks[tb].insts[k].kind.clone() else { unreachable!() };
            let nr = f.fresh_reg(&format!("{r}.lx"), &mut regs);
            types.insert(nr.clone(), ty.clone());
            let inc = edges
                .iter()
                .map(|e| (e.label.clone(), if e.exit && e.to == t { phi_value(&f.blocks[tb], k, &lab(e.from)) } else { Operand::Const(0) }))
                .collect();
            latch_phis.push(phi(ids.next(), &nr, ty, inc));
            let InstKind::Phi { incoming, .. } = &mut f.blocks[tb].insts[k].kind else { unreachable!() };
            incoming.retain(|(l, _)| !from_loop.contains(l));
            incoming.push((dispatch(ti), Operand::reg(nr)));
            incoming.sort_by(|a, b| a.0.cmp(&b.0));
        }
    }

    // Values defined in the loop and used after it flow through the latch.
    let mut live_out: Vec<String> = Vec::new();
    for b in &f.blocks {
        if body.contains(&b.label) {
            continue;
        }
        let mut note = |o: &Operand| {
            if let Operand::Reg(r) = o {
                if defs.get(r).is_some_and(|&(db, pos)| pos != usize::MAX && body.contains(&f.blocks[db].label)) && !live_out.contains(r) {
                    live_out.push(r.clone());
                }
            }
        };
        for i in &b.insts {
            if let InstKind::Phi { incoming, .. } = &i.kind {
                for (l, v) in incoming {
                    if !body.contains(l) && !new_labels.contains(l) {
                        note(v);
                    }
                }
            } else {
                i.operands().into_iter().for_each(&mut note);
            }
        }
        if let Some(o) = b.term.operand() {
            note(o);
        }
    }
    for v in live_out {
        let db = defs[&v].0;
        let def_block = cfg.index(&f.blocks[db].label).unwrap();
        let ty = types.get(&v).cloned().unwrap_or(Type::I64);
        let nr = f.fresh_reg(&format!("{v}.lx"), &mut regs);
        types.insert(nr.clone(), ty.clone());
        let inc = edges
            .iter()
            .map(|e| (e.label.clone(), if cfg.dominates(def_block, e.from) { Operand::reg(v.clone()) } else { Operand::Const(0) }))
            .collect();
        latch_phis.push(phi(ids.next(), &nr, ty, inc));
        let body_ref = &body;
        let new_ref = &new_labels;
        replace_uses_where(f, &v, &Operand::reg(nr), |blk| !body_ref.contains(blk) && !new_ref.contains(blk));
    }

    // Redirect edges into their edge blocks, then lay out the new blocks.
    for e in &edges {
        let from = lab(e.from);
        retarget(&mut f.block_mut(&from).unwrap().term, &lab(e.to), &e.label);
        let eb = Block { label: e.label.clone(), insts: vec![], term: Terminator { id: ids.next(), kind: TermKind::Br(latch.clone()) } };
        insert_after(f, &from, eb);
    }
    let last_body = f.blocks.iter().rposition(|b| body.contains(&b.label) || edges.iter().any(|e| e.label == b.label)).unwrap();
    let mut tail = vec![Block {
        label: latch.clone(),
        insts: latch_phis,
        term: Terminator { id: ids.next(), kind: TermKind::CondBr { cond: Operand::reg(done), then_label: exit.clone(), else_label: hl.clone() } },
    }];
    if let Some(s) = sel {
        for (k, d) in chain.iter().enumerate() {
            let c = f.fresh_reg(&format!("{hl}.is{k}"), &mut regs);
            let else_label = if k + 1 < chain.len() { chain[k + 1].clone() } else { lab(targets[k + 1]) };
            tail.push(Block {
                label: d.clone(),
                insts: vec![Inst { id: ids.next(), result: Some(c.clone()), kind: InstKind::Icmp { pred: Pred::Eq, lhs: Operand::reg(s.clone()), rhs: Operand::Const(k as u64) } }],
                term: Terminator { id: ids.next(), kind: TermKind::CondBr { cond: Operand::reg(c), then_label: lab(targets[k]), else_label } },
            });
        }
    } else {
        tail.push(Block { label: exit.clone(), insts: vec![], term: Terminator { id: ids.next(), kind: TermKind::Br(lab(targets[0])) } });
    }
    for (k, b) in tail.into_iter().enumerate() {
        f.blocks.insert(last_body + 1 + k, b);
    }
}
