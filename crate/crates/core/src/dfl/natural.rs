//! Natural striding: an access inside a public counted loop whose address
//! walks a global one λ-block per iteration already visits every block of
//! its portion once, so each `ct.load`/`ct.store` only needs to touch the
//! block of the current iteration.

use std::collections::{BTreeMap, BTreeSet};

use super::{DflAccessMetadata, SiteId};
use crate::ir::edit::def_sites;
use crate::ir::{BinOp, Function, InstId, InstKind, Operand, Pred, TermKind, Type};
use crate::ir::Module;
use crate::normalize::{Region, RegionKind, Regions};

/// Marks qualifying records natural. Loops in `linearized` are skipped:
/// their trip count is padded at run time.
pub fn optimize_natural_striding(
    m: &Module,
    trees: &Regions,
    linearized: &BTreeSet<InstId>,
    meta: &BTreeMap<InstId, DflAccessMetadata>,
) -> BTreeMap<InstId, DflAccessMetadata> {
    let mut out = meta.clone();
    for (id, md) in out.iter_mut() {
        if covers_naturally(m, trees, linearized, *id, md) {
            md.natural = true;
        }
    }
    out
}

fn covers_naturally(m: &Module, trees: &Regions, linearized: &BTreeSet<InstId>, id: InstId, md: &DflAccessMetadata) -> bool {
    let [e] = md.entries.as_slice() else { return false };
    let SiteId::Global(g) = &e.site else { return false };
    let Some((fi, bi, ii)) = m.locate(id) else { return false };
    let f = &m.functions[fi];
    let Some(tree) = trees.get(&f.name) else { return false };
    let mut r = tree.innermost(&f.blocks[bi].label);
    let lp = loop {
        let reg = &tree.regions[r];
        if reg.kind == RegionKind::Loop {
            break reg;
        }
        match reg.parent {
            Some(p) => r = p,
            None => return false,
        }
    };
    if lp.id.is_none_or(|l| linearized.contains(&l)) {
        return false;
    }
    let ptr = match &f.blocks[bi].insts[ii].kind {
        InstKind::Load { ptr, .. } | InstKind::Store { ptr, .. } => ptr,
        _ => return false,
    };
    let Some((c0, trips, scale)) = induction_access(f, lp, ptr, g) else { return false };
    let lambda = md.lambda.max(1);
    scale == lambda
        && e.offset == c0 * scale
        && e.offset % lambda == 0
        && DflAccessMetadata::blocks_of(e.offset, e.len, lambda) == trips
}

/// For `ptr = gep [n x E] @g, 0, %i` (or `gep E @g, %i`) with `%i` a unit
/// step counter from constant `c0` to constant `K` in `lp`:
/// `(c0, K - c0, size of E)`.
fn induction_access(f: &Function, lp: &Region, ptr: &Operand, g: &str) -> Option<(u64, u64, u64)> {
    let defs = def_sites(f);
    let inst_of = |r: &str| {
        let &(bi, ii) = defs.get(r)?;
        (ii != usize::MAX).then(|| (&f.blocks[bi], &f.blocks[bi].insts[ii]))
    };
    let (_, gep) = inst_of(ptr.as_reg()?)?;
    let InstKind::Gep { ty, base, indices } = &gep.kind else { return None };
    if base != &Operand::Global(g.to_string()) {
        return None;
    }
    let (iv, scale) = match (ty, indices.as_slice()) {
        (Type::Array(elem, _), [Operand::Const(0), Operand::Reg(i)]) => (i, elem.size()),
        (t, [Operand::Reg(i)]) => (i, t.size()),
        _ => return None,
    };
    let (hb, phi) = inst_of(iv)?;
    if hb.label != lp.entry {
        return None;
    }
    let InstKind::Phi { incoming, .. } = &phi.kind else { return None };
    let pre = lp.preheader.as_ref()?;
    let latch = lp.latch.as_ref()?;
    let mut c0 = None;
    let mut next = None;
    for (from, v) in incoming {
        match v {
            Operand::Const(c) if from == pre => c0 = Some(*c),
            Operand::Reg(n) if from == latch => next = Some(n.clone()),
            _ => return None,
        }
    }
    let (c0, next) = (c0?, next?);
    let (nb, step) = inst_of(&next)?;
    if !lp.blocks.contains(&nb.label) {
        return None;
    }
    match &step.kind {
        InstKind::Bin { op: BinOp::Add, lhs, rhs, .. }
            if (lhs.as_reg() == Some(iv) && rhs == &Operand::Const(1)) || (rhs.as_reg() == Some(iv) && lhs == &Operand::Const(1)) => {}
        _ => return None,
    }
    let lb = f.block(latch)?;
    let TermKind::CondBr { cond, then_label, .. } = &lb.term.kind else { return None };
    if then_label != &lp.entry {
        return None;
    }
    let (cb, cmp) = inst_of(cond.as_reg()?)?;
    if !lp.blocks.contains(&cb.label) {
        return None;
    }
    let InstKind::Icmp { pred: Pred::Lt | Pred::Ne, lhs, rhs: Operand::Const(k) } = &cmp.kind else { return None };
    if lhs.as_reg() != Some(next.as_str()) || *k <= c0 {
        return None;
    }
    Some((c0, k - c0, scale))
}
