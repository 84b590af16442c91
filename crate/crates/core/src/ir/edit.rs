//! Small CFG surgery helpers shared by the transformation passes.

use super::*;

/// Rewrites every successor `old` of `term` to `new`.
pub fn retarget(term: &mut Terminator, old: &str, new: &str) {
    for s in term.successors_mut() {
        if s == old {
            *s = new.to_string();
        }
    }
}

/// Renames the incoming label `old` to `new` in every phi of `block`.
pub fn rename_phi_pred(block: &mut Block, old: &str, new: &str) {
    for i in block.insts.iter_mut() {
        if let InstKind::Phi { incoming, .. } = &mut i.kind {
            for (l, _) in incoming.iter_mut() {
                if l == old {
                    *l = new.to_string();
                }
            }
        }
    }
}

/// Replaces uses of register `old` by `new` in blocks where `affect` holds.
/// A phi operand counts as a use at the end of its incoming block.
pub fn replace_uses_where(f: &mut Function, old: &str, new: &Operand, affect: impl Fn(&str) -> bool) {
    for b in f.blocks.iter_mut() {
        let here = affect(&b.label);
        for i in b.insts.iter_mut() {
            if let InstKind::Phi { incoming, .. } = &mut i.kind {
                for (l, v) in incoming.iter_mut() {
                    if affect(l) && v.as_reg() == Some(old) {
                        *v = new.clone();
                    }
                }
                continue;
            }
            if here {
                for o in i.operands_mut() {
                    if o.as_reg() == Some(old) {
                        *o = new.clone();
                    }
                }
            }
        }
        if here {
            if let Some(o) = b.term.operand_mut() {
                if o.as_reg() == Some(old) {
                    *o = new.clone();
                }
            }
        }
    }
}

pub fn replace_uses(f: &mut Function, old: &str, new: &Operand) {
    replace_uses_where(f, old, new, |_| true);
}

/// Inserts `block` right before the block labelled `before` (or at the end).
pub fn insert_before(f: &mut Function, before: &str, block: Block) {
    let at = f.block_index(before).unwrap_or(f.blocks.len());
    f.blocks.insert(at, block);
}

pub fn insert_after(f: &mut Function, after: &str, block: Block) {
    let at = f.block_index(after).map_or(f.blocks.len(), |i| i + 1);
    f.blocks.insert(at, block);
}

pub fn br(id: InstId, target: &str) -> Terminator {
    Terminator { id, kind: TermKind::Br(target.to_string()) }
}

pub fn phi(id: InstId, result: &str, ty: Type, mut incoming: Vec<(String, Operand)>) -> Inst {
    incoming.sort_by(|a, b| a.0.cmp(&b.0));
    Inst { id, result: Some(result.to_string()), kind: InstKind::Phi { ty, incoming } }
}

/// Registers defined in `f` mapped to (block index, instruction index).
pub fn def_sites(f: &Function) -> HashMap<String, (usize, usize)> {
    let mut m = HashMap::new();
    for p in &f.params {
        m.insert(p.name.clone(), (0, usize::MAX));
    }
    for (bi, b) in f.blocks.iter().enumerate() {
        for (ii, i) in b.insts.iter().enumerate() {
            if let Some(r) = &i.result {
                m.insert(r.clone(), (bi, ii));
            }
        }
    }
    m
}

/// A label unused in `f` and in `reserved`; the result is reserved.
pub fn fresh_label(f: &Function, hint: &str, reserved: &mut std::collections::HashSet<String>) -> String {
    let mut n = 0usize;
    loop {
        let cand = if n == 0 { hint.to_string() } else { format!("{hint}.{n}") };
        if f.block(&cand).is_none() && reserved.insert(cand.clone()) {
            return cand;
        }
        n += 1;
    }
}
