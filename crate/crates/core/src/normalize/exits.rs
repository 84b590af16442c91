//! Single-exit normalization.

use std::collections::HashSet;

use crate::ir::edit::phi;
use crate::ir::*;

/// Merges every `ret` into one exit block that returns a phi of the former
/// return values. Functions that already have one `ret` come back unchanged.
pub fn unify_exits(f: &Function, ids: &mut IdGen) -> Function {
    let rets: Vec<usize> = f
        .blocks
        .iter()
        .enumerate()
        .filter(|(_, b)| matches!(b.term.kind, TermKind::Ret(_)))
        .map(|(i, _)| i)
        .collect();
    if rets.len() <= 1 {
        return f.clone();
    }
    let mut g = f.clone();
    let exit = g.fresh_label("exit");
    let mut taken = HashSet::new();
    let rv = g.fresh_reg("retval", &mut taken);
    let mut incoming = Vec::new();
    for &bi in &rets {
        let b = &mut g.blocks[bi];
        let TermKind::Ret(v) = &b.term.kind else { unreachable!() };
        incoming.push((b.label.clone(), v.clone()));
        b.term.kind = TermKind::Br(exit.clone());
    }
    g.blocks.push(Block {
        label: exit,
        insts: vec![phi(ids.next(), &rv, f.ret.clone(), incoming)],
        term: Terminator { id: ids.next(), kind: TermKind::Ret(Operand::reg(rv)) },
    });
    g
}
