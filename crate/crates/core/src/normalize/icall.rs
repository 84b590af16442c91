//! Indirect-call promotion into guarded chains of direct calls.

use std::collections::HashSet;

use super::NormalizeError;
use crate::ir::edit::{fresh_label, phi, rename_phi_pred};
use crate::ir::*;
use crate::pta::TargetMap;

/// Replaces each `icall` by comparisons of the callee value against every
/// candidate (ascending by name), each guarding a direct call. The chain
/// ends in a failsafe block that traps.
pub fn promote_indirect_calls(m: &Module, targets: &TargetMap, ids: &mut IdGen) -> Result<Module, NormalizeError> {
    let mut out = m.clone();
    for fi in 0..out.functions.len() {
        loop {
            let f = &out.functions[fi];
            let found = f.blocks.iter().enumerate().find_map(|(bi, b)| {
                b.insts.iter().position(|i| matches!(i.kind, InstKind::ICall { .. })).map(|ii| (bi, ii))
            });
            let Some((bi, ii)) = found else { break };
            let reachable = Cfg::build(f).reachable[bi];
            let inst = f.blocks[bi].insts[ii].clone();
            let cands: Vec<String> = targets.get(&inst.id).map(|s| s.iter().cloned().collect()).unwrap_or_default();
            let f = &mut out.functions[fi];
            if cands.is_empty() {
                if reachable {
                    return Err(NormalizeError::NoTargets { function: f.name.clone(), inst: inst.id });
                }
                replace_dead_icall(f, bi, ii, ids);
                continue;
            }
            expand(f, bi, ii, &cands, ids);
        }
    }
    Ok(out)
}

fn replace_dead_icall(f: &mut Function, bi: usize, ii: usize, ids: &mut IdGen) {
    let inst = f.blocks[bi].insts.remove(ii);
    let InstKind::ICall { ret, .. } = inst.kind else { unreachable!() };
    let mut new = vec![Inst { id: inst.id, result: None, kind: InstKind::Trap { cond: Operand::Const(1) } }];
    if let Some(r) = inst.result {
        new.push(Inst {
            id: ids.next(),
            result: Some(r),
            kind: InstKind::Bin { op: BinOp::Add, ty: ret, lhs: Operand::Const(0), rhs: Operand::Const(0) },
        });
    }
    for (k, i) in new.into_iter().enumerate() {
        f.blocks[bi].insts.insert(ii + k, i);
    }
}

fn expand(f: &mut Function, bi: usize, ii: usize, cands: &[String], ids: &mut IdGen) {
    let mut regs = HashSet::new();
    let mut labels = HashSet::new();
    let label = f.blocks[bi].label.clone();
    let inst = f.blocks[bi].insts[ii].clone();
    let InstKind::ICall { ret, callee, args } = inst.kind else { unreachable!() };
    let tail: Vec<Inst> = f.blocks[bi].insts.drain(ii..).skip(1).collect();
    let join = fresh_label(f, &format!("{label}.icall.join"), &mut labels);
    let fail = fresh_label(f, &format!("{label}.icall.fail"), &mut labels);
    let old_term = f.blocks[bi].term.clone();
    for s in old_term.successors() {
        if let Some(b) = f.block_mut(s) {
            rename_phi_pred(b, &label, &join);
        }
    }

    let mut new_blocks = Vec::new();
    let mut incoming = Vec::new();
    let mut check_label = label.clone();
    let mut check_insts: Vec<Inst> = Vec::new();
    for (k, cand) in cands.iter().enumerate() {
        let call_label = fresh_label(f, &format!("{label}.call.{cand}"), &mut labels);
        let next = if k + 1 < cands.len() { fresh_label(f, &format!("{label}.icall.{}", k + 1), &mut labels) } else { fail.clone() };
        let eq = f.fresh_reg(&format!("{label}.is.{cand}"), &mut regs);
        check_insts.push(Inst {
            id: ids.next(),
            result: Some(eq.clone()),
            kind: InstKind::Icmp { pred: Pred::Eq, lhs: callee.clone(), rhs: Operand::Global(cand.clone()) },
        });
        let term = Terminator {
            id: ids.next(),
            kind: TermKind::CondBr { cond: Operand::reg(eq), then_label: call_label.clone(), else_label: next.clone() },
        };
        if k == 0 {
            f.blocks[bi].insts.append(&mut check_insts);
            f.blocks[bi].term = term;
        } else {
            new_blocks.push(Block { label: check_label.clone(), insts: std::mem::take(&mut check_insts), term });
        }
        let res = inst.result.as_ref().map(|r| f.fresh_reg(&format!("{r}.{cand}"), &mut regs));
        if let Some(r) = &res {
            incoming.push((call_label.clone(), Operand::reg(r.clone())));
        }
        new_blocks.push(Block {
            label: call_label.clone(),
            insts: vec![Inst { id: ids.next(), result: res, kind: InstKind::Call { callee: cand.clone(), args: args.clone() } }],
            term: Terminator { id: ids.next(), kind: TermKind::Br(join.clone()) },
        });
        check_label = next;
    }
    new_blocks.push(Block {
        label: fail.clone(),
        insts: vec![Inst { id: ids.next(), result: None, kind: InstKind::Trap { cond: Operand::Const(1) } }],
        term: Terminator { id: ids.next(), kind: TermKind::Br(join.clone()) },
    });
    let mut join_insts = Vec::new();
    if let Some(r) = &inst.result {
        incoming.push((fail.clone(), Operand::Const(0)));
        join_insts.push(phi(inst.id, r, ret, incoming));
    }
    join_insts.extend(tail);
    new_blocks.push(Block { label: join, insts: join_insts, term: old_term });
    let at = bi + 1;
    for (k, b) in new_blocks.into_iter().enumerate() {
        f.blocks.insert(at + k, b);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::{interpret, ExecInput};
    use std::collections::{BTreeMap, BTreeSet};

    const SRC: &str = "func @f(%x: i64) -> i64 {\nentry:\n  %r = add i64 %x, 3\n  ret %r\n}\nfunc @g(%x: i64) -> i64 {\nentry:\n  %r = mul i64 %x, 5\n  ret %r\n}\nfunc @main(%s: i64) -> i64 {\nentry:\n  %c = icmp eq %s, 0\n  %fp = select %c, @f, @g\n  %v = icall i64 %fp(%s)\n  %w = add i64 %v, 1\n  ret %w\n}";

    fn targets(m: &Module, names: &[&str]) -> TargetMap {
        let id = m.functions[2].blocks[0].insts[2].id;
        BTreeMap::from([(id, names.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>())])
    }

    #[test]
    fn two_candidates_give_two_guarded_calls_and_failsafe() {
        let m = parse_module(SRC).unwrap();
        let mut ids = IdGen::for_module(&m);
        let out = promote_indirect_calls(&m, &targets(&m, &["g", "f"]), &mut ids).unwrap();
        assert!(validate(&out).is_empty(), "{:?}", validate(&out));
        let main = out.function("main").unwrap();
        let calls: Vec<&str> = main
            .insts()
            .filter_map(|i| match &i.kind {
                InstKind::Call { callee, .. } => Some(callee.as_str()),
                _ => None,
            })
            .collect();
        assert_eq!(calls, vec!["f", "g"]);
        assert_eq!(main.insts().filter(|i| matches!(i.kind, InstKind::Trap { .. })).count(), 1);
        for s in 0..4 {
            let inp = ExecInput::new(vec![s], vec![]);
            assert_eq!(interpret(&m, &inp, 64).result(), interpret(&out, &inp, 64).result());
        }
    }

    #[test]
    fn missing_candidate_hits_failsafe() {
        let m = parse_module(SRC).unwrap();
        let mut ids = IdGen::for_module(&m);
        let out = promote_indirect_calls(&m, &targets(&m, &["f"]), &mut ids).unwrap();
        let t = interpret(&out, &ExecInput::new(vec![1], vec![]), 64);
        assert!(matches!(t.result(), Err(crate::interp::Abort::Trap { .. })));
    }

    #[test]
    fn empty_target_set_is_an_error() {
        let m = parse_module(SRC).unwrap();
        let mut ids = IdGen::for_module(&m);
        assert!(promote_indirect_calls(&m, &TargetMap::new(), &mut ids).is_err());
    }
}
