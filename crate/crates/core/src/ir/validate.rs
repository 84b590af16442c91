//! Well-formedness checks: SSA dominance, unique definitions, phi edges, types.

use std::collections::{HashMap, HashSet};
use std::fmt;

use super::*;
use crate::intrinsics::Intrinsic;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub function: String,
    pub block: String,
    pub inst: Option<InstId>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.inst {
            Some(id) => write!(f, "@{}:{} {}: {}", self.function, self.block, id, self.message),
            None => write!(f, "@{}:{}: {}", self.function, self.block, self.message),
        }
    }
}

pub fn validate(m: &Module) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut names = HashSet::new();
    for g in &m.globals {
        if !names.insert(g.name.as_str()) {
            out.push(diag("", "", None, format!("duplicate global @{}", g.name)));
        }
    }
    let mut fnames = HashSet::new();
    for f in &m.functions {
        if !fnames.insert(f.name.as_str()) {
            out.push(diag(&f.name, "", None, "duplicate function".into()));
        }
    }
    if m.function(&m.entry).is_none() {
        out.push(diag(&m.entry, "", None, "entry function missing".into()));
    }
    let mut ids = HashSet::new();
    for f in &m.functions {
        for b in &f.blocks {
            for id in b.insts.iter().map(|i| i.id).chain(std::iter::once(b.term.id)) {
                if !ids.insert(id) {
                    out.push(diag(&f.name, &b.label, Some(id), "duplicate instruction id".into()));
                }
            }
        }
        validate_function(m, f, &mut out);
    }
    out
}

fn diag(f: &str, b: &str, inst: Option<InstId>, message: String) -> Diagnostic {
    Diagnostic { function: f.to_string(), block: b.to_string(), inst, message }
}

fn validate_function(m: &Module, f: &Function, out: &mut Vec<Diagnostic>) {
    let labels: HashSet<&str> = f.blocks.iter().map(|b| b.label.as_str()).collect();
    if labels.len() != f.blocks.len() {
        out.push(diag(&f.name, "", None, "duplicate block label".into()));
        return;
    }
    for b in &f.blocks {
        for s in b.term.successors() {
            if !labels.contains(s) {
                out.push(diag(&f.name, &b.label, Some(b.term.id), format!("unknown label `{s}`")));
            }
        }
    }
    if out.iter().any(|d| d.function == f.name) {
        return;
    }
    let cfg = Cfg::build(f);
    if !cfg.preds[0].is_empty() {
        out.push(diag(&f.name, &f.blocks[0].label, None, "entry block has predecessors".into()));
    }

    // Definition sites: (block, position); params live at (0, 0) before everything.
    let mut defs: HashMap<&str, (usize, usize)> = HashMap::new();
    for p in &f.params {
        defs.insert(&p.name, (0, 0));
    }
    for (bi, b) in f.blocks.iter().enumerate() {
        for (ii, inst) in b.insts.iter().enumerate() {
            if let Some(r) = &inst.result {
                if defs.insert(r, (bi, ii + 1)).is_some() {
                    out.push(diag(&f.name, &b.label, Some(inst.id), format!("%{r} defined twice")));
                }
            }
        }
    }
    let types = f.reg_types(m);

    let check_use = |op: &Operand, bi: usize, pos: usize, out: &mut Vec<Diagnostic>, id: InstId| match op {
        Operand::Reg(r) => match defs.get(r.as_str()) {
            None => out.push(diag(&f.name, &f.blocks[bi].label, Some(id), format!("%{r} is never defined"))),
            Some(&(db, dp)) => {
                let ok = if db == bi { dp <= pos } else { cfg.dominates(db, bi) };
                if !ok && cfg.reachable[bi] {
                    out.push(diag(&f.name, &f.blocks[bi].label, Some(id), format!("use of %{r} not dominated by its definition")));
                }
            }
        },
        Operand::Global(g) => {
            if m.global(g).is_none() && m.function(g).is_none() {
                out.push(diag(&f.name, &f.blocks[bi].label, Some(id), format!("unknown symbol @{g}")));
            }
        }
        Operand::Const(_) => {}
    };
    let is_addr = |op: &Operand| match op {
        Operand::Reg(r) => types.get(r) == Some(&Type::Addr),
        Operand::Global(_) => true,
        Operand::Const(_) => true,
    };

    for (bi, b) in f.blocks.iter().enumerate() {
        let mut seen_non_phi = false;
        for (ii, inst) in b.insts.iter().enumerate() {
            let here = |msg: String| diag(&f.name, &b.label, Some(inst.id), msg);
            if let InstKind::Phi { ty, incoming } = &inst.kind {
                if seen_non_phi {
                    out.push(here("phi after non-phi instruction".into()));
                }
                if cfg.reachable[bi] {
                    let mut inc_labels: Vec<&str> = incoming.iter().map(|(l, _)| l.as_str()).collect();
                    inc_labels.sort();
                    let mut pred_labels: Vec<&str> = cfg.preds[bi].iter().filter(|&&p| cfg.reachable[p]).map(|&p| cfg.labels[p].as_str()).collect();
                    pred_labels.sort();
                    let all: Vec<&str> = {
                        let mut v: Vec<&str> = cfg.preds[bi].iter().map(|&p| cfg.labels[p].as_str()).collect();
                        v.sort();
                        v
                    };
                    if inc_labels != pred_labels && inc_labels != all {
                        out.push(here(format!("phi incoming labels {inc_labels:?} do not match predecessors {pred_labels:?}")));
                    }
                }
                for (l, v) in incoming {
                    if let Some(pi) = cfg.index(l) {
                        match v {
                            Operand::Reg(r) => match defs.get(r.as_str()) {
                                None => out.push(here(format!("%{r} is never defined"))),
                                Some(&(db, _)) => {
                                    if cfg.reachable[pi] && !cfg.dominates(db, pi) {
                                        out.push(here(format!("phi operand %{r} does not dominate edge from {l}")));
                                    }
                                }
                            },
                            other => check_use(other, pi, usize::MAX, out, inst.id),
                        }
                        if let Operand::Reg(r) = v {
                            if let Some(t) = types.get(r) {
                                if t != ty {
                                    out.push(here(format!("phi operand %{r} has type {t:?}, expected {ty:?}")));
                                }
                            }
                        }
                    }
                }
                continue;
            }
            seen_non_phi = true;
            for op in inst.operands() {
                check_use(op, bi, ii, out, inst.id);
            }
            match &inst.kind {
                InstKind::Load { ptr, .. } if !is_addr(ptr) => out.push(here("load pointer is not an address".into())),
                InstKind::Store { ty, val, ptr } => {
                    if !is_addr(ptr) {
                        out.push(here("store pointer is not an address".into()));
                    }
                    if let Operand::Reg(r) = val {
                        if let Some(t) = types.get(r) {
                            if t.size() != ty.size() {
                                out.push(here(format!("stored %{r} has type {t:?}, expected {ty:?}")));
                            }
                        }
                    }
                    if !ty.is_scalar() {
                        out.push(here("store of non-scalar type".into()));
                    }
                }
                InstKind::Gep { base, .. } if !is_addr(base) => out.push(here("gep base is not an address".into())),
                InstKind::Call { callee, args } => {
                    if let Some(intr) = Intrinsic::parse(callee) {
                        if !intr.arity().contains(&args.len()) {
                            out.push(here(format!("intrinsic @{callee} called with {} arguments", args.len())));
                        } else if let Some(meta) = intr.meta_id(args) {
                            if !m.dfl.contains_key(&meta) {
                                out.push(here(format!("unknown dfl record {meta}")));
                            }
                        } else if matches!(intr, Intrinsic::Load(_) | Intrinsic::Store(_)) {
                            out.push(here("dfl record operand must be a constant".into()));
                        }
                        if inst.result.is_some() && intr.result_type(args, &types).is_none() {
                            out.push(here(format!("@{callee} produces no value")));
                        }
                    } else {
                        match m.function(callee) {
                            None => out.push(here(format!("call to unknown function @{callee}"))),
                            Some(g) if g.params.len() != args.len() => out.push(here(format!(
                                "@{callee} takes {} arguments, got {}",
                                g.params.len(),
                                args.len()
                            ))),
                            _ => {}
                        }
                    }
                }
                _ => {}
            }
        }
        let t = &b.term;
        if let Some(op) = t.operand() {
            check_use(op, bi, usize::MAX, out, t.id);
        }
        match &t.kind {
            TermKind::CondBr { cond: Operand::Reg(r), .. } => {
                if let Some(ty) = types.get(r) {
                    if *ty != Type::I1 {
                        out.push(diag(&f.name, &b.label, Some(t.id), format!("branch condition %{r} is not i1")));
                    }
                }
            }
            TermKind::Ret(Operand::Reg(r)) => {
                if let Some(ty) = types.get(r) {
                    if ty.size() != f.ret.size() {
                        out.push(diag(&f.name, &b.label, Some(t.id), format!("returned %{r} has type {ty:?}, function returns {:?}", f.ret)));
                    }
                }
            }
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_module;

    #[test]
    fn use_before_definition() {
        let m = parse_module("func @f() -> i64 {\nentry:\n  %y = add i64 %x, 1\n  %x = add i64 1, 2\n  ret %y\n}").unwrap();
        let d = validate(&m);
        assert_eq!(d.len(), 1, "{d:?}");
    }

    #[test]
    fn phi_label_not_a_predecessor() {
        let m = parse_module(
            "func @f(%c: i1) -> i64 {\nentry:\n  condbr %c, a, b\na:\n  br j\nb:\n  br j\nj:\n  %v = phi i64 [a: 1, entry: 2]\n  ret %v\n}",
        )
        .unwrap();
        assert_eq!(validate(&m).len(), 1);
    }

    #[test]
    fn well_formed_diamond() {
        let m = parse_module(
            "func @f(%c: i1) -> i64 {\nentry:\n  condbr %c, a, b\na:\n  br j\nb:\n  br j\nj:\n  %v = phi i64 [a: 1, b: 2]\n  ret %v\n}",
        )
        .unwrap();
        assert!(validate(&m).is_empty());
    }

    #[test]
    fn non_bool_condition() {
        let m = parse_module("func @f(%c: i64) -> i64 {\nentry:\n  condbr %c, a, a\na:\n  ret 0\n}").unwrap();
        assert_eq!(validate(&m).len(), 1);
    }
}
