//! Context cloning under sensitive call-graph subtrees.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::CallGraph;
use crate::intrinsics::Intrinsic;
use crate::ir::{Function, IdGen, InstId, InstKind, Module, Operand};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CloneInfo {
    pub name: String,
    /// Functions on the call path from the sensitive root, root first.
    pub context: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CloneMap {
    pub clones: BTreeMap<String, Vec<CloneInfo>>,
    /// Clone instruction id → original instruction id.
    pub origin: BTreeMap<InstId, InstId>,
}

impl CloneMap {
    pub fn is_empty(&self) -> bool {
        self.clones.is_empty()
    }

    pub fn original(&self, id: InstId) -> InstId {
        self.origin.get(&id).copied().unwrap_or(id)
    }

    /// Original function a (possibly cloned) function stems from.
    pub fn original_function<'a>(&'a self, name: &'a str) -> &'a str {
        self.clones
            .iter()
            .find(|(_, cs)| cs.iter().any(|c| c.name == name))
            .map(|(o, _)| o.as_str())
            .unwrap_or(name)
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum CloneError {
    #[error("@{function} is recursive inside a sensitive call tree")]
    Recursion { function: String },
}

/// Gives every calling context under a sensitive root its own copy of the
/// callee. Roots are sensitive functions without a sensitive caller.
/// Functions no longer reachable from the entry are dropped.
pub fn aggressive_clone(m: &Module, sensitive: &BTreeSet<String>, cg: &CallGraph) -> Result<(Module, CloneMap), CloneError> {
    let mut out = m.clone();
    let mut map = CloneMap::default();
    let roots: Vec<String> = sensitive
        .iter()
        .filter(|f| m.function(f).is_some() && cg.callers(f).is_disjoint(sensitive))
        .cloned()
        .collect();
    if roots.is_empty() {
        return Ok((out, map));
    }
    let mut ids = IdGen::for_module(m);
    let mut counters: BTreeMap<String, usize> = BTreeMap::new();
    for r in &roots {
        visit(m, &mut out, &mut map, &mut ids, &mut counters, r, vec![r.clone()])?;
    }
    drop_unreachable(&mut out);
    map.clones.retain(|_, cs| {
        cs.retain(|c| out.function(&c.name).is_some());
        !cs.is_empty()
    });
    Ok((out, map))
}

fn visit(
    m: &Module,
    out: &mut Module,
    map: &mut CloneMap,
    ids: &mut IdGen,
    counters: &mut BTreeMap<String, usize>,
    current: &str,
    path: Vec<String>,
) -> Result<(), CloneError> {
    let fi = out.functions.iter().position(|f| f.name == current).unwrap();
    let mut sites = Vec::new();
    for (bi, b) in out.functions[fi].blocks.iter().enumerate() {
        for (ii, i) in b.insts.iter().enumerate() {
            if let InstKind::Call { callee, .. } = &i.kind {
                if Intrinsic::parse(callee).is_none() && m.function(callee).is_some() {
                    sites.push((bi, ii, callee.clone()));
                }
            }
        }
    }
    for (bi, ii, callee) in sites {
        if path.contains(&callee) {
            return Err(CloneError::Recursion { function: callee });
        }
        let k = counters.entry(callee.clone()).or_insert(0);
        *k += 1;
        let name = format!("{callee}#{k}");
        let clone = fresh_copy(m.function(&callee).unwrap(), &name, ids, &mut map.origin);
        out.functions.push(clone);
        if let InstKind::Call { callee: c, .. } = &mut out.functions[fi].blocks[bi].insts[ii].kind {
            *c = name.clone();
        }
        map.clones.entry(callee.clone()).or_default().push(CloneInfo { name: name.clone(), context: path.clone() });
        let mut next = path.clone();
        next.push(callee);
        visit(m, out, map, ids, counters, &name, next)?;
    }
    Ok(())
}

fn fresh_copy(f: &Function, name: &str, ids: &mut IdGen, origin: &mut BTreeMap<InstId, InstId>) -> Function {
    let mut g = f.clone();
    g.name = name.to_string();
    for b in &mut g.blocks {
        for i in &mut b.insts {
            let id = ids.next();
            origin.insert(id, i.id);
            i.id = id;
        }
        let id = ids.next();
        origin.insert(id, b.term.id);
        b.term.id = id;
    }
    g
}

fn drop_unreachable(m: &mut Module) {
    let cg = CallGraph::build(m);
    let mut keep = cg.reachable_from([&m.entry]);
    for f in &m.functions {
        for i in f.insts() {
            for o in i.operands() {
                if let Operand::Global(g) = o {
                    if m.function(g).is_some() {
                        keep.extend(cg.reachable_from([g]));
                    }
                }
            }
        }
    }
    m.functions.retain(|f| keep.contains(&f.name));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::{interpret, ExecInput};
    use crate::ir::parse_module;

    const TWO: &str = "func @g(%x: i64) -> i64 {\ne:\n  %r = add i64 %x, 1\n  ret %r\n}\nfunc @main(%a: i64) -> i64 {\ne:\n  %u = call @g(%a)\n  %v = call @g(%u)\n  ret %v\n}";

    #[test]
    fn two_call_sites_give_two_clones() {
        let m = parse_module(TWO).unwrap();
        let s = BTreeSet::from(["main".to_string()]);
        let (out, map) = aggressive_clone(&m, &s, &CallGraph::build(&m)).unwrap();
        let names: Vec<&str> = out.functions.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(names, vec!["main", "g#1", "g#2"]);
        assert_eq!(map.clones["g"].len(), 2);
        assert!(crate::ir::validate(&out).is_empty());
        for a in 0..5 {
            let i = ExecInput::new(vec![a], vec![]);
            assert_eq!(interpret(&m, &i, 64).result(), interpret(&out, &i, 64).result());
        }
    }

    #[test]
    fn nothing_sensitive_means_no_change() {
        let m = parse_module(TWO).unwrap();
        let (out, map) = aggressive_clone(&m, &BTreeSet::new(), &CallGraph::build(&m)).unwrap();
        assert_eq!(out, m);
        assert!(map.is_empty());
    }

    #[test]
    fn recursion_under_a_root_is_rejected() {
        let m = parse_module("func @g(%x: i64) -> i64 {\ne:\n  %r = call @g(%x)\n  ret %r\n}\nfunc @main() -> i64 {\ne:\n  %r = call @g(1)\n  ret %r\n}").unwrap();
        let s = BTreeSet::from(["main".to_string()]);
        assert!(matches!(aggressive_clone(&m, &s, &CallGraph::build(&m)), Err(CloneError::Recursion { .. })));
    }
}
