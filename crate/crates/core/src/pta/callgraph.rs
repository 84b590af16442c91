//! Call graph over direct calls, with indirect edges from a [`TargetMap`].

use std::collections::{BTreeMap, BTreeSet};

use super::TargetMap;
use crate::intrinsics::Intrinsic;
use crate::ir::{InstId, InstKind, Module};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CallGraph {
    pub edges: BTreeMap<String, BTreeSet<String>>,
    /// (call instruction, caller, callee), in program order.
    pub sites: Vec<(InstId, String, String)>,
}

impl CallGraph {
    pub fn build(m: &Module) -> CallGraph {
        Self::with_targets(m, &TargetMap::new())
    }

    pub fn with_targets(m: &Module, targets: &TargetMap) -> CallGraph {
        let mut g = CallGraph::default();
        for f in &m.functions {
            g.edges.entry(f.name.clone()).or_default();
            for i in f.insts() {
                let callees: Vec<String> = match &i.kind {
                    InstKind::Call { callee, .. } if Intrinsic::parse(callee).is_none() => vec![callee.clone()],
                    InstKind::ICall { .. } => targets.get(&i.id).map(|s| s.iter().cloned().collect()).unwrap_or_default(),
                    _ => vec![],
                };
                for c in callees {
                    g.edges.get_mut(&f.name).unwrap().insert(c.clone());
                    g.sites.push((i.id, f.name.clone(), c));
                }
            }
        }
        g
    }

    pub fn callees(&self, f: &str) -> impl Iterator<Item = &String> {
        self.edges.get(f).into_iter().flatten()
    }

    pub fn callers(&self, f: &str) -> BTreeSet<String> {
        self.edges.iter().filter(|(_, cs)| cs.contains(f)).map(|(c, _)| c.clone()).collect()
    }

    /// Functions reachable from `roots`, roots included.
    pub fn reachable_from<'a>(&self, roots: impl IntoIterator<Item = &'a String>) -> BTreeSet<String> {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<String> = roots.into_iter().cloned().collect();
        while let Some(f) = stack.pop() {
            if seen.insert(f.clone()) {
                stack.extend(self.callees(&f).cloned());
            }
        }
        seen
    }

    /// Functions on a call cycle, self-loops included.
    pub fn recursive(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for f in self.edges.keys() {
            let from_callees = self.reachable_from(self.callees(f).collect::<Vec<_>>());
            if from_callees.contains(f) {
                out.insert(f.clone());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_module;

    #[test]
    fn self_recursion_is_detected() {
        let m = parse_module("func @g(%x: i64) -> i64 {\ne:\n  %r = call @g(%x)\n  ret %r\n}\nfunc @main() -> i64 {\ne:\n  %r = call @g(1)\n  ret %r\n}").unwrap();
        let cg = CallGraph::build(&m);
        assert_eq!(cg.recursive(), BTreeSet::from(["g".to_string()]));
        assert_eq!(cg.callers("g"), BTreeSet::from(["g".to_string(), "main".to_string()]));
    }
}
