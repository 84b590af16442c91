//! Closing a taint report over the region tree and the call graph.
//!
//! A sensitive region makes every region nested in it sensitive, and every
//! function called from inside it is linearized whole: its accesses can run
//! with a false predicate, so all of them need decoy-safe treatment.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::TaintReport;
use crate::intrinsics::Intrinsic;
use crate::ir::{InstId, InstKind, Module};
use crate::normalize::{RegionKind, RegionTree, Regions};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SensitiveSet {
    /// Branch regions to linearize, by the id of their conditional branch.
    pub branches: BTreeSet<InstId>,
    /// Loops to linearize, by latch id.
    pub loops: BTreeSet<InstId>,
    /// Functions reached from a sensitive region: every region and access in
    /// them is treated, under the caller's predicate.
    pub whole: BTreeSet<String>,
    pub accesses: BTreeSet<InstId>,
    pub divrem: BTreeSet<InstId>,
    /// Every function the transformation touches.
    pub functions: BTreeSet<String>,
}

impl SensitiveSet {
    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    /// Whether region `idx` of `tree` is linearized.
    pub fn region(&self, tree: &RegionTree, idx: usize) -> bool {
        let r = &tree.regions[idx];
        match (r.kind, r.id) {
            (RegionKind::Branch, Some(id)) => self.branches.contains(&id),
            (RegionKind::Loop, Some(id)) => self.loops.contains(&id),
            _ => false,
        }
    }
}

/// Blocks whose instructions may run under a false predicate.
fn interior(tree: &RegionTree, idx: usize) -> BTreeSet<String> {
    let r = &tree.regions[idx];
    let mut b = r.blocks.clone();
    if r.kind == RegionKind::Branch {
        b.remove(&r.entry);
    }
    b
}

pub fn close_sensitivity(m: &Module, report: &TaintReport, trees: &Regions) -> SensitiveSet {
    let mut s = SensitiveSet::default();
    let mut marked: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    for (name, t) in trees {
        for (i, r) in t.regions.iter().enumerate() {
            let Some(id) = r.id else { continue };
            let hit = match r.kind {
                RegionKind::Branch => report.branches.contains(&id),
                RegionKind::Loop => report.loops.contains(&id),
                RegionKind::Linear => false,
            };
            if hit {
                marked.entry(name.clone()).or_default().insert(i);
            }
        }
    }
    loop {
        let mut changed = false;
        for (name, t) in trees {
            let whole = s.whole.contains(name);
            let mut regions: BTreeSet<usize> = marked.get(name).cloned().unwrap_or_default();
            if whole {
                regions.extend(1..t.regions.len());
            }
            let seeds: Vec<usize> = regions.iter().copied().collect();
            for i in seeds {
                regions.extend(t.subtree(i));
            }
            let mut blocks: BTreeSet<String> = BTreeSet::new();
            if whole {
                blocks.extend(t.root().blocks.iter().cloned());
            }
            for &i in &regions {
                blocks.extend(interior(t, i));
            }
            if let Some(f) = m.function(name) {
                for b in f.blocks.iter().filter(|b| blocks.contains(&b.label)) {
                    for i in &b.insts {
                        match &i.kind {
                            InstKind::Call { callee, .. } if Intrinsic::parse(callee).is_none() => {
                                changed |= s.whole.insert(callee.clone());
                            }
                            InstKind::Load { .. } | InstKind::Store { .. } => {
                                s.accesses.insert(i.id);
                            }
                            InstKind::Bin { op, .. } if op.is_div_rem() => {
                                s.divrem.insert(i.id);
                            }
                            _ => {}
                        }
                    }
                }
            }
            let prev = marked.get(name).map(|r| r.len()).unwrap_or(0);
            if regions.len() != prev {
                changed = true;
            }
            marked.insert(name.clone(), regions);
        }
        if !changed {
            break;
        }
    }
    for (name, regions) in &marked {
        let t = &trees[name];
        for &i in regions {
            let r = &t.regions[i];
            match (r.kind, r.id) {
                (RegionKind::Branch, Some(id)) => {
                    s.branches.insert(id);
                }
                (RegionKind::Loop, Some(id)) => {
                    s.loops.insert(id);
                }
                _ => {}
            }
        }
        if !regions.is_empty() {
            s.functions.insert(name.clone());
        }
    }
    s.accesses.extend(report.reads.iter().copied());
    s.accesses.extend(report.writes.iter().copied());
    s.divrem.extend(report.divrem.iter().copied());
    s.functions.extend(s.whole.iter().cloned());
    for f in &m.functions {
        if f.insts().any(|i| s.accesses.contains(&i.id) || s.divrem.contains(&i.id)) {
            s.functions.insert(f.name.clone());
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::{ExecInput, InterpConfig};
    use crate::ir::parse_module;
    use crate::normalize::normalize_module;
    use crate::profiler::taint_profile;
    use crate::pta::TargetMap;

    const SRC: &str = "global @t : [8 x i64]
func @h(%x: i64) -> i64 {
e:
  %c = icmp lt %x, 4
  condbr %c, a, b
a:
  %p = gep [8 x i64] @t, 0, %x
  store i64 1, %p
  br b
b:
  %q = div i64 10, %x
  ret %q
}
func @main() -> i64 {
e:
  %s = secret i64 0
  %m = and i64 %s, 7
  %c = icmp eq %m, 3
  condbr %c, a, b
a:
  %r = call @h(2)
  br b
b:
  %v = phi i64 [e: 0, a: %r]
  ret %v
}";

    #[test]
    fn callee_of_a_sensitive_arm_is_whole() {
        let (m, trees) = normalize_module(&parse_module(SRC).unwrap(), &TargetMap::new()).unwrap();
        let suite: Vec<ExecInput> = (0..8).map(|s| ExecInput::new(vec![], vec![s])).collect();
        let r = taint_profile(&m, &trees, &suite, &InterpConfig::default());
        let s = close_sensitivity(&m, &r, &trees);
        assert_eq!(s.whole, BTreeSet::from(["h".to_string()]));
        assert_eq!(s.branches.len(), 2);
        let h = m.function("h").unwrap();
        for i in h.insts() {
            if matches!(i.kind, InstKind::Store { .. }) {
                assert!(s.accesses.contains(&i.id));
            }
            if matches!(i.kind, InstKind::Bin { op, .. } if op.is_div_rem()) {
                assert!(s.divrem.contains(&i.id));
            }
        }
        assert_eq!(s.functions.len(), 2);
    }

    #[test]
    fn empty_report_closes_to_nothing() {
        let (m, trees) = normalize_module(&parse_module(SRC).unwrap(), &TargetMap::new()).unwrap();
        assert!(close_sensitivity(&m, &TaintReport::default(), &trees).is_empty());
    }
}
