//! Interposition on allocations: objects of the listed sites carry the
//! 32-byte in-band header and join their site's live-instance list.

use std::collections::BTreeSet;

use super::SiteId;
use crate::ir::{InstKind, Module};

/// Marks allocations of `sites` as DFL objects. Every `heapfree` takes the
/// magic-checking path, which also handles plain heap chunks.
pub fn interpose_allocations(m: &Module, sites: &BTreeSet<SiteId>) -> Module {
    let mut out = m.clone();
    let any_heap = sites.iter().any(|s| matches!(s, SiteId::Heap { .. }));
    for f in &mut out.functions {
        let name = f.name.clone();
        for b in &mut f.blocks {
            for i in &mut b.insts {
                let reg = i.result.clone().unwrap_or_default();
                match &mut i.kind {
                    InstKind::Alloca { dfl, .. } => {
                        if sites.contains(&SiteId::Stack { func: name.clone(), reg }) {
                            *dfl = true;
                        }
                    }
                    InstKind::HeapAlloc { dfl, .. } => {
                        if sites.contains(&SiteId::Heap { func: name.clone(), reg }) {
                            *dfl = true;
                        }
                    }
                    InstKind::HeapFree { dfl, .. } => *dfl |= any_heap,
                    _ => {}
                }
            }
        }
    }
    out
}

/// Every stack and heap allocation site of the module.
pub fn allocation_sites(m: &Module) -> BTreeSet<SiteId> {
    let mut s = BTreeSet::new();
    for f in &m.functions {
        for i in f.insts() {
            let reg = i.result.clone().unwrap_or_default();
            match i.kind {
                InstKind::Alloca { .. } => {
                    s.insert(SiteId::Stack { func: f.name.clone(), reg });
                }
                InstKind::HeapAlloc { .. } => {
                    s.insert(SiteId::Heap { func: f.name.clone(), reg });
                }
                _ => {}
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::{interpret, ExecInput};
    use crate::ir::parse_module;

    const MIXED: &str = "func @main() -> i64 {\ne:\n  %a = heapalloc i64\n  %b = heapalloc i64\n  store i64 5, %a\n  store i64 6, %b\n  %x = load i64, %a\n  %y = load i64, %b\n  heapfree %a\n  heapfree %b\n  %s = add i64 %x, %y\n  ret %s\n}";

    #[test]
    fn mixed_dfl_and_plain_frees_both_succeed() {
        let m = parse_module(MIXED).unwrap();
        let only_a = BTreeSet::from([SiteId::Heap { func: "main".into(), reg: "a".into() }]);
        let h = interpose_allocations(&m, &only_a);
        let kinds: Vec<bool> = h.functions[0].insts().filter_map(|i| match i.kind {
            InstKind::HeapAlloc { dfl, .. } => Some(dfl),
            _ => None,
        }).collect();
        assert_eq!(kinds, vec![true, false]);
        let t = interpret(&h, &ExecInput::default(), 64);
        assert_eq!(t.result(), Ok(11));
    }

    #[test]
    fn all_sites_are_listed() {
        let m = parse_module(MIXED).unwrap();
        assert_eq!(allocation_sites(&m).len(), 2);
        let h = interpose_allocations(&m, &allocation_sites(&m));
        assert_eq!(interpret(&h, &ExecInput::default(), 64).result(), Ok(11));
    }
}
