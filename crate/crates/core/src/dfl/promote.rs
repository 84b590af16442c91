//! Stack promotion: allocas that sensitive accesses may reference become
//! globals, so striding them needs no run-time instance list.
//!
//! Only entry-block allocas of functions off every call cycle qualify; at
//! most one activation of such a function is live at a time.

use std::collections::{BTreeMap, BTreeSet};

use super::SiteId;
use crate::ir::{GlobalDef, InstKind, Module, Operand, Type};
use crate::pta::CallGraph;

/// Returns the rewritten module and the old → new site of each promoted object.
pub fn promote_stack_objects(m: &Module, cg: &CallGraph, sites: &BTreeSet<SiteId>) -> (Module, BTreeMap<SiteId, SiteId>) {
    let recursive = cg.recursive();
    let mut out = m.clone();
    let mut moved = BTreeMap::new();
    let mut taken: BTreeSet<String> = m.globals.iter().map(|g| g.name.clone()).collect();
    taken.extend(m.functions.iter().map(|f| f.name.clone()));
    let mut globals = Vec::new();
    for f in &mut out.functions {
        if recursive.contains(&f.name) || f.blocks.is_empty() {
            continue;
        }
        let func = f.name.clone();
        for i in &mut f.blocks[0].insts {
            let InstKind::Alloca { ty, .. } = &i.kind else { continue };
            let Some(reg) = i.result.clone() else { continue };
            let old = SiteId::Stack { func: func.clone(), reg: reg.clone() };
            if !sites.contains(&old) {
                continue;
            }
            let mut name = format!("{func}.{reg}");
            let mut k = 1;
            while taken.contains(&name) {
                name = format!("{func}.{reg}.{k}");
                k += 1;
            }
            taken.insert(name.clone());
            globals.push(GlobalDef { name: name.clone(), ty: ty.clone(), init: None });
            i.kind = InstKind::Gep { ty: Type::I8, base: Operand::Global(name.clone()), indices: vec![Operand::Const(0)] };
            moved.insert(old, SiteId::Global(name));
        }
    }
    out.globals.extend(globals);
    (out, moved)
}
