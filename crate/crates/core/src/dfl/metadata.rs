//! Per-access DFL metadata from refined points-to portions.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::{choose_handler, DflAccessMetadata, DflEntry};
use crate::ir::{InstId, InstKind, Module};
use crate::pta::PointsToSolution;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetadataError {
    #[error("sensitive access {inst} in @{func} has an empty points-to set")]
    EmptyPointsTo { inst: InstId, func: String },
    #[error("instruction {0} is not a load or store")]
    NotAnAccess(InstId),
}

/// One record per access in `accesses`, entries in (site, offset) order.
pub fn build_metadata(
    m: &Module,
    pts: &PointsToSolution,
    accesses: &BTreeSet<InstId>,
    lambda: u64,
) -> Result<BTreeMap<InstId, DflAccessMetadata>, MetadataError> {
    let mut out = BTreeMap::new();
    for &id in accesses {
        let Some((fi, _, _)) = m.locate(id) else { continue };
        let func = &m.functions[fi].name;
        match m.inst(id).map(|i| &i.kind) {
            Some(InstKind::Load { .. } | InstKind::Store { .. }) => {}
            _ => return Err(MetadataError::NotAnAccess(id)),
        }
        let portions = pts.portions(id);
        if portions.is_empty() {
            return Err(MetadataError::EmptyPointsTo { inst: id, func: func.clone() });
        }
        let mut entries: Vec<DflEntry> = portions
            .iter()
            .map(|p| DflEntry {
                site: p.site.clone(),
                offset: p.offset,
                len: p.len,
                stride: p.stride,
                handler: choose_handler(p.len, lambda),
            })
            .collect();
        entries.sort();
        entries.dedup();
        out.insert(id, DflAccessMetadata { lambda, natural: false, entries });
    }
    Ok(out)
}

/// Text dump for golden comparisons: one record per line.
pub fn dump_metadata(meta: &BTreeMap<InstId, DflAccessMetadata>) -> String {
    let mut s = String::new();
    for (id, md) in meta {
        let es: Vec<String> = md
            .entries
            .iter()
            .map(|e| format!("{} +{} len {} stride {} {}", e.site, e.offset, e.len, e.stride, e.handler.name()))
            .collect();
        let nat = if md.natural { " natural" } else { "" };
        s.push_str(&format!("{id} lambda {}{nat}: [{}]\n", md.lambda, es.join(", ")));
    }
    s
}
