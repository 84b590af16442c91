//! Structural normalization: indirect-call promotion, single exits, and
//! single-entry/single-exit regions.

pub mod exits;
pub mod icall;
pub mod regions;

use std::collections::BTreeMap;

use thiserror::Error;

pub use exits::unify_exits;
pub use icall::promote_indirect_calls;
pub use regions::{normalize_regions, Region, RegionKind, RegionTree};

use crate::ir::{IdGen, InstId, Module};
use crate::pta::TargetMap;

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum NormalizeError {
    #[error("@{function}: control flow is irreducible")]
    Irreducible { function: String },
    #[error("@{function}: block {block} is not single-entry/single-exit: {why}")]
    NotSese { function: String, block: String, why: String },
    #[error("@{function}: arms of the branch at {block} overlap")]
    Unstructured { function: String, block: String },
    #[error("@{function}: indirect call {inst} has no possible targets")]
    NoTargets { function: String, inst: InstId },
    #[error("@{function}: normalization did not reach a fixpoint")]
    NoFixpoint { function: String },
    #[error("normalized module is malformed: {0}")]
    Invalid(String),
}

/// Region trees keyed by function name.
pub type Regions = BTreeMap<String, RegionTree>;

/// Normalizes every function of a module without indirect calls left.
pub fn normalize_functions(m: &Module, ids: &mut IdGen) -> Result<(Module, Regions), NormalizeError> {
    let mut out = m.clone();
    let mut trees = Regions::new();
    for fi in 0..m.functions.len() {
        let g = unify_exits(&out.functions[fi], ids);
        let (g, t) = normalize_regions(&out, &g, ids)?;
        trees.insert(g.name.clone(), t);
        out.functions[fi] = g;
    }
    let diags = crate::ir::validate(&out);
    if let Some(d) = diags.first() {
        return Err(NormalizeError::Invalid(d.to_string()));
    }
    Ok((out, trees))
}

/// Promotes indirect calls against `targets`, then normalizes.
pub fn normalize_module(m: &Module, targets: &TargetMap) -> Result<(Module, Regions), NormalizeError> {
    let mut ids = IdGen::for_module(m);
    let promoted = promote_indirect_calls(m, targets, &mut ids)?;
    normalize_functions(&promoted, &mut ids)
}

/// Region trees of an already normalized module.
pub fn region_trees(m: &Module) -> Result<Regions, NormalizeError> {
    m.functions.iter().map(|f| Ok((f.name.clone(), RegionTree::build(f)?))).collect()
}
