//! Runtime intrinsics emitted by the hardening passes.
//!
//! They appear in the IR as ordinary direct calls to reserved `ct.*` names:
//!
//! - `ct.sel.<scheme>(t, a, b)`: constant-time selection, `t ? a : b`.
//! - `ct.load.<ty>(p, meta[, p_raw])`: oblivious load striding DFL metadata `meta`.
//! - `ct.store.<ty>(p, v, meta[, p_raw])`: oblivious store.
//! - `ct.hook(t)`: records the current taken predicate for the verifier.
//!
//! The optional `p_raw` operand carries the unselected address for accesses
//! marked as naturally striding.

use std::collections::HashMap;

use crate::cfl::SelectScheme;
use crate::ir::{Operand, Type};

pub const PREFIX: &str = "ct.";
/// Global cell exposing the caller's taken predicate to linearized callees.
pub const TAKEN_CELL: &str = "ct.taken";
/// Prefix of per-loop persisted iteration bounds.
pub const BOUND_CELL_PREFIX: &str = "ct.k.";

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Intrinsic {
    Select(SelectScheme),
    Load(Type),
    Store(Type),
    Hook,
}

fn scalar_from_name(s: &str) -> Option<Type> {
    Some(match s {
        "i1" => Type::I1,
        "i8" => Type::I8,
        "i32" => Type::I32,
        "i64" => Type::I64,
        "addr" => Type::Addr,
        _ => return None,
    })
}

pub fn scalar_name(t: &Type) -> &'static str {
    match t {
        Type::I1 => "i1",
        Type::I8 => "i8",
        Type::I32 => "i32",
        Type::I64 => "i64",
        _ => "addr",
    }
}

impl Intrinsic {
    pub fn parse(name: &str) -> Option<Self> {
        let rest = name.strip_prefix(PREFIX)?;
        if rest == "hook" {
            return Some(Intrinsic::Hook);
        }
        if let Some(n) = rest.strip_prefix("sel.") {
            return SelectScheme::from_index(n.parse().ok()?).map(Intrinsic::Select);
        }
        if let Some(t) = rest.strip_prefix("load.") {
            return scalar_from_name(t).map(Intrinsic::Load);
        }
        if let Some(t) = rest.strip_prefix("store.") {
            return scalar_from_name(t).map(Intrinsic::Store);
        }
        None
    }

    pub fn name(&self) -> String {
        match self {
            Intrinsic::Select(s) => format!("{PREFIX}sel.{}", s.index()),
            Intrinsic::Load(t) => format!("{PREFIX}load.{}", scalar_name(t)),
            Intrinsic::Store(t) => format!("{PREFIX}store.{}", scalar_name(t)),
            Intrinsic::Hook => format!("{PREFIX}hook"),
        }
    }

    pub fn arity(&self) -> std::ops::RangeInclusive<usize> {
        match self {
            Intrinsic::Select(_) => 3..=3,
            Intrinsic::Load(_) => 2..=3,
            Intrinsic::Store(_) => 3..=4,
            Intrinsic::Hook => 1..=1,
        }
    }

    pub fn result_type(&self, args: &[Operand], types: &HashMap<String, Type>) -> Option<Type> {
        match self {
            Intrinsic::Select(_) => {
                let ty = args[1..]
                    .iter()
                    .find_map(|a| match a {
                        Operand::Reg(r) => types.get(r).cloned(),
                        Operand::Global(_) => Some(Type::Addr),
                        Operand::Const(_) => None,
                    })
                    .unwrap_or(Type::I64);
                Some(ty)
            }
            Intrinsic::Load(t) => Some(t.clone()),
            Intrinsic::Store(_) | Intrinsic::Hook => None,
        }
    }

    /// Metadata id operand of a load/store intrinsic.
    pub fn meta_id(&self, args: &[Operand]) -> Option<u32> {
        let pos = match self {
            Intrinsic::Load(_) => 1,
            Intrinsic::Store(_) => 2,
            _ => return None,
        };
        match args.get(pos) {
            Some(Operand::Const(c)) => Some(*c as u32),
            _ => None,
        }
    }
}

pub fn is_reserved(name: &str) -> bool {
    name.starts_with(PREFIX)
}
