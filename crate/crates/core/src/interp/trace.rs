//! Execution traces and abort reasons.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dfl::SiteId;
use crate::ir::InstId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AccessKind {
    Read,
    Write,
}

/// One observable memory access.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemEvent {
    pub kind: AccessKind,
    pub addr: u64,
    pub inst: InstId,
}

impl MemEvent {
    pub fn block(&self, lambda: u64) -> u64 {
        self.addr / lambda
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Abort {
    Trap { inst: InstId },
    DivByZero { inst: InstId },
    OutOfBounds { inst: InstId, addr: u64 },
    DoubleFree { inst: InstId, addr: u64 },
    InvalidFree { inst: InstId, addr: u64 },
    /// A non-null ct_load/ct_store pointer matched no metadata portion.
    DflMiss { inst: InstId, addr: u64 },
    /// The striding pointer matched the target twice in one call.
    MatchTwice { inst: InstId },
    BadCallTarget { inst: InstId, addr: u64 },
    MissingInput { what: String },
    Budget,
    StackOverflow,
    Malformed(String),
}

impl Abort {
    /// Distinct process-style code per abort class.
    pub fn code(&self) -> i32 {
        match self {
            Abort::Trap { .. } => 10,
            Abort::DivByZero { .. } => 11,
            Abort::OutOfBounds { .. } => 12,
            Abort::DoubleFree { .. } => 13,
            Abort::InvalidFree { .. } => 14,
            Abort::DflMiss { .. } => 15,
            Abort::MatchTwice { .. } => 16,
            Abort::BadCallTarget { .. } => 17,
            Abort::MissingInput { .. } => 18,
            Abort::Budget => 19,
            Abort::StackOverflow => 20,
            Abort::Malformed(_) => 21,
        }
    }

    pub fn inst(&self) -> Option<InstId> {
        match self {
            Abort::Trap { inst }
            | Abort::DivByZero { inst }
            | Abort::OutOfBounds { inst, .. }
            | Abort::DoubleFree { inst, .. }
            | Abort::InvalidFree { inst, .. }
            | Abort::DflMiss { inst, .. }
            | Abort::MatchTwice { inst }
            | Abort::BadCallTarget { inst, .. } => Some(*inst),
            _ => None,
        }
    }
}

impl fmt::Display for Abort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Abort::Trap { inst } => write!(f, "trap at {inst}"),
            Abort::DivByZero { inst } => write!(f, "division by zero at {inst}"),
            Abort::OutOfBounds { inst, addr } => write!(f, "out-of-bounds access {addr:#x} at {inst}"),
            Abort::DoubleFree { inst, addr } => write!(f, "double free of {addr:#x} at {inst}"),
            Abort::InvalidFree { inst, addr } => write!(f, "invalid free of {addr:#x} at {inst}"),
            Abort::DflMiss { inst, addr } => write!(f, "{addr:#x} outside every dfl portion at {inst}"),
            Abort::MatchTwice { inst } => write!(f, "stride matched twice at {inst}"),
            Abort::BadCallTarget { inst, addr } => write!(f, "indirect call to {addr:#x} at {inst}"),
            Abort::MissingInput { what } => write!(f, "missing input {what}"),
            Abort::Budget => write!(f, "instruction budget exceeded"),
            Abort::StackOverflow => write!(f, "call depth exceeded"),
            Abort::Malformed(m) => write!(f, "malformed program: {m}"),
        }
    }
}

/// A program-level memory access with its resolved target object.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Access {
    pub inst: InstId,
    pub kind: AccessKind,
    pub addr: u64,
    pub size: u64,
    /// Allocation site and payload offset of the target, if mapped.
    pub target: Option<(SiteId, u64)>,
    pub taken: bool,
}

/// Breaches of the decoy-path invariants, observed while taken = 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DecoyViolation {
    StoreChangedMemory { inst: InstId, addr: u64 },
    RawAccess { inst: InstId, addr: u64 },
    Abort(Abort),
}

/// Dynamic taint sinks hit during one run.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TaintObs {
    pub branches: BTreeSet<InstId>,
    pub reads: BTreeSet<InstId>,
    pub writes: BTreeSet<InstId>,
    pub divrem: BTreeSet<InstId>,
    /// Functions in which at least one sink fired.
    pub functions: BTreeSet<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockVisit {
    /// Distinct per call frame.
    pub frame: u32,
    pub func: u32,
    pub block: u32,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub lambda: u64,
    pub insts: Vec<InstId>,
    pub events: Vec<MemEvent>,
    pub output: Option<Result<u64, Abort>>,
    /// Final bytes of every global, by name.
    pub globals: BTreeMap<String, Vec<u8>>,
    pub accesses: Vec<Access>,
    /// Indirect call sites and the function they reached.
    pub calls: Vec<(InstId, String)>,
    pub blocks: Vec<BlockVisit>,
    pub decoy: Vec<DecoyViolation>,
    pub taint: TaintObs,
    /// ct_load/ct_store block touches, total and per instruction.
    pub touches: u64,
    pub touches_by_inst: BTreeMap<InstId, u64>,
    /// Abstract striding cost (touches weighted by handler kind).
    pub cost: f64,
}

impl Trace {
    pub fn result(&self) -> Result<u64, Abort> {
        self.output.clone().unwrap_or(Err(Abort::Malformed("not run".into())))
    }

    /// Memory events quantized at granularity `lambda`.
    pub fn quantized(&self, lambda: u64) -> Vec<(AccessKind, u64)> {
        self.events.iter().map(|e| (e.kind, e.block(lambda))).collect()
    }
}
