//! Data-flow linearization.
//!
//! Every secret-sensitive load or store is rewritten into a `ct.load` /
//! `ct.store` intrinsic carrying a [`DflAccessMetadata`] record: the
//! object portions the access may touch, resolved at transform time from
//! the points-to solution. At run time the intrinsic strides every
//! λ-block of every live instance of every listed allocation site.

pub mod handler;
pub mod interpose;
pub mod metadata;
pub mod natural;
pub mod promote;
pub mod runtime;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use handler::{choose_handler, HandlerKind};
pub use interpose::{allocation_sites, interpose_allocations};
pub use metadata::{build_metadata, dump_metadata, MetadataError};
pub use natural::optimize_natural_striding;
pub use promote::promote_stack_objects;

pub const HEADER_SIZE: u64 = 32;
pub const MAGIC: u64 = 0xD1F1_D1F1_C0C0_C0C0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StorageClass {
    Stack,
    Heap,
    Global,
}

/// An allocation site: the unit the points-to analysis abstracts objects by.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SiteId {
    Global(String),
    Stack { func: String, reg: String },
    Heap { func: String, reg: String },
}

impl SiteId {
    pub fn class(&self) -> StorageClass {
        match self {
            SiteId::Global(_) => StorageClass::Global,
            SiteId::Stack { .. } => StorageClass::Stack,
            SiteId::Heap { .. } => StorageClass::Heap,
        }
    }
}

impl fmt::Display for SiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SiteId::Global(g) => write!(f, "global @{g}"),
            SiteId::Stack { func, reg } => write!(f, "stack {func}::{reg}"),
            SiteId::Heap { func, reg } => write!(f, "heap {func}::{reg}"),
        }
    }
}

/// One object portion to stride.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DflEntry {
    pub site: SiteId,
    pub offset: u64,
    pub len: u64,
    pub stride: u64,
    pub handler: HandlerKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DflAccessMetadata {
    pub lambda: u64,
    /// Touch only the block of the current iteration (see [`natural`]).
    pub natural: bool,
    pub entries: Vec<DflEntry>,
}

impl DflAccessMetadata {
    /// Number of λ-blocks the portion `[offset, offset+len)` intersects.
    pub fn blocks_of(offset: u64, len: u64, lambda: u64) -> u64 {
        if len == 0 {
            return 0;
        }
        (offset + len - 1) / lambda - offset / lambda + 1
    }

    /// Static touch count assuming one live instance per site.
    pub fn touches_per_instance(&self) -> u64 {
        if self.natural {
            return 1;
        }
        self.entries
            .iter()
            .map(|e| Self::blocks_of(e.offset, e.len, self.lambda))
            .sum()
    }
}
