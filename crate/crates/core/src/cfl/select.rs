//! Constant-time selection schemes.

use serde::{Deserialize, Serialize};

/// Arithmetic form used to realize `taken ? a : b` without a branch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SelectScheme {
    /// Forced conditional move.
    CmovForced,
    /// Plain ternary select.
    Ternary,
    /// `b ^ ((a ^ b) & -taken)` with taken in {0,1}.
    MaskNeg,
    /// `(a & taken) | (b & !taken)` with taken in {0, all-ones}.
    MaskWide,
    /// `a * taken + b * (1 - taken)`.
    #[default]
    Multiply,
}

impl SelectScheme {
    pub const ALL: [SelectScheme; 5] = [
        SelectScheme::CmovForced,
        SelectScheme::Ternary,
        SelectScheme::MaskNeg,
        SelectScheme::MaskWide,
        SelectScheme::Multiply,
    ];

    pub fn from_index(i: u32) -> Option<Self> {
        Self::ALL.get((i as usize).checked_sub(1)?).copied()
    }

    pub fn index(self) -> u32 {
        Self::ALL.iter().position(|&s| s == self).unwrap() as u32 + 1
    }

    /// Machine encoding of a boolean predicate for this scheme.
    pub fn encode_taken(self, taken: bool) -> u64 {
        match (self, taken) {
            (_, false) => 0,
            (SelectScheme::MaskWide, true) => u64::MAX,
            (_, true) => 1,
        }
    }
}

/// Evaluates a selection with an already-encoded predicate word.
pub fn ct_select(scheme: SelectScheme, taken: u64, a: u64, b: u64) -> u64 {
    match scheme {
        SelectScheme::CmovForced | SelectScheme::Ternary => {
            if taken != 0 {
                a
            } else {
                b
            }
        }
        SelectScheme::MaskNeg => b ^ ((a ^ b) & taken.wrapping_neg()),
        SelectScheme::MaskWide => (a & taken) | (b & !taken),
        SelectScheme::Multiply => a.wrapping_mul(taken).wrapping_add(b.wrapping_mul(1u64.wrapping_sub(taken))),
    }
}
