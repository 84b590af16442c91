//! Striding handler selection and abstract cost model.

use serde::{Deserialize, Serialize};

/// How a ct_load/ct_store walks a portion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HandlerKind {
    Simple,
    Gather,
    Bulk,
}

/// Simulated vector lane count for gather handlers (cost accounting only).
pub const GATHER_LANES: u64 = 16;

impl HandlerKind {
    pub fn name(self) -> &'static str {
        match self {
            HandlerKind::Simple => "simple",
            HandlerKind::Gather => "gather",
            HandlerKind::Bulk => "bulk",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "simple" => HandlerKind::Simple,
            "gather" => HandlerKind::Gather,
            "bulk" => HandlerKind::Bulk,
            _ => return None,
        })
    }

    /// Abstract cost of one block touch.
    pub fn weight(self) -> f64 {
        match self {
            HandlerKind::Simple => 1.0,
            HandlerKind::Gather => 0.6,
            HandlerKind::Bulk => 0.3,
        }
    }

    pub fn cost(self, touches: u64) -> f64 {
        touches as f64 * self.weight()
    }
}

pub fn choose_handler(stride_size: u64, lambda: u64) -> HandlerKind {
    if lambda < 16 {
        HandlerKind::Bulk
    } else if stride_size / lambda < 8 {
        HandlerKind::Simple
    } else {
        HandlerKind::Gather
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_lambda_is_always_bulk() {
        for size in [1, 4, 64, 4096] {
            assert_eq!(choose_handler(size, 4), HandlerKind::Bulk);
            assert_eq!(choose_handler(size, 1), HandlerKind::Bulk);
        }
    }

    #[test]
    fn cache_line_thresholds() {
        assert_eq!(choose_handler(64, 64), HandlerKind::Simple);
        assert_eq!(choose_handler(448, 64), HandlerKind::Simple);
        assert_eq!(choose_handler(512, 64), HandlerKind::Gather);
        assert_eq!(choose_handler(1024, 64), HandlerKind::Gather);
    }

    #[test]
    fn names_roundtrip() {
        for k in [HandlerKind::Simple, HandlerKind::Gather, HandlerKind::Bulk] {
            assert_eq!(HandlerKind::from_name(k.name()), Some(k));
        }
    }
}
