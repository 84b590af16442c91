//! Example programs used by the tests, the CLI and the bindings.

use crate::ir::{parse_module, Module};

pub const SECRET_HASH: &str = include_str!("secret_hash.ir");
pub const NESTED_BRANCH: &str = include_str!("nested_branch.ir");
pub const LOOP_PAIR: &str = include_str!("loop_pair.ir");
pub const ICALL_TABLE: &str = include_str!("icall_table.ir");
pub const TWO_CONTEXT: &str = include_str!("two_context.ir");
pub const COVERING_LOOP: &str = include_str!("covering_loop.ir");

/// (name, source) of every program.
pub const ALL: [(&str, &str); 6] = [
    ("secret_hash", SECRET_HASH),
    ("nested_branch", NESTED_BRANCH),
    ("loop_pair", LOOP_PAIR),
    ("icall_table", ICALL_TABLE),
    ("two_context", TWO_CONTEXT),
    ("covering_loop", COVERING_LOOP),
];

pub fn get(name: &str) -> Option<&'static str> {
    ALL.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn module(name: &str) -> Option<Module> {
    get(name).map(|s| parse_module(s).expect("corpus program parses"))
}
