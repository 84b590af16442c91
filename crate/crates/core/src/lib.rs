//! Side-channel hardening toolkit for a small SSA IR.
//!
//! The pipeline profiles secret taint, resolves points-to sets, linearizes
//! secret-dependent control flow and data flow, and checks the result by
//! differential trace comparison in a reference interpreter.

pub mod cfl;
pub mod corpus;
pub mod dfl;
pub mod interp;
pub mod intrinsics;
pub mod ir;
pub mod normalize;
pub mod pipeline;
pub mod profiler;
pub mod pta;
pub mod verifier;
