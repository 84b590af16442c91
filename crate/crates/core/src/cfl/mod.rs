//! Control-flow linearization.

pub mod linearize;
pub mod sanitize;
pub mod select;

pub use linearize::{linearize, LinearizeError, LinearizeInput, LinearizeStats};
pub use select::{ct_select, SelectScheme};
