//! Shared domain types: problem sizes, structural constants, generators, terminal conditions,
//! adapted fields and solutions.

mod field;
mod problem;
mod validate;

pub use field::{norm, norm_sq, AdaptedField};
pub use problem::*;
pub use validate::{validate_problem, Violation};
