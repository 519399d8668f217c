//! Solvers and diagnostics for multidimensional quadratic BSDEs on binomial trees.
//!
//! Problems are built with [`model`] or taken from [`scenarios`], solved with [`solver`], and checked
//! against a-priori bounds with [`hypotheses`], [`bmo`] and [`stability`]. [`config`] and [`cli`] drive
//! batch runs from JSON.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bmo;
pub mod cli;
pub mod config;
pub mod error;
pub mod hypotheses;
pub mod linear;
pub mod malliavin;
pub mod model;
pub mod probes;
pub mod report;
pub mod scenarios;
pub mod solver;
pub mod stability;
pub mod tree;
pub mod truncation;

pub use config::ExperimentConfig;
pub use error::{BsdeError, Result};
pub use model::{AdaptedField, BsdeSolution, Dimensions, QuadraticBsdeProblem, Scheme, StructuralConstants};
pub use solver::{picard_solve, solve_truncated, SolverConfig};
pub use tree::{BinomialTree, TreeKind};
