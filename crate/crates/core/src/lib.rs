//! Numerical laboratory for the ε-regularized singular evolutionary
//! p-Laplace equation `u_t = div((|∇u|² + ε²)^{(p-2)/2} ∇u)`, `1 < p ≤ 2`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod exact;
pub mod functionals;
pub mod grid;
pub mod solver;
pub mod verifier;

pub use error::{Error, Result};
