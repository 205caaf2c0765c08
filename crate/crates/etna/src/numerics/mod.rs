//! Numerical substrate: dense matrices, the parameter store with Adam, and
//! the finite-difference gradient checker.

mod gradcheck;
mod matrix;
mod store;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, ParamCheck};
pub use matrix::{
    gather_rows, matmul, scatter_add_rows, softmax_in_place, softmax_rows, tanh_map, Matrix,
};
pub use store::ParamStore;

/// Adam defaults; the optimizer is cited without constants, so the
/// conventional ones are fixed here.
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
