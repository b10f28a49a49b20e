//! Adaptive contact-implicit model predictive control.

pub mod solvers;
pub mod lcs;
pub mod models;
pub mod adapt;
pub mod c3;
pub mod harness;
