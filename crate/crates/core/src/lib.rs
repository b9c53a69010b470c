//! Numerical construction and certification of peak functions for smooth
//! families of strictly pseudoconvex domains.

// Guards are written as `!(x < y)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod domain;
pub mod error;
pub mod sampling;
pub mod levi;
pub mod construction;
pub mod dbar;
pub mod peak;
pub mod config;
pub mod pipeline;
pub mod verify;
pub mod figures;
pub mod cli;
