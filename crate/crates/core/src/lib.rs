#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clustering;
pub mod error;
pub mod eval;
pub mod graph;
pub mod io;
pub mod loopclosure;
pub mod optimizer;
pub mod planner;
pub mod pnp;
pub mod se3;
pub mod semantics;

pub use error::{Error, Result};
pub use se3::SE3Pose;
