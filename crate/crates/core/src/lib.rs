#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod curvature;
pub mod energy;
pub mod error;
pub mod grassmann;
pub mod graphpatch;
pub mod kdtree;
pub mod linalg;
pub mod multiscale;
pub mod report;
pub mod sampled_set;
pub mod simplex;
pub mod suites;

pub use error::{Error, Result};
