// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conditions;
pub mod error;
pub mod face;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod motion;
pub mod numcore;
pub mod render;
pub mod retarget;
pub mod trainer;

pub use error::{Error, Result};
