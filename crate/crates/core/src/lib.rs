// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cavity;
pub mod config;
pub mod device;
pub mod error;
pub mod experiments;
pub mod fit;
pub mod linalg;
pub mod lindblad;
pub mod optim;
pub mod output;
pub mod pulse;
pub mod reconstruction;
pub mod selftest;
pub mod state;

pub use error::{Error, Result};
