#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alignment;
pub mod descriptions;
pub mod error;
pub mod harness;
pub mod io;
pub mod numerics;
pub mod sample;
pub mod transport;

pub use error::{Error, Result};
