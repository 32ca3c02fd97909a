#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod data;
pub mod error;
pub mod groundtruth;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
