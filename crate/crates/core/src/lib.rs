#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod numkernel;

pub use error::{Error, ErrorCategory, Result};
pub mod classify;
pub mod datasets;
pub mod encoders;
pub mod metrics;
pub mod model;
pub mod params;
pub mod promptmem;
pub mod trainer;

pub use model::Model;
