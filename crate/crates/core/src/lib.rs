//! CPU Gaussian-splatting micro-trainer with variance-guided densification
//! and a hash-grid encoder for view directions.

// `!(x > 0.0)` is how NaN gets rejected throughout
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments, clippy::type_complexity)]

pub mod appearance;
pub mod camera;
pub mod cli;
pub mod densify;
pub mod engine;
pub mod error;
pub mod gaussian;
pub mod gradstats;
pub mod image;
pub mod io;
pub mod raster;

pub use error::{Error, Result};
