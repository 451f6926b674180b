//! Burned-area delineation from Sentinel-2 imagery.

// Guards like `!(x > 0.0)` are written that way on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod indices;
pub mod manifest;
pub mod net;
pub mod preprocess;
pub mod raster;
pub mod scene;
pub mod synth;
pub mod tiff;
pub mod tiler;

pub use error::{Error, Result};
