//! Oriented-box toolkit for SAR ship detection: rotated IoU, box fusion,
//! multitask loss kernels, rotated Gaussian masks, mask-to-box extraction,
//! detection metrics and despeckling metrics.

pub mod error;
pub mod fusion;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod losses;
pub mod masks;
pub mod metrics;
pub mod nnkernels;

pub use error::{Error, Result};
pub use geometry::{ObbBox, Point, Polygon};
pub use grid::Grid;
