//! Spine straightening, vertebra keypoint detection machinery and Genant
//! fracture grading for CT volumes.

pub mod config;
pub mod detection;
pub mod error;
pub mod eval;
pub mod genant;
pub mod geometry;
pub mod interp;
pub mod io;
pub mod localization;
pub mod phantom;
pub mod pipeline;
pub mod straighten;
pub mod volume;

pub use error::{Error, Result};
