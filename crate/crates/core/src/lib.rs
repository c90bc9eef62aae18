//! Tomographic reconstruction of time-evolving emission around a
//! non-spinning black hole from single-viewpoint measurements.

mod binio;
pub mod dynamics;
pub mod error;
pub mod field;
pub mod geodesic;
pub mod instrument;
pub mod pipeline;
pub mod render;
pub mod solver;
pub mod synth;
pub mod units;

pub use error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;
