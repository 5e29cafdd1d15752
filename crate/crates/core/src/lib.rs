//! Accelerated multi-coil MRI reconstruction with unrolled networks and
//! parameter-space interpolation between perception-distortion endpoints.

pub mod config;
pub mod dataset;
pub mod error;
pub mod interp;
pub mod losses;
pub mod metrics;
pub mod mri;
pub mod network;
pub mod sim;
pub mod tensor;
pub mod trainer;

pub use error::{Error, FormatError, Result};
