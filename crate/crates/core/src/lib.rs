//! Non-negative coupled canonical polyadic decomposition for fusing a
//! hyperspectral and a multispectral image into a super-resolution image.

pub mod als;
pub mod degradation;
pub mod error;
pub mod experiment;
pub mod io;
pub mod metrics;
pub mod solver;
pub mod tensor;

pub use error::{Error, Result};
