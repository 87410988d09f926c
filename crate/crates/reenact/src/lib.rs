//! One-shot landmark-driven face reenactment: a generator built from an
//! appearance extractor, flow-based feature warping, four local-region
//! U-Nets and an adaptive-normalization fusion net, trained adversarially
//! against pose and identity discriminators on a procedural synthetic-face
//! dataset.

pub mod error;
pub mod geometry;
pub mod synthdata;

pub use error::{Error, Result};
