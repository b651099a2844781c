//! Spherical rotary position encoding for geotokens.
//!
//! A geotoken is a feature vector tagged with a latitude/longitude. This
//! crate encodes those coordinates by rotating attention queries and keys
//! with 3×3 Euler rotations, so that query–key inner products depend on the
//! relative rotation between two points on the sphere. It also ships the
//! sinusoidal and 2D rotary baselines, a small attention network with exact
//! gradients, synthetic retrieval tasks, file I/O and a CLI.

pub mod attention;
pub mod baseline;
pub mod bench;
pub mod check;
pub mod cli;
pub mod config;
pub mod error;
pub mod geo;
pub mod io;
pub mod linalg;
pub mod spherical;
pub mod tasks;

pub use error::{Error, Result};
