//! Simulation and data-driven mapping pipeline for an edge-lit elastomer
//! tactile pad.
//!
//! Light from LEDs mounted on the cavity walls travels through a clear
//! elastomer slab to photodiodes on the same walls, partly along direct paths
//! and partly through total internal reflection at the top surface. An
//! indenter disturbs the surface (and, deeper, blocks direct paths), which
//! changes the 8 x 8 emitter/receiver signal matrix. A linear SVM decides
//! touch versus no touch, and a Laplacian-kernel ridge regressor maps the
//! signals to contact location and depth.

pub mod cli;
pub mod error;
pub mod evaluation;
pub mod learning;
pub mod optics;
pub mod protocols;
pub mod seed;
pub mod sensor;
pub mod sum;
pub mod surface;
pub mod transport;

pub use error::{Error, Result};
