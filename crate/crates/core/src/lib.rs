pub mod config;
pub mod error;
pub mod experiments;
pub mod feasibility;
pub mod linalg;
pub mod operators;
pub mod quadrature;
pub mod scenario;
pub mod sensing;
pub mod system;
pub mod beamforming;
pub mod sdp;

pub use error::{Error, Result};
