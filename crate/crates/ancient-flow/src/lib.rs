//! Construction and verification of ancient mean curvature flows emanating
//! from unstable minimal hypersurfaces of revolution.

pub mod discretization;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod norms;
pub mod spectral;
