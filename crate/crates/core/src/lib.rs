//! Unfitted finite elements for the Stokes problem on implicitly described domains.

pub mod geometry;
pub mod linalg;
pub mod mesh;
pub mod analysis;
pub mod forms;
pub mod quadrature;
pub mod solver;
pub mod spaces;
pub mod stability;
