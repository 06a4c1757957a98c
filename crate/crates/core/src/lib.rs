//! Spectral half-Laplacian, harmonic extensions and a Galerkin solver for
//! the fractional porous medium equation on dilating closed manifolds.

pub mod error;
pub mod extension;
pub mod geometry;
pub mod manifold;
pub mod nonlinearity;
pub mod quadrature;
pub mod random;
pub mod solver;

pub use error::{Error, Result};
pub use extension::{Cylinder, ExtensionField};
pub use geometry::{EvolvingGeometry, RadiusLaw, TimeNode};
pub use manifold::{Family, GridField, ManifoldSnapshot, SpectralField, SpectralTransform};
pub use nonlinearity::NonlinearitySpec;
pub use solver::{SolverConfig, SolverState, Stepper, Trajectory};
