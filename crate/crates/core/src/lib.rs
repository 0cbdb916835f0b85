//! Spherical-means Radon transform on smooth strictly convex domains, the universal
//! backprojection inversion, its error operator, and ellipsoidality diagnostics.

pub mod chebyshev;
pub mod error;
pub mod forward;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod inversion;
pub mod quadrature;
pub mod rigidity;
pub mod transforms;

pub use error::{Error, Result};
pub use geometry::{ConvexDomain, DomainKind, Point, SupportInterval, SurfaceQuadrature};
