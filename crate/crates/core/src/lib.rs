//! Eigenvalues of the biharmonic operator with Navier (simply supported)
//! boundary conditions on polygons with re-entrant corners, computed with
//! P1 elements and Poisson solves only.
//!
//! The plain mixed method splits `Δ²u = λu` into two Poisson problems but
//! on non-convex domains converges to a wrong spectrum. The corrected
//! method removes, at every application of the solution operator, the
//! component along a corner singular field `ξ_h = s⁻ + ζ_h`; this restores
//! the biharmonic spectrum.

pub mod fem;
pub mod mesh;
pub mod singular;
pub mod eigen;
pub mod study;
