//! Constant-mean-curvature surfaces in hyperbolic 3-space by envelopes of
//! horospheres.
//!
//! The crate builds CMC-H surfaces for H in (-1, 1) from conformal metrics at
//! infinity: a conformal factor solves a semilinear equation whose zero set
//! is exactly the CMC condition for the associated Epstein surface, and a
//! damped Newton continuation marches the mean-curvature parameter. A
//! finite-difference geometric oracle cross-checks every solved surface, and
//! the foliation layer verifies monotonicity, leaf disjointness windows, and
//! principal-curvature bounds at desk scale.
//!
//! Modules:
//! - [`moebius`]: isometries of upper half-space, hyperbolic distance,
//!   visual metrics.
//! - [`conformal`]: conformal metrics, Schwarzian derivative and tensors,
//!   quadratic differentials.
//! - [`epstein`]: the Epstein map, its finite-difference geometry, and the
//!   algebraic mean-curvature formula.
//! - [`mesh`]: a closed genus-2 hyperbolic surface as an identified octagon,
//!   with cotangent stiffness and lumped hyperbolic mass.
//! - [`solver`]: residual, linearization, Newton, and continuation in H.
//! - [`foliation`]: assembly of solution families and the geometric checks.
//! - [`validate`]: the shared validation suites behind the acceptance tests
//!   and the CLI `validate` command.

pub mod conformal;
pub mod epstein;
pub mod foliation;
pub mod io;
pub mod mesh;
pub mod moebius;
pub mod numerics;
pub mod solver;
pub mod validate;

pub use conformal::{Chart, ConformalMetric, HoloMap, Perturbation, QuadDifferential};
pub use epstein::EpsteinSample;
pub use foliation::{Foliation, FoliationReport};
pub use mesh::{FundamentalDomain, ScalarField, SurfaceMesh};
pub use moebius::{BoundaryPoint, H3Point, MoebiusMap};
pub use solver::{CmcContext, ContinuationResult, SolverConfig};
