//! Periodic orbits of delay equations by piecewise-polynomial collocation.

pub mod branch;
pub mod collocation;
pub mod mesh;
pub mod orbit;

pub use collocation::Monodromy;
pub use mesh::CollocationMesh;
pub use orbit::{solve_periodic, PeriodicOrbit, SolveOptions, DEFAULT_DEGREE, DEFAULT_INTERVALS};
pub use branch::{branch_off_hopf, continue_periodic, wrap_delayed_argument, OrbitBranch, OrbitOptions, OrbitProblem};
