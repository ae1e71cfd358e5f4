//! Nonlocal concave-convex Dirichlet problems on an interval: Galerkin
//! assembly of the Gagliardo form, Nehari/fibering analysis, bubble
//! asymptotics and critical-point solvers.

pub mod assembly;
pub mod bubbles;
pub mod error;
pub mod experiment;
pub mod fibering;
pub mod functional;
pub mod kernel;
pub mod levels;
pub mod mesh;
pub mod params;
pub mod quadrature;
pub mod report;
pub mod solver;

pub use assembly::{assemble_stiffness, gagliardo_norm, lp_norm, mass_matrix, sobolev_quotient, StiffnessOperator};
pub use error::{Error, Result};
pub use fibering::{FiberingReport, NehariClass, ThresholdSet};
pub use functional::EnergyBreakdown;
pub use mesh::{DiscreteFunction, Mesh};
pub use params::{Interval, KernelSpec, ProblemParams};
pub use solver::{Branch, SolutionRecord, SolverConfig};
