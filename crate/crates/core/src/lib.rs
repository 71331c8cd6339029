//! Lipschitz invariant manifolds for perturbations of nonautonomous linear equations
//! `v' = A(t) v + f(t, v)` admitting a general dichotomy.

pub mod admissibility;
pub mod bounds;
pub mod demos;
pub mod equivalence;
pub mod error;
pub mod functions;
pub mod linear_system;
pub mod manifold;
pub mod ode;
pub mod perturbation;
pub mod quadrature;
pub mod scenario;
pub mod solver;
pub mod verification;

pub use error::{Error, Result};
