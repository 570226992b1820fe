//! Equilibrium controls for time-inconsistent linear–quadratic problems with
//! Brownian and compensated Poisson noise.
//!
//! The deterministic pieces ([`model`], [`flow`], [`analytic`]) are generic over
//! [`Scalar`]; Monte Carlo ([`simulator`], [`verifier`]) runs in `f64`.

pub mod analytic;
pub mod dense;
pub mod field;
pub mod flow;
pub mod io;
pub mod model;
pub mod scalar;
pub mod simulator;
pub mod verifier;

pub use field::{NodeSeries, TriangularField};
pub use flow::{FeedbackLaw, FlowError, FlowSolution, SecondOrderField};
pub use model::{build_problem, ConfigError, Dims, JumpMeasure, ProblemSpec, TimeGrid};
pub use scalar::Scalar;

pub type Real = f64;
pub type Problem = ProblemSpec<Real>;
pub type Flow = FlowSolution<Real>;
pub type Law = FeedbackLaw<Real>;
pub type Field = TriangularField<Real>;
