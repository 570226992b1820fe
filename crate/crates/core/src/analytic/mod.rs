//! Closed-form and semi-analytic oracles for the worked examples.

mod counterexample;
mod mean_variance;
mod quadrature;
mod regulator;

pub use counterexample::{counterexample_precommitted, CounterexampleParams, Precommitted};
pub use mean_variance::{
    mean_variance_solution, mean_variance_spec, mv_structure_check, MeanVarianceParams,
    StructureReport,
};
pub use quadrature::tail_integrals;
pub(crate) use regulator::build_spec as anchored_regulator_spec;
pub use regulator::{regulator_solution, regulator_spec, RegulatorParams, RegulatorReport};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticError {
    #[error("ellipticity fails: min rho = {min_rho:.3e} < delta = {delta:.3e}")]
    Ellipticity { min_rho: f64, delta: f64 },
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("diagonal iteration did not converge in {iterations} steps (last ratio {last_ratio:.3e}, bound factor {bound:.3e})")]
    Picard {
        iterations: usize,
        last_ratio: f64,
        bound: f64,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Deterministic scalar function of time used for rates, weights and discounts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TimeFn {
    Constant {
        value: f64,
    },
    Affine {
        value: f64,
        slope: f64,
    },
    ExpDiscount {
        value: f64,
        delta: f64,
    },
    Hyperbolic {
        value: f64,
        kappa: f64,
    },
    QuasiHyperbolic {
        value: f64,
        lambda: f64,
        delta1: f64,
        delta2: f64,
    },
}

impl TimeFn {
    pub fn constant(value: f64) -> Self {
        TimeFn::Constant { value }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            TimeFn::Constant { value } => value,
            TimeFn::Affine { value, slope } => value + slope * t,
            TimeFn::ExpDiscount { value, delta } => value * (-delta * t).exp(),
            TimeFn::Hyperbolic { value, kappa } => value / (1.0 + kappa * t),
            TimeFn::QuasiHyperbolic {
                value,
                lambda,
                delta1,
                delta2,
            } => value * (lambda * (-delta1 * t).exp() + (1.0 - lambda) * (-delta2 * t).exp()),
        }
    }
}
