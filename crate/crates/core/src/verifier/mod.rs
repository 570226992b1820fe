//! Checks that a law is an equilibrium: Monte Carlo spike variation, the first- and
//! second-order conditions, order estimates for the variational processes, and the
//! time-inconsistency contrast of the anchored regulator.

mod conditions;
mod inconsistency;
mod order;
mod spike;

pub use conditions::{
    adjoint_diagonal, adversarial_direction, first_order_condition, law_residual,
    second_order_condition, AdjointDiagonal, FirstOrderReport, SecondOrderReport,
};
pub use inconsistency::{inconsistency_demo, InconsistencyParams, InconsistencyReport};
pub use order::{variation_order_test, OrderReport};
pub use spike::{spike_test, spike_tests, SpikeReport, SpikeRequest, SPIKE_SLACK};

use thiserror::Error;

use crate::flow::FlowError;
use crate::simulator::SimError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("epsilon ladder: {0}")]
    Ladder(String),
    #[error("grid mismatch: {0}")]
    Mismatch(String),
    #[error("invalid request: {0}")]
    Request(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Analytic(#[from] crate::analytic::AnalyticError),
}

/// Ladder entries as step multiples; each `ε` must be `k·h` with integer `k ≥ 1` and
/// the widest window must end by `T`.
pub fn ladder_multiples(
    h: f64,
    t_index: usize,
    steps: usize,
    ladder: &[f64],
) -> Result<Vec<usize>, VerifyError> {
    if ladder.is_empty() {
        return Err(VerifyError::Ladder("empty".into()));
    }
    let mut out = Vec::with_capacity(ladder.len());
    for &eps in ladder {
        let k = (eps / h).round();
        if !(eps > 0.0) || k < 1.0 || (eps - k * h).abs() > 1e-9 * h.max(eps) {
            return Err(VerifyError::Ladder(format!(
                "{eps} is not a positive multiple of h = {h}"
            )));
        }
        let k = k as usize;
        if t_index + k > steps {
            return Err(VerifyError::Ladder(format!(
                "window of width {eps} from node {t_index} passes T"
            )));
        }
        out.push(k);
    }
    Ok(out)
}

/// Least-squares line `y = a + c·x`; returns weights `w` with `a = Σ w_k y_k`.
pub(crate) fn intercept_weights(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    if x.len() == 1 {
        return vec![1.0];
    }
    let mean = x.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    x.iter()
        .map(|v| 1.0 / n - mean * (v - mean) / sxx)
        .collect()
}

/// Ordinary least-squares slope of `y` on `x`.
pub(crate) fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intercept_weights_recover_a_line() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let w = intercept_weights(&x);
        let y: Vec<f64> = x.iter().map(|v| 3.0 - 0.5 * v).collect();
        let a: f64 = w.iter().zip(&y).map(|(a, b)| a * b).sum();
        assert!((a - 3.0).abs() < 1e-12);
        assert!((ols_slope(&x, &y) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn ladder_rejects_fractional_multiples() {
        assert!(ladder_multiples(0.01, 0, 100, &[0.015]).is_err());
        assert!(ladder_multiples(0.01, 95, 100, &[0.08]).is_err());
        assert_eq!(
            ladder_multiples(0.01, 0, 100, &[0.01, 0.02, 0.04]).unwrap(),
            vec![1, 2, 4]
        );
    }
}
