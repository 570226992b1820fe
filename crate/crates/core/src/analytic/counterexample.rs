//! The precommitted solution of the anchored regulator `dX = b u ds + σ dW`,
//! cost `½E[∫u² + h(t)(X_T − x)²]`, next to its equilibrium.

use serde::Serialize;

use super::regulator::{solve, RegulatorParams, RegulatorReport};
use super::{AnalyticError, TimeFn};
use crate::flow::{FeedbackLaw, FlowSolution};
use crate::model::TimeGrid;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CounterexampleParams {
    pub b: f64,
    pub sigma: f64,
    pub h: TimeFn,
    pub horizon: f64,
    pub steps: usize,
    /// Node of the initial pair `(t, x)`.
    pub t_index: usize,
    pub x: f64,
}

/// Optimal control seen from `(t, x)`, valid on nodes `t_index..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Precommitted<T> {
    pub t_index: usize,
    /// `M^t(s_j)` for `j = t_index..=N`.
    pub m_t: Vec<T>,
    /// `ū = −b M^t(s)(X − x)`, zero before `t_index`.
    pub law: FeedbackLaw<T>,
}

/// `M^t(s) = h(t)/(b²h(t)(T−s) + 1)`, the precommitted law, and the equilibrium of the
/// same problem from the regulator oracle.
pub fn counterexample_precommitted<T: Scalar>(
    p: &CounterexampleParams,
) -> Result<
    (
        Precommitted<T>,
        (FlowSolution<T>, FeedbackLaw<T>, RegulatorReport),
    ),
    AnalyticError,
> {
    let grid = TimeGrid::new(T::lit(p.horizon), p.steps)?;
    if p.t_index > p.steps {
        return Err(AnalyticError::Params(format!(
            "t_index {} beyond N = {}",
            p.t_index, p.steps
        )));
    }
    let t = grid.t(p.t_index).as_f64();
    let ht = p.h.eval(t);
    if !(ht > 0.0) {
        return Err(AnalyticError::Params(format!(
            "h(t) = {ht} must be positive"
        )));
    }
    let b = T::lit(p.b);
    let h_t = T::lit(ht);
    let x = T::lit(p.x);
    let b2 = b * b;
    let m_t: Vec<T> = (p.t_index..=p.steps)
        .map(|j| h_t / (b2 * h_t * (grid.horizon() - grid.t(j)) + T::one()))
        .collect();
    let mut law = FeedbackLaw::zeros(1, 1, p.steps + 1);
    for (k, &mv) in m_t.iter().enumerate() {
        let j = p.t_index + k;
        law.gain.at_mut(j)[0] = b * mv;
        law.offset.at_mut(j)[0] = -b * mv * x;
    }
    let companion = solve(
        &RegulatorParams {
            a: 0.0,
            b: p.b,
            sigma: p.sigma,
            c: 0.0,
            lambda: 0.0,
            h: p.h.clone(),
            anchor: -1.0,
            horizon: p.horizon,
            steps: p.steps,
            beta: 10.0,
            tol: 1e-12,
            max_iter: 500,
            x0: p.x,
        },
        false,
    )?;
    Ok((
        Precommitted {
            t_index: p.t_index,
            m_t,
            law,
        },
        companion,
    ))
}
