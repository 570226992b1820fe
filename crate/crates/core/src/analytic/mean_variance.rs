//! Mean-variance portfolio selection with wealth- and time-dependent risk aversion.
//!
//! In the generic convention the cost `½Var[X_T] − (μ1 ξ + μ2) E[X_T]` reads
//! `G = 1`, `Ḡ = −1`, and linear terminal weights `−μ1`, `−μ2`.

use serde::Serialize;

use super::quadrature::tail_integrals;
use super::{AnalyticError, TimeFn};
use crate::field::{NodeSeries, TriangularField};
use crate::flow::{FeedbackLaw, FlowDiagnostics, FlowSolution};
use crate::model::{zero_problem, Dims, JumpMeasure, ProblemSpec, TimeGrid};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanVarianceParams {
    pub r: TimeFn,
    pub alpha: TimeFn,
    pub beta: TimeFn,
    /// One jump size per mark.
    pub gamma: Vec<TimeFn>,
    pub theta: Vec<f64>,
    pub mu1: TimeFn,
    pub mu2: TimeFn,
    pub horizon: f64,
    pub steps: usize,
    /// Ellipticity floor for `ρ`.
    pub delta: f64,
    pub x0: f64,
}

impl MeanVarianceParams {
    fn check(&self) -> Result<(), AnalyticError> {
        if self.gamma.len() != self.theta.len() {
            return Err(AnalyticError::Params(format!(
                "{} jump sizes for {} intensities",
                self.gamma.len(),
                self.theta.len()
            )));
        }
        if !(self.delta > 0.0) {
            return Err(AnalyticError::Params(
                "ellipticity floor must be positive".into(),
            ));
        }
        Ok(())
    }

    fn rho(&self, t: f64) -> f64 {
        let b = self.beta.eval(t);
        b * b
            + self
                .gamma
                .iter()
                .zip(&self.theta)
                .map(|(g, &th)| g.eval(t).powi(2) * th)
                .sum::<f64>()
    }
}

/// The generic problem instance the closed form solves.
pub fn mean_variance_spec<T: Scalar>(
    p: &MeanVarianceParams,
) -> Result<ProblemSpec<T>, AnalyticError> {
    p.check()?;
    let grid = TimeGrid::new(T::lit(p.horizon), p.steps)?;
    let marks = (0..p.theta.len())
        .map(|k| vec![T::lit((k + 1) as f64)])
        .collect();
    let jumps = JumpMeasure::new(marks, p.theta.iter().map(|&v| T::lit(v)).collect())?;
    let mut spec = zero_problem(Dims { n: 1, m: 1, d: 1 }, grid, jumps);
    let nodes = grid.nodes();
    let at = |f: &TimeFn| {
        NodeSeries::from_fn(1, 1, nodes, |i, o| {
            o[0] = T::lit(f.eval(grid.t(i).as_f64()))
        })
    };
    spec.coeffs.a = at(&p.r);
    spec.coeffs.b = NodeSeries::from_fn(1, 1, nodes, |i, o| {
        let t = grid.t(i).as_f64();
        o[0] = T::lit(p.alpha.eval(t) - p.r.eval(t));
    });
    spec.coeffs.channels[0].d = at(&p.beta);
    for (k, g) in p.gamma.iter().enumerate() {
        spec.coeffs.marks[k].f = at(g);
    }
    spec.costs.g = NodeSeries::from_fn(1, 1, nodes, |_, o| o[0] = T::one());
    spec.costs.gbar = NodeSeries::from_fn(1, 1, nodes, |_, o| o[0] = -T::one());
    spec.costs.mu1 = NodeSeries::from_fn(1, 1, nodes, |i, o| {
        o[0] = -T::lit(p.mu1.eval(grid.t(i).as_f64()))
    });
    spec.costs.mu2 = NodeSeries::from_fn(1, 1, nodes, |i, o| {
        o[0] = -T::lit(p.mu2.eval(grid.t(i).as_f64()))
    });
    spec.x0 = vec![T::lit(p.x0)];
    spec.validate()?;
    Ok(spec)
}

/// Closed-form `(M, M̄, Υ, φ)` and gains, inner integrals by fourth-order quadrature.
pub fn mean_variance_solution<T: Scalar>(
    p: &MeanVarianceParams,
) -> Result<(FlowSolution<T>, FeedbackLaw<T>), AnalyticError> {
    p.check()?;
    let grid = TimeGrid::new(T::lit(p.horizon), p.steps)?;
    let steps = p.steps;
    let h = grid.h();
    let times: Vec<f64> = (0..=steps).map(|i| grid.t(i).as_f64()).collect();
    let rho: Vec<f64> = times.iter().map(|&t| p.rho(t)).collect();
    let min_rho = rho.iter().copied().fold(f64::INFINITY, f64::min);
    if min_rho < p.delta {
        return Err(AnalyticError::Ellipticity {
            min_rho,
            delta: p.delta,
        });
    }
    let rates: Vec<T> = times.iter().map(|&t| T::lit(p.r.eval(t))).collect();
    let rtail = tail_integrals(&rates, h);
    let integrand: Vec<T> = (0..=steps)
        .map(|j| {
            let t = times[j];
            let excess = T::lit(p.alpha.eval(t) - p.r.eval(t));
            (-rtail[j]).exp() * T::lit(p.mu1.eval(t)) * excess * excess / T::lit(rho[j])
        })
        .collect();
    let inner = tail_integrals(&integrand, h);
    let two = T::lit(2.0);
    let m_s: Vec<T> = (0..=steps)
        .map(|j| (two * rtail[j]).exp() * (T::one() + inner[j]))
        .collect();
    let growth: Vec<T> = rtail.iter().map(|v| v.exp()).collect();
    let mu1: Vec<T> = times.iter().map(|&t| T::lit(p.mu1.eval(t))).collect();
    let mu2: Vec<T> = times.iter().map(|&t| T::lit(p.mu2.eval(t))).collect();

    let m = TriangularField::from_fn(1, 1, steps, |_, j, o| o[0] = m_s[j]);
    let mbar = TriangularField::from_fn(1, 1, steps, |_, j, o| o[0] = -m_s[j]);
    let upsilon = TriangularField::from_fn(1, 1, steps, |i, j, o| o[0] = -mu1[i] * growth[j]);
    let phi = TriangularField::from_fn(1, 1, steps, |i, j, o| o[0] = -mu2[i] * growth[j]);

    let mut law = FeedbackLaw::zeros(1, 1, steps + 1);
    for j in 0..=steps {
        let t = times[j];
        let k = T::lit(p.alpha.eval(t) - p.r.eval(t)) / (m_s[j] * T::lit(rho[j]));
        law.gain.at_mut(j)[0] = k * upsilon.at(j, j)[0];
        law.offset.at_mut(j)[0] = k * phi.at(j, j)[0];
    }
    let sol = FlowSolution {
        m,
        mbar,
        upsilon,
        phi,
        diagnostics: FlowDiagnostics {
            solver: "mean-variance closed form".into(),
            theta_cond: vec![1.0; steps + 1],
            corrector_iterations: Vec::new(),
            experimental: false,
        },
    };
    Ok((sol, law))
}

#[derive(Debug, Clone, Serialize)]
pub struct StructureReport {
    /// `max |M + M̄|` and where it occurs.
    pub sum_deviation: f64,
    pub sum_at: (usize, usize),
    /// `max |M(t,s) − M(s,s)|`, i.e. dependence on `t`.
    pub m_t_dependence: f64,
    pub mbar_t_dependence: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Checks `M̄ = −M` and that neither depends on `t`.
pub fn mv_structure_check<T: Scalar>(sol: &FlowSolution<T>, tol: f64) -> StructureReport {
    let steps = sol.steps();
    let mut sum_deviation = 0.0;
    let mut sum_at = (0, 0);
    let mut m_dep = 0.0f64;
    let mut mbar_dep = 0.0f64;
    for i in 0..=steps {
        for j in i..=steps {
            let dev = crate::dense::max_abs_diff(
                sol.m.at(i, j),
                &sol.mbar.at(i, j).iter().map(|&v| -v).collect::<Vec<_>>(),
            )
            .as_f64();
            if dev > sum_deviation {
                sum_deviation = dev;
                sum_at = (i, j);
            }
            m_dep = m_dep.max(crate::dense::max_abs_diff(sol.m.at(i, j), sol.m.at(j, j)).as_f64());
            mbar_dep = mbar_dep
                .max(crate::dense::max_abs_diff(sol.mbar.at(i, j), sol.mbar.at(j, j)).as_f64());
        }
    }
    StructureReport {
        pass: sum_deviation <= tol && m_dep <= tol && mbar_dep <= tol,
        sum_deviation,
        sum_at,
        m_t_dependence: m_dep,
        mbar_t_dependence: mbar_dep,
        tol,
    }
}
