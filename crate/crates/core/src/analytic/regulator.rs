//! Regulator with a general discount `h`: the diagonal integral equation solved by
//! fixed-point iteration in the β-weighted sup norm.
//!
//! The cost is `½E[∫u² + h(t)X_T² ] + anchor·h(t)·ξ·E[X_T]`; `anchor = +1` penalizes
//! `|X_T + ξ|²` and `anchor = −1` penalizes `|X_T − ξ|²` up to a constant.

use serde::Serialize;

use super::quadrature::tail_integrals;
use super::{AnalyticError, TimeFn};
use crate::field::{NodeSeries, TriangularField};
use crate::flow::{FeedbackLaw, FlowDiagnostics, FlowSolution};
use crate::model::{zero_problem, Dims, JumpMeasure, ProblemSpec, TimeGrid};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegulatorParams {
    pub a: f64,
    pub b: f64,
    pub sigma: f64,
    /// Jump size of the single mark.
    pub c: f64,
    /// Rate of the single mark; zero drops the jump term.
    pub lambda: f64,
    pub h: TimeFn,
    /// Sign of `μ1 = anchor·h`.
    pub anchor: f64,
    pub horizon: f64,
    pub steps: usize,
    pub beta: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub x0: f64,
}

impl RegulatorParams {
    /// `a = 0`, `b = 1`, `h ≡ 1`, no noise, `T = 1`.
    pub fn unit(steps: usize) -> Self {
        Self {
            a: 0.0,
            b: 1.0,
            sigma: 0.0,
            c: 0.0,
            lambda: 0.0,
            h: TimeFn::constant(1.0),
            anchor: 1.0,
            horizon: 1.0,
            steps,
            beta: 10.0,
            tol: 1e-12,
            max_iter: 500,
            x0: 1.0,
        }
    }

    /// `normalized` enforces `h(0) = 1`; the anchored counterexample only needs `h ≥ 0`.
    fn check(&self, grid_times: &[f64], normalized: bool) -> Result<(), AnalyticError> {
        if normalized && (self.h.eval(0.0) - 1.0).abs() > 1e-12 {
            return Err(AnalyticError::Params(format!(
                "h(0) = {} but must be 1",
                self.h.eval(0.0)
            )));
        }
        for &t in grid_times {
            let v = self.h.eval(t);
            if !v.is_finite() || v < 0.0 {
                return Err(AnalyticError::Params(format!(
                    "h({t}) = {v} must be finite and non-negative"
                )));
            }
        }
        if self.lambda < 0.0 {
            return Err(AnalyticError::Params(
                "jump rate must be non-negative".into(),
            ));
        }
        if !(self.beta > 0.0 && self.tol > 0.0 && self.max_iter > 0) {
            return Err(AnalyticError::Params(
                "beta, tol and max_iter must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// The generic problem instance for these parameters.
pub fn regulator_spec<T: Scalar>(p: &RegulatorParams) -> Result<ProblemSpec<T>, AnalyticError> {
    build_spec(p, true)
}

pub(crate) fn build_spec<T: Scalar>(
    p: &RegulatorParams,
    normalized: bool,
) -> Result<ProblemSpec<T>, AnalyticError> {
    let grid = TimeGrid::new(T::lit(p.horizon), p.steps)?;
    let times: Vec<f64> = (0..=p.steps).map(|i| grid.t(i).as_f64()).collect();
    p.check(&times, normalized)?;
    let jumps = if p.lambda > 0.0 {
        JumpMeasure::new(vec![vec![T::one()]], vec![T::lit(p.lambda)])?
    } else {
        JumpMeasure::none()
    };
    let mut spec = zero_problem(Dims { n: 1, m: 1, d: 1 }, grid, jumps);
    let nodes = grid.nodes();
    let konst = |v: f64| NodeSeries::from_fn(1, 1, nodes, |_, o| o[0] = T::lit(v));
    let hs = |scale: f64| {
        NodeSeries::from_fn(1, 1, nodes, |i, o| {
            o[0] = T::lit(scale * p.h.eval(times[i]))
        })
    };
    spec.coeffs.a = konst(p.a);
    spec.coeffs.b = konst(p.b);
    spec.coeffs.channels[0].sigma = konst(p.sigma);
    if p.lambda > 0.0 {
        spec.coeffs.marks[0].c = konst(p.c);
    }
    spec.costs.r = TriangularField::from_fn(1, 1, p.steps, |_, _, o| o[0] = T::one());
    spec.costs.g = hs(1.0);
    spec.costs.mu1 = hs(p.anchor);
    spec.x0 = vec![T::lit(p.x0)];
    spec.validate()?;
    Ok(spec)
}

#[derive(Debug, Clone, Serialize)]
pub struct RegulatorReport {
    pub iterations: usize,
    /// β-weighted update norms.
    pub norms: Vec<f64>,
    pub ratios: Vec<f64>,
    /// `b²(1 − e^{−βT})/β`, the contraction factor up to an unknown constant.
    pub bound_factor: f64,
    /// `‖m − h·exp(∫_s^T …)‖_{∞,β}` at the returned diagonal, the norm of the stopping rule.
    pub residual: f64,
    /// The same residual in the plain sup norm, up to `e^{βT}` times larger.
    pub residual_sup: f64,
}

/// `m ↦ h(s)·exp(∫_s^T (2a − b²(m(τ) + Υ(τ,τ))) dτ)`, returning the exponent tail too.
fn diagonal_map<T: Scalar>(
    p: &RegulatorParams,
    h_nodes: &[T],
    ups_diag: &[T],
    m: &[T],
    step: T,
) -> (Vec<T>, Vec<T>) {
    let two_a = T::lit(2.0 * p.a);
    let b2 = T::lit(p.b * p.b);
    let g: Vec<T> = m
        .iter()
        .zip(ups_diag)
        .map(|(&mv, &u)| two_a - b2 * (mv + u))
        .collect();
    let tail = tail_integrals(&g, step);
    let next = h_nodes
        .iter()
        .zip(&tail)
        .map(|(&hv, &e)| hv * e.exp())
        .collect();
    (next, tail)
}

/// Oracle flow and law: `Υ = anchor·h(t)e^{a(T−s)}`, `M̄ ≡ 0`, `φ ≡ 0`, and `M` from
/// the diagonal fixed point.
pub fn regulator_solution<T: Scalar>(
    p: &RegulatorParams,
) -> Result<(FlowSolution<T>, FeedbackLaw<T>, RegulatorReport), AnalyticError> {
    solve(p, true)
}

pub(crate) fn solve<T: Scalar>(
    p: &RegulatorParams,
    normalized: bool,
) -> Result<(FlowSolution<T>, FeedbackLaw<T>, RegulatorReport), AnalyticError> {
    let grid = TimeGrid::new(T::lit(p.horizon), p.steps)?;
    let steps = p.steps;
    let times: Vec<f64> = (0..=steps).map(|i| grid.t(i).as_f64()).collect();
    p.check(&times, normalized)?;
    let step = grid.h();
    let horizon = p.horizon;
    let h_nodes: Vec<T> = times.iter().map(|&t| T::lit(p.h.eval(t))).collect();
    let growth: Vec<T> = times
        .iter()
        .map(|&s| T::lit((p.a * (horizon - s)).exp()))
        .collect();
    let anchor = T::lit(p.anchor);
    let ups_diag: Vec<T> = (0..=steps)
        .map(|j| anchor * h_nodes[j] * growth[j])
        .collect();
    let weights: Vec<f64> = times
        .iter()
        .map(|&s| (-p.beta * (horizon - s)).exp())
        .collect();
    let bound_factor = p.b * p.b * (1.0 - (-p.beta * horizon).exp()) / p.beta;

    let mut m = h_nodes.clone();
    let mut norms = Vec::new();
    let mut converged = false;
    for _ in 0..p.max_iter {
        let (next, _) = diagonal_map(p, &h_nodes, &ups_diag, &m, step);
        let norm = next
            .iter()
            .zip(&m)
            .zip(&weights)
            .map(|((&a, &b), &w)| w * (a - b).abs().as_f64())
            .fold(0.0, f64::max);
        norms.push(norm);
        m = next;
        if !norm.is_finite() {
            break;
        }
        if norm < p.tol {
            converged = true;
            break;
        }
    }
    let ratios: Vec<f64> = norms.windows(2).map(|w| w[1] / w[0]).collect();
    if !converged {
        return Err(AnalyticError::Picard {
            iterations: norms.len(),
            last_ratio: ratios.last().copied().unwrap_or(f64::NAN),
            bound: bound_factor,
        });
    }
    let (check, tail) = diagonal_map(p, &h_nodes, &ups_diag, &m, step);
    let gaps: Vec<f64> = check
        .iter()
        .zip(&m)
        .map(|(&a, &b)| (a - b).abs().as_f64())
        .collect();
    let residual = gaps
        .iter()
        .zip(&weights)
        .map(|(g, w)| g * w)
        .fold(0.0, f64::max);
    let residual_sup = gaps.iter().copied().fold(0.0, f64::max);

    let mfield = TriangularField::from_fn(1, 1, steps, |i, j, o| {
        o[0] = if i == j {
            m[j]
        } else {
            h_nodes[i] * tail[j].exp()
        }
    });
    let upsilon = TriangularField::from_fn(1, 1, steps, |i, j, o| {
        o[0] = anchor * h_nodes[i] * growth[j]
    });
    let mut law = FeedbackLaw::zeros(1, 1, steps + 1);
    let b = T::lit(p.b);
    for j in 0..=steps {
        law.gain.at_mut(j)[0] = b * (m[j] + ups_diag[j]);
    }
    let sol = FlowSolution {
        m: mfield,
        mbar: TriangularField::zeros(1, 1, steps),
        upsilon,
        phi: TriangularField::zeros(1, 1, steps),
        diagnostics: FlowDiagnostics {
            solver: "regulator diagonal iteration".into(),
            theta_cond: vec![1.0; steps + 1],
            corrector_iterations: Vec::new(),
            experimental: false,
        },
    };
    let report = RegulatorReport {
        iterations: norms.len(),
        norms,
        ratios,
        bound_factor,
        residual,
        residual_sup,
    };
    Ok((sol, law, report))
}
