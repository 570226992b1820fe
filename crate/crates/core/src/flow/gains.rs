//! The weight `S = R(t,t) + Σ DᵀMD + Σ θ FᵀMF`, its inverse, and the gains.

use nalgebra::DMatrix;

use super::FlowError;
use crate::dense::{frobenius, gemm, gemm_acc, gemm_tn_acc};
use crate::model::ProblemSpec;
use crate::scalar::Scalar;

const COND_LIMIT: f64 = 1e10;
const SINGULAR_REL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaInfo<T> {
    /// `Θ = S⁻¹`, m×m row-major.
    pub theta: Vec<T>,
    pub cond: f64,
}

/// `S` at node `i` for the candidate diagonal `m_diag`, plus the size of each of its
/// three terms.
fn assemble_s<T: Scalar>(spec: &ProblemSpec<T>, i: usize, m_diag: &[T]) -> (Vec<T>, f64) {
    let n = spec.dims.n;
    let m = spec.dims.m;
    let r = spec.costs.r.at(i, i);
    let mut s = r.to_vec();
    let mut scale = frobenius(r).as_f64();
    let mut md = vec![T::zero(); n * m];
    let mut term = vec![T::zero(); m * m];
    let mut diffusion = vec![T::zero(); m * m];
    for ch in &spec.coeffs.channels {
        let d = ch.d.at(i);
        gemm(&mut md, m_diag, d, n, n, m);
        term.iter_mut().for_each(|x| *x = T::zero());
        gemm_tn_acc(&mut term, d, &md, m, n, m, T::one());
        crate::dense::axpy(&mut diffusion, T::one(), &term);
    }
    scale += frobenius(&diffusion).as_f64();
    crate::dense::axpy(&mut s, T::one(), &diffusion);
    let mut jumps = vec![T::zero(); m * m];
    for (mk, &th) in spec.coeffs.marks.iter().zip(spec.jumps.intensities()) {
        if th == T::zero() {
            continue;
        }
        let f = mk.f.at(i);
        gemm(&mut md, m_diag, f, n, n, m);
        gemm_tn_acc(&mut jumps, f, &md, m, n, m, th);
    }
    scale += frobenius(&jumps).as_f64();
    crate::dense::axpy(&mut s, T::one(), &jumps);
    (s, scale)
}

/// `Θ(t_i)` and `cond(S)`; fails the gate when `S` is singular or `cond(S) > 1e10`.
pub fn theta_matrix<T: Scalar>(
    spec: &ProblemSpec<T>,
    t_index: usize,
    m_diag: &[T],
) -> Result<ThetaInfo<T>, FlowError> {
    let m = spec.dims.m;
    let (s, scale) = assemble_s(spec, t_index, m_diag);
    if !crate::dense::all_finite(&s) || !scale.is_finite() {
        return Err(FlowError::NonFinite {
            row: t_index,
            step: t_index,
        });
    }
    if m == 1 {
        let v = s[0].as_f64().abs();
        if scale == 0.0 || v <= SINGULAR_REL * scale {
            return Err(FlowError::ThetaSingular { node: t_index });
        }
        return Ok(ThetaInfo {
            theta: vec![T::one() / s[0]],
            cond: 1.0,
        });
    }
    let mat = DMatrix::from_row_slice(m, m, &s);
    let sv = mat.clone().singular_values();
    let smax = sv.max().as_f64();
    let smin = sv.min().as_f64();
    if scale == 0.0 || smin <= SINGULAR_REL * scale {
        return Err(FlowError::ThetaSingular { node: t_index });
    }
    let cond = smax / smin;
    if cond > COND_LIMIT {
        return Err(FlowError::ThetaGate {
            node: t_index,
            cond,
        });
    }
    let inv = mat
        .try_inverse()
        .ok_or(FlowError::ThetaSingular { node: t_index })?;
    let theta = (0..m * m).map(|k| inv[(k / m, k % m)]).collect();
    Ok(ThetaInfo { theta, cond })
}

/// Gate check at the nodes where `S` does not involve `M` (all `D_j`, and `F_k` with
/// `θ_k > 0`, vanish), in increasing node order. Catches a singular `R` before any
/// marching, so the earliest failing node is the one reported.
pub(crate) fn preflight_gate<T: Scalar>(spec: &ProblemSpec<T>) -> Result<(), FlowError> {
    let n = spec.dims.n;
    let zeros = vec![T::zero(); n * n];
    for i in 0..=spec.grid.steps() {
        let free = spec
            .coeffs
            .channels
            .iter()
            .all(|ch| ch.d.at(i).iter().all(|v| *v == T::zero()))
            && spec
                .coeffs
                .marks
                .iter()
                .zip(spec.jumps.intensities())
                .all(|(mk, &th)| th == T::zero() || mk.f.at(i).iter().all(|v| *v == T::zero()));
        if free {
            theta_matrix(spec, i, &zeros)?;
        }
    }
    Ok(())
}

/// Gains at node `i` from the diagonal values `(M, M̄, Υ, φ)(t_i, t_i)`.
///
/// Writes `Ψ` (m×n) into `gain` and `ψ` (m) into `offset`; returns `cond(S)`.
pub(crate) fn node_gains<T: Scalar>(
    spec: &ProblemSpec<T>,
    i: usize,
    diag: &[T],
    gain: &mut [T],
    offset: &mut [T],
) -> Result<f64, FlowError> {
    let n = spec.dims.n;
    let m = spec.dims.m;
    let nn = n * n;
    let (mm, rest) = diag.split_at(nn);
    let (mbar, rest) = rest.split_at(nn);
    let (ups, phi) = rest.split_at(nn);
    let info = theta_matrix(spec, i, mm)?;

    let mut total = mm.to_vec();
    crate::dense::axpy(&mut total, T::one(), mbar);
    crate::dense::axpy(&mut total, T::one(), ups);

    // K = Bᵀ(M+M̄+Υ) + Σ DᵀMC + Σ θ FᵀME, k = Bᵀφ + Σ DᵀMσ + Σ θ FᵀMc
    let b = spec.coeffs.b.at(i);
    let mut big = vec![T::zero(); m * n];
    let mut small = vec![T::zero(); m];
    gemm_tn_acc(&mut big, b, &total, m, n, n, T::one());
    gemm_tn_acc(&mut small, b, phi, m, n, 1, T::one());
    let mut mx = vec![T::zero(); nn];
    let mut mv = vec![T::zero(); n];
    for ch in &spec.coeffs.channels {
        let d = ch.d.at(i);
        gemm(&mut mx, mm, ch.c.at(i), n, n, n);
        gemm_tn_acc(&mut big, d, &mx, m, n, n, T::one());
        gemm(&mut mv, mm, ch.sigma.at(i), n, n, 1);
        gemm_tn_acc(&mut small, d, &mv, m, n, 1, T::one());
    }
    for (mk, &th) in spec.coeffs.marks.iter().zip(spec.jumps.intensities()) {
        if th == T::zero() {
            continue;
        }
        let f = mk.f.at(i);
        gemm(&mut mx, mm, mk.e.at(i), n, n, n);
        gemm_tn_acc(&mut big, f, &mx, m, n, n, th);
        gemm(&mut mv, mm, mk.c.at(i), n, n, 1);
        gemm_tn_acc(&mut small, f, &mv, m, n, 1, th);
    }
    gain.iter_mut().for_each(|x| *x = T::zero());
    offset.iter_mut().for_each(|x| *x = T::zero());
    gemm_acc(gain, &info.theta, &big, m, m, n, T::one());
    gemm_acc(offset, &info.theta, &small, m, m, 1, T::one());
    if !crate::dense::all_finite(gain) || !crate::dense::all_finite(offset) {
        return Err(FlowError::NonFinite { row: i, step: i });
    }
    Ok(info.cond)
}
