//! First- and second-order equilibrium conditions from the flow fields.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::VerifyError;
use crate::dense::{gemm_acc, gemm_tn_acc};
use crate::flow::{flow_under_law, SecondOrderField};
use crate::model::min_sym_eigenvalue;
use crate::{Flow, Law, Problem};

/// Adjoint values on the diagonal `s = t` along a state trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdjointDiagonal {
    /// First node covered.
    pub start: usize,
    /// `p(t;t)`, one n-vector per node.
    pub p: Vec<Vec<f64>>,
    /// `q_j(t;t)`, `d` n-vectors per node.
    pub q: Vec<Vec<Vec<f64>>>,
    /// `r(t, z_k; t)`, `K` n-vectors per node.
    pub r: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FirstOrderReport {
    pub start: usize,
    /// `K(t) = R û − Bᵀp − Σ Dᵀq − Σ θ Fᵀr` per node.
    pub k: Vec<Vec<f64>>,
    /// `|K(t)|` per node.
    pub residual: Vec<f64>,
    pub max: f64,
}

impl FirstOrderReport {
    pub fn csv(&self, spec: &Problem) -> String {
        crate::io::csv_table(
            &["node", "t", "residual"],
            self.residual
                .iter()
                .enumerate()
                .map(|(k, &r)| vec![(self.start + k) as f64, spec.grid.t(self.start + k), r]),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SecondOrderReport {
    /// Smallest eigenvalue of `R − Σ DᵀPD − Σ θ FᵀPF` at `(t, t)`, per node.
    pub min_eigenvalue: Vec<f64>,
    pub threshold: f64,
    pub failing_nodes: Vec<usize>,
    pub pass: bool,
}

impl SecondOrderReport {
    pub fn csv(&self, spec: &Problem) -> String {
        crate::io::csv_table(
            &["node", "t", "min_eigenvalue"],
            self.min_eigenvalue
                .iter()
                .enumerate()
                .map(|(i, &v)| vec![i as f64, spec.grid.t(i), v]),
        )
    }
}

fn check_trajectory(
    spec: &Problem,
    flow: &Flow,
    law: &Law,
    traj: &[Vec<f64>],
) -> Result<usize, VerifyError> {
    let steps = spec.grid.steps();
    let n = spec.dims.n;
    if flow.steps() != steps || flow.m.rows() != n {
        return Err(VerifyError::Mismatch(
            "flow does not match the problem".into(),
        ));
    }
    if law.nodes() != steps + 1 || law.n() != n || law.m() != spec.dims.m {
        return Err(VerifyError::Mismatch(
            "law does not match the problem".into(),
        ));
    }
    if traj.is_empty() || traj.len() > steps + 1 || traj.iter().any(|x| x.len() != n) {
        return Err(VerifyError::Mismatch(format!(
            "trajectory needs at most {} states of length {n}",
            steps + 1
        )));
    }
    Ok(steps + 1 - traj.len())
}

/// `p`, `q`, `r` on the diagonal from the flow, for a trajectory ending at `T`.
///
/// `traj[k]` is the state at node `N + 1 − traj.len() + k`.
pub fn adjoint_diagonal(
    spec: &Problem,
    flow: &Flow,
    law: &Law,
    traj: &[Vec<f64>],
) -> Result<AdjointDiagonal, VerifyError> {
    let start = check_trajectory(spec, flow, law, traj)?;
    let (n, m) = (spec.dims.n, spec.dims.m);
    let cf = &spec.coeffs;
    let mut out = AdjointDiagonal {
        start,
        p: Vec::new(),
        q: Vec::new(),
        r: Vec::new(),
    };
    let mut u = vec![0.0; m];
    let mut sum = vec![0.0; n * n];
    let mut arg = vec![0.0; n];
    for (k, x) in traj.iter().enumerate() {
        let i = start + k;
        law.control(i, x, &mut u);
        for (((o, &a), &b), &c) in sum
            .iter_mut()
            .zip(flow.m.diag(i))
            .zip(flow.mbar.diag(i))
            .zip(flow.upsilon.diag(i))
        {
            *o = a + b + c;
        }
        let mut p: Vec<f64> = flow.phi.diag(i).iter().map(|v| -v).collect();
        gemm_acc(&mut p, &sum, x, n, n, 1, -1.0);
        let mm = flow.m.diag(i);
        let mut adj = |lin: &[f64], ctl: &[f64], konst: &[f64]| {
            arg.copy_from_slice(konst);
            gemm_acc(&mut arg, lin, x, n, n, 1, 1.0);
            gemm_acc(&mut arg, ctl, &u, n, m, 1, 1.0);
            let mut v = vec![0.0; n];
            gemm_acc(&mut v, mm, &arg, n, n, 1, -1.0);
            v
        };
        let q = cf
            .channels
            .iter()
            .map(|ch| adj(ch.c.at(i), ch.d.at(i), ch.sigma.at(i)))
            .collect();
        let r = cf
            .marks
            .iter()
            .map(|mk| adj(mk.e.at(i), mk.f.at(i), mk.c.at(i)))
            .collect();
        out.p.push(p);
        out.q.push(q);
        out.r.push(r);
    }
    Ok(out)
}

/// `K(t)` per node along `traj` (see [`adjoint_diagonal`] for indexing).
pub fn first_order_condition(
    spec: &Problem,
    flow: &Flow,
    law: &Law,
    traj: &[Vec<f64>],
) -> Result<FirstOrderReport, VerifyError> {
    let adj = adjoint_diagonal(spec, flow, law, traj)?;
    let (n, m) = (spec.dims.n, spec.dims.m);
    let cf = &spec.coeffs;
    let theta = spec.jumps.intensities();
    let mut u = vec![0.0; m];
    let mut ks = Vec::with_capacity(traj.len());
    for (k, x) in traj.iter().enumerate() {
        let i = adj.start + k;
        law.control(i, x, &mut u);
        let mut kv = vec![0.0; m];
        gemm_acc(&mut kv, spec.costs.r.at(i, i), &u, m, m, 1, 1.0);
        gemm_tn_acc(&mut kv, cf.b.at(i), &adj.p[k], m, n, 1, -1.0);
        for (ch, q) in cf.channels.iter().zip(&adj.q[k]) {
            gemm_tn_acc(&mut kv, ch.d.at(i), q, m, n, 1, -1.0);
        }
        for ((mk, r), &th) in cf.marks.iter().zip(&adj.r[k]).zip(theta) {
            gemm_tn_acc(&mut kv, mk.f.at(i), r, m, n, 1, -th);
        }
        ks.push(kv);
    }
    let residual: Vec<f64> = ks
        .iter()
        .map(|k| k.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let max = residual.iter().copied().fold(0.0, f64::max);
    Ok(FirstOrderReport {
        start: adj.start,
        k: ks,
        residual,
        max,
    })
}

/// First-order residual of an arbitrary law, using the flow that law generates.
pub fn law_residual(
    spec: &Problem,
    law: &Law,
    traj: &[Vec<f64>],
) -> Result<FirstOrderReport, VerifyError> {
    let flow = flow_under_law(spec, law)?;
    first_order_condition(spec, &flow, law, traj)
}

/// `R(t,t) − Σ DᵀP D − Σ θ FᵀP F` at node `i`, `m×m`.
fn second_order_matrix(spec: &Problem, p: &SecondOrderField<f64>, i: usize) -> Vec<f64> {
    let (n, m) = (spec.dims.n, spec.dims.m);
    let cf = &spec.coeffs;
    let pd = p.diag(i);
    let mut out = spec.costs.r.at(i, i).to_vec();
    let mut tmp = vec![0.0; n * m];
    let mut quad = |mat: &[f64], w: f64, out: &mut [f64]| {
        tmp.iter_mut().for_each(|v| *v = 0.0);
        gemm_acc(&mut tmp, pd, mat, n, n, m, 1.0);
        gemm_tn_acc(out, mat, &tmp, m, n, m, -w);
    };
    for ch in &cf.channels {
        quad(ch.d.at(i), 1.0, &mut out);
    }
    for (mk, &th) in cf.marks.iter().zip(spec.jumps.intensities()) {
        if th != 0.0 {
            quad(mk.f.at(i), th, &mut out);
        }
    }
    out
}

pub const SECOND_ORDER_FLOOR: f64 = -1e-8;

/// Smallest eigenvalue of the second-order matrix per node; passes iff all `≥ −1e-8`.
pub fn second_order_condition(
    spec: &Problem,
    p: &SecondOrderField<f64>,
) -> Result<SecondOrderReport, VerifyError> {
    if p.0.steps() != spec.grid.steps() || p.0.rows() != spec.dims.n {
        return Err(VerifyError::Mismatch(
            "second-order field does not match the problem".into(),
        ));
    }
    let m = spec.dims.m;
    let min_eigenvalue: Vec<f64> = (0..=spec.grid.steps())
        .map(|i| {
            let mut s = second_order_matrix(spec, p, i);
            crate::dense::symmetrize(&mut s, m);
            min_sym_eigenvalue(&s, m)
        })
        .collect();
    let failing_nodes: Vec<usize> = min_eigenvalue
        .iter()
        .enumerate()
        .filter(|(_, &v)| !(v >= SECOND_ORDER_FLOOR))
        .map(|(i, _)| i)
        .collect();
    Ok(SecondOrderReport {
        pass: failing_nodes.is_empty(),
        min_eigenvalue,
        threshold: SECOND_ORDER_FLOOR,
        failing_nodes,
    })
}

/// Direction minimizing the predicted spike limit `⟨K, v⟩ + ½ vᵀ S₂ v`: `v = −S₂⁻¹K`,
/// or `−K` when `S₂` is not positive definite.
pub fn adversarial_direction(
    spec: &Problem,
    p: &SecondOrderField<f64>,
    i: usize,
    k: &[f64],
) -> Vec<f64> {
    let m = spec.dims.m;
    let s2 = second_order_matrix(spec, p, i);
    let mat = DMatrix::from_row_slice(m, m, &s2);
    let rhs = DVector::from_column_slice(k);
    match mat.cholesky() {
        Some(ch) => (-ch.solve(&rhs)).iter().copied().collect(),
        None => k.iter().map(|v| -v).collect(),
    }
}
