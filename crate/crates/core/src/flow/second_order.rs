//! The second-order adjoint `P(s; t)` row by row.

use rayon::prelude::*;

use super::rows::{at_point, field_at_point};
use super::FlowError;
use crate::dense::{add_scaled, gemm, gemm_acc, gemm_tn_acc, symmetrize};
use crate::field::TriangularField;
use crate::model::ProblemSpec;
use crate::scalar::Scalar;

/// `P[i][j] = P(s_j; t_i)`, symmetric, with `P[i][N] = −G(t_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondOrderField<T>(pub TriangularField<T>);

impl<T: Scalar> SecondOrderField<T> {
    pub fn at(&self, i: usize, j: usize) -> &[T] {
        self.0.at(i, j)
    }

    pub fn diag(&self, i: usize) -> &[T] {
        self.0.diag(i)
    }

    /// Largest eigenvalue over the whole triangle; `≤ 0` under the standing assumptions.
    pub fn max_eigenvalue(&self) -> T {
        let n = self.0.rows();
        let mut worst = -T::max_value().unwrap();
        let mut neg = vec![T::zero(); n * n];
        for i in 0..=self.0.steps() {
            for j in i..=self.0.steps() {
                for (o, &v) in neg.iter_mut().zip(self.0.at(i, j)) {
                    *o = -v;
                }
                worst = worst.max(-crate::model::min_sym_eigenvalue(&neg, n));
            }
        }
        worst
    }
}

struct Coeffs<T> {
    n: usize,
    a: Vec<T>,
    c: Vec<Vec<T>>,
    e: Vec<Vec<T>>,
    theta: Vec<T>,
}

fn rhs<T: Scalar>(co: &Coeffs<T>, q: &[T], p: usize, y: &[T], out: &mut [T], prod: &mut [T]) {
    let n = co.n;
    let nn = n * n;
    let neg = -T::one();
    let a = &co.a[p * nn..(p + 1) * nn];
    out.copy_from_slice(q);
    gemm_tn_acc(out, a, y, n, n, n, neg);
    gemm_acc(out, y, a, n, n, n, neg);
    for c in &co.c {
        let c = &c[p * nn..(p + 1) * nn];
        gemm(prod, y, c, n, n, n);
        gemm_tn_acc(out, c, prod, n, n, n, neg);
    }
    for (e, &th) in co.e.iter().zip(&co.theta) {
        if th == T::zero() {
            continue;
        }
        let e = &e[p * nn..(p + 1) * nn];
        gemm(prod, y, e, n, n, n);
        gemm_tn_acc(out, e, prod, n, n, n, -th);
    }
}

/// Integrates `dP/ds = −(AᵀP + PA + Σ CᵀPC + Σ θ EᵀPE − Q(t_i, s))` backward from
/// `P(T; t_i) = −G(t_i)` with RK4, symmetrizing after every step.
pub fn solve_second_order<T: Scalar>(
    spec: &ProblemSpec<T>,
) -> Result<SecondOrderField<T>, FlowError> {
    spec.validate()
        .map_err(|e| FlowError::Mismatch(e.to_string()))?;
    let n = spec.dims.n;
    let nn = n * n;
    let steps = spec.grid.steps();
    let pts = 2 * steps + 1;
    let cf = &spec.coeffs;
    let mut co = Coeffs {
        n,
        a: vec![T::zero(); pts * nn],
        c: vec![vec![T::zero(); pts * nn]; cf.channels.len()],
        e: vec![vec![T::zero(); pts * nn]; cf.marks.len()],
        theta: spec.jumps.intensities().to_vec(),
    };
    for p in 0..pts {
        at_point(&cf.a, p, &mut co.a[p * nn..(p + 1) * nn]);
        for (j, ch) in cf.channels.iter().enumerate() {
            at_point(&ch.c, p, &mut co.c[j][p * nn..(p + 1) * nn]);
        }
        for (k, mk) in cf.marks.iter().enumerate() {
            at_point(&mk.e, p, &mut co.e[k][p * nn..(p + 1) * nn]);
        }
    }
    let h = spec.grid.h();
    let half = h * T::lit(0.5);
    let sixth = h / T::lit(6.0);
    let two = T::lit(2.0);

    let rows: Vec<Vec<T>> = (0..=steps)
        .into_par_iter()
        .map(|i| {
            let mut buf = vec![T::zero(); (steps + 1 - i) * nn];
            let mut y: Vec<T> = spec.costs.g.at(i).iter().map(|&v| -v).collect();
            let (mut k1, mut k2, mut k3, mut k4) = (
                vec![T::zero(); nn],
                vec![T::zero(); nn],
                vec![T::zero(); nn],
                vec![T::zero(); nn],
            );
            let (mut tmp, mut prod) = (vec![T::zero(); nn], vec![T::zero(); nn]);
            let (mut q0, mut qm, mut q1) = (
                vec![T::zero(); nn],
                vec![T::zero(); nn],
                vec![T::zero(); nn],
            );
            buf[(steps - i) * nn..].copy_from_slice(&y);
            for j in ((i + 1)..=steps).rev() {
                let (p0, pm, p1) = (2 * j, 2 * j - 1, 2 * j - 2);
                field_at_point(&spec.costs.q, i, p0, &mut q0);
                field_at_point(&spec.costs.q, i, pm, &mut qm);
                field_at_point(&spec.costs.q, i, p1, &mut q1);
                rhs(&co, &q0, p0, &y, &mut k1, &mut prod);
                add_scaled(&mut tmp, &y, -half, &k1);
                rhs(&co, &qm, pm, &tmp, &mut k2, &mut prod);
                add_scaled(&mut tmp, &y, -half, &k2);
                rhs(&co, &qm, pm, &tmp, &mut k3, &mut prod);
                add_scaled(&mut tmp, &y, -h, &k3);
                rhs(&co, &q1, p1, &tmp, &mut k4, &mut prod);
                for k in 0..nn {
                    y[k] -= sixth * (k1[k] + two * (k2[k] + k3[k]) + k4[k]);
                }
                symmetrize(&mut y, n);
                if !crate::dense::all_finite(&y) {
                    return Err(FlowError::NonFinite { row: i, step: j });
                }
                buf[(j - 1 - i) * nn..(j - i) * nn].copy_from_slice(&y);
            }
            Ok(buf)
        })
        .collect::<Result<_, FlowError>>()?;

    let mut field = TriangularField::zeros(n, n, steps);
    for (i, buf) in rows.into_iter().enumerate() {
        field.row_mut(i).copy_from_slice(&buf);
    }
    Ok(SecondOrderField(field))
}
