//! Right-hand side of the flow system and RK4 marching along one row `t = t_i`.
//!
//! Stage points are `p = 0..=2N` at `s = p·h/2`; odd points are midpoints where
//! coefficients and gains are linear interpolants of their node neighbours.

use super::FlowError;
use crate::dense::{add_scaled, gemm, gemm_acc, gemm_tn_acc};
use crate::field::{NodeSeries, TriangularField};
use crate::model::ProblemSpec;
use crate::scalar::Scalar;

/// Writes the value at stage point `p` of a node series into `out`.
#[inline]
pub(crate) fn at_point<T: Scalar>(s: &NodeSeries<T>, p: usize, out: &mut [T]) {
    let j = p / 2;
    if p % 2 == 0 {
        out.copy_from_slice(s.at(j));
    } else {
        let half = T::lit(0.5);
        for ((o, &a), &b) in out.iter_mut().zip(s.at(j)).zip(s.at(j + 1)) {
            *o = (a + b) * half;
        }
    }
}

/// Value of row `i` of a triangular field at stage point `p ≥ 2i`.
#[inline]
pub(crate) fn field_at_point<T: Scalar>(f: &TriangularField<T>, i: usize, p: usize, out: &mut [T]) {
    let j = p / 2;
    if p % 2 == 0 {
        out.copy_from_slice(f.at(i, j));
    } else {
        let half = T::lit(0.5);
        for ((o, &a), &b) in out.iter_mut().zip(f.at(i, j)).zip(f.at(i, j + 1)) {
            *o = (a + b) * half;
        }
    }
}

/// Coefficients, open- and closed-loop, at every stage point.
pub(crate) struct StageData<T> {
    n: usize,
    d: usize,
    k: usize,
    theta: Vec<T>,
    a: Vec<T>,
    c: Vec<T>,
    e: Vec<T>,
    acl: Vec<T>,
    bcl: Vec<T>,
    ccl: Vec<T>,
    sigcl: Vec<T>,
    ecl: Vec<T>,
    jcl: Vec<T>,
}

impl<T: Scalar> StageData<T> {
    /// Open-loop parts filled; closed-loop parts equal open-loop until gains are set.
    pub fn new(spec: &ProblemSpec<T>) -> Self {
        let n = spec.dims.n;
        let d = spec.dims.d;
        let k = spec.jumps.len();
        let pts = 2 * spec.grid.steps() + 1;
        let nn = n * n;
        let mut sd = Self {
            n,
            d,
            k,
            theta: spec.jumps.intensities().to_vec(),
            a: vec![T::zero(); pts * nn],
            c: vec![T::zero(); pts * d * nn],
            e: vec![T::zero(); pts * k * nn],
            acl: vec![T::zero(); pts * nn],
            bcl: vec![T::zero(); pts * n],
            ccl: vec![T::zero(); pts * d * nn],
            sigcl: vec![T::zero(); pts * d * n],
            ecl: vec![T::zero(); pts * k * nn],
            jcl: vec![T::zero(); pts * k * n],
        };
        let cf = &spec.coeffs;
        for p in 0..pts {
            at_point(&cf.a, p, &mut sd.a[p * nn..(p + 1) * nn]);
            for (j, ch) in cf.channels.iter().enumerate() {
                let o = (p * d + j) * nn;
                at_point(&ch.c, p, &mut sd.c[o..o + nn]);
            }
            for (q, mk) in cf.marks.iter().enumerate() {
                let o = (p * k + q) * nn;
                at_point(&mk.e, p, &mut sd.e[o..o + nn]);
            }
        }
        sd
    }

    /// Rebuilds the closed-loop coefficients on points `lo..=hi` from node gains.
    pub fn set_gains(
        &mut self,
        spec: &ProblemSpec<T>,
        gain: &NodeSeries<T>,
        offset: &NodeSeries<T>,
        lo: usize,
        hi: usize,
    ) {
        let n = self.n;
        let m = spec.dims.m;
        let nn = n * n;
        let (d, k) = (self.d, self.k);
        let cf = &spec.coeffs;
        let mut big_psi = vec![T::zero(); m * n];
        let mut small_psi = vec![T::zero(); m];
        let mut bm = vec![T::zero(); n * m];
        let mut vec_n = vec![T::zero(); n];
        for p in lo..=hi {
            at_point(gain, p, &mut big_psi);
            at_point(offset, p, &mut small_psi);
            for v in &mut small_psi {
                *v = -*v;
            }
            let neg = -T::one();

            let acl = &mut self.acl[p * nn..(p + 1) * nn];
            acl.copy_from_slice(&self.a[p * nn..(p + 1) * nn]);
            at_point(&cf.b, p, &mut bm);
            gemm_acc(acl, &bm, &big_psi, n, m, n, neg);
            let bcl = &mut self.bcl[p * n..(p + 1) * n];
            at_point(&cf.drift, p, bcl);
            gemm_acc(bcl, &bm, &small_psi, n, m, 1, T::one());

            for (j, ch) in cf.channels.iter().enumerate() {
                let o = (p * d + j) * nn;
                let ccl = &mut self.ccl[o..o + nn];
                ccl.copy_from_slice(&self.c[o..o + nn]);
                at_point(&ch.d, p, &mut bm);
                gemm_acc(ccl, &bm, &big_psi, n, m, n, neg);
                let ov = (p * d + j) * n;
                let sig = &mut self.sigcl[ov..ov + n];
                at_point(&ch.sigma, p, &mut vec_n);
                sig.copy_from_slice(&vec_n);
                gemm_acc(sig, &bm, &small_psi, n, m, 1, T::one());
            }
            for (q, mk) in cf.marks.iter().enumerate() {
                let o = (p * k + q) * nn;
                let ecl = &mut self.ecl[o..o + nn];
                ecl.copy_from_slice(&self.e[o..o + nn]);
                at_point(&mk.f, p, &mut bm);
                gemm_acc(ecl, &bm, &big_psi, n, m, n, neg);
                let ov = (p * k + q) * n;
                let jc = &mut self.jcl[ov..ov + n];
                at_point(&mk.c, p, &mut vec_n);
                jc.copy_from_slice(&vec_n);
                gemm_acc(jc, &bm, &small_psi, n, m, 1, T::one());
            }
        }
    }

    pub fn state_len(&self) -> usize {
        3 * self.n * self.n + self.n
    }
}

/// Per-thread scratch space for one row integration.
pub(crate) struct RowWork<T> {
    k1: Vec<T>,
    k2: Vec<T>,
    k3: Vec<T>,
    k4: Vec<T>,
    tmp_state: Vec<T>,
    prod: Vec<T>,
    vec_n: Vec<T>,
    q: Vec<T>,
    qbar: Vec<T>,
}

impl<T: Scalar> RowWork<T> {
    pub fn new(n: usize) -> Self {
        let len = 3 * n * n + n;
        Self {
            k1: vec![T::zero(); len],
            k2: vec![T::zero(); len],
            k3: vec![T::zero(); len],
            k4: vec![T::zero(); len],
            tmp_state: vec![T::zero(); len],
            prod: vec![T::zero(); n * n],
            vec_n: vec![T::zero(); n],
            q: vec![T::zero(); n * n],
            qbar: vec![T::zero(); n * n],
        }
    }
}

/// `dy/ds` at stage point `p` of row `i`.
fn rhs<T: Scalar>(
    sd: &StageData<T>,
    spec: &ProblemSpec<T>,
    i: usize,
    p: usize,
    y: &[T],
    out: &mut [T],
    prod: &mut [T],
    vec_n: &mut [T],
    q: &mut [T],
    qbar: &mut [T],
) {
    let n = sd.n;
    if n == 1 {
        return rhs_scalar(sd, spec, i, p, y, out);
    }
    let nn = n * n;
    let (d, k) = (sd.d, sd.k);
    let (mm, rest) = y.split_at(nn);
    let (mbar, rest) = rest.split_at(nn);
    let (ups, phi) = rest.split_at(nn);
    let (dm, rest) = out.split_at_mut(nn);
    let (dmbar, rest) = rest.split_at_mut(nn);
    let (dups, dphi) = rest.split_at_mut(nn);

    let a = &sd.a[p * nn..(p + 1) * nn];
    let acl = &sd.acl[p * nn..(p + 1) * nn];
    let bcl = &sd.bcl[p * n..(p + 1) * n];
    let one = T::one();
    let neg = -one;

    field_at_point(&spec.costs.q, i, p, q);
    field_at_point(&spec.costs.qbar, i, p, qbar);

    // dM = −(M Acl + AᵀM + Σ CᵀM Ccl + Σ θ EᵀM Ecl + Q)
    for (o, &v) in dm.iter_mut().zip(q.iter()) {
        *o = -v;
    }
    gemm_acc(dm, mm, acl, n, n, n, neg);
    gemm_tn_acc(dm, a, mm, n, n, n, neg);
    // dφ = −((M+M̄) bcl + Aᵀφ + Σ CᵀM σcl + Σ θ EᵀM ccl)
    dphi.iter_mut().for_each(|x| *x = T::zero());
    gemm_acc(dphi, mm, bcl, n, n, 1, neg);
    gemm_acc(dphi, mbar, bcl, n, n, 1, neg);
    gemm_tn_acc(dphi, a, phi, n, n, 1, neg);
    for j in 0..d {
        let o = (p * d + j) * nn;
        gemm(prod, mm, &sd.ccl[o..o + nn], n, n, n);
        gemm_tn_acc(dm, &sd.c[o..o + nn], prod, n, n, n, neg);
        let ov = (p * d + j) * n;
        gemm(vec_n, mm, &sd.sigcl[ov..ov + n], n, n, 1);
        gemm_tn_acc(dphi, &sd.c[o..o + nn], vec_n, n, n, 1, neg);
    }
    for q_ in 0..k {
        let th = sd.theta[q_];
        if th == T::zero() {
            continue;
        }
        let o = (p * k + q_) * nn;
        gemm(prod, mm, &sd.ecl[o..o + nn], n, n, n);
        gemm_tn_acc(dm, &sd.e[o..o + nn], prod, n, n, n, -th);
        let ov = (p * k + q_) * n;
        gemm(vec_n, mm, &sd.jcl[ov..ov + n], n, n, 1);
        gemm_tn_acc(dphi, &sd.e[o..o + nn], vec_n, n, n, 1, -th);
    }

    // dM̄ = −(M̄ Acl + AᵀM̄ + Q̄)
    for (o, &v) in dmbar.iter_mut().zip(qbar.iter()) {
        *o = -v;
    }
    gemm_acc(dmbar, mbar, acl, n, n, n, neg);
    gemm_tn_acc(dmbar, a, mbar, n, n, n, neg);

    // dΥ = −AᵀΥ
    dups.iter_mut().for_each(|x| *x = T::zero());
    gemm_tn_acc(dups, a, ups, n, n, n, neg);
}

/// `n = 1` form of [`rhs`]: same equations, no matrix kernels.
fn rhs_scalar<T: Scalar>(
    sd: &StageData<T>,
    spec: &ProblemSpec<T>,
    i: usize,
    p: usize,
    y: &[T],
    out: &mut [T],
) {
    let (mm, mbar, ups, phi) = (y[0], y[1], y[2], y[3]);
    let (d, k) = (sd.d, sd.k);
    let j = p / 2;
    let half = T::lit(0.5);
    let tri = |f: &TriangularField<T>| {
        if p % 2 == 0 {
            f.at(i, j)[0]
        } else {
            (f.at(i, j)[0] + f.at(i, j + 1)[0]) * half
        }
    };
    let a = sd.a[p];
    let acl = sd.acl[p];
    let mut dm = mm * acl + a * mm + tri(&spec.costs.q);
    let mut dphi = (mm + mbar) * sd.bcl[p] + a * phi;
    for q in 0..d {
        let c = sd.c[p * d + q];
        dm += c * mm * sd.ccl[p * d + q];
        dphi += c * mm * sd.sigcl[p * d + q];
    }
    for q in 0..k {
        let th = sd.theta[q];
        let e = sd.e[p * k + q];
        dm += th * e * mm * sd.ecl[p * k + q];
        dphi += th * e * mm * sd.jcl[p * k + q];
    }
    out[0] = -dm;
    out[1] = -(mbar * acl + a * mbar + tri(&spec.costs.qbar));
    out[2] = -(a * ups);
    out[3] = -dphi;
}

/// One backward RK4 step of row `i` from `s_j` to `s_{j−1}`, in place.
pub(crate) fn step_back<T: Scalar>(
    sd: &StageData<T>,
    spec: &ProblemSpec<T>,
    w: &mut RowWork<T>,
    i: usize,
    j: usize,
    y: &mut [T],
) -> Result<(), FlowError> {
    let h = spec.grid.h();
    let half = h * T::lit(0.5);
    let (p0, pm, p1) = (2 * j, 2 * j - 1, 2 * j - 2);
    let RowWork {
        k1,
        k2,
        k3,
        k4,
        tmp_state,
        prod,
        vec_n,
        q,
        qbar,
    } = w;
    rhs(sd, spec, i, p0, y, k1, prod, vec_n, q, qbar);
    add_scaled(tmp_state, y, -half, k1);
    rhs(sd, spec, i, pm, tmp_state, k2, prod, vec_n, q, qbar);
    add_scaled(tmp_state, y, -half, k2);
    rhs(sd, spec, i, pm, tmp_state, k3, prod, vec_n, q, qbar);
    add_scaled(tmp_state, y, -h, k3);
    rhs(sd, spec, i, p1, tmp_state, k4, prod, vec_n, q, qbar);
    let sixth = h / T::lit(6.0);
    let two = T::lit(2.0);
    for idx in 0..y.len() {
        y[idx] -= sixth * (k1[idx] + two * (k2[idx] + k3[idx]) + k4[idx]);
    }
    if !crate::dense::all_finite(y) {
        return Err(FlowError::NonFinite { row: i, step: j });
    }
    Ok(())
}

/// Integrates row `i` from `s_N` (terminal data) down to `s_stop`, calling `store(j, y)`
/// at every node visited, terminal included.
pub(crate) fn integrate_row<T: Scalar>(
    sd: &StageData<T>,
    spec: &ProblemSpec<T>,
    w: &mut RowWork<T>,
    i: usize,
    stop: usize,
    y: &mut [T],
    mut store: impl FnMut(usize, &[T]),
) -> Result<(), FlowError> {
    let steps = spec.grid.steps();
    super::terminal_state(spec, i, y);
    store(steps, y);
    for j in ((stop + 1)..=steps).rev() {
        step_back(sd, spec, w, i, j, y)?;
        store(j - 1, y);
    }
    Ok(())
}

/// Splits a stacked state into its four fields at sample `(i, j)`.
pub(crate) fn store_state<T: Scalar>(
    fields: &mut [&mut TriangularField<T>; 4],
    n: usize,
    i: usize,
    j: usize,
    y: &[T],
) {
    let nn = n * n;
    fields[0].at_mut(i, j).copy_from_slice(&y[..nn]);
    fields[1].at_mut(i, j).copy_from_slice(&y[nn..2 * nn]);
    fields[2].at_mut(i, j).copy_from_slice(&y[2 * nn..3 * nn]);
    fields[3].at_mut(i, j).copy_from_slice(&y[3 * nn..]);
}
