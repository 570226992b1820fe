//! Euler–Maruyama with Poisson jump counts, and Monte Carlo evaluation of the cost.
//!
//! Path `p` draws from `ChaCha8Rng::seed_from_u64(seed)` on stream `p`: per step, `d`
//! standard normals followed by one Poisson count per mark with positive rate. Results
//! do not depend on the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::field::NodeSeries;
use crate::{Law, Problem};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("non-finite state on path {path} at step {step}")]
    NonFinite { path: usize, step: usize },
    #[error("control does not match the problem: {0}")]
    ControlMismatch(String),
    #[error("invalid simulation request: {0}")]
    Request(String),
}

/// What drives `u` along a path.
#[derive(Debug, Clone, Copy)]
pub enum Control<'a> {
    /// `u = −Ψ X − ψ` on the simulated state.
    Feedback(&'a Law),
    /// Deterministic open-loop values, `m×1` per node.
    Table(&'a NodeSeries<f64>),
    /// The law's control along the unperturbed path plus `v` on nodes
    /// `start..start + width`; the shift is open-loop.
    Spike {
        law: &'a Law,
        start: usize,
        width: usize,
        v: &'a [f64],
    },
}

/// States, controls and jump events of `paths` trajectories from node `t_start`.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub paths: usize,
    pub n: usize,
    pub m: usize,
    pub t_start: usize,
    pub steps: usize,
    pub xi: Vec<f64>,
    pub seed: u64,
    x: Vec<f64>,
    u: Vec<f64>,
    jumps: Vec<Vec<(u32, u32)>>,
}

impl PathEnsemble {
    fn span(&self) -> usize {
        self.steps - self.t_start
    }

    /// State of path `p` at absolute node `j ≥ t_start`.
    pub fn state(&self, p: usize, j: usize) -> &[f64] {
        let k = (p * (self.span() + 1) + (j - self.t_start)) * self.n;
        &self.x[k..k + self.n]
    }

    /// Control applied on `[s_j, s_{j+1})`, `t_start ≤ j < N`.
    pub fn control(&self, p: usize, j: usize) -> &[f64] {
        let k = (p * self.span() + (j - self.t_start)) * self.m;
        &self.u[k..k + self.m]
    }

    /// `(node, mark)` for every jump of path `p`, one entry per event.
    pub fn jump_log(&self, p: usize) -> &[(u32, u32)] {
        &self.jumps[p]
    }

    /// Ensemble mean of `X(s_j)`.
    pub fn mean(&self, j: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.n];
        for p in 0..self.paths {
            for (a, &b) in m.iter_mut().zip(self.state(p, j)) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|v| *v /= self.paths as f64);
        m
    }

    /// CSV `node, s, mean_X_1..n, stderr_1..n`.
    pub fn summary_csv(&self, spec: &Problem) -> String {
        let mut header = vec!["node".to_string(), "s".to_string()];
        header.extend((1..=self.n).map(|k| format!("mean_X_{k}")));
        header.extend((1..=self.n).map(|k| format!("stderr_{k}")));
        let pf = self.paths as f64;
        let rows = (self.t_start..=self.steps).map(|j| {
            let mean = self.mean(j);
            let mut var = vec![0.0; self.n];
            for p in 0..self.paths {
                for (k, &x) in self.state(p, j).iter().enumerate() {
                    var[k] += (x - mean[k]).powi(2);
                }
            }
            let mut row = vec![j as f64, spec.grid.t(j)];
            row.extend(mean.iter().copied());
            row.extend(var.iter().map(|v| {
                if self.paths > 1 {
                    (v / (pf - 1.0) / pf).sqrt()
                } else {
                    0.0
                }
            }));
            row
        });
        let h: Vec<&str> = header.iter().map(String::as_str).collect();
        crate::io::csv_table(&h, rows)
    }
}

fn check_control(spec: &Problem, control: &Control) -> Result<(), SimError> {
    let (n, m, nodes) = (spec.dims.n, spec.dims.m, spec.grid.nodes());
    let law_ok = |law: &Law| law.n() == n && law.m() == m && law.nodes() == nodes;
    match control {
        Control::Feedback(law) if !law_ok(law) => Err(SimError::ControlMismatch(
            "law shape or grid differs".into(),
        )),
        Control::Table(t) if t.rows() != m || t.cols() != 1 || t.nodes() != nodes => Err(
            SimError::ControlMismatch("control table shape or grid differs".into()),
        ),
        Control::Spike {
            law,
            start,
            width,
            v,
        } => {
            if !law_ok(law) {
                return Err(SimError::ControlMismatch(
                    "law shape or grid differs".into(),
                ));
            }
            if v.len() != m {
                return Err(SimError::ControlMismatch(format!(
                    "v has {} entries, m = {m}",
                    v.len()
                )));
            }
            if *width == 0 || start + width > spec.grid.steps() {
                return Err(SimError::Request(format!(
                    "spike window {start}..{} leaves the horizon",
                    start + width
                )));
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

/// `out = A x + B u + b` style affine map: `out += M x` for an r×c block.
#[inline]
fn mat_vec_acc(out: &mut [f64], a: &[f64], x: &[f64], alpha: f64) {
    crate::dense::gemm_acc(out, a, x, out.len(), x.len(), 1, alpha);
}

/// Noise for one step: `d` normals and `K` Poisson counts.
pub(crate) struct StepNoise {
    pub normals: Vec<f64>,
    pub counts: Vec<f64>,
}

pub(crate) struct PathRng {
    rng: ChaCha8Rng,
    poisson: Vec<Option<Poisson<f64>>>,
}

impl StepNoise {
    pub(crate) fn new(d: usize, k: usize) -> Self {
        Self {
            normals: vec![0.0; d],
            counts: vec![0.0; k],
        }
    }
}

impl PathRng {
    pub(crate) fn new(seed: u64, path: usize, rates: &[f64], h: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path as u64);
        let poisson = rates
            .iter()
            .map(|&th| {
                if th > 0.0 {
                    Some(Poisson::new(th * h).expect("positive rate"))
                } else {
                    None
                }
            })
            .collect();
        Self { rng, poisson }
    }

    pub(crate) fn draw(&mut self, out: &mut StepNoise) {
        for z in out.normals.iter_mut() {
            *z = StandardNormal.sample(&mut self.rng);
        }
        for (c, dist) in out.counts.iter_mut().zip(&self.poisson) {
            *c = match dist {
                Some(d) => d.sample(&mut self.rng),
                None => 0.0,
            };
        }
    }
}

/// The Euler map of one step with its noise drawn:
/// `x ← x + L x + K u + k` with `L = A h + Σ C √h ξ + Σ E (ΔN − θh)`, `K`, `k` alike.
pub(crate) struct StepMap {
    n: usize,
    m: usize,
    lin: Vec<f64>,
    ctl: Vec<f64>,
    konst: Vec<f64>,
    inc: Vec<f64>,
}

impl StepMap {
    pub(crate) fn new(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            lin: vec![0.0; n * n],
            ctl: vec![0.0; n * m],
            konst: vec![0.0; n],
            inc: vec![0.0; n],
        }
    }

    pub(crate) fn build(&mut self, spec: &Problem, i: usize, noise: &StepNoise) {
        let h = spec.grid.h();
        let sq = h.sqrt();
        let cf = &spec.coeffs;
        let mut put = |w: f64, a: &[f64], b: &[f64], c: &[f64], first: bool| {
            for (o, &v) in self.lin.iter_mut().zip(a) {
                *o = if first { w * v } else { *o + w * v };
            }
            for (o, &v) in self.ctl.iter_mut().zip(b) {
                *o = if first { w * v } else { *o + w * v };
            }
            for (o, &v) in self.konst.iter_mut().zip(c) {
                *o = if first { w * v } else { *o + w * v };
            }
        };
        put(h, cf.a.at(i), cf.b.at(i), cf.drift.at(i), true);
        for (ch, &z) in cf.channels.iter().zip(&noise.normals) {
            put(sq * z, ch.c.at(i), ch.d.at(i), ch.sigma.at(i), false);
        }
        for ((mk, &cnt), &th) in cf
            .marks
            .iter()
            .zip(&noise.counts)
            .zip(spec.jumps.intensities())
        {
            if th != 0.0 {
                put(cnt - th * h, mk.e.at(i), mk.f.at(i), mk.c.at(i), false);
            }
        }
    }

    #[inline]
    pub(crate) fn apply(&mut self, x: &mut [f64], u: &[f64]) {
        let (n, m) = (self.n, self.m);
        if n == 1 && m == 1 {
            x[0] += self.lin[0] * x[0] + self.ctl[0] * u[0] + self.konst[0];
            return;
        }
        self.inc.copy_from_slice(&self.konst);
        crate::dense::gemm_acc(&mut self.inc, &self.lin, x, n, n, 1, 1.0);
        crate::dense::gemm_acc(&mut self.inc, &self.ctl, u, n, m, 1, 1.0);
        crate::dense::axpy(x, 1.0, &self.inc);
    }
}

/// Simulates `paths` trajectories from `(t_start, xi)` under `control`.
pub fn simulate(
    spec: &Problem,
    control: Control,
    t_start: usize,
    xi: &[f64],
    paths: usize,
    seed: u64,
) -> Result<PathEnsemble, SimError> {
    let (n, m, d) = (spec.dims.n, spec.dims.m, spec.dims.d);
    let steps = spec.grid.steps();
    if t_start >= steps {
        return Err(SimError::Request(format!(
            "t_start {t_start} must be below N = {steps}"
        )));
    }
    if paths == 0 {
        return Err(SimError::Request("at least one path is required".into()));
    }
    if xi.len() != n {
        return Err(SimError::Request(format!(
            "xi has {} entries, n = {n}",
            xi.len()
        )));
    }
    check_control(spec, &control)?;
    let span = steps - t_start;
    let h = spec.grid.h();
    let rates = spec.jumps.intensities().to_vec();
    let k = rates.len();
    let mut x = vec![0.0; paths * (span + 1) * n];
    let mut u = vec![0.0; paths * span * m];

    let logs: Vec<Result<Vec<(u32, u32)>, SimError>> = x
        .par_chunks_mut((span + 1) * n)
        .zip(u.par_chunks_mut(span * m))
        .enumerate()
        .map(|(p, (xs, us))| {
            let mut rng = PathRng::new(seed, p, &rates, h);
            let mut noise = StepNoise::new(d, k);
            let mut state = xi.to_vec();
            let mut shadow = xi.to_vec();
            let mut map = StepMap::new(n, m);
            let mut ctl = vec![0.0; m];
            let mut base = vec![0.0; m];
            let mut log = Vec::new();
            xs[..n].copy_from_slice(&state);
            for (s, i) in (t_start..steps).enumerate() {
                rng.draw(&mut noise);
                map.build(spec, i, &noise);
                match control {
                    Control::Feedback(law) => law.control(i, &state, &mut ctl),
                    Control::Table(t) => ctl.copy_from_slice(t.at(i)),
                    Control::Spike {
                        law,
                        start,
                        width,
                        v,
                    } => {
                        law.control(i, &shadow, &mut base);
                        ctl.copy_from_slice(&base);
                        if i >= start && i < start + width {
                            crate::dense::axpy(&mut ctl, 1.0, v);
                        }
                        map.apply(&mut shadow, &base);
                    }
                }
                us[s * m..(s + 1) * m].copy_from_slice(&ctl);
                map.apply(&mut state, &ctl);
                if !state.iter().all(|v| v.is_finite()) {
                    return Err(SimError::NonFinite { path: p, step: i });
                }
                for (q, &cnt) in noise.counts.iter().enumerate() {
                    for _ in 0..(cnt as u32) {
                        log.push((i as u32, q as u32));
                    }
                }
                xs[(s + 1) * n..(s + 2) * n].copy_from_slice(&state);
            }
            Ok(log)
        })
        .collect();
    let jumps = logs.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(PathEnsemble {
        paths,
        n,
        m,
        t_start,
        steps,
        xi: xi.to_vec(),
        seed,
        x,
        u,
        jumps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostBreakdown {
    pub running_q: f64,
    pub running_qbar: f64,
    pub running_r: f64,
    pub terminal_linear: f64,
    pub terminal_g: f64,
    pub terminal_gbar: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.running_q
            + self.running_qbar
            + self.running_r
            + self.terminal_linear
            + self.terminal_g
            + self.terminal_gbar
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub paths: usize,
    pub breakdown: CostBreakdown,
    /// How the mean-field terms enter the standard error.
    pub note: String,
}

pub(crate) fn quad(a: &[f64], x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let mut s = 0.0;
    for r in 0..n {
        let mut row = 0.0;
        for c in 0..n {
            row += a[r * n + c] * y[c];
        }
        s += x[r] * row;
    }
    s
}

/// Accumulates one path's cost from `(t_start, ξ)`, node by node.
///
/// Slots: running Q, running R, terminal linear, terminal G, and the mean-field
/// linearization `Σ w_j⟨Q̄ m_j, X_j⟩ + ⟨Ḡ m_N, X_N⟩` that enters only the standard error.
struct CostWalker<'a> {
    spec: &'a Problem,
    ti: usize,
    means: Option<&'a [Vec<f64>]>,
    /// `R(t, ·)` averaged over each step, per node from `ti`.
    rbar: &'a [Vec<f64>],
    has_q: bool,
}

fn step_average_r(spec: &Problem, ti: usize) -> Vec<Vec<f64>> {
    let r = &spec.costs.r;
    (ti..spec.grid.steps())
        .map(|j| {
            r.at(ti, j)
                .iter()
                .zip(r.at(ti, j + 1))
                .map(|(a, b)| 0.5 * (a + b))
                .collect()
        })
        .collect()
}

fn row_has_q(spec: &Problem, ti: usize) -> bool {
    (ti..=spec.grid.steps()).any(|j| spec.costs.q.at(ti, j).iter().any(|&v| v != 0.0))
}

impl<'a> CostWalker<'a> {
    fn new(
        spec: &'a Problem,
        ti: usize,
        means: Option<&'a [Vec<f64>]>,
        rbar: &'a [Vec<f64>],
        has_q: bool,
    ) -> Self {
        Self {
            spec,
            ti,
            means,
            rbar,
            has_q,
        }
    }

    /// State at node `j`, and the control on `[s_j, s_{j+1})` when `j < N`.
    #[inline]
    fn visit(&mut self, acc: &mut [f64; 5], j: usize, x: &[f64], u: Option<&[f64]>) {
        let k = &self.spec.costs;
        let (ti, steps) = (self.ti, self.spec.grid.steps());
        let h = self.spec.grid.h();
        let w = if j == ti || j == steps { 0.5 * h } else { h };
        if self.has_q {
            acc[0] += w * 0.5 * quad(k.q.at(ti, j), x, x);
        }
        if let Some(means) = self.means {
            acc[4] += w * quad(k.qbar.at(ti, j), &means[j - ti], x);
        }
        if let Some(u) = u {
            acc[1] += h * 0.5 * quad(&self.rbar[j - ti], u, u);
        }
    }

    fn terminal(&self, acc: &mut [f64; 5], xi: &[f64], xt: &[f64]) {
        let k = &self.spec.costs;
        let ti = self.ti;
        let mut lin = k.mu2.at(ti).to_vec();
        mat_vec_acc(&mut lin, k.mu1.at(ti), xi, 1.0);
        acc[2] += lin.iter().zip(xt).map(|(a, b)| a * b).sum::<f64>();
        acc[3] += 0.5 * quad(k.g.at(ti), xt, xt);
        if let Some(means) = self.means {
            acc[4] += quad(k.gbar.at(ti), &means[means.len() - 1], xt);
        }
    }
}

/// Per-path cost terms of one control, plus the ensemble-mean part.
#[derive(Debug, Clone)]
pub(crate) struct PathCosts {
    pub terms: Vec<[f64; 4]>,
    /// Path cost plus mean-field linearization; its sample variance gives the stderr.
    pub influence: Vec<f64>,
    /// `(running Q̄, terminal Ḡ)` evaluated at the ensemble means.
    pub mean_field: (f64, f64),
}

impl PathCosts {
    fn from_rows(
        spec: &Problem,
        ti: usize,
        rows: Vec<[f64; 5]>,
        means: Option<&[Vec<f64>]>,
    ) -> Self {
        let mean_field = means
            .map(|m| mean_field_terms(spec, ti, m))
            .unwrap_or((0.0, 0.0));
        PathCosts {
            terms: rows.iter().map(|r| [r[0], r[1], r[2], r[3]]).collect(),
            influence: rows
                .iter()
                .map(|r| r[0] + r[1] + r[2] + r[3] + r[4])
                .collect(),
            mean_field,
        }
    }

    pub fn breakdown(&self) -> CostBreakdown {
        let pf = self.terms.len() as f64;
        let mut sums = [0.0; 4];
        for t in &self.terms {
            for (s, v) in sums.iter_mut().zip(t) {
                *s += v;
            }
        }
        CostBreakdown {
            running_q: sums[0] / pf,
            running_qbar: self.mean_field.0,
            running_r: sums[1] / pf,
            terminal_linear: sums[2] / pf,
            terminal_g: sums[3] / pf,
            terminal_gbar: self.mean_field.1,
        }
    }
}

fn has_mean_field(spec: &Problem) -> bool {
    !(spec.costs.qbar.is_zero() && spec.costs.gbar.is_zero())
}

fn mean_field_terms(spec: &Problem, ti: usize, means: &[Vec<f64>]) -> (f64, f64) {
    let steps = spec.grid.steps();
    let h = spec.grid.h();
    let k = &spec.costs;
    let mut run = 0.0;
    for j in ti..=steps {
        let w = if j == ti || j == steps { 0.5 * h } else { h };
        let mj = &means[j - ti];
        run += w * 0.5 * quad(k.qbar.at(ti, j), mj, mj);
    }
    let mt = &means[steps - ti];
    (run, 0.5 * quad(k.gbar.at(ti), mt, mt))
}

/// Monte Carlo estimate of `J(t_start, ξ, u)` with its component breakdown.
pub fn estimate_cost(spec: &Problem, ens: &PathEnsemble) -> Result<CostEstimate, SimError> {
    if ens.steps != spec.grid.steps() || ens.n != spec.dims.n || ens.m != spec.dims.m {
        return Err(SimError::ControlMismatch(
            "ensemble does not match the problem".into(),
        ));
    }
    let ti = ens.t_start;
    let means: Option<Vec<Vec<f64>>> =
        has_mean_field(spec).then(|| (ti..=ens.steps).map(|j| ens.mean(j)).collect());
    let rbar = step_average_r(spec, ti);
    let has_q = row_has_q(spec, ti);
    let rows: Vec<[f64; 5]> = (0..ens.paths)
        .into_par_iter()
        .map(|p| {
            let mut walker = CostWalker::new(spec, ti, means.as_deref(), &rbar, has_q);
            let mut acc = [0.0; 5];
            for j in ti..=ens.steps {
                let u = (j < ens.steps).then(|| ens.control(p, j));
                walker.visit(&mut acc, j, ens.state(p, j), u);
            }
            walker.terminal(&mut acc, &ens.xi, ens.state(p, ens.steps));
            acc
        })
        .collect();
    let costs = PathCosts::from_rows(spec, ti, rows, means.as_deref());
    let breakdown = costs.breakdown();
    Ok(CostEstimate {
        mean: breakdown.total(),
        stderr: stderr_of(&costs.influence),
        paths: ens.paths,
        breakdown,
        note: MEAN_FIELD_NOTE.into(),
    })
}

pub(crate) const MEAN_FIELD_NOTE: &str =
    "stderr from per-path influence values: path cost plus the linearized Qbar/Gbar terms at the ensemble mean";

pub(crate) fn stderr_of(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    (var / n as f64).sqrt()
}

/// An open-loop shift `v` on nodes `t_start..t_start + width`.
#[derive(Debug, Clone)]
pub(crate) struct Shift {
    pub width: usize,
    pub v: Vec<f64>,
}

const BLOCK: usize = 512;

/// Runs the law and every shifted control on shared noise, one path at a time.
/// `visit(c, j, x, u)` sees control `c` (0 is the law itself) at node `j`.
fn lockstep_path(
    spec: &Problem,
    law: &Law,
    t_start: usize,
    xi: &[f64],
    shifts: &[Shift],
    rng: &mut PathRng,
    mut visit: impl FnMut(usize, usize, &[f64], Option<&[f64]>),
) -> Result<(), usize> {
    let (n, m, d, k) = (spec.dims.n, spec.dims.m, spec.dims.d, spec.jumps.len());
    let steps = spec.grid.steps();
    let c = shifts.len() + 1;
    let mut noise = StepNoise::new(d, k);
    let mut xs: Vec<Vec<f64>> = vec![xi.to_vec(); c];
    let mut base = vec![0.0; m];
    let mut u = vec![0.0; m];
    let mut map = StepMap::new(n, m);
    for i in t_start..steps {
        rng.draw(&mut noise);
        map.build(spec, i, &noise);
        law.control(i, &xs[0], &mut base);
        for ci in 0..c {
            u.copy_from_slice(&base);
            if ci > 0 && i < t_start + shifts[ci - 1].width {
                crate::dense::axpy(&mut u, 1.0, &shifts[ci - 1].v);
            }
            visit(ci, i, &xs[ci], Some(&u));
            map.apply(&mut xs[ci], &u);
            if !xs[ci].iter().all(|v| v.is_finite()) {
                return Err(i);
            }
        }
    }
    for (ci, x) in xs.iter().enumerate() {
        visit(ci, steps, x, None);
    }
    Ok(())
}

/// Per-path costs of the law (index 0) and of each shifted control, all on common
/// random numbers. Path `p` uses the same stream as in [`simulate`], so index 0 matches
/// `estimate_cost` on a `Feedback` ensemble and index `k` matches a `Spike` ensemble.
pub(crate) fn paired_costs(
    spec: &Problem,
    law: &Law,
    t_start: usize,
    xi: &[f64],
    shifts: &[Shift],
    paths: usize,
    seed: u64,
) -> Result<Vec<PathCosts>, SimError> {
    let steps = spec.grid.steps();
    if t_start >= steps || paths == 0 || xi.len() != spec.dims.n {
        return Err(SimError::Request(
            "t_start, paths or xi out of range".into(),
        ));
    }
    check_control(spec, &Control::Feedback(law))?;
    for s in shifts {
        check_control(
            spec,
            &Control::Spike {
                law,
                start: t_start,
                width: s.width,
                v: &s.v,
            },
        )?;
    }
    let c = shifts.len() + 1;
    let n = spec.dims.n;
    let span = steps - t_start + 1;
    let h = spec.grid.h();
    let rates = spec.jumps.intensities().to_vec();
    let blocks: Vec<std::ops::Range<usize>> = (0..paths)
        .step_by(BLOCK)
        .map(|a| a..(a + BLOCK).min(paths))
        .collect();

    // pass 1: per-control node means, blocks summed in order
    let means: Option<Vec<Vec<Vec<f64>>>> = if has_mean_field(spec) {
        let partial: Vec<Result<Vec<f64>, SimError>> = blocks
            .par_iter()
            .map(|r| {
                let mut sums = vec![0.0; c * span * n];
                for p in r.clone() {
                    let mut rng = PathRng::new(seed, p, &rates, h);
                    lockstep_path(spec, law, t_start, xi, shifts, &mut rng, |ci, j, x, _| {
                        let o = (ci * span + j - t_start) * n;
                        crate::dense::axpy(&mut sums[o..o + n], 1.0, x);
                    })
                    .map_err(|step| SimError::NonFinite { path: p, step })?;
                }
                Ok(sums)
            })
            .collect();
        let mut total = vec![0.0; c * span * n];
        for b in partial {
            crate::dense::axpy(&mut total, 1.0, &b?);
        }
        let pf = paths as f64;
        Some(
            (0..c)
                .map(|ci| {
                    (0..span)
                        .map(|j| {
                            total[(ci * span + j) * n..(ci * span + j + 1) * n]
                                .iter()
                                .map(|v| v / pf)
                                .collect()
                        })
                        .collect()
                })
                .collect(),
        )
    } else {
        None
    };

    // pass 2: per-path cost terms
    let rbar = step_average_r(spec, t_start);
    let has_q = row_has_q(spec, t_start);
    let rows: Vec<Result<Vec<[f64; 5]>, SimError>> = (0..paths)
        .into_par_iter()
        .map(|p| {
            let mut walkers: Vec<CostWalker> = (0..c)
                .map(|ci| {
                    CostWalker::new(
                        spec,
                        t_start,
                        means.as_ref().map(|m| m[ci].as_slice()),
                        &rbar,
                        has_q,
                    )
                })
                .collect();
            let mut acc = vec![[0.0; 5]; c];
            let mut rng = PathRng::new(seed, p, &rates, h);
            lockstep_path(spec, law, t_start, xi, shifts, &mut rng, |ci, j, x, u| {
                walkers[ci].visit(&mut acc[ci], j, x, u);
                if j == steps {
                    walkers[ci].terminal(&mut acc[ci], xi, x);
                }
            })
            .map_err(|step| SimError::NonFinite { path: p, step })?;
            Ok(acc)
        })
        .collect();
    let mut per_control: Vec<Vec<[f64; 5]>> = vec![Vec::with_capacity(paths); c];
    for r in rows {
        for (ci, a) in r?.into_iter().enumerate() {
            per_control[ci].push(a);
        }
    }
    Ok(per_control
        .into_iter()
        .enumerate()
        .map(|(ci, rows)| {
            PathCosts::from_rows(
                spec,
                t_start,
                rows,
                means.as_ref().map(|m| m[ci].as_slice()),
            )
        })
        .collect())
}

/// Euler recursion of `E[X]` under a feedback law: noise terms are mean zero.
pub fn mean_trajectory(spec: &Problem, law: &Law, t_start: usize, xi: &[f64]) -> Vec<Vec<f64>> {
    let n = spec.dims.n;
    let m = spec.dims.m;
    let h = spec.grid.h();
    let mut out = Vec::with_capacity(spec.grid.steps() - t_start + 1);
    let mut x = xi.to_vec();
    let mut u = vec![0.0; m];
    let mut tmp = vec![0.0; n];
    out.push(x.clone());
    for i in t_start..spec.grid.steps() {
        law.control(i, &x, &mut u);
        let cf = &spec.coeffs;
        tmp.copy_from_slice(cf.drift.at(i));
        mat_vec_acc(&mut tmp, cf.a.at(i), &x, 1.0);
        mat_vec_acc(&mut tmp, cf.b.at(i), &u, 1.0);
        crate::dense::axpy(&mut x, h, &tmp);
        out.push(x.clone());
    }
    out
}
