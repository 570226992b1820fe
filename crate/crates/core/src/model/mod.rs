//! Problem description: grid, jump measure, sampled coefficients and cost weights.

mod config;
mod serialize;

pub use config::{build_problem, parse_document, ConfigError};
pub use serialize::{spec_to_document, write_spec};

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::field::{NodeSeries, TriangularField};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("grid needs at least 2 steps, got {0}")]
    TooFewSteps(usize),
    #[error("horizon must be positive and finite, got {0}")]
    BadHorizon(f64),
    #[error("{what}: expected {expected}, got {got}")]
    Shape {
        what: String,
        expected: String,
        got: String,
    },
    #[error("intensity {index} is {value}, must be non-negative")]
    NegativeIntensity { index: usize, value: f64 },
    #[error("mark {0} is the zero vector")]
    ZeroMark(usize),
    #[error("{0} contains a non-finite sample")]
    NonFinite(String),
    #[error("{0}")]
    WrongShape(String),
}

/// Uniform grid `t_i = i·h`, `h = T/N`, with `t_N = T` exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid<T> {
    horizon: T,
    steps: usize,
}

impl<T: Scalar> TimeGrid<T> {
    pub fn new(horizon: T, steps: usize) -> Result<Self, ModelError> {
        if steps < 2 {
            return Err(ModelError::TooFewSteps(steps));
        }
        if !(horizon.is_finite() && horizon > T::zero()) {
            return Err(ModelError::BadHorizon(horizon.as_f64()));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> T {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn nodes(&self) -> usize {
        self.steps + 1
    }

    pub fn h(&self) -> T {
        self.horizon / T::from_usize(self.steps).unwrap()
    }

    #[inline]
    pub fn t(&self, i: usize) -> T {
        if i == self.steps {
            self.horizon
        } else {
            T::from_usize(i).unwrap() * self.h()
        }
    }

    pub fn times(&self) -> Vec<T> {
        (0..=self.steps).map(|i| self.t(i)).collect()
    }
}

/// Finite Lévy measure: marks `z_k` with rates `θ_k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpMeasure<T> {
    marks: Vec<Vec<T>>,
    intensities: Vec<T>,
}

impl<T: Scalar> JumpMeasure<T> {
    pub fn none() -> Self {
        Self {
            marks: Vec::new(),
            intensities: Vec::new(),
        }
    }

    pub fn new(marks: Vec<Vec<T>>, intensities: Vec<T>) -> Result<Self, ModelError> {
        if marks.len() != intensities.len() {
            return Err(ModelError::Shape {
                what: "jump intensities".into(),
                expected: format!("{} entries", marks.len()),
                got: intensities.len().to_string(),
            });
        }
        for (k, &th) in intensities.iter().enumerate() {
            if !th.is_finite() {
                return Err(ModelError::NonFinite(format!("intensity {k}")));
            }
            if th < T::zero() {
                return Err(ModelError::NegativeIntensity {
                    index: k,
                    value: th.as_f64(),
                });
            }
        }
        for (k, z) in marks.iter().enumerate() {
            if z.iter().all(|v| *v == T::zero()) {
                return Err(ModelError::ZeroMark(k));
            }
        }
        Ok(Self { marks, intensities })
    }

    pub fn len(&self) -> usize {
        self.marks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marks.is_empty()
    }

    pub fn marks(&self) -> &[Vec<T>] {
        &self.marks
    }

    pub fn intensities(&self) -> &[T] {
        &self.intensities
    }

    pub fn total(&self) -> T {
        self.intensities.iter().fold(T::zero(), |s, &v| s + v)
    }
}

/// State dimension `n`, control dimension `m`, Brownian dimension `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub d: usize,
}

/// Per-mark coefficients of the jump term.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkCoeffs<T> {
    pub e: NodeSeries<T>,
    pub f: NodeSeries<T>,
    pub c: NodeSeries<T>,
}

/// Per-channel coefficients of the Brownian term.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelCoeffs<T> {
    pub c: NodeSeries<T>,
    pub d: NodeSeries<T>,
    pub sigma: NodeSeries<T>,
}

/// Drift `A X + B u + b`, Brownian channels and jump marks, sampled at every node.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet<T> {
    pub a: NodeSeries<T>,
    pub b: NodeSeries<T>,
    pub drift: NodeSeries<T>,
    pub channels: Vec<ChannelCoeffs<T>>,
    pub marks: Vec<MarkCoeffs<T>>,
}

/// Running weights live on the triangle; terminal weights are indexed by the
/// evaluation time `t` only.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSet<T> {
    pub q: TriangularField<T>,
    pub qbar: TriangularField<T>,
    pub r: TriangularField<T>,
    pub g: NodeSeries<T>,
    pub gbar: NodeSeries<T>,
    pub mu1: NodeSeries<T>,
    pub mu2: NodeSeries<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec<T> {
    pub dims: Dims,
    pub grid: TimeGrid<T>,
    pub jumps: JumpMeasure<T>,
    pub coeffs: CoefficientSet<T>,
    pub costs: CostSet<T>,
    pub x0: Vec<T>,
}

fn expect_series<T: Scalar>(
    what: &str,
    s: &NodeSeries<T>,
    rows: usize,
    cols: usize,
    nodes: usize,
) -> Result<(), ModelError> {
    if s.rows() != rows || s.cols() != cols || s.nodes() != nodes {
        return Err(ModelError::Shape {
            what: what.into(),
            expected: format!("{rows}x{cols} at {nodes} nodes"),
            got: format!("{}x{} at {} nodes", s.rows(), s.cols(), s.nodes()),
        });
    }
    if !crate::dense::all_finite(s.as_slice()) {
        return Err(ModelError::NonFinite(what.into()));
    }
    Ok(())
}

fn expect_field<T: Scalar>(
    what: &str,
    f: &TriangularField<T>,
    dim: usize,
    steps: usize,
) -> Result<(), ModelError> {
    if f.rows() != dim || f.cols() != dim || f.steps() != steps {
        return Err(ModelError::Shape {
            what: what.into(),
            expected: format!("{dim}x{dim} on {steps} steps"),
            got: format!("{}x{} on {} steps", f.rows(), f.cols(), f.steps()),
        });
    }
    if !crate::dense::all_finite(f.as_slice()) {
        return Err(ModelError::NonFinite(what.into()));
    }
    Ok(())
}

impl<T: Scalar> ProblemSpec<T> {
    /// Checks that every table matches `dims`, the grid length and the mark count.
    pub fn validate(&self) -> Result<(), ModelError> {
        let Dims { n, m, d } = self.dims;
        let nodes = self.grid.nodes();
        let steps = self.grid.steps();
        let c = &self.coeffs;
        expect_series("A", &c.a, n, n, nodes)?;
        expect_series("B", &c.b, n, m, nodes)?;
        expect_series("b", &c.drift, n, 1, nodes)?;
        if c.channels.len() != d {
            return Err(ModelError::Shape {
                what: "Brownian channels".into(),
                expected: d.to_string(),
                got: c.channels.len().to_string(),
            });
        }
        for (j, ch) in c.channels.iter().enumerate() {
            expect_series(&format!("C[{j}]"), &ch.c, n, n, nodes)?;
            expect_series(&format!("D[{j}]"), &ch.d, n, m, nodes)?;
            expect_series(&format!("sigma[{j}]"), &ch.sigma, n, 1, nodes)?;
        }
        if c.marks.len() != self.jumps.len() {
            return Err(ModelError::Shape {
                what: "jump coefficients".into(),
                expected: self.jumps.len().to_string(),
                got: c.marks.len().to_string(),
            });
        }
        for (k, mk) in c.marks.iter().enumerate() {
            expect_series(&format!("E[{k}]"), &mk.e, n, n, nodes)?;
            expect_series(&format!("F[{k}]"), &mk.f, n, m, nodes)?;
            expect_series(&format!("c[{k}]"), &mk.c, n, 1, nodes)?;
        }
        let k = &self.costs;
        expect_field("Q", &k.q, n, steps)?;
        expect_field("Qbar", &k.qbar, n, steps)?;
        expect_field("R", &k.r, m, steps)?;
        expect_series("G", &k.g, n, n, nodes)?;
        expect_series("Gbar", &k.gbar, n, n, nodes)?;
        expect_series("mu1", &k.mu1, n, n, nodes)?;
        expect_series("mu2", &k.mu2, n, 1, nodes)?;
        if self.x0.len() != n {
            return Err(ModelError::Shape {
                what: "x0".into(),
                expected: n.to_string(),
                got: self.x0.len().to_string(),
            });
        }
        if !crate::dense::all_finite(&self.x0) {
            return Err(ModelError::NonFinite("x0".into()));
        }
        Ok(())
    }

    /// The same problem with one extra mark of zero intensity and zero coefficients.
    pub fn with_idle_mark(&self) -> Self {
        let Dims { n, m, .. } = self.dims;
        let nodes = self.grid.nodes();
        let mut out = self.clone();
        let mut marks = self.jumps.marks().to_vec();
        let mut rates = self.jumps.intensities().to_vec();
        marks.push(vec![T::one()]);
        rates.push(T::zero());
        out.jumps = JumpMeasure::new(marks, rates).expect("idle mark is valid");
        out.coeffs.marks.push(MarkCoeffs {
            e: NodeSeries::zeros(n, n, nodes),
            f: NodeSeries::zeros(n, m, nodes),
            c: NodeSeries::zeros(n, 1, nodes),
        });
        out
    }

    /// True when the flow solver must mark its output experimental.
    pub fn is_experimental(&self) -> bool {
        self.dims.n > 1 || self.dims.d > 1
    }
}

pub(crate) fn to_dmatrix<T: Scalar>(a: &[T], rows: usize, cols: usize) -> DMatrix<T> {
    DMatrix::from_row_slice(rows, cols, a)
}

/// Smallest eigenvalue of the symmetric part of a square row-major block.
pub fn min_sym_eigenvalue<T: Scalar>(a: &[T], n: usize) -> T {
    if n == 0 {
        return T::zero();
    }
    if n == 1 {
        return a[0];
    }
    let m = to_dmatrix(a, n, n);
    let s = (&m + m.transpose()) * T::lit(0.5);
    s.symmetric_eigenvalues().min()
}

/// Per-node standing-assumption diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub min_eig_r: Vec<f64>,
    pub min_eig_g: Vec<f64>,
    pub min_eig_q: Vec<f64>,
    pub h2_satisfied: bool,
    pub continuity_warnings: Vec<String>,
}

fn jump_ratio<T: Scalar>(s: &NodeSeries<T>) -> f64 {
    let sup = s
        .as_slice()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.as_f64().abs()));
    if sup == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0f64;
    for i in 1..s.nodes() {
        let d = crate::dense::max_abs_diff(s.at(i), s.at(i - 1)).as_f64();
        worst = worst.max(d);
    }
    worst / sup
}

/// Positivity of `R(t,t)`, `G(t)` and `Q(t,·)` per node, plus a continuity heuristic.
pub fn check_h1_h2<T: Scalar>(spec: &ProblemSpec<T>) -> AssumptionReport {
    let Dims { n, m, .. } = spec.dims;
    let steps = spec.grid.steps();
    let k = &spec.costs;
    let mut min_eig_r = Vec::with_capacity(steps + 1);
    let mut min_eig_g = Vec::with_capacity(steps + 1);
    let mut min_eig_q = Vec::with_capacity(steps + 1);
    for i in 0..=steps {
        min_eig_r.push(min_sym_eigenvalue(k.r.at(i, i), m).as_f64());
        min_eig_g.push(min_sym_eigenvalue(k.g.at(i), n).as_f64());
        let q = (i..=steps)
            .map(|j| min_sym_eigenvalue(k.q.at(i, j), n).as_f64())
            .fold(f64::INFINITY, f64::min);
        min_eig_q.push(q);
    }
    let floor = -1e-10;
    let h2_satisfied = [&min_eig_r, &min_eig_g, &min_eig_q]
        .iter()
        .all(|v| v.iter().all(|&x| x >= floor));

    let mut series: Vec<(String, &NodeSeries<T>)> = vec![
        ("A".into(), &spec.coeffs.a),
        ("B".into(), &spec.coeffs.b),
        ("b".into(), &spec.coeffs.drift),
        ("G".into(), &k.g),
        ("Gbar".into(), &k.gbar),
        ("mu1".into(), &k.mu1),
        ("mu2".into(), &k.mu2),
    ];
    for (j, ch) in spec.coeffs.channels.iter().enumerate() {
        series.push((format!("C[{j}]"), &ch.c));
        series.push((format!("D[{j}]"), &ch.d));
        series.push((format!("sigma[{j}]"), &ch.sigma));
    }
    for (q, mk) in spec.coeffs.marks.iter().enumerate() {
        series.push((format!("E[{q}]"), &mk.e));
        series.push((format!("F[{q}]"), &mk.f));
        series.push((format!("c[{q}]"), &mk.c));
    }
    let continuity_warnings = series
        .into_iter()
        .filter_map(|(name, s)| {
            let r = jump_ratio(s);
            (r >= 0.5).then(|| format!("{name}: adjacent jump is {r:.3} of its sup norm"))
        })
        .collect();

    AssumptionReport {
        min_eig_r,
        min_eig_g,
        min_eig_q,
        h2_satisfied,
        continuity_warnings,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EllipticityReport {
    pub rho: Vec<f64>,
    pub min_rho: f64,
    pub delta: f64,
    pub pass: bool,
}

/// `ρ(t) = β(t)² + Σ_k γ_k(t)² θ_k` for a scalar wealth problem.
pub fn ellipticity_check<T: Scalar>(
    spec: &ProblemSpec<T>,
    delta: f64,
) -> Result<EllipticityReport, ModelError> {
    let Dims { n, m, d } = spec.dims;
    if (n, m, d) != (1, 1, 1) {
        return Err(ModelError::WrongShape(format!(
            "ellipticity needs n = m = d = 1, got n = {n}, m = {m}, d = {d}"
        )));
    }
    let rho: Vec<f64> = (0..spec.grid.nodes())
        .map(|i| rho_at(spec, i).as_f64())
        .collect();
    let min_rho = rho.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(EllipticityReport {
        pass: min_rho >= delta,
        rho,
        min_rho,
        delta,
    })
}

/// `D(t)² + Σ_k F_k(t)² θ_k` at node `i` of a scalar problem.
pub(crate) fn rho_at<T: Scalar>(spec: &ProblemSpec<T>, i: usize) -> T {
    let beta = spec.coeffs.channels[0].d.at(i)[0];
    let mut rho = beta * beta;
    for (mk, &th) in spec.coeffs.marks.iter().zip(spec.jumps.intensities()) {
        let g = mk.f.at(i)[0];
        rho += g * g * th;
    }
    rho
}

/// Zero problem of the given shape; callers overwrite what they need.
pub fn zero_problem<T: Scalar>(
    dims: Dims,
    grid: TimeGrid<T>,
    jumps: JumpMeasure<T>,
) -> ProblemSpec<T> {
    let Dims { n, m, d } = dims;
    let nodes = grid.nodes();
    let steps = grid.steps();
    let z = |r, c| NodeSeries::zeros(r, c, nodes);
    ProblemSpec {
        dims,
        grid,
        coeffs: CoefficientSet {
            a: z(n, n),
            b: z(n, m),
            drift: z(n, 1),
            channels: (0..d)
                .map(|_| ChannelCoeffs {
                    c: z(n, n),
                    d: z(n, m),
                    sigma: z(n, 1),
                })
                .collect(),
            marks: (0..jumps.len())
                .map(|_| MarkCoeffs {
                    e: z(n, n),
                    f: z(n, m),
                    c: z(n, 1),
                })
                .collect(),
        },
        costs: CostSet {
            q: TriangularField::zeros(n, n, steps),
            qbar: TriangularField::zeros(n, n, steps),
            r: TriangularField::zeros(m, m, steps),
            g: z(n, n),
            gbar: z(n, n),
            mu1: z(n, n),
            mu2: z(n, 1),
        },
        jumps,
        x0: vec![T::zero(); n],
    }
}
