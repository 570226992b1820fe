//! The flow of adjoint ODEs on the grid triangle and the feedback law it induces.

mod gains;
mod marching;
mod picard;
mod residual;
mod rows;
mod second_order;

pub use gains::{theta_matrix, ThetaInfo};
pub use marching::solve_flow_marching;
pub use picard::{solve_flow_picard, PicardTrace};
pub use residual::{feedback_residual, flow_under_law, gains_from_flow};
pub use second_order::{solve_second_order, SecondOrderField};

use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::field::{NodeSeries, TriangularField};
use crate::model::{ProblemSpec, TimeGrid};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("theta gate failed at node {node}: cond(S) = {cond:.3e} exceeds 1e10")]
    ThetaGate { node: usize, cond: f64 },
    #[error("theta gate failed at node {node}: S is singular")]
    ThetaSingular { node: usize },
    #[error("corrector did not settle at node {node} after {iterations} iterations (last change {change:.3e})")]
    Corrector {
        node: usize,
        iterations: usize,
        change: f64,
    },
    #[error("non-finite value in row {row} at step {step}")]
    NonFinite { row: usize, step: usize },
    #[error(
        "picard iteration hit {iterations} iterations; last two updates {previous:.3e}, {last:.3e}"
    )]
    MaxIter {
        iterations: usize,
        last: f64,
        previous: f64,
    },
    #[error("{0}")]
    Mismatch(String),
}

impl FlowError {
    /// Grid node the failure is attributed to, if any.
    pub fn node(&self) -> Option<usize> {
        match self {
            FlowError::ThetaGate { node, .. }
            | FlowError::ThetaSingular { node }
            | FlowError::Corrector { node, .. } => Some(*node),
            FlowError::NonFinite { row, .. } => Some(*row),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowDiagnostics {
    pub solver: String,
    /// `cond(S)` at every node for the final diagonal.
    pub theta_cond: Vec<f64>,
    /// Corrector passes per node; empty for the Picard solver.
    pub corrector_iterations: Vec<u32>,
    pub experimental: bool,
}

/// `(M, M̄, Υ, φ)` on the grid triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSolution<T> {
    pub m: TriangularField<T>,
    pub mbar: TriangularField<T>,
    pub upsilon: TriangularField<T>,
    pub phi: TriangularField<T>,
    pub diagnostics: FlowDiagnostics,
}

/// `û = −Ψ X − ψ` with `Ψ` (m×n) and `ψ` (m) per node.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackLaw<T> {
    pub gain: NodeSeries<T>,
    pub offset: NodeSeries<T>,
}

impl<T: Scalar> FeedbackLaw<T> {
    pub fn zeros(n: usize, m: usize, nodes: usize) -> Self {
        Self {
            gain: NodeSeries::zeros(m, n, nodes),
            offset: NodeSeries::zeros(m, 1, nodes),
        }
    }

    pub fn n(&self) -> usize {
        self.gain.cols()
    }

    pub fn m(&self) -> usize {
        self.gain.rows()
    }

    pub fn nodes(&self) -> usize {
        self.gain.nodes()
    }

    /// Writes `−Ψ(t_i) x − ψ(t_i)` into `u`.
    pub fn control(&self, i: usize, x: &[T], u: &mut [T]) {
        let (m, n) = (self.m(), self.n());
        let g = self.gain.at(i);
        let o = self.offset.at(i);
        for r in 0..m {
            let mut acc = -o[r];
            for c in 0..n {
                acc -= g[r * n + c] * x[c];
            }
            u[r] = acc;
        }
    }

    /// Copy with `delta` added to `ψ(t_i)`.
    pub fn with_offset_shift(&self, i: usize, delta: &[T]) -> Self {
        let mut out = self.clone();
        for (o, &dv) in out.offset.at_mut(i).iter_mut().zip(delta) {
            *o += dv;
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        crate::dense::all_finite(self.gain.as_slice())
            && crate::dense::all_finite(self.offset.as_slice())
    }

    pub fn to_document(&self, grid: &TimeGrid<T>) -> Value {
        let nodes: Vec<Value> = (0..self.nodes())
            .map(|i| {
                json!({
                    "i": i,
                    "t": grid.t(i).as_f64(),
                    "Psi": self.gain.at(i).iter().map(|v| v.as_f64()).collect::<Vec<_>>(),
                    "psi": self.offset.at(i).iter().map(|v| v.as_f64()).collect::<Vec<_>>(),
                })
            })
            .collect();
        json!({
            "n": self.n(),
            "m": self.m(),
            "T": grid.horizon().as_f64(),
            "N": grid.steps(),
            "nodes": nodes,
        })
    }

    pub fn from_document(doc: &Value) -> Result<Self, String> {
        let n = doc["n"].as_u64().ok_or("law document lacks `n`")? as usize;
        let m = doc["m"].as_u64().ok_or("law document lacks `m`")? as usize;
        let nodes = doc["nodes"]
            .as_array()
            .ok_or("law document lacks `nodes`")?;
        let mut law = Self::zeros(n, m, nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            read_floats(&node["Psi"], law.gain.at_mut(i), &format!("nodes[{i}].Psi"))?;
            read_floats(
                &node["psi"],
                law.offset.at_mut(i),
                &format!("nodes[{i}].psi"),
            )?;
        }
        Ok(law)
    }
}

fn read_floats<T: Scalar>(v: &Value, out: &mut [T], what: &str) -> Result<(), String> {
    let a = v
        .as_array()
        .ok_or_else(|| format!("`{what}` is not a list"))?;
    if a.len() != out.len() {
        return Err(format!(
            "`{what}` has {} entries, expected {}",
            a.len(),
            out.len()
        ));
    }
    for (o, x) in out.iter_mut().zip(a) {
        let f = x
            .as_f64()
            .ok_or_else(|| format!("`{what}` holds a non-number"))?;
        *o = T::lit(f);
    }
    Ok(())
}

fn field_document<T: Scalar>(f: &TriangularField<T>, grid: &TimeGrid<T>) -> Value {
    let n = f.steps();
    let mut samples = Vec::with_capacity((n + 1) * (n + 2) / 2);
    for i in 0..=n {
        for j in i..=n {
            samples.push(json!({
                "i": i,
                "j": j,
                "t": grid.t(i).as_f64(),
                "s": grid.t(j).as_f64(),
                "value": f.at(i, j).iter().map(|v| v.as_f64()).collect::<Vec<_>>(),
            }));
        }
    }
    json!({ "rows": f.rows(), "cols": f.cols(), "samples": samples })
}

fn field_from_document<T: Scalar>(doc: &Value, what: &str) -> Result<TriangularField<T>, String> {
    let rows = doc["rows"]
        .as_u64()
        .ok_or_else(|| format!("`{what}` lacks `rows`"))? as usize;
    let cols = doc["cols"]
        .as_u64()
        .ok_or_else(|| format!("`{what}` lacks `cols`"))? as usize;
    let samples = doc["samples"]
        .as_array()
        .ok_or_else(|| format!("`{what}` lacks `samples`"))?;
    // (N+1)(N+2)/2 samples
    let count = samples.len();
    let steps = ((((8 * count + 1) as f64).sqrt() - 3.0) / 2.0).round() as usize;
    if (steps + 1) * (steps + 2) / 2 != count {
        return Err(format!("`{what}` does not hold a full triangle"));
    }
    let mut f = TriangularField::zeros(rows, cols, steps);
    for (k, s) in samples.iter().enumerate() {
        let i = s["i"]
            .as_u64()
            .ok_or_else(|| format!("`{what}.samples[{k}]` lacks `i`"))? as usize;
        let j = s["j"]
            .as_u64()
            .ok_or_else(|| format!("`{what}.samples[{k}]` lacks `j`"))? as usize;
        if i > j || j > steps {
            return Err(format!("`{what}.samples[{k}]` is off the triangle"));
        }
        read_floats(
            &s["value"],
            f.at_mut(i, j),
            &format!("{what}.samples[{k}].value"),
        )?;
    }
    Ok(f)
}

impl<T: Scalar> FlowSolution<T> {
    pub fn steps(&self) -> usize {
        self.m.steps()
    }

    pub fn to_document(&self, grid: &TimeGrid<T>) -> Value {
        json!({
            "T": grid.horizon().as_f64(),
            "N": grid.steps(),
            "fields": {
                "M": field_document(&self.m, grid),
                "Mbar": field_document(&self.mbar, grid),
                "Upsilon": field_document(&self.upsilon, grid),
                "phi": field_document(&self.phi, grid),
            },
            "diagnostics": serde_json::to_value(&self.diagnostics).expect("plain data"),
        })
    }

    pub fn from_document(doc: &Value) -> Result<Self, String> {
        let f = &doc["fields"];
        let d = &doc["diagnostics"];
        let floats = |v: &Value| -> Vec<f64> {
            v.as_array()
                .map(|a| a.iter().filter_map(Value::as_f64).collect())
                .unwrap_or_default()
        };
        Ok(Self {
            m: field_from_document(&f["M"], "M")?,
            mbar: field_from_document(&f["Mbar"], "Mbar")?,
            upsilon: field_from_document(&f["Upsilon"], "Upsilon")?,
            phi: field_from_document(&f["phi"], "phi")?,
            diagnostics: FlowDiagnostics {
                solver: d["solver"].as_str().unwrap_or("unknown").to_string(),
                theta_cond: floats(&d["theta_cond"]),
                corrector_iterations: d["corrector_iterations"]
                    .as_array()
                    .map(|a| {
                        a.iter()
                            .filter_map(|x| x.as_u64().map(|v| v as u32))
                            .collect()
                    })
                    .unwrap_or_default(),
                experimental: d["experimental"].as_bool().unwrap_or(false),
            },
        })
    }

    /// Largest deviation over all four fields.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.m
            .max_abs_diff(&other.m)
            .max(self.mbar.max_abs_diff(&other.mbar))
            .max(self.upsilon.max_abs_diff(&other.upsilon))
            .max(self.phi.max_abs_diff(&other.phi))
    }

    /// CSV rows `s, M(s,s).., Upsilon(s,s).., Psi(s).., psi(s)..`.
    pub fn diagonal_csv(&self, grid: &TimeGrid<T>, law: &FeedbackLaw<T>) -> String {
        let mut header = vec!["s".to_string()];
        let nn = self.m.block();
        header.extend((0..nn).map(|k| format!("M_{k}")));
        header.extend((0..nn).map(|k| format!("Upsilon_{k}")));
        header.extend((0..law.gain.block()).map(|k| format!("Psi_{k}")));
        header.extend((0..law.offset.block()).map(|k| format!("psi_{k}")));
        let rows = (0..=self.steps()).map(|i| {
            let mut r = vec![grid.t(i).as_f64()];
            r.extend(self.m.diag(i).iter().map(|v| v.as_f64()));
            r.extend(self.upsilon.diag(i).iter().map(|v| v.as_f64()));
            r.extend(law.gain.at(i).iter().map(|v| v.as_f64()));
            r.extend(law.offset.at(i).iter().map(|v| v.as_f64()));
            r
        });
        let h: Vec<&str> = header.iter().map(String::as_str).collect();
        crate::io::csv_table(&h, rows)
    }
}

/// Terminal data at node `i`: `(G, Ḡ, μ1, μ2)` stacked into one state vector.
pub(crate) fn terminal_state<T: Scalar>(spec: &ProblemSpec<T>, i: usize, out: &mut [T]) {
    let n = spec.dims.n;
    let nn = n * n;
    let k = &spec.costs;
    out[..nn].copy_from_slice(k.g.at(i));
    out[nn..2 * nn].copy_from_slice(k.gbar.at(i));
    out[2 * nn..3 * nn].copy_from_slice(k.mu1.at(i));
    out[3 * nn..3 * nn + n].copy_from_slice(k.mu2.at(i));
}
