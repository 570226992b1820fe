//! Global fixed-point iteration on the diagonal trajectory.

use rayon::prelude::*;
use serde::Serialize;

use super::gains::{node_gains, preflight_gate};
use super::rows::{integrate_row, store_state, RowWork, StageData};
use super::{terminal_state, FeedbackLaw, FlowDiagnostics, FlowError, FlowSolution};
use crate::field::TriangularField;
use crate::model::ProblemSpec;
use crate::scalar::Scalar;

/// β-weighted sup-norm of each update, in iteration order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PicardTrace {
    pub beta: f64,
    pub tol: f64,
    pub norms: Vec<f64>,
}

impl PicardTrace {
    /// Successive ratios `norm[k+1] / norm[k]`.
    pub fn ratios(&self) -> Vec<f64> {
        self.norms.windows(2).map(|w| w[1] / w[0]).collect()
    }

    /// True when the norms decrease strictly from iteration `from` (1-based) on.
    pub fn monotone_after(&self, from: usize) -> bool {
        let start = from.saturating_sub(1);
        self.norms
            .iter()
            .skip(start)
            .collect::<Vec<_>>()
            .windows(2)
            .all(|w| w[1] < w[0] || *w[0] == 0.0)
    }

    pub fn csv(&self) -> String {
        crate::io::csv_table(
            &["iteration", "norm"],
            self.norms
                .iter()
                .enumerate()
                .map(|(k, &v)| vec![(k + 1) as f64, v]),
        )
    }
}

fn gains_from_diag<T: Scalar>(
    spec: &ProblemSpec<T>,
    diag: &[Vec<T>],
    law: &mut FeedbackLaw<T>,
) -> Result<Vec<f64>, FlowError> {
    let mut cond = Vec::with_capacity(diag.len());
    for (i, d) in diag.iter().enumerate() {
        cond.push(node_gains(
            spec,
            i,
            d,
            law.gain.at_mut(i),
            law.offset.at_mut(i),
        )?);
    }
    Ok(cond)
}

/// Endpoint of every row given fixed gains; rows run in parallel, each independent.
fn sweep<T: Scalar>(spec: &ProblemSpec<T>, sd: &StageData<T>) -> Result<Vec<Vec<T>>, FlowError> {
    let n = spec.dims.n;
    let len = sd.state_len();
    let steps = spec.grid.steps();
    (0..=steps)
        .into_par_iter()
        .map_init(
            || RowWork::new(n),
            |w, i| {
                let mut y = vec![T::zero(); len];
                if i == steps {
                    terminal_state(spec, i, &mut y);
                } else {
                    integrate_row(sd, spec, w, i, i, &mut y, |_, _| {})?;
                }
                Ok(y)
            },
        )
        .collect()
}

/// Every row over its full span under the gains already in `sd`; also returns the diagonal.
pub(crate) fn full_rows<T: Scalar>(
    spec: &ProblemSpec<T>,
    sd: &StageData<T>,
) -> Result<
    (
        TriangularField<T>,
        TriangularField<T>,
        TriangularField<T>,
        TriangularField<T>,
        Vec<Vec<T>>,
    ),
    FlowError,
> {
    let n = spec.dims.n;
    let steps = spec.grid.steps();
    let len = sd.state_len();
    let rows: Vec<Vec<T>> = (0..=steps)
        .into_par_iter()
        .map_init(
            || RowWork::new(n),
            |w, i| {
                let mut y = vec![T::zero(); len];
                let mut buf = vec![T::zero(); (steps + 1 - i) * len];
                integrate_row(sd, spec, w, i, i, &mut y, |j, v| {
                    buf[(j - i) * len..(j - i + 1) * len].copy_from_slice(v)
                })?;
                Ok(buf)
            },
        )
        .collect::<Result<_, FlowError>>()?;
    let mut fm = TriangularField::zeros(n, n, steps);
    let mut fmbar = TriangularField::zeros(n, n, steps);
    let mut fups = TriangularField::zeros(n, n, steps);
    let mut fphi = TriangularField::zeros(n, 1, steps);
    {
        let mut f = [&mut fm, &mut fmbar, &mut fups, &mut fphi];
        for (i, buf) in rows.iter().enumerate() {
            for (k, y) in buf.chunks(len).enumerate() {
                store_state(&mut f, n, i, i + k, y);
            }
        }
    }
    let diag = rows.iter().map(|b| b[..len].to_vec()).collect();
    Ok((fm, fmbar, fups, fphi, diag))
}

/// Iterates diagonal → gains → rows → diagonal until the β-weighted update is below `tol`.
///
/// The first guess holds the terminal data on the diagonal.
pub fn solve_flow_picard<T: Scalar>(
    spec: &ProblemSpec<T>,
    beta: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(FlowSolution<T>, FeedbackLaw<T>, PicardTrace), FlowError> {
    spec.validate()
        .map_err(|e| FlowError::Mismatch(e.to_string()))?;
    preflight_gate(spec)?;
    if !(beta > 0.0 && tol > 0.0 && max_iter > 0) {
        return Err(FlowError::Mismatch(
            "beta, tol and max_iter must be positive".into(),
        ));
    }
    let n = spec.dims.n;
    let m = spec.dims.m;
    let steps = spec.grid.steps();
    let nodes = steps + 1;
    let horizon = spec.grid.horizon().as_f64();
    let weights: Vec<f64> = (0..nodes)
        .map(|j| (-beta * (horizon - spec.grid.t(j).as_f64())).exp())
        .collect();

    let mut sd = StageData::new(spec);
    let len = sd.state_len();
    let mut law = FeedbackLaw::zeros(n, m, nodes);
    let mut diag: Vec<Vec<T>> = (0..nodes)
        .map(|j| {
            let mut y = vec![T::zero(); len];
            terminal_state(spec, j, &mut y);
            y
        })
        .collect();

    let mut trace = PicardTrace {
        beta,
        tol,
        norms: Vec::new(),
    };
    let mut converged = false;
    for _ in 0..max_iter {
        gains_from_diag(spec, &diag, &mut law)?;
        sd.set_gains(spec, &law.gain, &law.offset, 0, 2 * steps);
        let next = sweep(spec, &sd)?;
        let norm = next
            .iter()
            .zip(&diag)
            .zip(&weights)
            .map(|((a, b), &w)| w * crate::dense::max_abs_diff(a, b).as_f64())
            .fold(0.0f64, f64::max);
        trace.norms.push(norm);
        diag = next;
        if norm < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        let k = trace.norms.len();
        return Err(FlowError::MaxIter {
            iterations: k,
            last: trace.norms[k - 1],
            previous: if k > 1 { trace.norms[k - 2] } else { f64::NAN },
        });
    }

    // final pass: gains from the converged diagonal, full rows stored
    gains_from_diag(spec, &diag, &mut law)?;
    sd.set_gains(spec, &law.gain, &law.offset, 0, 2 * steps);
    let (fm, fmbar, fups, fphi, rows) = full_rows(spec, &sd)?;
    let final_diag = rows;
    let cond = gains_from_diag(spec, &final_diag, &mut law)?;

    let sol = FlowSolution {
        m: fm,
        mbar: fmbar,
        upsilon: fups,
        phi: fphi,
        diagnostics: FlowDiagnostics {
            solver: "picard".into(),
            theta_cond: cond,
            corrector_iterations: Vec::new(),
            experimental: spec.is_experimental(),
        },
    };
    Ok((sol, law, trace))
}
