//! Diagonal-first backward marching with a fixed-point corrector on the last step.

use super::gains::{node_gains, preflight_gate};
use super::rows::{integrate_row, step_back, store_state, RowWork, StageData};
use super::{terminal_state, FeedbackLaw, FlowDiagnostics, FlowError, FlowSolution};
use crate::dense::max_abs;
use crate::field::TriangularField;
use crate::model::ProblemSpec;
use crate::scalar::Scalar;

const MAX_CORRECTOR: usize = 20;

pub(crate) fn corrector_tol<T: Scalar>() -> f64 {
    1e-12f64.max(4.0 * T::eps64())
}

/// Solves the flow system row by row from `t_N` down to `t_0`.
///
/// Row `i` needs gains on nodes `i..=N`; those above `i` are final, and the one at
/// `i` depends on the row's own endpoint, which the corrector resolves.
pub fn solve_flow_marching<T: Scalar>(
    spec: &ProblemSpec<T>,
) -> Result<(FlowSolution<T>, FeedbackLaw<T>), FlowError> {
    spec.validate()
        .map_err(|e| FlowError::Mismatch(e.to_string()))?;
    preflight_gate(spec)?;
    let n = spec.dims.n;
    let m = spec.dims.m;
    let steps = spec.grid.steps();
    let nodes = steps + 1;
    let tol = corrector_tol::<T>();

    let mut fm = TriangularField::zeros(n, n, steps);
    let mut fmbar = TriangularField::zeros(n, n, steps);
    let mut fups = TriangularField::zeros(n, n, steps);
    let mut fphi = TriangularField::zeros(n, 1, steps);
    let mut law = FeedbackLaw::zeros(n, m, nodes);
    let mut sd = StageData::new(spec);
    let mut work = RowWork::new(n);
    let len = sd.state_len();

    let mut diag: Vec<Vec<T>> = vec![vec![T::zero(); len]; nodes];
    let mut cond = vec![1.0; nodes];
    let mut iters = vec![0u32; nodes];

    terminal_state(spec, steps, &mut diag[steps]);
    cond[steps] = node_gains(
        spec,
        steps,
        &diag[steps],
        law.gain.at_mut(steps),
        law.offset.at_mut(steps),
    )?;
    sd.set_gains(spec, &law.gain, &law.offset, 2 * steps, 2 * steps);
    {
        let mut f = [&mut fm, &mut fmbar, &mut fups, &mut fphi];
        store_state(&mut f, n, steps, steps, &diag[steps]);
    }

    let mut y = vec![T::zero(); len];
    let mut y_next = vec![T::zero(); len];
    let mut guess = vec![T::zero(); len];
    for i in (0..steps).rev() {
        {
            let mut f = [&mut fm, &mut fmbar, &mut fups, &mut fphi];
            integrate_row(&sd, spec, &mut work, i, i + 1, &mut y, |j, v| {
                store_state(&mut f, n, i, j, v)
            })?;
        }
        // predictor
        if i + 2 <= steps {
            let two = T::lit(2.0);
            for k in 0..len {
                guess[k] = two * diag[i + 1][k] - diag[i + 2][k];
            }
        } else {
            guess.copy_from_slice(&diag[i + 1]);
        }
        let mut converged = false;
        let mut change = f64::INFINITY;
        let mut count = 0;
        while count < MAX_CORRECTOR {
            count += 1;
            node_gains(spec, i, &guess, law.gain.at_mut(i), law.offset.at_mut(i))?;
            sd.set_gains(spec, &law.gain, &law.offset, 2 * i, 2 * i + 1);
            y_next.copy_from_slice(&y);
            step_back(&sd, spec, &mut work, i, i + 1, &mut y_next)?;
            let delta = crate::dense::max_abs_diff(&y_next, &guess).as_f64();
            let size = max_abs(&y_next).as_f64();
            change = if size > 0.0 { delta / size } else { delta };
            guess.copy_from_slice(&y_next);
            if delta == 0.0 || change < tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(FlowError::Corrector {
                node: i,
                iterations: count,
                change,
            });
        }
        diag[i].copy_from_slice(&guess);
        cond[i] = node_gains(spec, i, &diag[i], law.gain.at_mut(i), law.offset.at_mut(i))?;
        sd.set_gains(spec, &law.gain, &law.offset, 2 * i, 2 * i + 1);
        iters[i] = count as u32;
        let mut f = [&mut fm, &mut fmbar, &mut fups, &mut fphi];
        store_state(&mut f, n, i, i, &diag[i]);
    }

    let sol = FlowSolution {
        m: fm,
        mbar: fmbar,
        upsilon: fups,
        phi: fphi,
        diagnostics: FlowDiagnostics {
            solver: "marching".into(),
            theta_cond: cond,
            corrector_iterations: iters,
            experimental: spec.is_experimental(),
        },
    };
    Ok((sol, law))
}
