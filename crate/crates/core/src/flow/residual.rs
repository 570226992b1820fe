//! Consistency between a law and the flow it claims to come from.

use super::gains::node_gains;
use super::picard::full_rows;
use super::rows::StageData;
use super::{FeedbackLaw, FlowDiagnostics, FlowError, FlowSolution};
use crate::dense::frobenius;
use crate::model::ProblemSpec;
use crate::scalar::Scalar;

/// Gains re-derived from the diagonal of `flow`.
pub fn gains_from_flow<T: Scalar>(
    spec: &ProblemSpec<T>,
    flow: &FlowSolution<T>,
) -> Result<FeedbackLaw<T>, FlowError> {
    let n = spec.dims.n;
    let nn = n * n;
    let steps = spec.grid.steps();
    if flow.steps() != steps || flow.m.rows() != n {
        return Err(FlowError::Mismatch(format!(
            "flow has {} steps and n = {}, problem has {} and n = {}",
            flow.steps(),
            flow.m.rows(),
            steps,
            n
        )));
    }
    let mut law = FeedbackLaw::zeros(n, spec.dims.m, steps + 1);
    let mut diag = vec![T::zero(); 3 * nn + n];
    for i in 0..=steps {
        diag[..nn].copy_from_slice(flow.m.diag(i));
        diag[nn..2 * nn].copy_from_slice(flow.mbar.diag(i));
        diag[2 * nn..3 * nn].copy_from_slice(flow.upsilon.diag(i));
        diag[3 * nn..].copy_from_slice(flow.phi.diag(i));
        node_gains(spec, i, &diag, law.gain.at_mut(i), law.offset.at_mut(i))?;
    }
    Ok(law)
}

/// Per node, `‖Ψ_law − Ψ_flow‖_F + ‖ψ_law − ψ_flow‖₂`.
pub fn feedback_residual<T: Scalar>(
    spec: &ProblemSpec<T>,
    flow: &FlowSolution<T>,
    law: &FeedbackLaw<T>,
) -> Result<Vec<T>, FlowError> {
    let derived = gains_from_flow(spec, flow)?;
    if law.nodes() != derived.nodes() || law.n() != derived.n() || law.m() != derived.m() {
        return Err(FlowError::Mismatch("law and flow grids differ".into()));
    }
    let mut buf = Vec::new();
    Ok((0..law.nodes())
        .map(|i| {
            buf.clear();
            buf.extend(
                law.gain
                    .at(i)
                    .iter()
                    .zip(derived.gain.at(i))
                    .map(|(&a, &b)| a - b),
            );
            let g = frobenius(&buf);
            buf.clear();
            buf.extend(
                law.offset
                    .at(i)
                    .iter()
                    .zip(derived.offset.at(i))
                    .map(|(&a, &b)| a - b),
            );
            g + frobenius(&buf)
        })
        .collect())
}

/// The flow fields generated by an arbitrary law: each row solves the same linear
/// ODEs with the law's closed-loop coefficients. For the equilibrium law this
/// reproduces the solver's flow; for any other law the diagonal still yields the
/// adjoint processes that law induces.
pub fn flow_under_law<T: Scalar>(
    spec: &ProblemSpec<T>,
    law: &FeedbackLaw<T>,
) -> Result<FlowSolution<T>, FlowError> {
    spec.validate()
        .map_err(|e| FlowError::Mismatch(e.to_string()))?;
    let steps = spec.grid.steps();
    if law.nodes() != steps + 1 || law.n() != spec.dims.n || law.m() != spec.dims.m {
        return Err(FlowError::Mismatch(
            "law does not match the problem grid or dimensions".into(),
        ));
    }
    let mut sd = StageData::new(spec);
    sd.set_gains(spec, &law.gain, &law.offset, 0, 2 * steps);
    let (m, mbar, upsilon, phi, _) = full_rows(spec, &sd)?;
    Ok(FlowSolution {
        m,
        mbar,
        upsilon,
        phi,
        diagnostics: FlowDiagnostics {
            solver: "fixed law".into(),
            theta_cond: Vec::new(),
            corrector_iterations: Vec::new(),
            experimental: spec.is_experimental(),
        },
    })
}
