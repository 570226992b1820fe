//! The anchored regulator `dX = b u ds + σ dW`, cost `½E[∫u² + h(t)(X_T − X(t))²]`:
//! a control optimal from `(t, x)` stops being optimal once the state has moved.

use serde::Serialize;

use super::{
    adversarial_direction, law_residual, spike_tests, SpikeReport, SpikeRequest, VerifyError,
};
use crate::analytic::{
    anchored_regulator_spec, counterexample_precommitted, CounterexampleParams, RegulatorParams,
};
use crate::flow::solve_second_order;
use crate::simulator::{mean_trajectory, simulate, stderr_of, Control};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InconsistencyParams {
    pub problem: CounterexampleParams,
    /// Node `r > t` where the contrast is evaluated.
    pub r_index: usize,
    pub paths: usize,
    pub spike_paths: usize,
    pub seed: u64,
    /// Spike ladder as multiples of `h`.
    pub ladder: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InconsistencyReport {
    pub t: f64,
    pub r: f64,
    pub x: f64,
    /// `M^t(s)` at `s = t` and `s = r`.
    pub m_t_at_t: f64,
    pub m_t_at_r: f64,
    /// Gain of the precommitted law at `r`, `b·M^t(r)`.
    pub precommitted_gain_r: f64,
    /// Gain of the equilibrium law at `r`.
    pub equilibrium_gain_r: f64,
    /// Ensemble of `ū^{t,x}(r)` along paths from `(t, x)`.
    pub precommitted_mean: f64,
    pub precommitted_mean_stderr: f64,
    pub precommitted_abs_mean: f64,
    pub precommitted_abs_stderr: f64,
    /// Largest `|u^{r, X(r)}(r)|` over paths; the re-solved control vanishes at its own start.
    pub resolved_max_abs: f64,
    /// `E|ū^{t,x}(r) − u^{r,X(r)}(r)|` over its standard error.
    pub margin: f64,
    pub margin_in_stderr: f64,
    pub contradiction: bool,
    pub equilibrium_abs_mean: f64,
    /// State at `r` on path 0, the deterministic start of both spike tests.
    pub xi_r: f64,
    pub residual_precommitted: f64,
    pub residual_equilibrium: f64,
    pub adversarial_v: f64,
    pub spike_precommitted: SpikeReport,
    pub spike_equilibrium: Vec<SpikeReport>,
}

pub fn inconsistency_demo(p: &InconsistencyParams) -> Result<InconsistencyReport, VerifyError> {
    let cp = &p.problem;
    if p.r_index <= cp.t_index || p.r_index > cp.steps {
        return Err(VerifyError::Request(format!(
            "r node {} must lie in ({}, {}]",
            p.r_index, cp.t_index, cp.steps
        )));
    }
    if p.r_index == cp.steps {
        return Err(VerifyError::Request(
            "r = T leaves no room for a spike window".into(),
        ));
    }
    let (pre, (_, eq_law, _)) = counterexample_precommitted::<f64>(cp)?;
    let spec = anchored_regulator_spec::<f64>(
        &RegulatorParams {
            a: 0.0,
            b: cp.b,
            sigma: cp.sigma,
            c: 0.0,
            lambda: 0.0,
            h: cp.h.clone(),
            anchor: -1.0,
            horizon: cp.horizon,
            steps: cp.steps,
            beta: 10.0,
            tol: 1e-12,
            max_iter: 500,
            x0: cp.x,
        },
        false,
    )?;
    let grid = spec.grid;
    let (ti, ri) = (cp.t_index, p.r_index);
    let ens = simulate(
        &spec,
        Control::Feedback(&pre.law),
        ti,
        &[cp.x],
        p.paths,
        p.seed,
    )?;

    let mut u = [0.0f64];
    let mut pre_u: Vec<f64> = Vec::with_capacity(p.paths);
    let mut gaps = Vec::with_capacity(p.paths);
    let mut eq_abs = 0.0;
    let mut resolved_max_abs: f64 = 0.0;
    let b = cp.b;
    let h_r = cp.h.eval(grid.t(ri));
    let m_r_r = h_r / (b * b * h_r * (grid.horizon() - grid.t(ri)) + 1.0);
    for k in 0..p.paths {
        let xr = ens.state(k, ri)[0];
        pre.law.control(ri, &[xr], &mut u);
        // re-solved from (r, X(r)): the precommitted law anchored at x = X(r), evaluated at X(r)
        let anchor = xr;
        let resolved = -b * m_r_r * (xr - anchor);
        resolved_max_abs = resolved_max_abs.max(resolved.abs());
        pre_u.push(u[0]);
        gaps.push((u[0] - resolved).abs());
        eq_law.control(ri, &[xr], &mut u);
        eq_abs += u[0].abs();
    }
    let pf = p.paths as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / pf;
    let abs: Vec<f64> = pre_u.iter().map(|v| v.abs()).collect();
    let margin = mean(&gaps);
    let margin_se = stderr_of(&gaps);
    let margin_in_stderr = if margin_se > 0.0 {
        margin / margin_se
    } else if margin > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };

    let xi_r = ens.state(0, ri)[0];
    let traj_pre = mean_trajectory(&spec, &pre.law, ri, &[xi_r]);
    let res_pre = law_residual(&spec, &pre.law, &traj_pre)?;
    let traj_eq = mean_trajectory(&spec, &eq_law, ri, &[xi_r]);
    let res_eq = law_residual(&spec, &eq_law, &traj_eq)?;
    let second = solve_second_order(&spec)?;
    let v_adv = adversarial_direction(&spec, &second, ri, &res_pre.k[0]);
    let ladder: Vec<f64> = p.ladder.iter().map(|&k| k as f64 * grid.h()).collect();

    let spike_pre = spike_tests(
        &spec,
        &pre.law,
        &SpikeRequest {
            node: ri,
            xi: vec![xi_r],
            directions: vec![v_adv.clone()],
        },
        &ladder,
        p.spike_paths,
        p.seed,
    )?
    .remove(0);
    let spike_eq = spike_tests(
        &spec,
        &eq_law,
        &SpikeRequest {
            node: ri,
            xi: vec![xi_r],
            directions: vec![v_adv.clone(), vec![1.0], vec![-1.0]],
        },
        &ladder,
        p.spike_paths,
        p.seed,
    )?;

    Ok(InconsistencyReport {
        t: grid.t(ti),
        r: grid.t(ri),
        x: cp.x,
        m_t_at_t: pre.m_t[0],
        m_t_at_r: pre.m_t[ri - ti],
        precommitted_gain_r: pre.law.gain.at(ri)[0],
        equilibrium_gain_r: eq_law.gain.at(ri)[0],
        precommitted_mean: mean(&pre_u),
        precommitted_mean_stderr: stderr_of(&pre_u),
        precommitted_abs_mean: mean(&abs),
        precommitted_abs_stderr: stderr_of(&abs),
        resolved_max_abs,
        margin,
        margin_in_stderr,
        contradiction: margin_in_stderr > 5.0,
        equilibrium_abs_mean: eq_abs / pf,
        xi_r,
        residual_precommitted: res_pre.residual[0],
        residual_equilibrium: res_eq.residual[0],
        adversarial_v: v_adv[0],
        spike_precommitted: spike_pre,
        spike_equilibrium: spike_eq,
    })
}
