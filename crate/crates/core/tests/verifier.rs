use tilq::analytic::{
    mean_variance_solution, mean_variance_spec, regulator_spec, CounterexampleParams,
    MeanVarianceParams, RegulatorParams, TimeFn,
};
use tilq::flow::{solve_flow_marching, solve_second_order};
use tilq::model::zero_problem;
use tilq::simulator::mean_trajectory;
use tilq::verifier::{
    first_order_condition, inconsistency_demo, ladder_multiples, law_residual,
    second_order_condition, spike_test, spike_tests, variation_order_test, InconsistencyParams,
    SpikeRequest, VerifyError,
};
use tilq::{Dims, JumpMeasure, Law, NodeSeries, Problem, TimeGrid, TriangularField};

fn konst(nodes: usize, v: f64) -> NodeSeries<f64> {
    NodeSeries::from_fn(1, 1, nodes, |_, o| o[0] = v)
}

fn scalar(steps: usize, jumps: JumpMeasure<f64>) -> Problem {
    zero_problem(
        Dims { n: 1, m: 1, d: 1 },
        TimeGrid::new(1.0, steps).unwrap(),
        jumps,
    )
}

fn hyperbolic(steps: usize) -> RegulatorParams {
    RegulatorParams {
        a: 0.1,
        sigma: 0.2,
        c: 0.1,
        lambda: 1.0,
        h: TimeFn::Hyperbolic {
            value: 1.0,
            kappa: 1.0,
        },
        ..RegulatorParams::unit(steps)
    }
}

fn mv(steps: usize) -> MeanVarianceParams {
    MeanVarianceParams {
        r: TimeFn::constant(0.03),
        alpha: TimeFn::constant(0.08),
        beta: TimeFn::constant(0.2),
        gamma: vec![TimeFn::constant(0.1)],
        theta: vec![1.0],
        mu1: TimeFn::Affine {
            value: 1.0,
            slope: 1.0,
        },
        mu2: TimeFn::constant(0.5),
        horizon: 1.0,
        steps,
        delta: 1e-3,
        x0: 1.0,
    }
}

#[test]
fn ladder_must_use_grid_multiples() {
    let h = 0.01;
    assert_eq!(
        ladder_multiples(h, 0, 100, &[0.01, 0.02, 0.04]).unwrap(),
        vec![1, 2, 4]
    );
    assert!(matches!(
        ladder_multiples(h, 0, 100, &[0.015]),
        Err(VerifyError::Ladder(_))
    ));
    assert!(matches!(
        ladder_multiples(h, 95, 100, &[0.08]),
        Err(VerifyError::Ladder(_))
    ));
    assert!(matches!(
        ladder_multiples(h, 0, 100, &[]),
        Err(VerifyError::Ladder(_))
    ));
}

#[test]
fn spike_on_pure_control_cost_is_half_norm_squared() {
    let grid = TimeGrid::new(1.0, 50).unwrap();
    let mut spec: Problem = zero_problem(Dims { n: 1, m: 2, d: 1 }, grid, JumpMeasure::none());
    spec.coeffs.a = konst(51, 0.3);
    spec.coeffs.channels[0].sigma = konst(51, 1.0);
    spec.costs.r =
        TriangularField::from_fn(2, 2, 50, |_, _, o| o.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]));
    spec.costs.g = konst(51, 1.0);
    let law = Law::zeros(1, 2, 51);
    let h = grid.h();
    let rep = spike_test(
        &spec,
        &law,
        10,
        &[0.5],
        &[0.6, -0.8],
        &[h, 2.0 * h, 4.0 * h, 8.0 * h],
        200,
        3,
    )
    .unwrap();
    for d in &rep.dj_over_eps {
        assert!((d - 0.5).abs() < 1e-12, "{d}");
    }
    assert!((rep.limit - 0.5).abs() < 1e-12);
    assert!(rep.pass);
    assert_eq!(rep.verdict, "equilibrium-consistent");
    assert!(rep.csv().starts_with("epsilon,dJ_over_eps,stderr\n"));
}

#[test]
fn equilibrium_passes_and_fault_fails_spike_test() {
    let spec: Problem = regulator_spec(&hyperbolic(100)).unwrap();
    let (_, law) = solve_flow_marching(&spec).unwrap();
    let h = spec.grid.h();
    let ladder = [h, 2.0 * h, 4.0 * h, 8.0 * h];
    let node = 40;
    let traj = mean_trajectory(&spec, &law, 0, &spec.x0);
    let xi = traj[node].clone();
    let req = SpikeRequest {
        node,
        xi: xi.clone(),
        directions: vec![vec![1.0], vec![-1.0], vec![0.3]],
    };
    for rep in spike_tests(&spec, &law, &req, &ladder, 4_000, 5).unwrap() {
        assert!(rep.pass, "{:?} {} ± {}", rep.v, rep.limit, rep.limit_stderr);
        // the limit is ½ v² R to leading order
        assert!(
            (rep.limit - 0.5 * rep.v[0] * rep.v[0]).abs() < 0.05,
            "{}",
            rep.limit
        );
    }

    let bad = law.with_offset_shift(node, &[0.5]);
    let res = law_residual(&spec, &bad, &mean_trajectory(&spec, &bad, node, &xi)).unwrap();
    let v = -res.k[0][0];
    let rep = spike_test(&spec, &bad, node, &xi, &[v], &ladder, 4_000, 5).unwrap();
    assert!(!rep.pass, "{} ± {}", rep.limit, rep.limit_stderr);
    assert_eq!(rep.verdict, "not-equilibrium");
}

#[test]
fn spike_requests_are_validated() {
    let spec: Problem = regulator_spec(&hyperbolic(20)).unwrap();
    let law = Law::zeros(1, 1, 21);
    let h = spec.grid.h();
    assert!(matches!(
        spike_test(&spec, &law, 20, &[0.0], &[1.0], &[h], 10, 0),
        Err(VerifyError::Request(_))
    ));
    assert!(matches!(
        spike_test(&spec, &law, 0, &[0.0], &[1.0, 2.0], &[h], 10, 0),
        Err(VerifyError::Request(_))
    ));
    assert!(matches!(
        spike_test(&spec, &law, 0, &[0.0], &[1.0], &[1.5 * h], 10, 0),
        Err(VerifyError::Ladder(_))
    ));
}

#[test]
fn first_order_residual_vanishes_on_zero_model() {
    let mut spec = scalar(10, JumpMeasure::none());
    spec.costs.r = TriangularField::from_fn(1, 1, 10, |_, _, o| o[0] = 1.0);
    let (flow, law) = solve_flow_marching(&spec).unwrap();
    let traj = mean_trajectory(&spec, &law, 0, &[1.0]);
    let rep = first_order_condition(&spec, &flow, &law, &traj).unwrap();
    assert!(rep.residual.iter().all(|&r| r == 0.0));
    assert_eq!(rep.csv(&spec).lines().count(), 12);
}

#[test]
fn first_order_residual_is_linear_in_a_control_perturbation() {
    let p = mv(100);
    let spec: Problem = mean_variance_spec(&p).unwrap();
    let (flow, law) = solve_flow_marching(&spec).unwrap();
    let traj = mean_trajectory(&spec, &law, 0, &spec.x0);
    let base = first_order_condition(&spec, &flow, &law, &traj).unwrap();
    assert!(base.max < 1e-10, "{}", base.max);
    let node = 30;
    let delta = 0.05;
    let s = {
        // S = R + D²M + θF²M at (t, t)
        let m = flow.m.diag(node)[0];
        0.2f64.powi(2) * m + 0.1f64.powi(2) * m
    };
    let mut jumps = Vec::new();
    for scale in [1.0, 2.0] {
        let bad = law.with_offset_shift(node, &[scale * delta]);
        let rep = first_order_condition(&spec, &flow, &bad, &traj).unwrap();
        for (i, (a, b)) in rep.k.iter().zip(&base.k).enumerate() {
            if i != node {
                assert_eq!(a, b);
            }
        }
        let jump = rep.k[node][0] - base.k[node][0];
        assert!(
            (jump.abs() - s * scale * delta).abs() < 1e-12,
            "{jump} vs {}",
            s * scale * delta
        );
        jumps.push(jump);
    }
    assert!((jumps[1] / jumps[0] - 2.0).abs() < 1e-9);
}

#[test]
fn first_order_residual_refines_with_the_grid() {
    // analytic law against the numeric flow of the same problem
    let worst = |steps: usize| {
        let p = mv(steps);
        let spec: Problem = mean_variance_spec(&p).unwrap();
        let (flow, _) = solve_flow_marching(&spec).unwrap();
        let (_, law) = mean_variance_solution::<f64>(&p).unwrap();
        let traj = mean_trajectory(&spec, &law, 0, &spec.x0);
        first_order_condition(&spec, &flow, &law, &traj)
            .unwrap()
            .max
    };
    let (a, b) = (worst(100), worst(200));
    let h = 0.01;
    assert!(a <= h, "{a}");
    assert!(b <= 0.5 * a * 1.1, "{a} {b}");
}

#[test]
fn second_order_condition_examples() {
    let spec: Problem = regulator_spec(&hyperbolic(50)).unwrap();
    let rep = second_order_condition(&spec, &solve_second_order(&spec).unwrap()).unwrap();
    assert!(rep.pass);
    assert!(rep.failing_nodes.is_empty());

    let mut spec = scalar(20, JumpMeasure::none());
    spec.costs.r = TriangularField::from_fn(1, 1, 20, |_, _, o| o[0] = -1.0);
    spec.costs.g = konst(21, 1.0);
    let rep = second_order_condition(&spec, &solve_second_order(&spec).unwrap()).unwrap();
    assert!(!rep.pass);
    assert_eq!(rep.failing_nodes.len(), 21);
    assert!(rep.min_eigenvalue.iter().all(|&v| v == -1.0));
    assert_eq!(rep.csv(&spec).lines().count(), 22);

    let p0 = 0.7;
    let mut spec = scalar(20, JumpMeasure::none());
    spec.coeffs.channels[0].d = konst(21, 1.0);
    spec.costs.g = konst(21, p0);
    let rep = second_order_condition(&spec, &solve_second_order(&spec).unwrap()).unwrap();
    assert!(rep.pass);
    assert!(rep.min_eigenvalue.iter().all(|&v| (v - p0).abs() < 1e-15));
}

#[test]
fn second_order_verdict_ignores_idle_marks() {
    for spec in [
        regulator_spec::<f64>(&hyperbolic(30)).unwrap(),
        mean_variance_spec::<f64>(&mv(30)).unwrap(),
    ] {
        let a = second_order_condition(&spec, &solve_second_order(&spec).unwrap()).unwrap();
        let wide = spec.with_idle_mark();
        let b = second_order_condition(&wide, &solve_second_order(&wide).unwrap()).unwrap();
        assert_eq!(a.pass, b.pass);
        assert_eq!(a.min_eigenvalue, b.min_eigenvalue);
    }
}

#[test]
fn order_test_skips_without_sources() {
    let mut spec = scalar(50, JumpMeasure::none());
    spec.coeffs.a = konst(51, 0.2);
    spec.coeffs.b = konst(51, 1.0);
    spec.coeffs.channels[0].sigma = konst(51, 0.3);
    let h = spec.grid.h();
    let rep = variation_order_test(&spec, 5, &[1.0], &[h, 2.0 * h, 4.0 * h], 500, 1).unwrap();
    assert!(rep.sup_y2.iter().all(|&v| v == 0.0));
    assert_eq!(rep.slope_y, None);
    assert!(rep.notes.iter().any(|n| n.contains("slope skipped")));
    // z is driven by the drift alone, deterministic and of size ε²
    let slope_z = rep.slope_z.unwrap();
    assert!((slope_z - 2.0).abs() < 0.2, "{slope_z}");
    assert!(rep.mean_zero_pass);
}

#[test]
fn order_test_slopes_on_separate_sources() {
    let h_ladder = |spec: &Problem| {
        let h = spec.grid.h();
        [h, 2.0 * h, 4.0 * h, 8.0 * h, 16.0 * h]
    };
    let mut spec = scalar(200, JumpMeasure::none());
    spec.coeffs.a = konst(201, 0.1);
    spec.coeffs.channels[0].d = konst(201, 1.0);
    let rep = variation_order_test(&spec, 20, &[1.0], &h_ladder(&spec), 20_000, 2).unwrap();
    let sy = rep.slope_y.unwrap();
    assert!((0.8..=1.2).contains(&sy), "{sy}");
    assert!(rep.mean_zero_pass);

    let mut spec = scalar(200, JumpMeasure::none());
    spec.coeffs.a = konst(201, 0.1);
    spec.coeffs.b = konst(201, 1.0);
    spec.coeffs.channels[0].sigma = konst(201, 0.5);
    let rep = variation_order_test(&spec, 20, &[1.0], &h_ladder(&spec), 20_000, 2).unwrap();
    let sz = rep.slope_z.unwrap();
    assert!((1.8..=2.2).contains(&sz), "{sz}");
    assert!(rep.csv().lines().count() == 6);
}

fn counterexample(sigma: f64, x: f64) -> CounterexampleParams {
    CounterexampleParams {
        b: 1.0,
        sigma,
        h: TimeFn::constant(1.0),
        horizon: 1.0,
        steps: 40,
        t_index: 0,
        x,
    }
}

#[test]
fn inconsistency_shows_up_along_paths() {
    let p = InconsistencyParams {
        problem: counterexample(1.0, 0.0),
        r_index: 20,
        paths: 4_000,
        spike_paths: 4_000,
        seed: 3,
        ladder: vec![1, 2, 4],
    };
    let rep = inconsistency_demo(&p).unwrap();
    assert!((rep.m_t_at_t - 0.5).abs() < 1e-15);
    assert!((rep.m_t_at_r - 1.0 / 1.5).abs() < 1e-15);
    assert_eq!(rep.resolved_max_abs, 0.0);
    assert!(rep.contradiction, "{}", rep.margin_in_stderr);
    assert_eq!(rep.equilibrium_abs_mean, 0.0);
    assert!(rep.residual_equilibrium < 1e-12);
    assert!(rep.residual_precommitted > 0.0);
    assert!(
        !rep.spike_precommitted.pass,
        "{}",
        rep.spike_precommitted.limit
    );
    assert!(rep.spike_equilibrium.iter().all(|s| s.pass));
}

#[test]
fn deterministic_fixed_point_has_no_contradiction() {
    let p = InconsistencyParams {
        problem: counterexample(0.0, 0.4),
        r_index: 20,
        paths: 10,
        spike_paths: 10,
        seed: 3,
        ladder: vec![1, 2],
    };
    let rep = inconsistency_demo(&p).unwrap();
    assert_eq!(rep.precommitted_abs_mean, 0.0);
    assert_eq!(rep.margin, 0.0);
    assert!(!rep.contradiction);
}

#[test]
fn inconsistency_needs_r_after_t() {
    let mut p = InconsistencyParams {
        problem: CounterexampleParams {
            t_index: 10,
            ..counterexample(1.0, 0.0)
        },
        r_index: 10,
        paths: 10,
        spike_paths: 10,
        seed: 0,
        ladder: vec![1],
    };
    assert!(matches!(
        inconsistency_demo(&p),
        Err(VerifyError::Request(_))
    ));
    p.r_index = 5;
    assert!(matches!(
        inconsistency_demo(&p),
        Err(VerifyError::Request(_))
    ));
}
