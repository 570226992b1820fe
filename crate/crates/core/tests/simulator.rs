use tilq::analytic::{mean_variance_solution, mean_variance_spec, MeanVarianceParams, TimeFn};
use tilq::flow::{solve_flow_marching, solve_second_order};
use tilq::model::zero_problem;
use tilq::simulator::{estimate_cost, mean_trajectory, simulate, Control, SimError};
use tilq::{Dims, JumpMeasure, NodeSeries, Problem, TimeGrid, TriangularField};

fn konst(nodes: usize, v: f64) -> NodeSeries<f64> {
    NodeSeries::from_fn(1, 1, nodes, |_, o| o[0] = v)
}

fn scalar(horizon: f64, steps: usize, jumps: JumpMeasure<f64>) -> Problem {
    zero_problem(
        Dims { n: 1, m: 1, d: 1 },
        TimeGrid::new(horizon, steps).unwrap(),
        jumps,
    )
}

fn zeros(spec: &Problem) -> NodeSeries<f64> {
    NodeSeries::zeros(spec.dims.m, 1, spec.grid.nodes())
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

#[test]
fn zero_dynamics_keep_the_start() {
    let spec = scalar(1.0, 20, JumpMeasure::none());
    let u = NodeSeries::from_fn(1, 1, 21, |i, o| o[0] = i as f64);
    let ens = simulate(&spec, Control::Table(&u), 3, &[0.25], 50, 1).unwrap();
    for p in 0..50 {
        for j in 3..=20 {
            assert_eq!(ens.state(p, j), &[0.25]);
        }
    }
    assert_eq!(ens.control(7, 10), &[10.0]);
}

#[test]
fn exponential_growth_with_first_order_euler_error() {
    let err = |steps: usize| {
        let mut spec = scalar(1.0, steps, JumpMeasure::none());
        spec.coeffs.a = konst(steps + 1, 0.8);
        let u = zeros(&spec);
        let ens = simulate(&spec, Control::Table(&u), 0, &[2.0], 1, 0).unwrap();
        (0..=steps)
            .map(|i| (ens.state(0, i)[0] - 2.0 * (0.8 * spec.grid.t(i)).exp()).abs())
            .fold(0.0, f64::max)
    };
    let (e1, e2, e3) = (err(50), err(100), err(200));
    assert!(e1 < 0.05);
    assert!(e1 / e2 >= 1.9 && e2 / e3 >= 1.9, "{e1} {e2} {e3}");
}

#[test]
fn compensated_jumps_are_mean_zero() {
    let mut spec = scalar(
        1.0,
        50,
        JumpMeasure::new(vec![vec![1.0]], vec![3.0]).unwrap(),
    );
    spec.coeffs.marks[0].c = konst(51, 1.0);
    let u = zeros(&spec);
    let mut ses = Vec::new();
    for &paths in &[1_000usize, 10_000, 100_000] {
        let ens = simulate(&spec, Control::Table(&u), 0, &[1.0], paths, 9).unwrap();
        let dev: Vec<f64> = (0..paths).map(|p| ens.state(p, 50)[0] - 1.0).collect();
        let (m, se) = mean_and_se(&dev);
        assert!(m.abs() <= 3.0 * se, "P = {paths}: {m} vs {se}");
        ses.push(se);
    }
    // stderr ~ P^{-1/2}: each tenfold increase shrinks it by about sqrt(10)
    for w in ses.windows(2) {
        let slope = (w[1] / w[0]).log10();
        assert!((slope + 0.5).abs() < 0.05, "{slope}");
    }
    // jumps are logged with their node and mark
    let ens = simulate(&spec, Control::Table(&u), 0, &[1.0], 200, 9).unwrap();
    let total: usize = (0..200).map(|p| ens.jump_log(p).len()).sum();
    let rate = total as f64 / 200.0;
    assert!((rate - 3.0).abs() < 0.5, "{rate}");
    assert!(ens.jump_log(0).iter().all(|&(i, k)| i < 50 && k == 0));
}

#[test]
fn zero_model_costs_nothing() {
    let spec = scalar(1.0, 10, JumpMeasure::none());
    let u = zeros(&spec);
    let ens = simulate(&spec, Control::Table(&u), 0, &[0.0], 10, 3).unwrap();
    let est = estimate_cost(&spec, &ens).unwrap();
    assert_eq!(est.mean, 0.0);
    assert_eq!(est.stderr, 0.0);
}

#[test]
fn anchored_terminal_cost_is_half_brownian_variance() {
    // dX = b u ds + dW with u = 0, cost ½E[(X_T − x)²] from (0, x = 0)
    let mut spec = scalar(1.0, 50, JumpMeasure::none());
    spec.coeffs.b = konst(51, 1.0);
    spec.coeffs.channels[0].sigma = konst(51, 1.0);
    spec.costs.r = TriangularField::from_fn(1, 1, 50, |_, _, o| o[0] = 1.0);
    spec.costs.g = konst(51, 1.0);
    spec.costs.mu1 = konst(51, -1.0);
    let u = zeros(&spec);
    let ens = simulate(&spec, Control::Table(&u), 0, &[0.0], 40_000, 5).unwrap();
    let est = estimate_cost(&spec, &ens).unwrap();
    assert!(
        (est.mean - 0.5).abs() <= 3.0 * est.stderr,
        "{} ± {}",
        est.mean,
        est.stderr
    );
    assert!((est.breakdown.total() - est.mean).abs() < 1e-10);
    assert_eq!(est.breakdown.running_r, 0.0);
}

fn mv() -> MeanVarianceParams {
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
        steps: 100,
        delta: 1e-3,
        x0: 1.0,
    }
}

#[test]
fn mean_variance_cost_is_variance_minus_reward() {
    let p = mv();
    let spec: Problem = mean_variance_spec(&p).unwrap();
    let (_, law) = mean_variance_solution::<f64>(&p).unwrap();
    let paths = 4_000;
    let xi = [1.3];
    for t in [0usize, 40] {
        let ens = simulate(&spec, Control::Feedback(&law), t, &xi, paths, 21).unwrap();
        let est = estimate_cost(&spec, &ens).unwrap();
        let xt: Vec<f64> = (0..paths).map(|q| ens.state(q, 100)[0]).collect();
        let m = xt.iter().sum::<f64>() / paths as f64;
        let var = xt.iter().map(|x| x * x).sum::<f64>() / paths as f64 - m * m;
        let tt = spec.grid.t(t);
        let expected = 0.5 * var - ((1.0 + tt) * xi[0] + 0.5) * m;
        assert!(
            (est.mean - expected).abs() < 1e-10,
            "{} vs {expected}",
            est.mean
        );
        let b = &est.breakdown;
        assert!((b.total() - est.mean).abs() < 1e-10);
        assert_eq!((b.running_q, b.running_qbar, b.running_r), (0.0, 0.0, 0.0));
        assert!(b.terminal_gbar < 0.0 && b.terminal_g > 0.0);
        assert!(est.stderr > 0.0);
    }
}

#[test]
fn ensembles_do_not_depend_on_thread_count() {
    let p = mv();
    let spec: Problem = mean_variance_spec(&p).unwrap();
    let (_, law) = mean_variance_solution::<f64>(&p).unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            let ens = simulate(&spec, Control::Feedback(&law), 5, &[1.0], 3_000, 77).unwrap();
            let est = estimate_cost(&spec, &ens).unwrap();
            (
                ens.summary_csv(&spec),
                (0..3_000).map(|q| ens.state(q, 100)[0]).collect::<Vec<_>>(),
                est,
            )
        })
    };
    let (a, b) = (run(1), run(3));
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
    assert!(a.0.starts_with("node,s,mean_X_1,stderr_1\n"));
}

#[test]
fn different_seeds_differ() {
    let mut spec = scalar(1.0, 10, JumpMeasure::none());
    spec.coeffs.channels[0].sigma = konst(11, 1.0);
    let u = zeros(&spec);
    let a = simulate(&spec, Control::Table(&u), 0, &[0.0], 4, 1).unwrap();
    let b = simulate(&spec, Control::Table(&u), 0, &[0.0], 4, 2).unwrap();
    assert_ne!(a.state(0, 10), b.state(0, 10));
    // paths are separate streams
    assert_ne!(a.state(0, 10), a.state(1, 10));
}

#[test]
fn requests_are_validated() {
    let spec = scalar(1.0, 10, JumpMeasure::none());
    let u = zeros(&spec);
    assert!(matches!(
        simulate(&spec, Control::Table(&u), 10, &[0.0], 1, 0),
        Err(SimError::Request(_))
    ));
    assert!(matches!(
        simulate(&spec, Control::Table(&u), 0, &[0.0], 0, 0),
        Err(SimError::Request(_))
    ));
    let short = NodeSeries::zeros(1, 1, 5);
    assert!(matches!(
        simulate(&spec, Control::Table(&short), 0, &[0.0], 1, 0),
        Err(SimError::ControlMismatch(_))
    ));
}

#[test]
fn blow_up_is_reported_with_path_and_step() {
    let mut spec = scalar(1.0, 10, JumpMeasure::none());
    spec.coeffs.a = konst(11, 1e300);
    let u = zeros(&spec);
    match simulate(&spec, Control::Table(&u), 0, &[1e300], 2, 0) {
        Err(SimError::NonFinite { path: 0, step: 0 }) => {}
        other => panic!("{other:?}"),
    }
}

/// `−½P(0;0)` is the terminal cost `½E[Φ(T,0)² G]` of the unforced linear flow.
#[test]
fn second_order_field_matches_monte_carlo_representation() {
    let (a, c, e, th) = (0.2, 0.5, 0.3, 1.0);
    let steps = 200;
    let mut spec = scalar(
        1.0,
        steps,
        JumpMeasure::new(vec![vec![1.0]], vec![th]).unwrap(),
    );
    spec.coeffs.a = konst(steps + 1, a);
    spec.coeffs.channels[0].c = konst(steps + 1, c);
    spec.coeffs.marks[0].e = konst(steps + 1, e);
    spec.costs.g = konst(steps + 1, 1.0);
    let p = solve_second_order(&spec).unwrap();
    let exact = -(2.0 * a + c * c + e * e * th).exp();
    assert!((p.at(0, 0)[0] - exact).abs() < 1e-8);

    let u = zeros(&spec);
    let ens = simulate(&spec, Control::Table(&u), 0, &[1.0], 40_000, 13).unwrap();
    let est = estimate_cost(&spec, &ens).unwrap();
    let target = -0.5 * p.at(0, 0)[0];
    // Euler bias of the second moment is about 0.23 h relative here
    let bias = 0.25 * spec.grid.h() * target;
    assert!(
        (est.mean - target).abs() <= 3.0 * est.stderr + bias,
        "{} ± {} vs {target}",
        est.mean,
        est.stderr
    );
}

#[test]
fn mean_trajectory_matches_ensemble_mean() {
    let mut spec = scalar(
        1.0,
        40,
        JumpMeasure::new(vec![vec![1.0]], vec![2.0]).unwrap(),
    );
    spec.coeffs.a = konst(41, 0.3);
    spec.coeffs.b = konst(41, 1.0);
    spec.coeffs.drift = konst(41, 0.1);
    spec.coeffs.channels[0].sigma = konst(41, 0.5);
    spec.coeffs.marks[0].e = konst(41, 0.4);
    spec.costs.r = TriangularField::from_fn(1, 1, 40, |_, _, o| o[0] = 1.0);
    spec.costs.g = konst(41, 1.0);
    let (_, law) = solve_flow_marching(&spec).unwrap();
    let traj = mean_trajectory(&spec, &law, 10, &[0.7]);
    assert_eq!(traj.len(), 31);
    assert_eq!(traj[0], vec![0.7]);
    let ens = simulate(&spec, Control::Feedback(&law), 10, &[0.7], 20_000, 4).unwrap();
    for (k, j) in (10..=40).enumerate().step_by(5) {
        let xs: Vec<f64> = (0..20_000).map(|q| ens.state(q, j)[0]).collect();
        let (m, se) = mean_and_se(&xs);
        assert!(
            (m - traj[k][0]).abs() <= 4.0 * se + 1e-12,
            "{j}: {m} vs {}",
            traj[k][0]
        );
    }
}
