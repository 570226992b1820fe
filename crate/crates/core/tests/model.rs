use proptest::prelude::*;
use tilq::analytic::{regulator_spec, RegulatorParams, TimeFn};
use tilq::model::{
    check_h1_h2, ellipticity_check, parse_document, spec_to_document, write_spec, zero_problem,
    ModelError,
};
use tilq::{
    build_problem, ConfigError, Dims, JumpMeasure, NodeSeries, Problem, TimeGrid, TriangularField,
};

fn load(text: &str) -> Result<Problem, ConfigError> {
    build_problem(&parse_document(text)?)
}

const ZERO: &str = r#"
x0 = [0.0]
[dims]
n = 1
m = 1
d = 1
[grid]
T = 1.0
N = 10
[coeff]
A = { family = "constant", params = { value = 0.0 } }
B = { family = "constant", params = { value = 0.0 } }
sigma = { family = "constant", params = { value = 0.0 } }
[cost]
R = { family = "constant", params = { value = 0.0 } }
G = { family = "constant", params = { value = 0.0 } }
"#;

#[test]
fn zero_model_config_is_all_zero() {
    let spec = load(ZERO).unwrap();
    assert!(spec.jumps.is_empty());
    let c = &spec.coeffs;
    assert!(c.a.is_zero() && c.b.is_zero() && c.drift.is_zero());
    assert!(c
        .channels
        .iter()
        .all(|ch| ch.c.is_zero() && ch.d.is_zero() && ch.sigma.is_zero()));
    let k = &spec.costs;
    assert!(k.q.is_zero() && k.qbar.is_zero() && k.r.is_zero());
    assert!(k.g.is_zero() && k.gbar.is_zero() && k.mu1.is_zero() && k.mu2.is_zero());
    assert_eq!(
        spec,
        zero_problem(Dims { n: 1, m: 1, d: 1 }, spec.grid, JumpMeasure::none())
    );
}

#[test]
fn regulator_config_matches_oracle_instance() {
    let text = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../configs/regulator.toml"
    ))
    .unwrap();
    let spec = load(&text).unwrap();
    let params = RegulatorParams {
        a: 0.1,
        sigma: 0.2,
        c: 0.1,
        lambda: 1.0,
        h: TimeFn::Hyperbolic {
            value: 1.0,
            kappa: 1.0,
        },
        steps: 200,
        ..RegulatorParams::unit(200)
    };
    let oracle: Problem = regulator_spec(&params).unwrap();
    assert_eq!(spec, oracle);
    // G = h(t), mu1 = h(t): the terminal anchor has the same sign as G
    assert!((spec.costs.g.at(200)[0] - 0.5).abs() < 1e-15);
    assert_eq!(spec.costs.g, spec.costs.mu1);
}

#[test]
fn negative_intensity_names_key() {
    let text = ZERO.replace(
        "[coeff]",
        "[jumps]\nmarks = [[1.0]]\nintensities = [-0.5]\n[coeff]",
    );
    let err = load(&text).unwrap_err();
    assert_eq!(err.path(), Some("jumps.intensities[0]"), "{err}");
}

#[test]
fn unknown_family_names_key() {
    let text = ZERO.replace(r#"A = { family = "constant""#, r#"A = { family = "cubic""#);
    let err = load(&text).unwrap_err();
    assert!(matches!(err, ConfigError::UnknownFamily { .. }));
    assert_eq!(err.path(), Some("coeff.A.family"));
}

#[test]
fn wrong_table_length_and_shape_are_rejected() {
    let text = ZERO.replace(
        r#"A = { family = "constant", params = { value = 0.0 } }"#,
        "A = { table = [0.0, 1.0] }",
    );
    assert_eq!(load(&text).unwrap_err().path(), Some("coeff.A.table"));

    let text = ZERO
        .replace("n = 1", "n = 2")
        .replace("x0 = [0.0]", "x0 = [0.0, 0.0]");
    let err = load(&text).unwrap_err();
    assert!(err.path().unwrap().starts_with("coeff.A"), "{err}");
}

#[test]
fn non_finite_sample_is_rejected() {
    let text = ZERO.replace("value = 0.0 } }\nB", "value = nan } }\nB");
    let err = load(&text).unwrap_err();
    assert!(matches!(err, ConfigError::NonFinite { .. }), "{err}");
    assert!(err.path().unwrap().starts_with("coeff.A"));
}

#[test]
fn families_evaluate_at_nodes() {
    let text = ZERO
        .replace(
            r#"A = { family = "constant", params = { value = 0.0 } }"#,
            r#"A = { family = "affine", params = { value = 1.0, slope = 2.0 } }"#,
        )
        .replace(
            r#"G = { family = "constant", params = { value = 0.0 } }"#,
            r#"G = { family = "quasi_hyperbolic", params = { value = 2.0, lambda = 0.25, delta1 = 1.0, delta2 = 3.0 } }"#,
        )
        .replace(
            r#"R = { family = "constant", params = { value = 0.0 } }"#,
            r#"R = { family = "exp_discount", params = { value = 1.0, delta = 0.5 } }"#,
        );
    let spec = load(&text).unwrap();
    for i in 0..=10 {
        let t = spec.grid.t(i);
        assert_eq!(spec.coeffs.a.at(i)[0], 1.0 + 2.0 * t);
        let g = 2.0 * (0.25 * (-t).exp() + 0.75 * (-3.0 * t).exp());
        assert!((spec.costs.g.at(i)[0] - g).abs() < 1e-15);
        for j in i..=10 {
            // default argument of a two-time weight is the lag s - t
            let lag = spec.grid.t(j) - t;
            assert!((spec.costs.r.at(i, j)[0] - (-0.5 * lag).exp()).abs() < 1e-15);
        }
    }
}

#[test]
fn grid_ends_exactly_at_horizon() {
    let g = TimeGrid::new(0.7, 3).unwrap();
    assert_eq!(g.t(3), 0.7);
    assert_eq!(g.t(0), 0.0);
    assert!(matches!(
        TimeGrid::new(1.0, 1),
        Err(ModelError::TooFewSteps(1))
    ));
    assert!(TimeGrid::new(-1.0, 10).is_err());
}

#[test]
fn jump_measure_rejects_zero_mark() {
    assert!(matches!(
        JumpMeasure::new(vec![vec![0.0]], vec![1.0]),
        Err(ModelError::ZeroMark(0))
    ));
}

#[test]
fn h2_zero_model_holds_with_zero_eigenvalues() {
    let spec = load(ZERO).unwrap();
    let rep = check_h1_h2(&spec);
    assert!(rep.h2_satisfied);
    assert!(rep
        .min_eig_r
        .iter()
        .chain(&rep.min_eig_g)
        .chain(&rep.min_eig_q)
        .all(|&v| v == 0.0));
}

#[test]
fn h2_mean_variance_config_holds() {
    let text = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../configs/mean_variance.toml"
    ))
    .unwrap();
    let spec = load(&text).unwrap();
    assert!(spec.costs.r.is_zero() && spec.costs.q.is_zero());
    let rep = check_h1_h2(&spec);
    assert!(rep.h2_satisfied);
    assert!(rep.continuity_warnings.is_empty());
}

#[test]
fn h2_fails_for_negative_r() {
    let text = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../configs/negative_r.toml"
    ))
    .unwrap();
    let spec = load(&text).unwrap();
    let rep = check_h1_h2(&spec);
    assert!(!rep.h2_satisfied);
    assert!(rep.min_eig_r.iter().all(|&v| v == -1.0));
}

#[test]
fn continuity_heuristic_warns_on_a_jump() {
    let mut spec = load(ZERO).unwrap();
    spec.coeffs.a = NodeSeries::from_fn(1, 1, 11, |i, o| o[0] = if i < 5 { 0.0 } else { 1.0 });
    let rep = check_h1_h2(&spec);
    assert!(rep.h2_satisfied);
    assert_eq!(rep.continuity_warnings.len(), 1);
    assert!(rep.continuity_warnings[0].starts_with("A:"));
}

fn scalar_wealth(beta: f64, marks: &[(f64, f64)]) -> Problem {
    let grid = TimeGrid::new(1.0, 10).unwrap();
    let jumps = JumpMeasure::new(
        (0..marks.len()).map(|k| vec![(k + 1) as f64]).collect(),
        marks.iter().map(|m| m.1).collect(),
    )
    .unwrap();
    let mut spec = zero_problem(Dims { n: 1, m: 1, d: 1 }, grid, jumps);
    spec.coeffs.channels[0].d = NodeSeries::from_fn(1, 1, 11, |_, o| o[0] = beta);
    for (k, &(g, _)) in marks.iter().enumerate() {
        spec.coeffs.marks[k].f = NodeSeries::from_fn(1, 1, 11, |_, o| o[0] = g);
    }
    spec
}

#[test]
fn ellipticity_examples() {
    let rep = ellipticity_check(&scalar_wealth(0.2, &[]), 0.01).unwrap();
    assert!(rep.pass);
    assert!(rep.rho.iter().all(|&r| (r - 0.04).abs() < 1e-17));

    let rep = ellipticity_check(&scalar_wealth(0.0, &[]), 1e-300).unwrap();
    assert!(!rep.pass);
    assert_eq!(rep.min_rho, 0.0);

    let rep = ellipticity_check(&scalar_wealth(0.1, &[(0.3, 1.0)]), 0.05).unwrap();
    assert!(rep.rho.iter().all(|&r| (r - 0.10).abs() < 1e-15));
    assert!(rep.pass);
}

#[test]
fn ellipticity_rejects_vector_problems() {
    let grid = TimeGrid::new(1.0, 4).unwrap();
    let spec: Problem = zero_problem(Dims { n: 2, m: 1, d: 1 }, grid, JumpMeasure::none());
    assert!(matches!(
        ellipticity_check(&spec, 0.1),
        Err(ModelError::WrongShape(_))
    ));
}

#[test]
fn f32_specs_build() {
    let spec: tilq::ProblemSpec<f32> = build_problem(&parse_document(ZERO).unwrap()).unwrap();
    assert_eq!(spec.grid.t(10), 1.0f32);
}

fn arb_spec() -> impl Strategy<Value = Problem> {
    (
        1usize..3,
        1usize..3,
        0usize..3,
        0usize..3,
        2usize..6,
        any::<u64>(),
    )
        .prop_map(|(n, m, d, k, steps, seed)| {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let grid = TimeGrid::new(rng.random_range(0.1..3.0), steps).unwrap();
            let marks = (0..k)
                .map(|_| (0..n).map(|_| rng.random_range(0.5..2.0)).collect())
                .collect();
            let rates = (0..k).map(|_| rng.random_range(0.0..2.0)).collect();
            let mut spec = zero_problem(
                Dims { n, m, d },
                grid,
                JumpMeasure::new(marks, rates).unwrap(),
            );
            let nodes = steps + 1;
            let mut series = |r: usize, c: usize| {
                NodeSeries::from_fn(r, c, nodes, |_, o| {
                    o.iter_mut().for_each(|v| *v = rng.random_range(-2.0..2.0))
                })
            };
            spec.coeffs.a = series(n, n);
            spec.coeffs.b = series(n, m);
            spec.coeffs.drift = series(n, 1);
            for ch in spec.coeffs.channels.iter_mut() {
                ch.c = series(n, n);
                ch.d = series(n, m);
                ch.sigma = series(n, 1);
            }
            for mk in spec.coeffs.marks.iter_mut() {
                mk.e = series(n, n);
                mk.f = series(n, m);
                mk.c = series(n, 1);
            }
            spec.costs.mu1 = series(n, n);
            spec.costs.mu2 = series(n, 1);
            let mut sym = |dim: usize| {
                NodeSeries::from_fn(dim, dim, nodes, |_, o| {
                    for a in 0..dim {
                        for b in a..dim {
                            let v: f64 = rng.random_range(-2.0..2.0);
                            o[a * dim + b] = v;
                            o[b * dim + a] = v;
                        }
                    }
                })
            };
            spec.costs.g = sym(n);
            spec.costs.gbar = sym(n);
            let mut tri = |dim: usize| {
                TriangularField::from_fn(dim, dim, steps, |_, _, o| {
                    for a in 0..dim {
                        for b in a..dim {
                            let v: f64 = rng.random_range(-2.0..2.0);
                            o[a * dim + b] = v;
                            o[b * dim + a] = v;
                        }
                    }
                })
            };
            spec.costs.q = tri(n);
            spec.costs.qbar = tri(n);
            spec.costs.r = tri(m);
            spec.x0 = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            spec
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn serialization_round_trips_bit_exactly(spec in arb_spec()) {
        let text = write_spec(&spec);
        let back: Problem = build_problem(&parse_document(&text).unwrap()).unwrap();
        prop_assert_eq!(&back, &spec);
        // ingesting already-symmetric weights changes nothing, so a second pass is a fixed point
        let again: Problem = build_problem(&spec_to_document(&back)).unwrap();
        prop_assert_eq!(again, back);
    }

    #[test]
    fn rho_is_beta_squared_without_jumps(beta in -5.0f64..5.0, steps in 2usize..20) {
        let grid = TimeGrid::new(1.0, steps).unwrap();
        let mut spec: Problem = zero_problem(Dims { n: 1, m: 1, d: 1 }, grid, JumpMeasure::none());
        spec.coeffs.channels[0].d = NodeSeries::from_fn(1, 1, steps + 1, |i, o| o[0] = beta * (1.0 + i as f64));
        let rep = ellipticity_check(&spec, 1e-300).unwrap();
        for (i, r) in rep.rho.iter().enumerate() {
            let b = beta * (1.0 + i as f64);
            prop_assert_eq!(*r, b * b);
        }
    }
}

#[test]
fn asymmetric_weight_is_symmetrized_on_ingest() {
    let text = ZERO
        .replace("n = 1", "n = 2")
        .replace("x0 = [0.0]", "x0 = [0.0, 0.0]")
        .replace(
            r#"A = { family = "constant", params = { value = 0.0 } }"#,
            r#"A = { family = "constant", params = { value = [[0.0, 0.0], [0.0, 0.0]] } }"#,
        )
        .replace(
            r#"B = { family = "constant", params = { value = 0.0 } }"#,
            r#"B = { family = "constant", params = { value = [0.0, 0.0] } }"#,
        )
        .replace(
            r#"sigma = { family = "constant", params = { value = 0.0 } }"#,
            r#"sigma = { family = "constant", params = { value = [0.0, 0.0] } }"#,
        )
        .replace(
            r#"G = { family = "constant", params = { value = 0.0 } }"#,
            r#"G = { family = "constant", params = { value = [[1.0, 2.0], [0.0, 1.0]] } }"#,
        );
    let spec = load(&text).unwrap();
    assert_eq!(spec.costs.g.at(3), &[1.0, 1.0, 1.0, 1.0]);
}
