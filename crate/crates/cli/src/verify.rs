use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use serde_json::{json, Value};
use tilq::flow::{feedback_residual, solve_second_order};
use tilq::io::{csv_table, to_json_pretty};
use tilq::simulator::mean_trajectory;
use tilq::verifier::{
    adversarial_direction, ladder_multiples, law_residual, second_order_condition, spike_tests,
    SpikeReport, SpikeRequest, VerifyError,
};
use tilq::{Flow, Law, Problem};

use crate::manifest::RunDir;
use crate::solve::problem_hash;
use crate::{load_problem, read_text, CliError, CliResult, VerifyArgs, EXIT_OK, EXIT_VERIFY};

/// Random directions per node; an adversarial one is added on top.
pub const RANDOM_DIRECTIONS: usize = 10;

/// The law is checked against the flow it generates, so a solver law passes to rounding.
pub const FOC_TOL: f64 = 1e-6;

fn solution_dir(p: &Path) -> PathBuf {
    if p.join("meta.json").is_file() {
        p.to_path_buf()
    } else {
        p.join("solution")
    }
}

fn read_json(path: &Path) -> CliResult<Value> {
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| CliError::Input(format!("{}: not valid JSON: {e}", path.display())))
}

fn default_nodes(steps: usize, widest: usize) -> Vec<usize> {
    let last = steps.saturating_sub(widest);
    let mut nodes: Vec<usize> = (1..=5)
        .map(|k| k * last / 6)
        .filter(|&i| i < last)
        .collect();
    nodes.dedup();
    nodes
}

/// Standard normal directions, a fresh stream per node so `--nodes` subsets agree.
fn random_directions(seed: u64, node: usize, m: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d1e5_0000_0000);
    rng.set_stream(node as u64);
    (0..RANDOM_DIRECTIONS)
        .map(|_| (0..m).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect()
}

#[derive(Debug, Serialize)]
struct NodeVerdict {
    node: usize,
    t: f64,
    xi: Vec<f64>,
    first_order_residual: f64,
    first_order_pass: bool,
    adversarial_v: Vec<f64>,
    spike_pass: bool,
    spikes: Vec<SpikeReport>,
}

/// `[0..=4, 9]` style listing of sorted node indices.
fn ranges(nodes: &[usize]) -> String {
    let mut out = Vec::new();
    let mut k = 0;
    while k < nodes.len() {
        let start = nodes[k];
        while k + 1 < nodes.len() && nodes[k + 1] == nodes[k] + 1 {
            k += 1;
        }
        out.push(if nodes[k] == start {
            start.to_string()
        } else {
            format!("{start}..={}", nodes[k])
        });
        k += 1;
    }
    format!("[{}]", out.join(", "))
}

fn verify_error(e: VerifyError) -> CliError {
    match e {
        VerifyError::Ladder(_) | VerifyError::Request(_) | VerifyError::Mismatch(_) => {
            CliError::Input(e.to_string())
        }
        other => CliError::Solver(other.to_string()),
    }
}

fn load_solution(spec: &Problem, dir: &Path) -> CliResult<(Flow, Law)> {
    let meta = read_json(&dir.join("meta.json"))?;
    let expected = problem_hash(spec);
    let found = meta["problem_sha256"].as_str().unwrap_or("");
    if found != expected {
        return Err(CliError::Input(format!(
            "solution in {} was computed for problem {found}, config hashes to {expected}",
            dir.display()
        )));
    }
    let flow = Flow::from_document(&read_json(&dir.join("flow.json"))?).map_err(CliError::Input)?;
    let law = Law::from_document(&read_json(&dir.join("law.json"))?).map_err(CliError::Input)?;
    let steps = spec.grid.steps();
    if flow.steps() != steps
        || law.nodes() != steps + 1
        || law.n() != spec.dims.n
        || law.m() != spec.dims.m
    {
        return Err(CliError::Input(
            "solution grid or dimensions differ from the config".into(),
        ));
    }
    Ok((flow, law))
}

pub fn cmd_verify(args: &VerifyArgs) -> CliResult<()> {
    let spec = load_problem(&args.config)?;
    let sol_dir = solution_dir(&args.solution);
    let (flow, law) = load_solution(&spec, &sol_dir)?;
    let steps = spec.grid.steps();
    let h = spec.grid.h();
    let ladder = args
        .eps_ladder
        .clone()
        .unwrap_or_else(|| vec![h, 2.0 * h, 4.0 * h, 8.0 * h]);
    if args.paths < 2 {
        return Err(CliError::Input("--paths must be at least 2".into()));
    }
    // validate the ladder alone first, so its error is not masked by node choice
    let widest = *ladder_multiples(h, 0, steps, &ladder)
        .map_err(verify_error)?
        .iter()
        .max()
        .unwrap_or(&1);
    let nodes = args
        .nodes
        .clone()
        .unwrap_or_else(|| default_nodes(steps, widest));
    if nodes.is_empty() {
        return Err(CliError::Input("no nodes to test".into()));
    }
    for &i in &nodes {
        ladder_multiples(h, i, steps, &ladder).map_err(verify_error)?;
    }

    let traj = mean_trajectory(&spec, &law, 0, &spec.x0);
    let foc = law_residual(&spec, &law, &traj).map_err(verify_error)?;
    let second = solve_second_order(&spec).map_err(|e| CliError::Solver(e.to_string()))?;
    let soc = second_order_condition(&spec, &second).map_err(verify_error)?;
    let consistency =
        feedback_residual(&spec, &flow, &law).map_err(|e| CliError::Input(e.to_string()))?;

    let mut verdicts = Vec::with_capacity(nodes.len());
    for &i in &nodes {
        let xi = traj[i].clone();
        let k = &foc.k[i];
        let adv = adversarial_direction(&spec, &second, i, k);
        let mut directions = random_directions(args.seed, i, spec.dims.m);
        directions.push(adv.clone());
        let req = SpikeRequest {
            node: i,
            xi: xi.clone(),
            directions,
        };
        let spikes =
            spike_tests(&spec, &law, &req, &ladder, args.paths, args.seed).map_err(verify_error)?;
        verdicts.push(NodeVerdict {
            node: i,
            t: spec.grid.t(i),
            xi,
            first_order_residual: foc.residual[i],
            first_order_pass: foc.residual[i] <= FOC_TOL,
            adversarial_v: adv,
            spike_pass: spikes.iter().all(|s| s.pass),
            spikes,
        });
    }

    let failing: Vec<usize> = verdicts
        .iter()
        .filter(|v| !(v.first_order_pass && v.spike_pass))
        .map(|v| v.node)
        .collect();
    let foc_failing: Vec<usize> = foc
        .residual
        .iter()
        .enumerate()
        .filter(|(_, &r)| !(r <= FOC_TOL))
        .map(|(i, _)| i)
        .collect();
    let pass = failing.is_empty() && foc_failing.is_empty() && soc.pass;

    let out = args
        .out
        .clone()
        .unwrap_or_else(|| sol_dir.parent().unwrap_or(Path::new(".")).join("verify"));
    let mut dir = RunDir::create(&out)?;
    let report = json!({
        "problem_sha256": problem_hash(&spec),
        "paths": args.paths,
        "seed": args.seed,
        "epsilon_ladder": ladder,
        "nodes": nodes,
        "pass": pass,
        "failing_nodes": failing,
        "first_order": {
            "tolerance": FOC_TOL,
            "max": foc.max,
            "failing_nodes": foc_failing,
        },
        "second_order": soc,
        "flow_law_consistency_max": consistency.iter().copied().fold(0.0, f64::max),
        "node_verdicts": verdicts,
    });
    dir.write("reports/verify.json", &to_json_pretty(&report))?;
    dir.write("reports/first_order.csv", &foc.csv(&spec))?;
    dir.write("reports/second_order.csv", &soc.csv(&spec))?;
    let spike_rows = verdicts.iter().flat_map(|v| {
        v.spikes.iter().enumerate().map(move |(d, s)| {
            vec![
                v.node as f64,
                d as f64,
                s.limit,
                s.limit_stderr,
                if s.pass { 1.0 } else { 0.0 },
            ]
        })
    });
    dir.write(
        "reports/spike.csv",
        &csv_table(
            &["node", "direction", "limit", "stderr", "pass"],
            spike_rows,
        ),
    )?;

    let mut argv = BTreeMap::new();
    argv.insert("solution".to_string(), args.solution.display().to_string());
    argv.insert("paths".to_string(), args.paths.to_string());
    argv.insert("eps_ladder".to_string(), format!("{ladder:?}"));
    argv.insert("nodes".to_string(), format!("{nodes:?}"));
    let code = if pass { EXIT_OK } else { EXIT_VERIFY };
    dir.finish("verify", Some(&args.config), Some(args.seed), argv, code)?;
    if pass {
        Ok(())
    } else {
        let mut parts = Vec::new();
        if !failing.is_empty() {
            parts.push(format!("failing nodes {failing:?}"));
        }
        if !foc_failing.is_empty() {
            parts.push(format!(
                "first-order residual above {FOC_TOL:e} at nodes {}",
                ranges(&foc_failing)
            ));
        }
        if !soc.pass {
            parts.push(format!(
                "second-order condition fails at nodes {}",
                ranges(&soc.failing_nodes)
            ));
        }
        let msg = parts.join("; ");
        Err(CliError::Verification(msg))
    }
}
