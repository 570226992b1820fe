use std::collections::BTreeMap;

use serde_json::json;
use tilq::flow::{feedback_residual, solve_flow_marching, solve_flow_picard, PicardTrace};
use tilq::io::{to_json, to_json_pretty};
use tilq::model::{check_h1_h2, spec_to_document};
use tilq::{Flow, FlowError, Law, Problem};

use crate::manifest::{sha256_hex, RunDir};
use crate::{load_problem, CliError, CliResult, SolveArgs, SolverKind, EXIT_OK, EXIT_SOLVER};

const PICARD_MAX_ITER: usize = 1000;

/// Hash of the sampled problem, so formatting and comments in the file do not matter.
pub fn problem_hash(spec: &Problem) -> String {
    sha256_hex(to_json(&spec_to_document(spec)).as_bytes())
}

fn run_solver(
    spec: &Problem,
    args: &SolveArgs,
) -> Result<(Flow, Law, Option<PicardTrace>), FlowError> {
    match args.solver {
        SolverKind::Marching => solve_flow_marching(spec).map(|(f, l)| (f, l, None)),
        SolverKind::Picard => solve_flow_picard(spec, args.beta, args.tol, PICARD_MAX_ITER)
            .map(|(f, l, t)| (f, l, Some(t))),
    }
}

fn solver_name(k: SolverKind) -> &'static str {
    match k {
        SolverKind::Marching => "marching",
        SolverKind::Picard => "picard",
    }
}

pub fn cmd_solve(args: &SolveArgs) -> CliResult<()> {
    let spec = load_problem(&args.config)?;
    if args.solver == SolverKind::Picard && !(args.beta > 0.0 && args.tol > 0.0) {
        return Err(CliError::Input("--beta and --tol must be positive".into()));
    }
    let hash = problem_hash(&spec);
    let mut dir = RunDir::create(&args.out)?;
    let mut argv = BTreeMap::new();
    argv.insert("solver".to_string(), solver_name(args.solver).to_string());
    argv.insert("beta".to_string(), args.beta.to_string());
    argv.insert("tol".to_string(), args.tol.to_string());
    let assumptions = check_h1_h2(&spec);

    let (flow, law, trace) = match run_solver(&spec, args) {
        Ok(r) => r,
        Err(e) => {
            let diag = json!({
                "solver": solver_name(args.solver),
                "problem_sha256": hash,
                "error": e.to_string(),
                "node": e.node(),
                "t": e.node().map(|i| spec.grid.t(i)),
                "assumptions": assumptions,
            });
            dir.write("reports/diagnostics.json", &to_json_pretty(&diag))?;
            dir.finish("solve", Some(&args.config), None, argv, EXIT_SOLVER)?;
            return Err(CliError::Solver(e.to_string()));
        }
    };

    let residual =
        feedback_residual(&spec, &flow, &law).map_err(|e| CliError::Solver(e.to_string()))?;
    let meta = json!({
        "problem_sha256": hash,
        "solver": solver_name(args.solver),
        "T": spec.grid.horizon(),
        "N": spec.grid.steps(),
    });
    dir.write("solution/meta.json", &to_json_pretty(&meta))?;
    dir.write(
        "solution/flow.json",
        &to_json(&flow.to_document(&spec.grid)),
    )?;
    dir.write("solution/law.json", &to_json(&law.to_document(&spec.grid)))?;
    dir.write("plots/diagonal.csv", &flow.diagonal_csv(&spec.grid, &law))?;
    if let Some(t) = &trace {
        dir.write("reports/picard_trace.csv", &t.csv())?;
    }
    let report = json!({
        "solver": solver_name(args.solver),
        "problem_sha256": hash,
        "N": spec.grid.steps(),
        "h": spec.grid.h(),
        "max_theta_cond": flow.diagnostics.theta_cond.iter().copied().fold(0.0, f64::max),
        "experimental": flow.diagnostics.experimental,
        // gains re-derived from the returned diagonal
        "max_feedback_residual": residual.iter().copied().fold(0.0, f64::max),
        "picard": trace.as_ref().map(|t| json!({
            "iterations": t.norms.len(),
            "norms": t.norms,
            "monotone_after_2": t.monotone_after(2),
        })),
        "assumptions": assumptions,
    });
    dir.write("reports/solve.json", &to_json_pretty(&report))?;
    dir.finish("solve", Some(&args.config), None, argv, EXIT_OK)?;
    Ok(())
}
