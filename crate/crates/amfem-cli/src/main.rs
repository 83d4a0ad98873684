//! Command-line front end: adaptive/uniform runs, the property-check
//! battery, convergence tables, and mesh inspection, with deterministic
//! text/CSV/JSON/SVG artifacts.
//!
//! Exit codes: 0 success, 2 configuration error, 3 verification failure
//! (any failed check item), 4 verification impossible within the
//! configured budgets.

mod artifacts;

use amfem::adaptivity::{afem_run, uniform_run, AfemConfig, AfemOutcome};
use amfem::feec::Complex;
use amfem::mesh::Mesh;
use amfem::problems::{by_name, Problem};
use amfem::saddle::{assemble, solve, Variant};
use amfem::verify::{
    check_codifferential, check_complex, check_contraction, check_convergence_rates,
    check_marking, check_optimality, check_orthogonality, check_quasi_orthogonality,
    convergence_table, inject, lift_to_reference, CheckReport, VerifyError,
};
use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use std::path::PathBuf;
use std::sync::Arc;

#[derive(Parser)]
#[command(
    name = "amfem",
    version,
    about = "Adaptive mixed finite element solver for the Hodge Laplacian on 2D polygonal domains"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the solve-estimate-mark-refine loop and write its artifacts
    Run(CommonArgs),
    /// Run the property-check battery for a problem; exit 3 on any failure
    Verify(VerifyArgs),
    /// Run adaptive and uniform refinement side by side and tabulate both
    Table(CommonArgs),
    /// Print statistics of the initial mesh
    MeshInfo(CommonArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Benchmark problem: m1 | m2 | s1 | s1m | s2 (case-insensitive)
    #[arg(long, default_value = "m1")]
    problem: String,

    /// Initial mesh file (overrides the problem's builtin starting mesh;
    /// format as written by the mesh_*.txt artifacts)
    #[arg(long)]
    mesh: Option<PathBuf>,

    /// Bulk marking fraction for the total indicators, in (0,1)
    #[arg(long, default_value_t = 0.5)]
    theta: f64,

    /// Separate bulk fraction for the scalar-part indicators (default: theta)
    #[arg(long)]
    theta_sigma: Option<f64>,

    /// Stop once the global estimator drops to this value
    #[arg(long)]
    tol: Option<f64>,

    /// Degree-of-freedom budget
    #[arg(long)]
    max_dofs: Option<usize>,

    /// Iteration budget
    #[arg(long)]
    max_iters: Option<usize>,

    /// Quadrature degree for assembly, estimation, and error integrals
    #[arg(long)]
    quad: Option<usize>,

    /// Relative residual tolerance of the linear solver
    #[arg(long, default_value_t = 1e-10)]
    solver_tol: f64,

    /// Mark every element at every step instead of Dörfler marking
    #[arg(long)]
    uniform: bool,

    /// System variant override: hodge | maxwell (default: the problem's own)
    #[arg(long)]
    variant: Option<String>,

    /// Output directory for artifacts (env AMFEM_OUT overrides)
    #[arg(long, default_value = "amfem-out")]
    out: PathBuf,

    /// Worker threads (reserved; the current implementation is single-threaded)
    #[arg(long, default_value_t = 1)]
    threads: usize,

    /// Also write SVG renderings of the initial and final meshes
    #[arg(long)]
    svg: bool,

    /// Seed echoed into reports; all randomized checks draw from their own
    /// fixed streams, so outputs are deterministic for fixed config
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// For the maxwell variant: project the load onto the compatible
    /// (divergence-free) subspace before each solve
    #[arg(long)]
    project_rhs: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Deliberately corrupt one ingredient; the matching check must then fail
    #[arg(long, value_parser = ["incidence", "nesting", "marking"])]
    inject_fault: Option<String>,
}

enum CliError {
    Config(String),
    Budget(String),
    Internal(anyhow::Error),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Budget(_) => 4,
            CliError::Internal(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Budget(m) => write!(f, "budget exhausted: {m}"),
            CliError::Internal(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Internal(e)
    }
}

impl From<amfem::adaptivity::AdaptivityError> for CliError {
    fn from(e: amfem::adaptivity::AdaptivityError) -> Self {
        match e {
            amfem::adaptivity::AdaptivityError::InvalidConfig(m) => CliError::Config(m),
            other => CliError::Internal(anyhow::Error::new(other)),
        }
    }
}

impl From<VerifyError> for CliError {
    fn from(e: VerifyError) -> Self {
        match e {
            VerifyError::InsufficientLevels { .. } | VerifyError::TooFewIterations { .. } => {
                CliError::Budget(e.to_string())
            }
            VerifyError::Adaptivity(inner) => CliError::from(inner),
            other => CliError::Internal(anyhow::Error::new(other)),
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let code = match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    };
    std::process::exit(code);
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Table(args) => cmd_table(args),
        Command::MeshInfo(args) => cmd_mesh_info(args),
    }
}

/// Per-subcommand defaults for the optional budget flags.
struct Budgets {
    tol: f64,
    max_dofs: usize,
    max_iters: usize,
    quad: usize,
}

struct Resolved {
    problem: Problem,
    mesh: Arc<Mesh>,
    cfg: AfemConfig,
    out: PathBuf,
}

fn resolve(args: &CommonArgs, budgets: Budgets) -> Result<Resolved, CliError> {
    let name = args.problem.to_ascii_lowercase();
    let problem = by_name(&name).ok_or_else(|| {
        CliError::Config(format!(
            "unknown problem '{}' (expected m1, m2, s1, s1m, or s2)",
            args.problem
        ))
    })?;

    let variant = match args.variant.as_deref() {
        None => problem.variant,
        Some(v) => match v.to_ascii_lowercase().as_str() {
            "hodge" => Variant::Hodge,
            "maxwell" => Variant::Maxwell,
            other => {
                return Err(CliError::Config(format!(
                    "unknown variant '{other}' (expected hodge or maxwell)"
                )))
            }
        },
    };

    let mesh = match &args.mesh {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading mesh file {}", path.display()))
                .map_err(|e| CliError::Config(format!("{e:#}")))?;
            artifacts::mesh_from_text(&text).map_err(|e| CliError::Config(format!("{e:#}")))?
        }
        None => problem.domain.initial_mesh(),
    };

    if args.threads == 0 {
        return Err(CliError::Config("threads must be at least 1".into()));
    }

    let mut cfg = AfemConfig::new(args.theta, args.tol.unwrap_or(budgets.tol));
    cfg.theta_sigma = args.theta_sigma;
    cfg.max_dofs = args.max_dofs.unwrap_or(budgets.max_dofs);
    cfg.max_iterations = args.max_iters.unwrap_or(budgets.max_iters);
    cfg.quad_degree = args.quad.unwrap_or(budgets.quad);
    cfg.solver_tol = args.solver_tol;
    cfg.variant = variant;
    cfg.project_rhs = args.project_rhs;
    cfg.validate()?;

    let out = match std::env::var_os("AMFEM_OUT") {
        Some(dir) => PathBuf::from(dir),
        None => args.out.clone(),
    };

    Ok(Resolved {
        problem,
        mesh: Arc::new(mesh),
        cfg,
        out,
    })
}

fn config_echo(args: &CommonArgs, r: &Resolved) -> serde_json::Value {
    json!({
        "problem": r.problem.name,
        "mesh": args.mesh.as_ref().map(|p| p.display().to_string()),
        "uniform": args.uniform,
        "seed": args.seed,
        "threads": args.threads,
        "svg": args.svg,
        "afem": r.cfg,
    })
}

fn write_artifact(out: &PathBuf, name: &str, content: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating output directory {}", out.display()))
        .map_err(|e| CliError::Config(format!("{e:#}")))?;
    let path = out.join(name);
    std::fs::write(&path, content)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(|e| CliError::Config(format!("{e:#}")))?;
    Ok(())
}

fn pretty(value: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn run_outcome(r: &Resolved, uniform: bool) -> Result<AfemOutcome, CliError> {
    let outcome = if uniform {
        uniform_run(r.mesh.clone(), &r.problem, &r.cfg)?
    } else {
        afem_run(r.mesh.clone(), &r.problem, &r.cfg)?
    };
    Ok(outcome)
}

/// Re-solves the final level to report solver diagnostics (relative
/// residual, constraint violation for the maxwell variant).
fn final_diagnostics(r: &Resolved, outcome: &AfemOutcome) -> Result<serde_json::Value, CliError> {
    let last = outcome.levels.last().expect("at least one level");
    let metrics = last.mesh.metrics();
    let mut value = json!({
        "n_triangles": last.mesh.n_triangles(),
        "h_max": metrics.h_max,
        "min_angle": metrics.min_angle,
    });
    if matches!(r.cfg.variant, Variant::Maxwell) {
        let cx = Complex::build(last.mesh.clone()).map_err(anyhow::Error::new)?;
        let mut sys = assemble(
            &cx,
            r.problem.source.as_fn(),
            r.cfg.variant,
            r.cfg.quad_degree,
        );
        if r.cfg.project_rhs {
            sys.project_rhs().map_err(anyhow::Error::new)?;
        }
        let sol = solve(&sys, r.cfg.solver_tol).map_err(anyhow::Error::new)?;
        let violation = sol.divergence_violation.expect("maxwell solve reports it");
        value["divergence_violation"] = json!({
            "absolute": violation.violation,
            "load_norm": violation.load_norm,
            "relative": violation.relative(),
        });
        value["relative_residual"] = json!(sol.relative_residual);
    }
    Ok(value)
}

fn write_run_artifacts(
    args: &CommonArgs,
    r: &Resolved,
    outcome: &AfemOutcome,
) -> Result<(), CliError> {
    let report_json = json!({
        "config": config_echo(args, r),
        "report": outcome.report,
        "final": final_diagnostics(r, outcome)?,
    });
    write_artifact(&r.out, "report.json", &pretty(&report_json))?;
    write_artifact(
        &r.out,
        "convergence.csv",
        &convergence_table(&[&outcome.report]).to_csv(),
    )?;
    let last = outcome.levels.last().expect("at least one level");
    write_artifact(&r.out, "indicators_final.csv", &last.indicators.to_csv())?;
    write_artifact(&r.out, "mesh_initial.txt", &artifacts::mesh_to_text(&r.mesh))?;
    write_artifact(&r.out, "mesh_final.txt", &artifacts::mesh_to_text(&last.mesh))?;
    if args.svg {
        write_artifact(&r.out, "mesh_initial.svg", &artifacts::mesh_to_svg(&r.mesh))?;
        write_artifact(&r.out, "mesh_final.svg", &artifacts::mesh_to_svg(&last.mesh))?;
    }
    Ok(())
}

fn cmd_run(args: CommonArgs) -> Result<i32, CliError> {
    let r = resolve(
        &args,
        Budgets {
            tol: 1e-4,
            max_dofs: 50_000,
            max_iters: 100,
            quad: 6,
        },
    )?;
    let outcome = run_outcome(&r, args.uniform)?;
    write_run_artifacts(&args, &r, &outcome)?;
    let rep = &outcome.report;
    let last = rep.iterations.last().expect("at least one iteration");
    println!(
        "{} {} run: {} iterations, stopped on {:?}",
        rep.problem,
        if rep.uniform { "uniform" } else { "adaptive" },
        rep.iterations.len(),
        rep.status
    );
    println!(
        "final level: {} dofs, {} triangles, eta = {:.6e}",
        last.n_dofs, last.n_triangles, last.eta_total
    );
    println!("artifacts written to {}", r.out.display());
    Ok(0)
}

fn cmd_table(args: CommonArgs) -> Result<i32, CliError> {
    let r = resolve(
        &args,
        Budgets {
            tol: 1e-10,
            max_dofs: 20_000,
            max_iters: 60,
            quad: 6,
        },
    )?;
    let adaptive = run_outcome(&r, false)?;
    let uniform = run_outcome(&r, true)?;
    let table = convergence_table(&[&adaptive.report, &uniform.report]);
    write_artifact(&r.out, "convergence.csv", &table.to_csv())?;
    let report_json = json!({
        "config": config_echo(&args, &r),
        "table": table,
    });
    write_artifact(&r.out, "report.json", &pretty(&report_json))?;

    println!(
        "{:<14} {:>3} {:>8} {:>12} {:>12} {:>12}",
        "run", "l", "n_dofs", "eta_total", "error", "effectivity"
    );
    for row in &table.rows {
        let err = row
            .energy_error
            .map_or("-".to_string(), |v| format!("{v:.4e}"));
        let eff = row
            .effectivity
            .map_or("-".to_string(), |v| format!("{v:.4}"));
        println!(
            "{:<14} {:>3} {:>8} {:>12.4e} {:>12} {:>12}",
            row.run, row.l, row.n_dofs, row.eta_total, err, eff
        );
    }
    for fit in &table.fits {
        println!(
            "fit {:<14} levels={} eta_exponent={} error_exponent={}",
            fit.run,
            fit.levels,
            fit.eta_exponent
                .map_or("-".to_string(), |v| format!("{v:.3}")),
            fit.error_exponent
                .map_or("-".to_string(), |v| format!("{v:.3}")),
        );
    }
    println!("artifacts written to {}", r.out.display());
    Ok(0)
}

fn cmd_mesh_info(args: CommonArgs) -> Result<i32, CliError> {
    let r = resolve(
        &args,
        Budgets {
            tol: 1e-4,
            max_dofs: 50_000,
            max_iters: 100,
            quad: 6,
        },
    )?;
    let mesh = &r.mesh;
    let metrics = mesh.metrics();
    let boundary = (0..mesh.n_vertices())
        .filter(|&v| mesh.is_boundary_vertex(v))
        .count();
    let info = json!({
        "problem": r.problem.name,
        "n_vertices": mesh.n_vertices(),
        "n_edges": mesh.n_edges(),
        "n_triangles": mesh.n_triangles(),
        "n_boundary_vertices": boundary,
        "metrics": metrics,
    });
    print!("{}", pretty(&info));
    write_artifact(&r.out, "mesh_initial.txt", &artifacts::mesh_to_text(mesh))?;
    if args.svg {
        write_artifact(&r.out, "mesh_initial.svg", &artifacts::mesh_to_svg(mesh))?;
    }
    Ok(0)
}

/// Builds the check battery for one problem. Reduced default budgets keep
/// the reference-mesh surrogates tractable; explicit flags override them.
fn verify_battery(r: &Resolved) -> Result<(Vec<CheckReport>, Option<AfemOutcome>), CliError> {
    let mut checks = Vec::new();
    let quad = r.cfg.quad_degree;

    let cx = Complex::build(r.mesh.clone()).map_err(anyhow::Error::new)?;
    checks.push(check_complex(&cx));

    let mut run_for_artifacts = None;
    match r.problem.name {
        "m1" => {
            // Start two rounds in: on the raw fixture the inter-level load
            // quadrature mismatch dominates the identity tolerance.
            let mut coarse = Arc::new(r.mesh.uniform_refine().0.uniform_refine().0);
            for pair in 0..3 {
                let mut rep = check_orthogonality(&r.problem, coarse.clone(), quad.max(12))?;
                rep.name = format!("orthogonality_pair_{pair}");
                checks.push(rep);
                coarse = Arc::new(coarse.uniform_refine().0);
            }
            checks.push(check_convergence_rates(&r.problem, 10, quad)?);
            let mut cfg = r.cfg.clone();
            cfg.max_iterations = cfg.max_iterations.min(6);
            cfg.tol = 1e-14;
            let out = uniform_run(r.mesh.clone(), &r.problem, &cfg)?;
            checks.push(check_quasi_orthogonality(&r.problem, &out, quad)?);
        }
        "m2" => {
            let mut cfg = r.cfg.clone();
            cfg.max_iterations = cfg.max_iterations.min(5);
            cfg.tol = 1e-14;
            let out = uniform_run(r.mesh.clone(), &r.problem, &cfg)?;
            checks.push(check_codifferential(&out)?);
            let coarse = Arc::new(r.mesh.uniform_refine().0.uniform_refine().0);
            checks.push(check_orthogonality(&r.problem, coarse, quad.max(12))?);
            checks.push(check_convergence_rates(&r.problem, 10, quad.max(10))?);
            run_for_artifacts = Some(out);
        }
        "s1" => {
            let out = afem_run(r.mesh.clone(), &r.problem, &r.cfg)?;
            let frame = lift_to_reference(&r.problem, &out, quad, 2)?;
            let errors = frame.level_errors();
            checks.push(check_contraction(&out.report, Some(&errors), 5)?);
            checks.push(check_marking(&out));
            run_for_artifacts = Some(out);
        }
        "s1m" => {
            let out = afem_run(r.mesh.clone(), &r.problem, &r.cfg)?;
            checks.push(check_codifferential(&out)?);
            checks.push(check_contraction(&out.report, None, 5)?);
            checks.push(check_marking(&out));
            run_for_artifacts = Some(out);
        }
        "s2" => {
            let adaptive = afem_run(r.mesh.clone(), &r.problem, &r.cfg)?;
            let uniform = uniform_run(r.mesh.clone(), &r.problem, &r.cfg)?;
            checks.push(check_optimality(&adaptive.report, &uniform.report));
            checks.push(check_marking(&adaptive));
            run_for_artifacts = Some(adaptive);
        }
        other => {
            return Err(CliError::Config(format!(
                "no verification battery for problem '{other}'"
            )))
        }
    }
    Ok((checks, run_for_artifacts))
}

fn injected_check(r: &Resolved, fault: &str) -> Result<CheckReport, CliError> {
    match fault {
        "incidence" => {
            let cx = Complex::build(r.mesh.clone()).map_err(anyhow::Error::new)?;
            Ok(inject::check_complex_with_flipped_incidence(&cx))
        }
        "nesting" => {
            // Pre-refine so the healthy counterpart of this check passes and
            // the failure is attributable to the corrupted bookkeeping.
            let coarse = Arc::new(r.mesh.uniform_refine().0.uniform_refine().0);
            Ok(inject::check_orthogonality_non_nested(
                &r.problem,
                coarse,
                r.cfg.quad_degree.max(12),
            )?)
        }
        "marking" => {
            let mut cfg = r.cfg.clone();
            cfg.max_dofs = cfg.max_dofs.min(1_500);
            cfg.max_iterations = cfg.max_iterations.min(12);
            let out = afem_run(r.mesh.clone(), &r.problem, &cfg)?;
            Ok(inject::check_marking_corrupted(&out))
        }
        other => Err(CliError::Config(format!("unknown fault '{other}'"))),
    }
}

fn cmd_verify(args: VerifyArgs) -> Result<i32, CliError> {
    let r = resolve(
        &args.common,
        Budgets {
            tol: 1e-12,
            max_dofs: 4_000,
            max_iters: 40,
            quad: 8,
        },
    )?;

    let (checks, run) = match &args.inject_fault {
        Some(fault) => (vec![injected_check(&r, fault)?], None),
        None => verify_battery(&r)?,
    };

    let passed = checks.iter().all(|c| c.passed);
    let report_json = json!({
        "config": config_echo(&args.common, &r),
        "injected_fault": args.inject_fault,
        "passed": passed,
        "checks": checks,
    });
    write_artifact(&r.out, "report.json", &pretty(&report_json))?;
    write_artifact(&r.out, "mesh_initial.txt", &artifacts::mesh_to_text(&r.mesh))?;
    if let Some(out) = &run {
        write_artifact(
            &r.out,
            "convergence.csv",
            &convergence_table(&[&out.report]).to_csv(),
        )?;
        let last = out.levels.last().expect("at least one level");
        write_artifact(&r.out, "indicators_final.csv", &last.indicators.to_csv())?;
        write_artifact(&r.out, "mesh_final.txt", &artifacts::mesh_to_text(&last.mesh))?;
        if args.common.svg {
            write_artifact(&r.out, "mesh_final.svg", &artifacts::mesh_to_svg(&last.mesh))?;
        }
    }
    if args.common.svg {
        write_artifact(&r.out, "mesh_initial.svg", &artifacts::mesh_to_svg(&r.mesh))?;
    }

    for check in &checks {
        println!(
            "check {:<28} {} ({} items)",
            check.name,
            if check.passed { "PASS" } else { "FAIL" },
            check.items.len()
        );
        for item in &check.items {
            if !item.passed {
                println!(
                    "  item {:<32} FAIL measured={:.6e} threshold={:.6e} ({:?})",
                    item.name, item.measured, item.threshold, item.comparison
                );
            }
        }
    }
    println!(
        "verification {}: report at {}",
        if passed { "PASSED" } else { "FAILED" },
        r.out.join("report.json").display()
    );
    Ok(if passed { 0 } else { 3 })
}
