//! Executable property checks: complex exactness, Galerkin orthogonality,
//! quasi-orthogonality trends, estimator contraction, marking correctness,
//! and convergence-rate tables. Every check records a measured value and
//! the threshold it was compared against; quantities that stand in for
//! continuous-level objects (reference-mesh solutions) are flagged as
//! surrogates.

use crate::adaptivity::{
    dorfler, dual_mark, fit_loglog, prolong, uniform_run, AdaptivityError, AfemConfig,
    AfemOutcome, RunReport,
};
use crate::feec::{Complex, FeecError, FormVector};
use crate::mesh::{MarkProvenance, MarkSet, Mesh, MeshError, RefinementTrace, VertexOrigin};
use crate::problems::{Problem, ProblemError};
use crate::saddle::{assemble, graph_norm, solve, SaddleError};
use crate::sparse::{Csr, SpdSolver, Triplets};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::sync::Arc;
use thiserror::Error;

const SOLVER_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("need at least {need} stored levels, got {got}")]
    InsufficientLevels { got: usize, need: usize },
    #[error("run has {got} iterations, too few for window size {window}")]
    TooFewIterations { got: usize, window: usize },
    #[error("unknown problem '{0}'")]
    UnknownProblem(String),
    #[error(transparent)]
    Adaptivity(#[from] AdaptivityError),
    #[error(transparent)]
    Feec(#[from] FeecError),
    #[error(transparent)]
    Saddle(#[from] SaddleError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

/// Direction of a threshold comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    LessEq,
    Less,
    GreaterEq,
    Greater,
}

impl Comparison {
    fn holds(self, measured: f64, threshold: f64) -> bool {
        match self {
            Comparison::LessEq => measured <= threshold,
            Comparison::Less => measured < threshold,
            Comparison::GreaterEq => measured >= threshold,
            Comparison::Greater => measured > threshold,
        }
    }
}

/// One named measurement compared against a threshold. A NaN measurement
/// never passes, so no check can pass without a recorded value.
#[derive(Debug, Clone, Serialize)]
pub struct CheckItem {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub threshold: f64,
    pub comparison: Comparison,
    /// True when the item involves a reference-mesh stand-in for a
    /// continuous quantity.
    pub surrogate: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub items: Vec<CheckItem>,
}

impl CheckReport {
    pub fn new(name: impl Into<String>) -> Self {
        CheckReport {
            name: name.into(),
            passed: true,
            items: Vec::new(),
        }
    }

    pub fn record(
        &mut self,
        name: &str,
        measured: f64,
        threshold: f64,
        comparison: Comparison,
        surrogate: bool,
        detail: &str,
    ) -> bool {
        let passed = comparison.holds(measured, threshold);
        self.items.push(CheckItem {
            name: name.to_string(),
            passed,
            measured,
            threshold,
            comparison,
            surrogate,
            detail: detail.to_string(),
        });
        self.passed &= passed;
        passed
    }

    pub fn check_le(&mut self, name: &str, measured: f64, threshold: f64) -> bool {
        self.record(name, measured, threshold, Comparison::LessEq, false, "")
    }

    pub fn check_lt(&mut self, name: &str, measured: f64, threshold: f64) -> bool {
        self.record(name, measured, threshold, Comparison::Less, false, "")
    }

    pub fn check_ge(&mut self, name: &str, measured: f64, threshold: f64) -> bool {
        self.record(name, measured, threshold, Comparison::GreaterEq, false, "")
    }

    /// Appends another report's items under `prefix/`.
    pub fn merge(&mut self, other: CheckReport) {
        for mut item in other.items {
            item.name = format!("{}/{}", other.name, item.name);
            self.passed &= item.passed;
            self.items.push(item);
        }
    }
}

fn max_abs(m: &Csr) -> f64 {
    m.data.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

fn dense_rank(m: &Csr) -> usize {
    let dense = m.to_dense();
    let svd = dense.svd(false, false);
    let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    svd.singular_values
        .iter()
        .filter(|s| **s > 1e-10 * smax)
        .count()
}

const DENSE_RANK_LIMIT: usize = 2000;

/// Structural checks on one discrete complex: the composite derivative
/// vanishes bit-exactly, the incidence ranks match the exactness dimension
/// count, the mass matrices are symmetric positive definite, and the
/// gradient/complement split is mass-orthogonal.
pub fn check_complex(cx: &Complex) -> CheckReport {
    let mut rep = CheckReport::new("complex");
    rep.record(
        "d1_d0_zero",
        max_abs(&cx.d1().mul(cx.d0())),
        0.0,
        Comparison::LessEq,
        false,
        "largest entry of the composite incidence product",
    );

    let n1 = cx.dim(1);
    if n1 <= DENSE_RANK_LIMIT {
        let r0 = dense_rank(cx.d0());
        let r1 = dense_rank(cx.d1());
        rep.record(
            "exactness_rank_identity",
            (r0 + r1) as f64 - n1 as f64,
            0.0,
            Comparison::LessEq,
            false,
            "rank d0 + rank d1 - dim V1 (zero iff range d0 = ker d1)",
        );
        rep.check_ge("exactness_rank_identity_lower", (r0 + r1) as f64 - n1 as f64, 0.0);
        rep.record(
            "d1_surjectivity_defect",
            r1 as f64 - (cx.dim(2) as f64 - 1.0),
            0.0,
            Comparison::GreaterEq,
            false,
            "rank d1 - (dim V2 - 1); equality on simply connected domains",
        );
    } else {
        rep.record(
            "exactness_rank_identity",
            n1 as f64,
            DENSE_RANK_LIMIT as f64,
            Comparison::LessEq,
            false,
            "mesh too large for the dense rank oracle",
        );
    }

    for (name, m) in [("m0", cx.m0()), ("m1", cx.m1()), ("m2", cx.m2())] {
        rep.record(
            &format!("{name}_symmetry"),
            m.symmetry_error(),
            0.0,
            Comparison::LessEq,
            false,
            "bitwise symmetry defect",
        );
        let min_pivot = match SpdSolver::new(m.clone()) {
            Ok(s) => s.min_pivot(),
            Err(_) => f64::NEG_INFINITY,
        };
        rep.record(
            &format!("{name}_positive_definite"),
            min_pivot,
            0.0,
            Comparison::Greater,
            false,
            "smallest factorization pivot",
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let v = cx
        .form_from(1, (0..n1).map(|_| rng.random_range(-1.0..1.0)).collect())
        .expect("matching length");
    match cx.hodge_split(&v) {
        Ok((z, w)) => {
            let nz = cx.norm(&z);
            let nw = cx.norm(&w);
            let ortho = cx.inner(&z, &w).abs() / (nz * nw).max(1e-300);
            rep.record(
                "hodge_split_orthogonality",
                ortho,
                1e-10,
                Comparison::LessEq,
                false,
                "relative mass inner product of the two parts",
            );
            let rot_z = cx.d1().matvec(z.as_slice());
            let scale = z
                .as_slice()
                .iter()
                .fold(0.0f64, |a, x| a.max(x.abs()))
                .max(1e-300);
            let defect = rot_z.iter().fold(0.0f64, |a, x| a.max(x.abs())) / scale;
            rep.record(
                "gradient_part_is_rotation_free",
                defect,
                1e-12,
                Comparison::LessEq,
                false,
                "max circulation of the gradient part, relative",
            );
        }
        Err(e) => {
            rep.record(
                "hodge_split_orthogonality",
                f64::NAN,
                1e-10,
                Comparison::LessEq,
                false,
                &format!("split failed: {e}"),
            );
        }
    }
    rep
}

/// Sparse 0-form prolongation matrix (fine degrees of freedom by coarse)
/// induced by one refinement step.
fn prolongation_matrix_0(coarse: &Complex, fine: &Complex, trace: &RefinementTrace) -> Csr {
    let mut t = Triplets::new(fine.dim(0), coarse.dim(0));
    for i in 0..fine.dim(0) {
        let v = fine.vertex_of_dof0(i);
        match trace.vertex_origin[v] {
            VertexOrigin::Old(cv) => {
                if let Some(j) = coarse.dof0(cv) {
                    t.push(i, j, 1.0);
                }
            }
            VertexOrigin::Midpoint(a, b) => {
                for endpoint in [a, b] {
                    if let Some(j) = coarse.dof0(endpoint) {
                        t.push(i, j, 0.5);
                    }
                }
            }
        }
    }
    t.to_csr()
}

fn quadratic_form(m: &Csr, x: &[f64]) -> f64 {
    crate::sparse::dot(&m.matvec(x), x)
}

/// Checks the discrete Galerkin identity for the scalar variable between a
/// mesh and its uniform refinement, and the Pythagoras split against a
/// reference solution two further rounds down.
pub fn check_orthogonality(
    problem: &Problem,
    coarse: Arc<Mesh>,
    quad_degree: usize,
) -> Result<CheckReport, VerifyError> {
    orthogonality_core(problem, coarse, quad_degree, false)
}

fn orthogonality_core(
    problem: &Problem,
    coarse: Arc<Mesh>,
    quad_degree: usize,
    corrupt_nesting: bool,
) -> Result<CheckReport, VerifyError> {
    let mut rep = CheckReport::new(if corrupt_nesting {
        "orthogonality_injected_nesting_fault"
    } else {
        "orthogonality"
    });

    let cx_h_coarse = Complex::build(coarse.clone())?;
    let sys = assemble(
        &cx_h_coarse,
        problem.source.as_fn(),
        problem.variant,
        quad_degree,
    );
    let sol_coarse = solve(&sys, SOLVER_TOL)?;

    let (fine_mesh, trace) = coarse.uniform_refine();
    let trace = if corrupt_nesting {
        inject::corrupt_trace(&trace)
    } else {
        trace
    };
    let fine_mesh = Arc::new(fine_mesh);
    let cx_fine = Complex::build(fine_mesh.clone())?;
    let sys = assemble(&cx_fine, problem.source.as_fn(), problem.variant, quad_degree);
    let sol_fine = solve(&sys, SOLVER_TOL)?;

    let (sigma_up, u_up) = prolong(&cx_h_coarse, &cx_fine, &trace, &sol_coarse.sigma, &sol_coarse.u)?;
    let diff = sol_fine.sigma.minus(&sigma_up);

    // g_i = <grad(σ_h − σ_H), grad τ_i> over the full coarse basis, computed
    // as Pᵀ L_h (σ_h − σ_H) with P the basis prolongation.
    let p = prolongation_matrix_0(&cx_h_coarse, &cx_fine, &trace);
    let y = cx_fine.stiffness().matvec(diff.as_slice());
    let g = p.matvec_transpose(&y);
    // Normalized by the solution's energy scale: for the constraint variant
    // the scalar part is solver noise, and a difference-based scale would
    // divide a quadrature-level pairing by a noise-level floor.
    let grad_diff = quadratic_form(cx_fine.stiffness(), diff.as_slice()).max(0.0).sqrt();
    let solution_scale = graph_norm(&cx_fine, &sol_fine.sigma, &sol_fine.u);
    let floor = grad_diff.max(solution_scale).max(1e-300);
    let mut worst = 0.0f64;
    for (i, gi) in g.iter().enumerate() {
        let tau_energy = cx_h_coarse.stiffness().get(i, i).max(0.0).sqrt().max(1e-300);
        worst = worst.max(gi.abs() / (floor * tau_energy));
    }
    rep.record(
        "discrete_identity",
        worst,
        1e-9,
        Comparison::LessEq,
        false,
        "max over the coarse basis of the normalized gradient pairing",
    );

    // Pythagoras against a reference solution two uniform rounds finer.
    let mut lifts = vec![(sigma_up, u_up), (sol_fine.sigma.clone(), sol_fine.u.clone())];
    let mut cx_cur = cx_fine;
    for _ in 0..2 {
        let (next, tr) = cx_cur.mesh().uniform_refine();
        let cx_next = Complex::build(Arc::new(next))?;
        let mut moved = Vec::with_capacity(lifts.len());
        for (s, u) in &lifts {
            moved.push(prolong(&cx_cur, &cx_next, &tr, s, u)?);
        }
        lifts = moved;
        cx_cur = cx_next;
    }
    let sys = assemble(&cx_cur, problem.source.as_fn(), problem.variant, quad_degree);
    let sol_star = solve(&sys, SOLVER_TOL)?;
    let l_ref = cx_cur.stiffness();
    let d_coarse = sol_star.sigma.minus(&lifts[0].0);
    let d_fine = sol_star.sigma.minus(&lifts[1].0);
    let d_between = lifts[1].0.minus(&lifts[0].0);
    let a2 = quadratic_form(l_ref, d_coarse.as_slice());
    let b2 = quadratic_form(l_ref, d_fine.as_slice());
    let c2 = quadratic_form(l_ref, d_between.as_slice());
    let star_scale = graph_norm(&cx_cur, &sol_star.sigma, &sol_star.u);
    let scale = a2.max((1e-6 * star_scale).powi(2)).max(1e-300);
    rep.record(
        "pythagoras_residual",
        (a2 - b2 - c2).abs() / scale,
        1e-8,
        Comparison::LessEq,
        true,
        "|a^2 - b^2 - c^2| of the scalar energy split, relative",
    );
    Ok(rep)
}

/// Reference-mesh frame: every stored level's solution carried to a mesh
/// two uniform rounds finer than the finest, next to the solution computed
/// there.
pub struct ReferenceFrame {
    pub cx: Complex,
    pub sigma_star: FormVector,
    pub u_star: FormVector,
    pub lifted: Vec<(FormVector, FormVector)>,
}

impl ReferenceFrame {
    /// Energy distance of each level's solution to the reference solution.
    pub fn level_errors(&self) -> Vec<f64> {
        self.lifted
            .iter()
            .map(|(s, u)| {
                graph_norm(
                    &self.cx,
                    &self.sigma_star.minus(s),
                    &self.u_star.minus(u),
                )
            })
            .collect()
    }

    /// Energy distance between two lifted levels.
    pub fn pair_distance(&self, a: usize, b: usize) -> f64 {
        let (sa, ua) = &self.lifted[a];
        let (sb, ub) = &self.lifted[b];
        graph_norm(&self.cx, &sa.minus(sb), &ua.minus(ub))
    }
}

/// Carries every stored level of a run to a reference mesh `extra_rounds`
/// uniform refinements beyond the finest and solves there.
pub fn lift_to_reference(
    problem: &Problem,
    outcome: &AfemOutcome,
    quad_degree: usize,
    extra_rounds: usize,
) -> Result<ReferenceFrame, VerifyError> {
    let levels = &outcome.levels;
    if levels.is_empty() {
        return Err(VerifyError::InsufficientLevels { got: 0, need: 1 });
    }
    let mut cx_cur = Complex::build(levels[0].mesh.clone())?;
    let mut lifted: Vec<(FormVector, FormVector)> = vec![(
        cx_cur.form_from(0, levels[0].sigma.clone())?,
        cx_cur.form_from(1, levels[0].u.clone())?,
    )];
    for j in 0..levels.len() - 1 {
        let trace = levels[j]
            .trace_to_next
            .as_ref()
            .expect("non-final levels carry a refinement trace");
        let cx_next = Complex::build(levels[j + 1].mesh.clone())?;
        let mut moved = Vec::with_capacity(lifted.len() + 1);
        for (s, u) in &lifted {
            moved.push(prolong(&cx_cur, &cx_next, trace, s, u)?);
        }
        moved.push((
            cx_next.form_from(0, levels[j + 1].sigma.clone())?,
            cx_next.form_from(1, levels[j + 1].u.clone())?,
        ));
        lifted = moved;
        cx_cur = cx_next;
    }
    for _ in 0..extra_rounds {
        let (next, tr) = cx_cur.mesh().uniform_refine();
        let cx_next = Complex::build(Arc::new(next))?;
        let mut moved = Vec::with_capacity(lifted.len());
        for (s, u) in &lifted {
            moved.push(prolong(&cx_cur, &cx_next, &tr, s, u)?);
        }
        lifted = moved;
        cx_cur = cx_next;
    }
    let sys = assemble(&cx_cur, problem.source.as_fn(), problem.variant, quad_degree);
    let sol = solve(&sys, SOLVER_TOL)?;
    Ok(ReferenceFrame {
        cx: cx_cur,
        sigma_star: sol.sigma,
        u_star: sol.u,
        lifted,
    })
}

/// Measures the rotation cross terms between consecutive levels against the
/// reference solution: their normalized ratios should shrink as the mesh
/// refines, and the perturbed Pythagoras chain should hold with a fitted
/// perturbation below one.
pub fn check_quasi_orthogonality(
    problem: &Problem,
    outcome: &AfemOutcome,
    quad_degree: usize,
) -> Result<CheckReport, VerifyError> {
    let n = outcome.levels.len();
    if n < 4 {
        return Err(VerifyError::InsufficientLevels { got: n, need: 4 });
    }
    let mut rep = CheckReport::new("quasi_orthogonality");
    let frame = lift_to_reference(problem, outcome, quad_degree, 2)?;
    let rcx = &frame.cx;
    let rot_star = rcx.apply_d(&frame.u_star)?;
    let rots: Vec<FormVector> = frame
        .lifted
        .iter()
        .map(|(_, u)| rcx.apply_d(u))
        .collect::<Result<_, _>>()?;
    let grads: Vec<FormVector> = frame
        .lifted
        .iter()
        .map(|(s, _)| rcx.apply_d(s))
        .collect::<Result<_, _>>()?;
    let grad_star = rcx.apply_d(&frame.sigma_star)?;

    let mut ratios = Vec::new();
    for l in 0..n - 1 {
        let increment = rots[l + 1].minus(&rots[l]);
        let residual = rot_star.minus(&rots[l + 1]);
        let x = rcx.inner(&residual, &increment);
        let den = rcx.norm(&grad_star.minus(&grads[l + 1])) * rcx.norm(&increment);
        ratios.push(if den > 0.0 { x.abs() / den } else { 0.0 });
    }
    let worst_growth = ratios
        .windows(2)
        .map(|w| w[1] / w[0].max(1e-300))
        .fold(0.0f64, f64::max);
    rep.record(
        "cross_ratio_monotone_decrease",
        worst_growth,
        1.10,
        Comparison::LessEq,
        true,
        "largest consecutive growth of the normalized cross-term ratio",
    );
    let hs: Vec<f64> = (1..n)
        .map(|l| outcome.levels[l].mesh.metrics().h_max)
        .collect();
    let positive: Vec<(f64, f64)> = hs
        .iter()
        .zip(&ratios)
        .filter(|(_, r)| **r > 0.0)
        .map(|(h, r)| (*h, *r))
        .collect();
    if positive.len() >= 3 {
        let (hx, ry): (Vec<f64>, Vec<f64>) = positive.into_iter().unzip();
        rep.record(
            "cross_ratio_slope_vs_h",
            fit_loglog(&hx, &ry),
            0.0,
            Comparison::Greater,
            true,
            "fitted exponent of the cross ratio against the mesh size",
        );
    } else {
        rep.record(
            "cross_ratio_slope_vs_h",
            f64::NAN,
            0.0,
            Comparison::Greater,
            true,
            "too few nonzero ratios to fit a slope",
        );
    }

    // Perturbed Pythagoras chain with fitted perturbation, for window
    // sizes 1..=3.
    let errors = frame.level_errors();
    let etas: Vec<f64> = outcome
        .report
        .iterations
        .iter()
        .map(|r| r.eta_total)
        .collect();
    let eps_for = |m: usize| -> Option<f64> {
        if n <= m {
            return None;
        }
        let mut worst = 0.0f64;
        for l in 0..n - m {
            let e_far = errors[l + m] * errors[l + m];
            let e_near = errors[l] * errors[l];
            let big_e = frame.pair_distance(l, l + m);
            let den = big_e * big_e + etas[l] * etas[l];
            if den > 0.0 {
                worst = worst.max(((e_far - e_near + big_e * big_e) / den).max(0.0));
            }
        }
        Some(worst)
    };
    let mut eps_values = Vec::new();
    for m in 1..=3usize {
        if let Some(eps) = eps_for(m) {
            rep.record(
                &format!("quasi_orthogonality_eps_m{m}"),
                eps,
                1.0,
                Comparison::Less,
                true,
                "fitted perturbation of the Pythagoras chain",
            );
            eps_values.push(eps);
        }
    }
    if eps_values.len() >= 2 {
        let first = eps_values[0].max(1e-300);
        rep.record(
            "quasi_orthogonality_eps_trend",
            eps_values.last().unwrap() / first,
            1.10,
            Comparison::LessEq,
            true,
            "perturbation at the widest window relative to the narrowest",
        );
    }

    // Self-pair control: replacing the reference by the level itself must
    // zero the cross term identically.
    let self_diff = rot_star.minus(&rot_star);
    let x_self = rcx.inner(&self_diff, &rots[n - 1]);
    rep.record(
        "self_pair_cross_term",
        x_self.abs(),
        0.0,
        Comparison::LessEq,
        false,
        "cross term of a solution against itself",
    );
    Ok(rep)
}

/// Fits contraction behavior to a run: a window size `m ≤ max_window` where
/// the scalar-part estimator contracts geometrically, a per-step
/// perturbation inequality with fitted constants, and — when an error
/// sequence is supplied — a composite quantity `e² + α η²` contracting at
/// some window size.
pub fn check_contraction(
    run: &RunReport,
    errors: Option<&[f64]>,
    max_window: usize,
) -> Result<CheckReport, VerifyError> {
    let mut rep = CheckReport::new("contraction");
    let iters = &run.iterations;
    if iters.len() < 3 {
        return Err(VerifyError::TooFewIterations {
            got: iters.len(),
            window: 1,
        });
    }
    let sigma_sq: Vec<f64> = iters.iter().map(|r| r.eta_sigma * r.eta_sigma).collect();
    let total_sq: Vec<f64> = iters.iter().map(|r| r.eta_total * r.eta_total).collect();

    // Degenerate runs (divergence-free sources with a compatible load)
    // satisfy the scalar contraction statements vacuously. Their measured
    // scalar indicator is quadrature and solver noise, which decays to a
    // floor far below the total; a genuine scalar component keeps a stable
    // share of the budget, so the tail ratio separates the two cleanly.
    let last_sigma = *sigma_sq.last().unwrap();
    let last_total = *total_sq.last().unwrap();
    if last_sigma <= 1e-12 * last_total {
        rep.record(
            "eta_sigma_vacuous",
            last_sigma,
            1e-12 * last_total,
            Comparison::LessEq,
            false,
            "scalar-part estimator has decayed to noise relative to the total",
        );
        return Ok(rep);
    }

    let mut best_factor = f64::INFINITY;
    let mut best_m = 0;
    for m in 1..=max_window {
        let k = (iters.len() - 1) / m;
        if k < 2 {
            continue;
        }
        let first = sigma_sq[0];
        let last = sigma_sq[k * m];
        if first <= 0.0 || last <= 0.0 {
            continue;
        }
        let factor = (last / first).powf(1.0 / k as f64);
        if factor < best_factor {
            best_factor = factor;
            best_m = m;
        }
    }
    if best_m == 0 {
        return Err(VerifyError::TooFewIterations {
            got: iters.len(),
            window: max_window,
        });
    }
    rep.record(
        "eta_sigma_window_factor",
        best_factor,
        1.0,
        Comparison::Less,
        false,
        &format!("best geometric factor over window size {best_m}"),
    );

    // Per-step inequality η²_{i+1} ≤ q η²_i + C s_i² with s_i the scalar
    // increment: smallest feasible C over a grid of q < 1.
    let steps: Vec<(f64, f64, f64)> = (1..iters.len())
        .filter_map(|i| {
            iters[i]
                .sigma_distance_to_previous
                .map(|s| (sigma_sq[i - 1], sigma_sq[i], s * s))
        })
        .collect();
    let mut best: Option<(f64, f64)> = None;
    if !steps.is_empty() {
        for k in 1..20 {
            let q = k as f64 * 0.05;
            let mut c_needed = 0.0f64;
            let mut feasible = true;
            for &(prev, next, s2) in &steps {
                let excess = next - q * prev;
                if excess <= 0.0 {
                    continue;
                }
                if s2 <= 0.0 {
                    feasible = false;
                    break;
                }
                c_needed = c_needed.max(excess / s2);
            }
            if feasible && best.map_or(true, |(_, c)| c_needed < c) {
                best = Some((q, c_needed));
            }
        }
    }
    let (q_c, c_theta) = best.unwrap_or((f64::NAN, f64::NAN));
    rep.record(
        "per_step_q",
        q_c,
        1.0,
        Comparison::Less,
        false,
        "fitted per-step estimator reduction fraction",
    );
    rep.record(
        "per_step_perturbation_constant",
        c_theta,
        1e6,
        Comparison::LessEq,
        false,
        "fitted weight on the scalar increment (sanity cap)",
    );

    if let Some(errs) = errors {
        assert_eq!(errs.len(), iters.len(), "one error per iteration");
        let mut best_rho = f64::INFINITY;
        let mut best_pair = (0usize, 0.0f64);
        for m in 1..=max_window {
            let k = (iters.len() - 1) / m;
            if k < 1 {
                continue;
            }
            for a_exp in -30..=30 {
                let alpha = 10f64.powf(a_exp as f64 / 10.0);
                let q: Vec<f64> = (0..=k)
                    .map(|j| errs[j * m] * errs[j * m] + alpha * total_sq[j * m])
                    .collect();
                if q.iter().any(|v| *v <= 0.0) {
                    continue;
                }
                let worst = q
                    .windows(2)
                    .map(|w| w[1] / w[0])
                    .fold(f64::NEG_INFINITY, f64::max);
                if worst < best_rho {
                    best_rho = worst;
                    best_pair = (m, alpha);
                }
            }
        }
        rep.record(
            "composite_contraction_rho",
            best_rho,
            0.95,
            Comparison::LessEq,
            true,
            &format!(
                "worst window ratio of e^2 + alpha*eta^2 at m={}, alpha={:.3e}",
                best_pair.0, best_pair.1
            ),
        );
    }
    Ok(rep)
}

fn marking_core(
    name: &str,
    outcome: &AfemOutcome,
    marks_override: Option<Vec<MarkSet>>,
) -> CheckReport {
    let mut rep = CheckReport::new(name);
    let theta = outcome.report.theta;
    let theta_sigma = outcome.report.theta_sigma;
    let uniform = outcome.report.uniform;

    let mut worst_sigma = f64::INFINITY;
    let mut worst_total = f64::INFINITY;
    let mut mismatches = 0usize;
    let mut marked_levels = 0usize;
    for (idx, level) in outcome.levels.iter().enumerate() {
        let stored = match (&marks_override, &level.marks) {
            (Some(ov), Some(_)) => Some(&ov[idx]),
            (None, Some(m)) => Some(m),
            _ => None,
        };
        let Some(marks) = stored else { continue };
        marked_levels += 1;
        let ind = &level.indicators;
        let sum = |vals: &[f64]| -> f64 { marks.triangles().iter().map(|&t| vals[t]).sum() };
        let total_s: f64 = ind.eta_sigma_sq.iter().sum();
        let total_t: f64 = ind.eta_total_sq.iter().sum();
        if total_s > 0.0 {
            worst_sigma = worst_sigma.min(sum(&ind.eta_sigma_sq) / (theta_sigma * total_s));
        }
        if total_t > 0.0 {
            worst_total = worst_total.min(sum(&ind.eta_total_sq) / (theta * total_t));
        }
        if !uniform {
            let recomputed = dual_mark(&level.mesh, ind, theta, Some(theta_sigma));
            if recomputed.triangles() != marks.triangles() {
                mismatches += 1;
            }
        }
    }
    if marked_levels == 0 {
        rep.record(
            "marked_levels",
            0.0,
            1.0,
            Comparison::GreaterEq,
            false,
            "run recorded no marking steps",
        );
        return rep;
    }
    let clamp = |v: f64| if v.is_finite() { v } else { 1.0 };
    rep.record(
        "sigma_bulk_margin",
        clamp(worst_sigma),
        1.0 - 1e-9,
        Comparison::GreaterEq,
        false,
        "worst marked fraction of the scalar indicators over theta_sigma",
    );
    rep.record(
        "total_bulk_margin",
        clamp(worst_total),
        1.0 - 1e-9,
        Comparison::GreaterEq,
        false,
        "worst marked fraction of the total indicators over theta",
    );
    if !uniform {
        rep.record(
            "marks_reproducible",
            mismatches as f64,
            0.0,
            Comparison::LessEq,
            false,
            "levels whose stored marks differ from recomputation",
        );

        // Exhaustive minimality oracle on the small stored instances.
        let mut violations = 0usize;
        let mut instances = 0usize;
        for level in &outcome.levels {
            if level.marks.is_none() || level.mesh.n_triangles() > 15 {
                continue;
            }
            let ind = &level.indicators;
            for (vals, th) in [
                (&ind.eta_sigma_sq, theta_sigma),
                (&ind.eta_total_sq, theta),
            ] {
                instances += 1;
                let greedy = dorfler(&level.mesh, vals, th, MarkProvenance::Total);
                let total: f64 = vals.iter().sum();
                if total <= 0.0 {
                    if !greedy.is_empty() {
                        violations += 1;
                    }
                    continue;
                }
                let target = th * total;
                let n = vals.len();
                let mut optimal = usize::MAX;
                for mask in 0u32..(1 << n) {
                    let s: f64 = (0..n)
                        .filter(|i| mask & (1 << i) != 0)
                        .map(|i| vals[i])
                        .sum();
                    if s >= target {
                        optimal = optimal.min(mask.count_ones() as usize);
                    }
                }
                if greedy.len() != optimal {
                    violations += 1;
                }
            }
        }
        rep.record(
            "minimality_instances",
            instances as f64,
            1.0,
            Comparison::GreaterEq,
            false,
            "small instances examined by the exhaustive subset oracle",
        );
        rep.record(
            "minimality_violations",
            violations as f64,
            0.0,
            Comparison::LessEq,
            false,
            "greedy sets beaten by a smaller satisfying subset",
        );
    }
    rep
}

/// Post-hoc validation of every marking step of a run: both bulk criteria,
/// reproducibility of the stored sets, and exhaustive minimality on small
/// instances.
pub fn check_marking(outcome: &AfemOutcome) -> CheckReport {
    marking_core("marking", outcome, None)
}

/// One table row per recorded iteration of each run.
#[derive(Debug, Clone, Serialize)]
pub struct TableRow {
    pub run: String,
    pub uniform: bool,
    pub l: usize,
    pub n_dofs: usize,
    pub eta_total: f64,
    pub energy_error: Option<f64>,
    pub effectivity: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunFit {
    pub run: String,
    pub uniform: bool,
    pub levels: usize,
    /// Tail least-squares exponent of η against the degree count.
    pub eta_exponent: Option<f64>,
    /// Tail least-squares exponent of the energy error against the degree
    /// count (present when every level has a recorded error).
    pub error_exponent: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<TableRow>,
    pub fits: Vec<RunFit>,
}

/// Least-squares exponent over the last half of the samples (at least
/// four), skipping the preasymptotic head of the sequence.
fn tail_exponent(n_dofs: &[f64], values: &[f64]) -> Option<f64> {
    let n = values.len();
    if n < 4 {
        return None;
    }
    let k = (n / 2).max(4).min(n);
    if values[n - k..].iter().any(|v| *v <= 0.0) {
        return None;
    }
    Some(fit_loglog(&n_dofs[n - k..], &values[n - k..]))
}

/// Collects run histories into one table with fitted decay exponents.
pub fn convergence_table(runs: &[&RunReport]) -> ConvergenceTable {
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for run in runs {
        let label = format!(
            "{}-{}",
            run.problem,
            if run.uniform { "uniform" } else { "adaptive" }
        );
        for r in &run.iterations {
            rows.push(TableRow {
                run: label.clone(),
                uniform: run.uniform,
                l: r.l,
                n_dofs: r.n_dofs,
                eta_total: r.eta_total,
                energy_error: r.energy_error,
                effectivity: r.energy_error.and_then(|e| {
                    if r.eta_total > 0.0 {
                        Some(e / r.eta_total)
                    } else {
                        None
                    }
                }),
            });
        }
        let ns: Vec<f64> = run.iterations.iter().map(|r| r.n_dofs as f64).collect();
        let etas: Vec<f64> = run.iterations.iter().map(|r| r.eta_total).collect();
        let errors: Option<Vec<f64>> = run.iterations.iter().map(|r| r.energy_error).collect();
        fits.push(RunFit {
            run: label,
            uniform: run.uniform,
            levels: run.iterations.len(),
            eta_exponent: tail_exponent(&ns, &etas),
            error_exponent: errors.as_ref().and_then(|e| tail_exponent(&ns, e)),
        });
    }
    ConvergenceTable { rows, fits }
}

impl ConvergenceTable {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("run,uniform,level,n_dofs,eta_total,energy_error,effectivity\n");
        for r in &self.rows {
            let err = r.energy_error.map_or(String::new(), |v| format!("{v:e}"));
            let eff = r.effectivity.map_or(String::new(), |v| format!("{v:e}"));
            out.push_str(&format!(
                "{},{},{},{},{:e},{},{}\n",
                r.run, r.uniform, r.l, r.n_dofs, r.eta_total, err, eff
            ));
        }
        out
    }

    /// Sanity report: the estimator must decay along every tabulated run.
    pub fn report(&self) -> CheckReport {
        let mut rep = CheckReport::new("convergence_table");
        for fit in &self.fits {
            match fit.eta_exponent {
                Some(exp) => rep.record(
                    &format!("{}:eta_exponent", fit.run),
                    exp,
                    0.0,
                    Comparison::Less,
                    false,
                    "tail-fitted estimator decay exponent vs degrees of freedom",
                ),
                None => rep.record(
                    &format!("{}:eta_exponent", fit.run),
                    f64::NAN,
                    0.0,
                    Comparison::Less,
                    false,
                    "fit unavailable (fewer than 4 levels or vanishing estimator)",
                ),
            };
        }
        rep
    }
}

/// Uniform-refinement convergence of a manufactured problem: the energy
/// error must decay at first order in the mesh size and the effectivity
/// index must stay within a 25% band across levels.
pub fn check_convergence_rates(
    problem: &Problem,
    levels: usize,
    quad_degree: usize,
) -> Result<CheckReport, VerifyError> {
    if problem.exact.is_none() {
        return Err(VerifyError::Problem(ProblemError::NoExactSolution));
    }
    let mut rep = CheckReport::new("convergence_rates");
    let mut cfg = AfemConfig::new(0.5, 1e-14);
    cfg.max_iterations = levels;
    cfg.max_dofs = usize::MAX / 2;
    cfg.variant = problem.variant;
    cfg.quad_degree = quad_degree;
    let out = uniform_run(Arc::new(problem.domain.initial_mesh()), problem, &cfg)?;
    let records = &out.report.iterations;
    if records.len() < 4 {
        return Err(VerifyError::InsufficientLevels {
            got: records.len(),
            need: 4,
        });
    }
    // Fit the asymptotic tail: at most the last six records, always
    // dropping the first two (coarse fixtures are preasymptotic).
    let skip = records.len().saturating_sub(6).max(2);
    let hs: Vec<f64> = out.levels[skip..]
        .iter()
        .map(|l| l.mesh.metrics().h_max)
        .collect();
    let errs: Vec<f64> = records[skip..]
        .iter()
        .map(|r| r.energy_error.expect("exact solution available"))
        .collect();
    let rate = fit_loglog(&hs, &errs);
    rep.check_ge("energy_rate_vs_h_lower", rate, 0.9);
    rep.check_le("energy_rate_vs_h_upper", rate, 1.1);

    let effs: Vec<f64> = records[skip..]
        .iter()
        .map(|r| r.energy_error.unwrap() / r.eta_total)
        .collect();
    let min = effs.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = effs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    rep.record(
        "effectivity_variation",
        (max - min) / min,
        0.25,
        Comparison::LessEq,
        false,
        "spread of error/estimator ratios across levels",
    );
    Ok(rep)
}

/// Constraint satisfaction for the divergence-free variant: the discrete
/// codifferential of the flux must vanish at every stored level.
pub fn check_codifferential(outcome: &AfemOutcome) -> Result<CheckReport, VerifyError> {
    let mut rep = CheckReport::new("codifferential");
    let mut worst = 0.0f64;
    for level in &outcome.levels {
        let cx = Complex::build(level.mesh.clone())?;
        let u = cx.form_from(1, level.u.clone())?;
        let delta = cx.discrete_codifferential(&u)?;
        let nu = cx.norm(&u);
        if nu > 0.0 {
            worst = worst.max(cx.norm(&delta) / nu);
        }
    }
    rep.record(
        "codifferential_relative_norm",
        worst,
        1e-9,
        Comparison::LessEq,
        false,
        "largest level-wise ratio of codifferential norm to flux norm",
    );
    Ok(rep)
}

/// Empirical optimality surrogate on a singular problem: the adaptive run
/// restores the smooth-problem error-per-degree exponent while uniform
/// refinement does not. An expectation, not a theorem.
pub fn check_optimality(adaptive: &RunReport, uniform: &RunReport) -> CheckReport {
    let mut rep = CheckReport::new("optimality_surrogate");
    let fit = |run: &RunReport| -> Option<f64> {
        let ns: Vec<f64> = run.iterations.iter().map(|r| r.n_dofs as f64).collect();
        let errs: Option<Vec<f64>> = run.iterations.iter().map(|r| r.energy_error).collect();
        errs.and_then(|e| tail_exponent(&ns, &e))
    };
    let exp_a = fit(adaptive).unwrap_or(f64::NAN);
    let exp_u = fit(uniform).unwrap_or(f64::NAN);
    rep.record(
        "adaptive_exponent_lower",
        exp_a,
        -0.58,
        Comparison::GreaterEq,
        false,
        "empirical expectation: adaptive error ~ N^(-1/2)",
    );
    rep.record(
        "adaptive_exponent_upper",
        exp_a,
        -0.42,
        Comparison::LessEq,
        false,
        "empirical expectation: adaptive error ~ N^(-1/2)",
    );
    rep.record(
        "uniform_exponent_degraded",
        exp_u,
        -0.42,
        Comparison::Greater,
        false,
        "uniform refinement must miss the smooth-problem exponent",
    );
    rep
}

/// Deliberate corruption helpers: each check has a control that must fail.
pub mod inject {
    use super::*;

    /// Which deliberate defect to introduce.
    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub enum Fault {
        /// Sign-flip one incidence entry: breaks the composite derivative.
        Incidence,
        /// Corrupt the refinement bookkeeping: breaks nestedness.
        Nesting,
        /// Drop all marked elements: breaks the bulk criteria.
        Marking,
    }

    impl std::str::FromStr for Fault {
        type Err = String;
        fn from_str(s: &str) -> Result<Self, Self::Err> {
            match s.to_ascii_lowercase().as_str() {
                "incidence" => Ok(Fault::Incidence),
                "nesting" => Ok(Fault::Nesting),
                "marking" => Ok(Fault::Marking),
                other => Err(format!(
                    "unknown fault '{other}' (expected incidence|nesting|marking)"
                )),
            }
        }
    }

    /// Returns a copy with the first stored entry negated.
    pub fn flip_incidence_sign(m: &Csr) -> Csr {
        let mut c = m.clone();
        assert!(!c.data.is_empty(), "matrix has no stored entries to flip");
        c.data[0] = -c.data[0];
        c
    }

    /// Composite-derivative check against a sign-flipped incidence matrix;
    /// must fail.
    pub fn check_complex_with_flipped_incidence(cx: &Complex) -> CheckReport {
        let mut rep = CheckReport::new("complex_injected_incidence_fault");
        let corrupted = flip_incidence_sign(cx.d0());
        rep.record(
            "d1_d0_zero",
            super::max_abs(&cx.d1().mul(&corrupted)),
            0.0,
            Comparison::LessEq,
            false,
            "control: one incidence sign deliberately flipped",
        );
        rep
    }

    /// Returns bookkeeping that no longer matches the refinement: every
    /// midpoint is snapped to one endpoint and the containment map is
    /// reversed.
    pub fn corrupt_trace(trace: &RefinementTrace) -> RefinementTrace {
        let mut t = trace.clone();
        for origin in &mut t.vertex_origin {
            if let VertexOrigin::Midpoint(a, _) = *origin {
                *origin = VertexOrigin::Old(a);
            }
        }
        t.parent.reverse();
        t
    }

    /// Orthogonality check with corrupted nesting bookkeeping; must fail.
    pub fn check_orthogonality_non_nested(
        problem: &Problem,
        coarse: Arc<Mesh>,
        quad_degree: usize,
    ) -> Result<CheckReport, VerifyError> {
        super::orthogonality_core(problem, coarse, quad_degree, true)
    }

    /// Replaces every stored mark set with an empty one.
    pub fn corrupt_markset(mesh: &Mesh) -> MarkSet {
        MarkSet::new(mesh, Vec::new(), MarkProvenance::Union).expect("empty set is valid")
    }

    /// Marking check against emptied mark sets; must fail on any run with a
    /// nonzero estimator.
    pub fn check_marking_corrupted(outcome: &AfemOutcome) -> CheckReport {
        let corrupted: Vec<MarkSet> = outcome
            .levels
            .iter()
            .map(|l| corrupt_markset(&l.mesh))
            .collect();
        super::marking_core("marking_injected_fault", outcome, Some(corrupted))
    }
}
