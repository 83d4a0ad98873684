//! Dörfler marking (dual criterion), coefficient prolongation between
//! nested meshes, and the adaptive solve–estimate–mark–refine loop.

use crate::estimator::{estimate, IndicatorField};
use crate::feec::{Complex, FeecError, FormVector};
use crate::mesh::{MarkProvenance, MarkSet, Mesh, MeshError, RefinementTrace, VertexOrigin};
use crate::problems::{eval_error_against, Problem};
use crate::quadrature::{segment_rule, triangle_rule};
use crate::saddle::{assemble, graph_norm, solve, SaddleError, Variant};
use serde::Serialize;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdaptivityError {
    #[error("invalid adaptive configuration: {0}")]
    InvalidConfig(String),
    #[error("refinement trace links meshes {trace_coarse}->{trace_fine}, got {coarse}->{fine}")]
    NotNested {
        trace_coarse: u64,
        trace_fine: u64,
        coarse: u64,
        fine: u64,
    },
    #[error(transparent)]
    Feec(#[from] FeecError),
    #[error(transparent)]
    Saddle(#[from] SaddleError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Parameters of the adaptive loop.
#[derive(Debug, Clone, Serialize)]
pub struct AfemConfig {
    /// Bulk fraction for the total-indicator criterion, in (0,1).
    pub theta: f64,
    /// Optional separate bulk fraction for the scalar-part criterion;
    /// defaults to `theta`.
    pub theta_sigma: Option<f64>,
    /// Stop once the global estimator `η` drops to or below this value.
    pub tol: f64,
    pub max_iterations: usize,
    pub max_dofs: usize,
    pub variant: Variant,
    pub quad_degree: usize,
    pub solver_tol: f64,
    /// For the maxwell variant: remove the load's gradient component before
    /// each solve instead of only reporting its size.
    pub project_rhs: bool,
}

impl AfemConfig {
    pub fn new(theta: f64, tol: f64) -> Self {
        AfemConfig {
            theta,
            theta_sigma: None,
            tol,
            max_iterations: 100,
            max_dofs: 50_000,
            variant: Variant::Hodge,
            quad_degree: 6,
            solver_tol: 1e-10,
            project_rhs: false,
        }
    }

    /// Checks every field against its stated range.
    pub fn validate(&self) -> Result<(), AdaptivityError> {
        let bad = |msg: String| Err(AdaptivityError::InvalidConfig(msg));
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return bad(format!("theta must lie in (0,1), got {}", self.theta));
        }
        if let Some(ts) = self.theta_sigma {
            if !(ts > 0.0 && ts < 1.0) {
                return bad(format!("theta_sigma must lie in (0,1), got {ts}"));
            }
        }
        if !(self.tol > 0.0) {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1".into());
        }
        if self.max_dofs == 0 {
            return bad("max_dofs must be at least 1".into());
        }
        if self.quad_degree < 2 {
            return bad(format!("quad_degree must be >= 2, got {}", self.quad_degree));
        }
        if !(self.solver_tol > 0.0 && self.solver_tol <= 1e-6) {
            return bad(format!(
                "solver_tol must lie in (0, 1e-6], got {}",
                self.solver_tol
            ));
        }
        Ok(())
    }
}

/// Why the loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopStatus {
    /// `η ≤ tol`.
    Tolerance,
    /// Degree-of-freedom budget reached.
    MaxDofs,
    /// Iteration budget reached.
    MaxIterations,
}

/// One row of the convergence history.
#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub l: usize,
    pub n_dofs: usize,
    pub n_triangles: usize,
    pub eta_total: f64,
    pub eta_sigma: f64,
    pub osc: f64,
    /// Elements marked at this iteration (0 on the final one).
    pub marked_count: usize,
    /// Energy error against the exact solution, when one is known.
    pub energy_error: Option<f64>,
    /// Energy distance to the previous iterate carried over by prolongation.
    pub distance_to_previous: Option<f64>,
    /// Scalar-part portion of that distance, `∥grad(σ_l − σ_{l−1})∥`.
    pub sigma_distance_to_previous: Option<f64>,
    /// Measured cross term `⟨rot(u − u_l), rot(u_l − u_{l−1})⟩` against the
    /// exact solution, when one is known.
    pub cross_term: Option<f64>,
}

/// Serializable summary of an adaptive (or uniform) run.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub problem: String,
    pub variant: Variant,
    pub theta: f64,
    pub theta_sigma: f64,
    pub tol: f64,
    pub uniform: bool,
    pub status: StopStatus,
    pub iterations: Vec<IterationRecord>,
    /// Per-iteration geometric factor fitted to `η²_σ` (present when all
    /// values are positive and at least three iterations ran).
    pub fitted_eta_sigma_factor: Option<f64>,
    /// Smallest over a weight grid of the worst consecutive ratio of
    /// `e² + α η²` (present when energy errors are available).
    pub fitted_composite_rho: Option<f64>,
    /// Geometric mean of `error / η` over the run (present when energy
    /// errors are available).
    pub fitted_effectivity: Option<f64>,
}

/// Heavy per-level state retained for downstream consistency checks.
#[derive(Debug, Clone)]
pub struct LevelRecord {
    pub mesh: Arc<Mesh>,
    pub sigma: Vec<f64>,
    pub u: Vec<f64>,
    pub indicators: IndicatorField,
    /// Marking applied at this level (absent on the final level).
    pub marks: Option<MarkSet>,
    /// Trace from this mesh to the next level's mesh.
    pub trace_to_next: Option<RefinementTrace>,
}

/// Report plus retained level state.
#[derive(Debug)]
pub struct AfemOutcome {
    pub report: RunReport,
    pub levels: Vec<LevelRecord>,
}

/// Minimal-cardinality bulk marking: returns the smallest set of elements
/// whose summed indicator reaches `theta` times the total, choosing larger
/// values first and breaking ties by lower element index.
pub fn dorfler(mesh: &Mesh, values: &[f64], theta: f64, provenance: MarkProvenance) -> MarkSet {
    assert!(theta > 0.0 && theta <= 1.0, "theta must lie in (0,1]");
    assert_eq!(values.len(), mesh.n_triangles(), "one value per triangle");
    assert!(
        values.iter().all(|v| v.is_finite() && *v >= 0.0),
        "indicators must be finite and non-negative"
    );
    let total: f64 = values.iter().sum();
    if total <= 0.0 {
        return MarkSet::new(mesh, Vec::new(), provenance).expect("empty set is valid");
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .expect("finite values")
            .then(a.cmp(&b))
    });
    let target = theta * total;
    let mut picked = Vec::new();
    let mut acc = 0.0;
    for &k in &order {
        if acc >= target {
            break;
        }
        // Zero entries cannot help; with θ = 1 this also realizes
        // "all elements with nonzero indicator".
        if values[k] == 0.0 {
            break;
        }
        picked.push(k);
        acc += values[k];
    }
    MarkSet::new(mesh, picked, provenance).expect("indices come from the range")
}

/// Marks the union of two bulk criteria: one on the scalar-part indicators
/// with fraction `theta_sigma` and one on the total indicators with
/// fraction `theta`. Both criteria are re-checked on the union.
pub fn dual_mark(
    mesh: &Mesh,
    ind: &IndicatorField,
    theta: f64,
    theta_sigma: Option<f64>,
) -> MarkSet {
    assert_eq!(ind.mesh_id(), mesh.id(), "indicators belong to another mesh");
    let ts = theta_sigma.unwrap_or(theta);
    let m_sigma = dorfler(mesh, &ind.eta_sigma_sq, ts, MarkProvenance::Sigma);
    let m_total = dorfler(mesh, &ind.eta_total_sq, theta, MarkProvenance::Total);
    let mut union: Vec<usize> = m_sigma
        .triangles()
        .iter()
        .chain(m_total.triangles())
        .copied()
        .collect();
    union.sort_unstable();
    union.dedup();
    let marks = MarkSet::new(mesh, union, MarkProvenance::Union).expect("union of valid sets");
    let sum_over = |vals: &[f64]| -> f64 { marks.triangles().iter().map(|&t| vals[t]).sum() };
    let slack = 1.0 - 1e-9;
    let total_sigma: f64 = ind.eta_sigma_sq.iter().sum();
    let total_all: f64 = ind.eta_total_sq.iter().sum();
    assert!(
        sum_over(&ind.eta_sigma_sq) >= slack * ts * total_sigma,
        "scalar-part bulk criterion violated by the union"
    );
    assert!(
        sum_over(&ind.eta_total_sq) >= slack * theta * total_all,
        "total bulk criterion violated by the union"
    );
    marks
}

/// Re-expresses a coarse-mesh pair in the refined space spanned by the same
/// functions: vertex values transfer directly or as edge-midpoint averages,
/// and edge coefficients are line integrals of the coarse field over the
/// fine edges (two-point Gauss, exact for the piecewise-linear integrand).
pub fn prolong(
    coarse: &Complex,
    fine: &Complex,
    trace: &RefinementTrace,
    sigma: &FormVector,
    u: &FormVector,
) -> Result<(FormVector, FormVector), AdaptivityError> {
    if trace.coarse_id != coarse.mesh().id() || trace.fine_id != fine.mesh().id() {
        return Err(AdaptivityError::NotNested {
            trace_coarse: trace.coarse_id,
            trace_fine: trace.fine_id,
            coarse: coarse.mesh().id(),
            fine: fine.mesh().id(),
        });
    }
    if sigma.degree() != 0 || u.degree() != 1 {
        return Err(AdaptivityError::Feec(FeecError::DegreeMismatch {
            expected: 0,
            got: sigma.degree().max(u.degree()),
        }));
    }
    if sigma.complex_id() != coarse.id() || u.complex_id() != coarse.id() {
        return Err(AdaptivityError::Feec(FeecError::ComplexMismatch));
    }
    // Coarse vertex value including the zero trace on the boundary.
    let coarse_val = |v: usize| coarse.dof0(v).map_or(0.0, |d| sigma.data[d]);

    let fine_mesh = fine.mesh();
    let mut sigma_f = vec![0.0; fine.dim(0)];
    for i in 0..fine.dim(0) {
        let v = fine.vertex_of_dof0(i);
        sigma_f[i] = match trace.vertex_origin[v] {
            VertexOrigin::Old(cv) => coarse_val(cv),
            VertexOrigin::Midpoint(a, b) => 0.5 * (coarse_val(a) + coarse_val(b)),
        };
    }

    let rule = segment_rule(3);
    let mut u_f = vec![0.0; fine.dim(1)];
    for i in 0..fine.dim(1) {
        let e = fine.edge_of_dof1(i);
        let [lo, hi] = fine_mesh.edge(e);
        let a = fine_mesh.vertex(lo);
        let b = fine_mesh.vertex(hi);
        let dir = [b[0] - a[0], b[1] - a[1]];
        let tf = fine_mesh.edge_tris(e)[0].expect("every edge borders a triangle");
        let parent = trace.parent[tf];
        let mut circ = 0.0;
        for &(s, w) in &rule.points {
            let p = [a[0] + s * dir[0], a[1] + s * dir[1]];
            let val = coarse.eval_1form(u, parent, p);
            circ += w * (val[0] * dir[0] + val[1] * dir[1]);
        }
        u_f[i] = circ;
    }

    Ok((
        fine.form_from(0, sigma_f)?,
        fine.form_from(1, u_f)?,
    ))
}

/// Runs the adaptive loop (solve → estimate → mark → refine) from the given
/// mesh until the estimator reaches `cfg.tol` or a budget is exhausted.
pub fn afem_run(
    initial: Arc<Mesh>,
    problem: &Problem,
    cfg: &AfemConfig,
) -> Result<AfemOutcome, AdaptivityError> {
    run_loop(initial, problem, cfg, false)
}

/// Same loop and report schema with every element marked at every step.
pub fn uniform_run(
    initial: Arc<Mesh>,
    problem: &Problem,
    cfg: &AfemConfig,
) -> Result<AfemOutcome, AdaptivityError> {
    run_loop(initial, problem, cfg, true)
}

fn run_loop(
    initial: Arc<Mesh>,
    problem: &Problem,
    cfg: &AfemConfig,
    uniform: bool,
) -> Result<AfemOutcome, AdaptivityError> {
    cfg.validate()?;
    let mut mesh = initial;
    let mut levels: Vec<LevelRecord> = Vec::new();
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut prev: Option<(Complex, FormVector, FormVector, RefinementTrace)> = None;
    let status;
    loop {
        let l = records.len();
        let cx = Complex::build(mesh.clone())?;
        let mut sys = assemble(&cx, problem.source.as_fn(), cfg.variant, cfg.quad_degree);
        if cfg.project_rhs && matches!(cfg.variant, Variant::Maxwell) {
            sys.project_rhs()?;
        }
        let sol = solve(&sys, cfg.solver_tol)?;
        let ind = estimate(&cx, &sol, &problem.source, cfg.quad_degree);
        let n_dofs = cx.dim(0) + cx.dim(1);
        let energy_error = problem
            .exact
            .as_ref()
            .map(|ex| eval_error_against(&cx, &sol, ex, cfg.quad_degree).energy);
        let (distance_to_previous, sigma_distance, cross_term) = match &prev {
            Some((pcx, ps, pu, ptrace)) => {
                let (ps_f, pu_f) = prolong(pcx, &cx, ptrace, ps, pu)?;
                let ds = cx.form_from(
                    0,
                    sol.sigma
                        .data
                        .iter()
                        .zip(&ps_f.data)
                        .map(|(a, b)| a - b)
                        .collect(),
                )?;
                let du = cx.form_from(
                    1,
                    sol.u
                        .data
                        .iter()
                        .zip(&pu_f.data)
                        .map(|(a, b)| a - b)
                        .collect(),
                )?;
                let dist = graph_norm(&cx, &ds, &du);
                let zero_u = cx.zero_form(1);
                let sigma_dist = graph_norm(&cx, &ds, &zero_u);
                let cross = problem
                    .exact
                    .as_ref()
                    .map(|ex| rot_cross_term(&cx, &sol.u, &pu_f, &ex.rot_u, cfg.quad_degree));
                (Some(dist), Some(sigma_dist), cross)
            }
            None => (None, None, None),
        };
        records.push(IterationRecord {
            l,
            n_dofs,
            n_triangles: mesh.n_triangles(),
            eta_total: ind.global_eta_sq().sqrt(),
            eta_sigma: ind.global_eta_sigma_sq().sqrt(),
            osc: ind.global_osc_sq().sqrt(),
            marked_count: 0,
            energy_error,
            distance_to_previous,
            sigma_distance_to_previous: sigma_distance,
            cross_term,
        });
        if l > 0 {
            assert!(
                records[l].n_dofs >= records[l - 1].n_dofs,
                "degrees of freedom must not decrease under refinement"
            );
        }

        let final_level = |ind: IndicatorField| LevelRecord {
            mesh: mesh.clone(),
            sigma: sol.sigma.data.clone(),
            u: sol.u.data.clone(),
            indicators: ind,
            marks: None,
            trace_to_next: None,
        };
        if records[l].eta_total <= cfg.tol {
            levels.push(final_level(ind));
            status = StopStatus::Tolerance;
            break;
        }
        if records.len() >= cfg.max_iterations {
            levels.push(final_level(ind));
            status = StopStatus::MaxIterations;
            break;
        }
        if n_dofs >= cfg.max_dofs {
            levels.push(final_level(ind));
            status = StopStatus::MaxDofs;
            break;
        }

        let marks = if uniform {
            MarkSet::all(&mesh, MarkProvenance::Total)
        } else {
            dual_mark(&mesh, &ind, cfg.theta, cfg.theta_sigma)
        };
        records[l].marked_count = marks.len();
        let (fine, trace) = mesh.bisect(&marks)?;
        levels.push(LevelRecord {
            mesh: mesh.clone(),
            sigma: sol.sigma.data.clone(),
            u: sol.u.data.clone(),
            indicators: ind,
            marks: Some(marks),
            trace_to_next: Some(trace.clone()),
        });
        prev = Some((cx, sol.sigma, sol.u, trace));
        mesh = Arc::new(fine);
    }

    let etas_sigma_sq: Vec<f64> = records.iter().map(|r| r.eta_sigma * r.eta_sigma).collect();
    let fitted_eta_sigma_factor = fit_geometric_factor(&etas_sigma_sq);
    let errors: Option<Vec<f64>> = records.iter().map(|r| r.energy_error).collect();
    let etas_sq: Vec<f64> = records.iter().map(|r| r.eta_total * r.eta_total).collect();
    let fitted_composite_rho = errors
        .as_ref()
        .and_then(|e| fit_composite_rho(e, &etas_sq));
    let fitted_effectivity = errors.as_ref().and_then(|errs| {
        let ratios: Vec<f64> = errs
            .iter()
            .zip(records.iter())
            .filter(|(_, r)| r.eta_total > 0.0)
            .map(|(e, r)| e / r.eta_total)
            .collect();
        if ratios.is_empty() || ratios.iter().any(|r| *r <= 0.0) {
            None
        } else {
            let log_mean = ratios.iter().map(|r| r.ln()).sum::<f64>() / ratios.len() as f64;
            Some(log_mean.exp())
        }
    });

    Ok(AfemOutcome {
        report: RunReport {
            problem: problem.name.to_string(),
            variant: cfg.variant,
            theta: cfg.theta,
            theta_sigma: cfg.theta_sigma.unwrap_or(cfg.theta),
            tol: cfg.tol,
            uniform,
            status,
            iterations: records,
            fitted_eta_sigma_factor,
            fitted_composite_rho,
            fitted_effectivity,
        },
        levels,
    })
}

fn rot_cross_term(
    cx: &Complex,
    u_l: &FormVector,
    u_prev: &FormVector,
    rot_exact: &crate::problems::ScalarField,
    quad_degree: usize,
) -> f64 {
    let rule = triangle_rule(quad_degree);
    let mesh = cx.mesh();
    let mut acc = 0.0;
    for t in 0..mesh.n_triangles() {
        let r_l = cx.eval_rot(u_l, t);
        let r_p = cx.eval_rot(u_prev, t);
        let pts = mesh.points(t);
        let mut exact_int = 0.0;
        for (p, w) in rule.map_to(pts[0], pts[1], pts[2]) {
            exact_int += w * rot_exact(p);
        }
        acc += (exact_int - mesh.area(t) * r_l) * (r_l - r_p);
    }
    acc
}

/// Least-squares slope of `ln y` against `ln x`.
pub(crate) fn fit_loglog(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    assert!(x.len() >= 2, "need at least two samples to fit a rate");
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..lx.len() {
        num += (lx[i] - mx) * (ly[i] - my);
        den += (lx[i] - mx) * (lx[i] - mx);
    }
    num / den
}

/// Per-step geometric factor of a positive sequence, fitted by least
/// squares in log space.
fn fit_geometric_factor(values: &[f64]) -> Option<f64> {
    if values.len() < 3 || values.iter().any(|v| *v <= 0.0) {
        return None;
    }
    let ly: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let n = ly.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = ly.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, v) in ly.iter().enumerate() {
        let dx = i as f64 - mx;
        num += dx * (v - my);
        den += dx * dx;
    }
    Some((num / den).exp())
}

/// Searches a geometric grid of weights `α` for the one minimizing the
/// worst consecutive ratio of `e² + α η²`; returns that minimal worst
/// ratio.
fn fit_composite_rho(errors: &[f64], etas_sq: &[f64]) -> Option<f64> {
    if errors.len() < 2 {
        return None;
    }
    let e_sq: Vec<f64> = errors.iter().map(|e| e * e).collect();
    let mut best: Option<f64> = None;
    for k in -30..=30 {
        let alpha = 10f64.powf(k as f64 / 10.0);
        let q: Vec<f64> = e_sq
            .iter()
            .zip(etas_sq)
            .map(|(e, h)| e + alpha * h)
            .collect();
        if q.iter().any(|v| *v <= 0.0) {
            continue;
        }
        let worst = q
            .windows(2)
            .map(|w| w[1] / w[0])
            .fold(f64::NEG_INFINITY, f64::max);
        best = Some(best.map_or(worst, |b: f64| b.min(worst)));
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{by_name, Domain, SourceField};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dorfler_matches_worked_examples() {
        let mesh = Mesh::criss_cross();
        let m = dorfler(&mesh, &[4.0, 3.0, 2.0, 1.0], 0.5, MarkProvenance::Total);
        assert_eq!(m.triangles(), &[0, 1]);
        let empty = dorfler(&mesh, &[0.0; 4], 0.7, MarkProvenance::Total);
        assert!(empty.is_empty());
        let all_nonzero = dorfler(&mesh, &[1.0, 0.0, 2.0, 3.0], 1.0, MarkProvenance::Total);
        assert_eq!(all_nonzero.triangles(), &[0, 2, 3]);
        // Ties resolved toward lower indices.
        let tie = dorfler(&mesh, &[2.0, 2.0, 2.0, 2.0], 0.25, MarkProvenance::Total);
        assert_eq!(tie.triangles(), &[0]);
    }

    /// Exhaustive subset oracle: no strictly smaller set satisfies the bulk
    /// criterion on random instances small enough to enumerate.
    #[test]
    fn dorfler_sets_have_minimal_cardinality() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for round in 0..200 {
            let n = rng.random_range(1..=12usize);
            // A coarse value grid provokes ties.
            let values: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
            let theta = rng.random_range(0.05..=1.0f64);
            // Build any mesh with >= n triangles to host the mark set.
            let mut mesh = Mesh::criss_cross();
            while mesh.n_triangles() < n {
                mesh = mesh.uniform_refine().0;
            }
            let padded: Vec<f64> = values
                .iter()
                .copied()
                .chain(std::iter::repeat(0.0))
                .take(mesh.n_triangles())
                .collect();
            let marks = dorfler(&mesh, &padded, theta, MarkProvenance::Total);
            let total: f64 = padded.iter().sum();
            let target = theta * total;
            let sum: f64 = marks.triangles().iter().map(|&t| padded[t]).sum();
            assert!(
                total == 0.0 || sum >= target - 1e-12 * total,
                "round {round}: bulk criterion violated"
            );
            // Exhaustive check over the first n entries (the rest are 0).
            let mut best = usize::MAX;
            for mask in 0u32..(1 << n) {
                let s: f64 = (0..n)
                    .filter(|i| mask & (1 << i) != 0)
                    .map(|i| padded[i])
                    .sum();
                if s >= target {
                    best = best.min(mask.count_ones() as usize);
                }
            }
            if total == 0.0 {
                assert!(marks.is_empty());
            } else {
                assert_eq!(
                    marks.len(),
                    best,
                    "round {round}: greedy size {} vs optimal {best} (values {padded:?}, theta {theta})",
                    marks.len()
                );
            }
        }
    }

    #[test]
    fn dual_mark_unions_both_criteria() {
        let mesh = Mesh::criss_cross();
        let cx = Complex::build(Arc::new(mesh.clone())).unwrap();
        let mk_ind = |sigma: Vec<f64>, extra: Vec<f64>| {
            let total: Vec<f64> = sigma.iter().zip(&extra).map(|(a, b)| a + b).collect();
            IndicatorField::from_values(cx.mesh(), total, sigma, vec![0.0; 4], 2)
        };

        // Identical concentration: union equals the single Dörfler set.
        let ind = mk_ind(vec![4.0, 3.0, 2.0, 1.0], vec![0.0; 4]);
        let m = dual_mark(&mesh, &ind, 0.5, None);
        assert_eq!(m.triangles(), &[0, 1]);

        // Vacuous scalar criterion: zero σ-indicators mark nothing extra.
        let ind = mk_ind(vec![0.0; 4], vec![1.0, 5.0, 1.0, 1.0]);
        let m = dual_mark(&mesh, &ind, 0.5, None);
        assert_eq!(m.triangles(), &[1]);

        // Disjoint concentration: scalar indicators peak on element 0,
        // totals peak on element 3; the union must cover both.
        let ind = mk_ind(vec![10.0, 0.1, 0.1, 0.1], vec![0.2, 0.1, 0.1, 29.9]);
        let m = dual_mark(&mesh, &ind, 0.5, None);
        assert!(m.triangles().contains(&0) && m.triangles().contains(&3));

        // Split fractions route through the σ criterion.
        let ind = mk_ind(vec![5.0, 4.0, 3.0, 2.0], vec![0.0; 4]);
        let wide = dual_mark(&mesh, &ind, 0.2, Some(0.9));
        assert!(wide.len() >= 3);
    }

    /// Prolongation represents the same piecewise function: pointwise
    /// agreement at random points, parent DOF reproduction, commuting
    /// rotation, and energy invariance.
    #[test]
    fn prolongation_preserves_the_function() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let coarse_mesh = Arc::new(Mesh::criss_cross_2x2());
        let coarse = Complex::build(coarse_mesh.clone()).unwrap();
        let marked = MarkSet::new(&coarse_mesh, vec![0, 3, 5], MarkProvenance::Total).unwrap();
        let (fine_mesh, trace) = coarse_mesh.bisect(&marked).unwrap();
        let fine_mesh = Arc::new(fine_mesh);
        let fine = Complex::build(fine_mesh.clone()).unwrap();

        let sigma = coarse
            .form_from(
                0,
                (0..coarse.dim(0)).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap();
        let u = coarse
            .form_from(
                1,
                (0..coarse.dim(1)).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap();
        let (sigma_f, u_f) = prolong(&coarse, &fine, &trace, &sigma, &u).unwrap();

        // Pointwise agreement at random interior points.
        let mut checked = 0;
        while checked < 20 {
            let p = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
            let Some(tf) = (0..fine_mesh.n_triangles())
                .find(|&t| fine_mesh.contains_point(t, p, 1e-12))
            else {
                continue;
            };
            let tc = trace.parent[tf];
            let s_fine = fine.eval_0form(&sigma_f, tf, p);
            let s_coarse = coarse.eval_0form(&sigma, tc, p);
            assert!((s_fine - s_coarse).abs() <= 1e-12);
            let u_fine = fine.eval_1form(&u_f, tf, p);
            let u_coarse = coarse.eval_1form(&u, tc, p);
            assert!((u_fine[0] - u_coarse[0]).abs() <= 1e-12);
            assert!((u_fine[1] - u_coarse[1]).abs() <= 1e-12);
            checked += 1;
        }

        // Old vertices keep their coefficients.
        for i in 0..fine.dim(0) {
            if let VertexOrigin::Old(cv) = trace.vertex_origin[fine.vertex_of_dof0(i)] {
                let d = coarse.dof0(cv).expect("old interior vertex stays interior");
                assert_eq!(sigma_f.data[i], sigma.data[d]);
            }
        }

        // Rotation commutes: each child carries its parent's constant.
        for tf in 0..fine_mesh.n_triangles() {
            let r_f = fine.eval_rot(&u_f, tf);
            let r_c = coarse.eval_rot(&u, trace.parent[tf]);
            assert!((r_f - r_c).abs() <= 1e-11, "child {tf}: {r_f} vs {r_c}");
        }

        // Energy invariance.
        let e_c = graph_norm(&coarse, &sigma, &u);
        let e_f = graph_norm(&fine, &sigma_f, &u_f);
        assert!((e_c - e_f).abs() <= 1e-12 * e_c.max(1.0));

        // Mismatched traces are rejected.
        let other = Complex::build(Arc::new(Mesh::criss_cross())).unwrap();
        assert!(matches!(
            prolong(&other, &fine, &trace, &sigma, &u),
            Err(AdaptivityError::NotNested { .. })
        ));
    }

    #[test]
    fn zero_source_terminates_immediately_at_tolerance() {
        let problem = Problem {
            name: "zero",
            description: "homogeneous data",
            domain: Domain::UnitSquare,
            variant: Variant::Hodge,
            source: SourceField::new(|_| [0.0, 0.0], |_| 0.0),
            exact: None,
        };
        let cfg = AfemConfig::new(0.5, 1e-8);
        let out = afem_run(Arc::new(Mesh::criss_cross()), &problem, &cfg).unwrap();
        assert_eq!(out.report.status, StopStatus::Tolerance);
        assert_eq!(out.report.iterations.len(), 1);
        assert_eq!(out.report.iterations[0].eta_total, 0.0);
        assert_eq!(out.report.iterations[0].marked_count, 0);
        assert_eq!(out.levels.len(), 1);
    }

    #[test]
    fn budget_statuses_are_reported() {
        let problem = by_name("s1").unwrap();
        let initial = Arc::new(problem.domain.initial_mesh());
        let mut cfg = AfemConfig::new(0.5, 1e-12);
        cfg.max_iterations = 2;
        let out = afem_run(initial.clone(), &problem, &cfg).unwrap();
        assert_eq!(out.report.status, StopStatus::MaxIterations);
        assert_eq!(out.report.iterations.len(), 2);

        let mut cfg = AfemConfig::new(0.5, 1e-12);
        cfg.max_dofs = 10;
        let out = afem_run(initial, &problem, &cfg).unwrap();
        assert_eq!(out.report.status, StopStatus::MaxDofs);

        let mut bad = AfemConfig::new(1.5, 1e-6);
        bad.max_dofs = 100;
        assert!(matches!(
            afem_run(Arc::new(Mesh::criss_cross()), &by_name("m1").unwrap(), &bad),
            Err(AdaptivityError::InvalidConfig(_))
        ));
    }

    /// The singular benchmark grades the mesh into the reentrant corner and
    /// drives the estimator down along the run.
    #[test]
    fn singular_problem_grades_toward_the_corner() {
        let problem = by_name("s1").unwrap();
        let mut cfg = AfemConfig::new(0.5, 1e-12);
        cfg.max_dofs = 9000;
        cfg.quad_degree = 4;
        let out = afem_run(Arc::new(problem.domain.initial_mesh()), &problem, &cfg).unwrap();
        assert_eq!(out.report.status, StopStatus::MaxDofs);
        let etas: Vec<f64> = out.report.iterations.iter().map(|r| r.eta_total).collect();
        assert!(etas.len() >= 10, "expected a long run, got {}", etas.len());
        assert!(etas.last().unwrap() < &(0.2 * etas[0]));
        let decreasing = etas.windows(2).filter(|w| w[1] <= w[0]).count();
        assert!(
            decreasing * 10 >= etas.windows(2).len() * 8,
            "estimator should decrease on most steps"
        );

        // Every element touching the corner is much smaller than the domain.
        let final_mesh = &out.levels.last().unwrap().mesh;
        let mut corner_elements = 0;
        for t in 0..final_mesh.n_triangles() {
            let tri = final_mesh.triangle(t);
            let touches = tri.iter().any(|&v| {
                let p = final_mesh.vertex(v);
                p[0].abs() < 1e-14 && p[1].abs() < 1e-14
            });
            if touches {
                corner_elements += 1;
                let pts = final_mesh.points(t);
                let mut diam = 0.0f64;
                for i in 0..3 {
                    for j in (i + 1)..3 {
                        let d = ((pts[i][0] - pts[j][0]).powi(2)
                            + (pts[i][1] - pts[j][1]).powi(2))
                        .sqrt();
                        diam = diam.max(d);
                    }
                }
                assert!(
                    diam < 2.0 / 32.0,
                    "corner element {t} has diameter {diam}"
                );
            }
        }
        assert!(corner_elements > 0, "the corner must stay covered");

        // Iteration bookkeeping invariants.
        for w in out.report.iterations.windows(2) {
            assert_eq!(w[1].l, w[0].l + 1);
            assert!(w[1].n_dofs >= w[0].n_dofs);
            assert!(w[0].marked_count > 0);
            assert!(w[1].distance_to_previous.is_some());
        }
    }

    /// On a smooth problem adaptivity cannot beat (or trail) the uniform
    /// N^{-1/2} rate by much.
    #[test]
    fn smooth_problem_matches_uniform_rate() {
        let problem = by_name("m1").unwrap();
        let initial = Arc::new(problem.domain.initial_mesh());
        let mut cfg = AfemConfig::new(0.5, 1e-12);
        cfg.max_dofs = 2500;
        cfg.quad_degree = 6;
        let out = afem_run(initial.clone(), &problem, &cfg).unwrap();
        let records = &out.report.iterations;
        assert!(records.len() >= 8);
        let tail = &records[records.len() - 6..];
        let ns: Vec<f64> = tail.iter().map(|r| r.n_dofs as f64).collect();
        let errs: Vec<f64> = tail.iter().map(|r| r.energy_error.unwrap()).collect();
        let rate_adaptive = fit_loglog(&ns, &errs);

        let mut cfg_u = AfemConfig::new(0.5, 1e-12);
        cfg_u.max_dofs = 2500;
        cfg_u.quad_degree = 6;
        let out_u = uniform_run(initial, &problem, &cfg_u).unwrap();
        let rec_u = &out_u.report.iterations;
        let tail_u = &rec_u[rec_u.len().saturating_sub(6)..];
        let ns_u: Vec<f64> = tail_u.iter().map(|r| r.n_dofs as f64).collect();
        let errs_u: Vec<f64> = tail_u.iter().map(|r| r.energy_error.unwrap()).collect();
        let rate_uniform = fit_loglog(&ns_u, &errs_u);

        assert!(
            (-0.65..=-0.35).contains(&rate_uniform),
            "uniform rate {rate_uniform}"
        );
        assert!(
            (rate_adaptive - rate_uniform).abs() <= 0.15 * rate_uniform.abs(),
            "adaptive {rate_adaptive} vs uniform {rate_uniform}"
        );

        // Fitted summary quantities exist on a smooth run with exact errors.
        assert!(out.report.fitted_effectivity.is_some());
        assert!(out.report.fitted_composite_rho.is_some());
        assert!(out.report.fitted_eta_sigma_factor.is_some());
    }

    #[test]
    fn reports_serialize_deterministically() {
        let problem = by_name("m1").unwrap();
        let mut cfg = AfemConfig::new(0.5, 1e-12);
        cfg.max_dofs = 300;
        let run = || {
            let out = afem_run(Arc::new(problem.domain.initial_mesh()), &problem, &cfg).unwrap();
            serde_json::to_string_pretty(&out.report).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        assert!(a.contains("\"status\""));
        assert!(a.contains("max_dofs") || a.contains("\"uniform\""));
    }
}
