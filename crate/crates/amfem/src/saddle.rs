//! Mixed saddle-point formulation of the Hodge Laplacian on 1-forms.
//!
//! The unknowns are a scalar potential `σ` (degree 0) and a vector field `u`
//! (degree 1) satisfying, in symmetrized block form,
//!
//! ```text
//! [ −M0      D0ᵀM1    ] [σ]   [0]
//! [ M1·D0    D1ᵀM2·D1 ] [u] = [b],    b_i = ∫ f · W_i
//! ```
//!
//! The `maxwell` variant zeroes the (0,0) block, turning `σ` into a Lagrange
//! multiplier that enforces `u` to be mass-orthogonal to gradients; that
//! variant is well posed for divergence-free sources, and the solver reports
//! the size of the incompatible component for any other source.
//!
//! The solve eliminates exactly through the discrete Hodge decomposition:
//! every step is a symmetric positive definite solve (the scalar stiffness
//! matrix or the integer dual-graph Laplacian), followed by iterative
//! refinement of the full block residual and a Krylov fallback.

use crate::feec::{Complex, FeecError, FormVector};
use crate::quadrature::triangle_rule;
use crate::sparse::{dot, minres, norm, Csr, Triplets};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SaddleError {
    #[error("solver tolerance must lie in (0, 1e-6], got {0:e}")]
    InvalidTolerance(f64),
    #[error("solver did not converge: relative residual {achieved:e} > {tol:e}")]
    NonConvergence { achieved: f64, tol: f64 },
    #[error(transparent)]
    Feec(#[from] FeecError),
}

/// Which block system to assemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Full mixed Hodge Laplacian: `σ = δ u` is part of the solution.
    Hodge,
    /// Constrained rot-rot system: the (0,0) block is zero and `σ` is the
    /// multiplier enforcing `u ⊥ gradients`.
    Maxwell,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Variant::Hodge => write!(f, "hodge"),
            Variant::Maxwell => write!(f, "maxwell"),
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hodge" => Ok(Variant::Hodge),
            "maxwell" => Ok(Variant::Maxwell),
            other => Err(format!("unknown variant '{other}' (expected hodge|maxwell)")),
        }
    }
}

/// Assembled block system tied to a [`Complex`].
pub struct SaddleSystem<'a> {
    cx: &'a Complex,
    variant: Variant,
    /// Load vector `b_i = ∫ f · W_i` over the support of each edge basis
    /// function.
    b: Vec<f64>,
    quad_degree: usize,
    /// Set once [`SaddleSystem::project_rhs`] has removed the gradient
    /// component of the load.
    rhs_projected: bool,
}

/// Result of a saddle-point solve.
#[derive(Debug, Clone)]
pub struct MixedSolution {
    pub sigma: FormVector,
    pub u: FormVector,
    /// Final full-block residual relative to the right-hand side norm.
    pub relative_residual: f64,
    /// Euclidean norm of the right-hand side (0, b).
    pub rhs_norm: f64,
    /// Number of iterative-refinement passes applied after the first
    /// elimination sweep.
    pub refinement_passes: usize,
    /// Set when the Krylov fallback had to finish the solve.
    pub used_krylov: bool,
    /// For the maxwell variant: mass norm of the gradient component of the
    /// load (zero for compatible, i.e. divergence-free, sources), along with
    /// the mass norm of the whole load for scale.
    pub divergence_violation: Option<DivergenceViolation>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DivergenceViolation {
    /// `∥z∥` where `z` is the mass-orthogonal projection of the load's Riesz
    /// representative onto the gradient subspace.
    pub violation: f64,
    /// Mass norm of the full Riesz representative of the load.
    pub load_norm: f64,
}

impl DivergenceViolation {
    pub fn relative(&self) -> f64 {
        if self.load_norm == 0.0 {
            0.0
        } else {
            self.violation / self.load_norm
        }
    }
}

/// Assembles the block system for the source field `f`.
///
/// `quad_degree` is the polynomial degree integrated exactly by the load
/// quadrature and must be at least 2.
pub fn assemble<'a>(
    cx: &'a Complex,
    f: impl Fn([f64; 2]) -> [f64; 2],
    variant: Variant,
    quad_degree: usize,
) -> SaddleSystem<'a> {
    assert!(quad_degree >= 2, "load quadrature degree must be >= 2");
    let rule = triangle_rule(quad_degree);
    let mesh = cx.mesh();
    let mut b = vec![0.0; cx.dim(1)];
    for t in 0..mesh.n_triangles() {
        let pts = mesh.points(t);
        let mapped = rule.map_to(pts[0], pts[1], pts[2]);
        for k in 0..3 {
            let Some(d) = cx.dof1(mesh.tri_edges(t)[k]) else {
                continue;
            };
            let mut basis = cx.zero_form(1);
            basis.data[d] = 1.0;
            let mut acc = 0.0;
            for &(p, w) in &mapped {
                let wv = cx.eval_1form(&basis, t, p);
                let fv = f(p);
                acc += w * (wv[0] * fv[0] + wv[1] * fv[1]);
            }
            b[d] += acc;
        }
    }
    SaddleSystem {
        cx,
        variant,
        b,
        quad_degree,
        rhs_projected: false,
    }
}

impl<'a> SaddleSystem<'a> {
    pub fn complex(&self) -> &'a Complex {
        self.cx
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn quad_degree(&self) -> usize {
        self.quad_degree
    }

    pub fn rhs(&self) -> &[f64] {
        &self.b
    }

    pub fn rhs_projected(&self) -> bool {
        self.rhs_projected
    }

    /// Full right-hand side `(0, b)` of the block system.
    pub fn full_rhs(&self) -> Vec<f64> {
        let n0 = self.cx.dim(0);
        let mut rhs = vec![0.0; n0 + self.b.len()];
        rhs[n0..].copy_from_slice(&self.b);
        rhs
    }

    /// Assembles the full symmetric block matrix. The returned matrix is
    /// bitwise symmetric by construction: the lower-left block is stored as
    /// the transpose of the upper-right one, and the diagonal blocks are
    /// assembled from expressions invariant under index swap.
    pub fn full_matrix(&self) -> Csr {
        let n0 = self.cx.dim(0);
        let n1 = self.cx.dim(1);
        let n = n0 + n1;
        let lower_left = self.cx.m1().mul(self.cx.d0());
        let upper_right = lower_left.transpose();
        let rot_rot = {
            let m2d1 = self.cx.m2().mul(self.cx.d1());
            self.cx.d1().transpose().mul(&m2d1)
        };
        let mut t = Triplets::new(n, n);
        if self.variant == Variant::Hodge {
            let m0 = self.cx.m0();
            for r in 0..n0 {
                let (cols, vals) = m0.row(r);
                for (c, v) in cols.iter().zip(vals) {
                    t.push(r, *c, -v);
                }
            }
        }
        for r in 0..n0 {
            let (cols, vals) = upper_right.row(r);
            for (c, v) in cols.iter().zip(vals) {
                t.push(r, n0 + c, *v);
            }
        }
        for r in 0..n1 {
            let (cols, vals) = lower_left.row(r);
            for (c, v) in cols.iter().zip(vals) {
                t.push(n0 + r, *c, *v);
            }
        }
        for r in 0..n1 {
            let (cols, vals) = rot_rot.row(r);
            for (c, v) in cols.iter().zip(vals) {
                t.push(n0 + r, n0 + c, *v);
            }
        }
        t.to_csr()
    }

    /// Applies the block matrix to a stacked vector without assembling it.
    fn apply_full(&self, x: &[f64]) -> Vec<f64> {
        let cx = self.cx;
        let n0 = cx.dim(0);
        let (sigma, u) = x.split_at(n0);
        let m1u = cx.m1().matvec(u);
        let mut row0 = cx.d0().matvec_transpose(&m1u);
        if self.variant == Variant::Hodge {
            let m0s = cx.m0().matvec(sigma);
            for (r, m) in row0.iter_mut().zip(&m0s) {
                *r -= m;
            }
        }
        let mut row1 = cx.m1().matvec(&cx.d0().matvec(sigma));
        let rot = cx.d1().matvec(u);
        let a_u = cx.d1().matvec_transpose(&cx.m2().matvec(&rot));
        for (r, a) in row1.iter_mut().zip(&a_u) {
            *r += a;
        }
        let mut out = row0;
        out.extend_from_slice(&row1);
        out
    }

    /// Size of the gradient component of the load: zero exactly when the
    /// source is discretely divergence-free.
    pub fn divergence_violation(&self) -> Result<DivergenceViolation, FeecError> {
        let cx = self.cx;
        let phi = cx.stiffness_solver()?.solve(&cx.d0().matvec_transpose(&self.b));
        let violation = dot(&cx.stiffness().matvec(&phi), &phi).max(0.0).sqrt();
        let riesz = cx.m1_solver()?.solve(&self.b);
        let load_norm = dot(&self.b, &riesz).max(0.0).sqrt();
        Ok(DivergenceViolation {
            violation,
            load_norm,
        })
    }

    /// Removes the gradient component of the load in place
    /// (`b ← b − M1 D0 φ` with `(D0ᵀM1D0) φ = D0ᵀ b`) and returns the size of
    /// the removed part. Afterwards the load is compatible with the maxwell
    /// variant.
    pub fn project_rhs(&mut self) -> Result<DivergenceViolation, FeecError> {
        let report = self.divergence_violation()?;
        let cx = self.cx;
        let phi = cx.stiffness_solver()?.solve(&cx.d0().matvec_transpose(&self.b));
        let correction = cx.m1().matvec(&cx.d0().matvec(&phi));
        for (bi, ci) in self.b.iter_mut().zip(&correction) {
            *bi -= ci;
        }
        self.rhs_projected = true;
        Ok(report)
    }
}

/// One exact elimination sweep through the discrete Hodge decomposition.
///
/// Solves the block system for a general right-hand side `(r0, r1)`:
/// test the second row with gradients to get `σ`, solve the rot-rot part on
/// the orthogonal complement, and recover the gradient part of `u` from the
/// first row. Every linear solve is symmetric positive definite.
fn eliminate(
    cx: &Complex,
    variant: Variant,
    r0: &[f64],
    r1: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), FeecError> {
    // σ from the gradient test of the second row: L σ = D0ᵀ r1.
    let sigma = cx
        .stiffness_solver()?
        .solve(&cx.d0().matvec_transpose(r1));
    // Rot-rot part: A w = r1 − M1 D0 σ on the complement subspace.
    let grad_sigma = cx.d0().matvec(&sigma);
    let m1_grad = cx.m1().matvec(&grad_sigma);
    let r: Vec<f64> = r1.iter().zip(&m1_grad).map(|(a, b)| a - b).collect();
    let w0 = cx.solve_rot_rot(&r)?;
    let w = cx.project_complement(&w0)?;
    // Gradient part of u from the first row.
    let mut rhs0 = r0.to_vec();
    match variant {
        Variant::Hodge => {
            // −M0 σ + D0ᵀ M1 (D0 φ + w) = r0  ⟹  L φ = r0 + M0 σ.
            let m0s = cx.m0().matvec(&sigma);
            for (v, m) in rhs0.iter_mut().zip(&m0s) {
                *v += m;
            }
        }
        Variant::Maxwell => {
            // D0ᵀ M1 (D0 φ + w) = r0  ⟹  L φ = r0 (zero for the original
            // load, nonzero while refining the residual).
        }
    }
    let phi = cx.stiffness_solver()?.solve(&rhs0);
    let grad_phi = cx.d0().matvec(&phi);
    let u: Vec<f64> = grad_phi.iter().zip(&w).map(|(a, b)| a + b).collect();
    Ok((sigma, u))
}

/// Solves the block system to the requested relative residual.
///
/// `tol` must lie in `(0, 1e-6]`. The returned solution satisfies
/// `∥rhs − A x∥ ≤ tol · ∥rhs∥` in the Euclidean norm of the stacked system,
/// or the call fails with [`SaddleError::NonConvergence`].
pub fn solve(sys: &SaddleSystem, tol: f64) -> Result<MixedSolution, SaddleError> {
    if !(tol > 0.0 && tol <= 1e-6) {
        return Err(SaddleError::InvalidTolerance(tol));
    }
    let cx = sys.complex();
    let n0 = cx.dim(0);
    let n1 = cx.dim(1);
    let rhs = sys.full_rhs();
    let rhs_norm = norm(&rhs);

    let divergence_violation = match sys.variant() {
        Variant::Maxwell => Some(sys.divergence_violation()?),
        Variant::Hodge => None,
    };

    if rhs_norm == 0.0 {
        return Ok(MixedSolution {
            sigma: cx.zero_form(0),
            u: cx.zero_form(1),
            relative_residual: 0.0,
            rhs_norm,
            refinement_passes: 0,
            used_krylov: false,
            divergence_violation,
        });
    }

    let residual_of = |x: &[f64]| -> Vec<f64> {
        let ax = sys.apply_full(x);
        rhs.iter().zip(&ax).map(|(b, a)| b - a).collect()
    };

    let (sigma0, u0) = eliminate(cx, sys.variant(), &rhs[..n0], &rhs[n0..])?;
    let mut x = sigma0;
    x.extend_from_slice(&u0);

    let mut refinement_passes = 0;
    let mut used_krylov = false;
    let mut res = residual_of(&x);
    let mut relres = norm(&res) / rhs_norm;
    for _ in 0..3 {
        if relres <= tol {
            break;
        }
        let (ds, du) = eliminate(cx, sys.variant(), &res[..n0], &res[n0..])?;
        for i in 0..n0 {
            x[i] += ds[i];
        }
        for i in 0..n1 {
            x[n0 + i] += du[i];
        }
        refinement_passes += 1;
        res = residual_of(&x);
        relres = norm(&res) / rhs_norm;
    }

    if relres > tol {
        // Krylov fallback on the assembled symmetric system, correcting the
        // current iterate.
        used_krylov = true;
        let full = sys.full_matrix();
        let res_norm = norm(&res);
        let inner_tol = (tol * rhs_norm / res_norm).min(0.5);
        let n = n0 + n1;
        let (dx, _inner_rel, _iters) =
            minres(n, |v| full.matvec(v), &res, inner_tol, 40 * n.max(100));
        for i in 0..n {
            x[i] += dx[i];
        }
        res = residual_of(&x);
        relres = norm(&res) / rhs_norm;
    }

    if relres > tol {
        return Err(SaddleError::NonConvergence {
            achieved: relres,
            tol,
        });
    }

    let sigma = cx
        .form_from(0, x[..n0].to_vec())
        .expect("dimension fixed by construction");
    let u = cx
        .form_from(1, x[n0..].to_vec())
        .expect("dimension fixed by construction");
    Ok(MixedSolution {
        sigma,
        u,
        relative_residual: relres,
        rhs_norm,
        refinement_passes,
        used_krylov,
        divergence_violation,
    })
}

/// Energy norm of a pair: `√(∥grad σ∥² + ∥rot u∥²)` with the gradient
/// measured in the degree-1 mass and the rotation in the degree-2 mass.
pub fn graph_norm(cx: &Complex, sigma: &FormVector, u: &FormVector) -> f64 {
    assert_eq!(sigma.degree(), 0, "first argument must have degree 0");
    assert_eq!(u.degree(), 1, "second argument must have degree 1");
    assert_eq!(sigma.complex_id(), cx.id(), "complex mismatch");
    assert_eq!(u.complex_id(), cx.id(), "complex mismatch");
    let grad = cx.d0().matvec(&sigma.data);
    let grad_energy = dot(&cx.m1().matvec(&grad), &grad);
    let rot = cx.d1().matvec(&u.data);
    let rot_energy = dot(&cx.m2().matvec(&rot), &rot);
    (grad_energy + rot_energy).max(0.0).sqrt()
}

impl MixedSolution {
    pub fn graph_norm(&self, cx: &Complex) -> f64 {
        graph_norm(cx, &self.sigma, &self.u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Mesh;
    use crate::quadrature::triangle_rule;
    use std::sync::Arc;

    fn cx_refined(mesh: Mesh, rounds: usize) -> Complex {
        let mut m = mesh;
        for _ in 0..rounds {
            m = m.uniform_refine().0;
        }
        Complex::build(Arc::new(m)).unwrap()
    }

    fn smooth_f(p: [f64; 2]) -> [f64; 2] {
        [
            (std::f64::consts::PI * p[0]).sin() * p[1] + 1.0,
            p[0] * p[0] - 0.5 * p[1],
        ]
    }

    #[test]
    fn full_matrix_is_bitwise_symmetric_for_both_variants() {
        let c = cx_refined(Mesh::l_shape_fan(), 2);
        for variant in [Variant::Hodge, Variant::Maxwell] {
            let sys = assemble(&c, smooth_f, variant, 4);
            assert_eq!(sys.full_matrix().symmetry_error(), 0.0);
        }
        // The maxwell variant stores nothing in the (0,0) block.
        let sys = assemble(&c, smooth_f, Variant::Maxwell, 4);
        let full = sys.full_matrix();
        for r in 0..c.dim(0) {
            let (cols, _) = full.row(r);
            assert!(cols.iter().all(|&col| col >= c.dim(0)));
        }
    }

    #[test]
    fn zero_source_gives_zero_solution() {
        let c = cx_refined(Mesh::criss_cross(), 2);
        let sys = assemble(&c, |_| [0.0, 0.0], Variant::Hodge, 2);
        assert!(sys.rhs().iter().all(|&v| v == 0.0));
        let sol = solve(&sys, 1e-12).unwrap();
        assert!(sol.sigma.data.iter().all(|&v| v == 0.0));
        assert!(sol.u.data.iter().all(|&v| v == 0.0));
        assert_eq!(sol.relative_residual, 0.0);
        assert_eq!(graph_norm(&c, &sol.sigma, &sol.u), 0.0);
    }

    #[test]
    fn load_moments_match_high_degree_quadrature_oracle() {
        // Constant source: the assembled moments (low quadrature degree)
        // must agree with an independent high-degree quadrature of the basis
        // functions.
        let c = cx_refined(Mesh::criss_cross_2x2(), 1);
        let f = |_: [f64; 2]| [1.0, 0.0];
        let sys = assemble(&c, f, Variant::Hodge, 2);
        let rule = triangle_rule(8);
        let mut oracle = vec![0.0; c.dim(1)];
        for t in 0..c.mesh().n_triangles() {
            let pts = c.mesh().points(t);
            for k in 0..3 {
                let Some(d) = c.dof1(c.mesh().tri_edges(t)[k]) else {
                    continue;
                };
                let mut basis = c.zero_form(1);
                basis.data[d] = 1.0;
                oracle[d] += rule
                    .map_to(pts[0], pts[1], pts[2])
                    .iter()
                    .map(|&(p, w)| {
                        let wv = c.eval_1form(&basis, t, p);
                        w * wv[0]
                    })
                    .sum::<f64>();
            }
        }
        let scale = oracle.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        for (got, want) in sys.rhs().iter().zip(&oracle) {
            assert!((got - want).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn hodge_solve_meets_residual_and_codifferential_identity() {
        let c = cx_refined(Mesh::criss_cross(), 3);
        let sys = assemble(&c, smooth_f, Variant::Hodge, 6);
        let sol = solve(&sys, 1e-12).unwrap();
        assert!(sol.relative_residual <= 1e-12);
        // σ_h equals the discrete codifferential of u_h.
        let delta_u = c.discrete_codifferential(&sol.u).unwrap();
        let diff = delta_u.minus(&sol.sigma);
        assert!(
            c.norm(&diff) <= 1e-10 * c.norm(&sol.sigma).max(1e-300),
            "codifferential identity violated: {:e}",
            c.norm(&diff) / c.norm(&sol.sigma)
        );
        assert!(sol.graph_norm(&c) > 0.0);
        assert!(sol.divergence_violation.is_none());
    }

    #[test]
    fn maxwell_solve_constrains_u_and_reports_incompatibility() {
        let c = cx_refined(Mesh::criss_cross(), 3);
        // smooth_f is not divergence-free, so the multiplier absorbs a
        // nonzero gradient component and the violation must be visible.
        let sys = assemble(&c, smooth_f, Variant::Maxwell, 6);
        let sol = solve(&sys, 1e-12).unwrap();
        assert!(sol.relative_residual <= 1e-12);
        let delta_u = c.discrete_codifferential(&sol.u).unwrap();
        assert!(c.norm(&delta_u) <= 1e-9 * c.norm(&sol.u));
        let viol = sol.divergence_violation.expect("maxwell reports violation");
        assert!(viol.relative() > 1e-2, "violation {:e}", viol.relative());

        // Projecting the load removes the incompatibility without changing
        // the constrained component u.
        let mut projected = assemble(&c, smooth_f, Variant::Maxwell, 6);
        let removed = projected.project_rhs().unwrap();
        assert!((removed.violation - viol.violation).abs() <= 1e-10 * viol.violation);
        assert!(projected.rhs_projected());
        let sol2 = solve(&projected, 1e-12).unwrap();
        let after = sol2.divergence_violation.unwrap();
        assert!(
            after.relative() <= 1e-10,
            "projection should leave a compatible load, got {:e}",
            after.relative()
        );
        let du = sol2.u.minus(&sol.u);
        assert!(c.norm(&du) <= 1e-9 * c.norm(&sol.u));
        // With a compatible load the multiplier vanishes.
        assert!(c.norm(&sol2.sigma) <= 1e-9 * c.norm(&sol.sigma).max(1e-300));
    }

    #[test]
    fn elimination_agrees_with_krylov_solve_of_the_assembled_system() {
        // Dual-route check: the structured elimination and a matrix-only
        // Krylov method must produce the same solution.
        let c = cx_refined(Mesh::criss_cross(), 2);
        let sys = assemble(&c, smooth_f, Variant::Hodge, 5);
        let sol = solve(&sys, 1e-12).unwrap();
        let full = sys.full_matrix();
        let rhs = sys.full_rhs();
        let n = rhs.len();
        let (x, relres, _) = minres(n, |v| full.matvec(v), &rhs, 1e-12, 200 * n);
        assert!(relres <= 1e-10, "krylov reference did not converge: {relres:e}");
        let n0 = c.dim(0);
        let sigma_ref = c.form_from(0, x[..n0].to_vec()).unwrap();
        let u_ref = c.form_from(1, x[n0..].to_vec()).unwrap();
        let ds = sol.sigma.minus(&sigma_ref);
        let du = sol.u.minus(&u_ref);
        assert!(c.norm(&ds) <= 1e-7 * c.norm(&sigma_ref));
        assert!(c.norm(&du) <= 1e-7 * c.norm(&u_ref));
    }

    #[test]
    fn graph_norm_matches_elementwise_quadrature() {
        let c = cx_refined(Mesh::criss_cross_2x2(), 2);
        let sys = assemble(&c, smooth_f, Variant::Hodge, 6);
        let sol = solve(&sys, 1e-12).unwrap();
        let gn = graph_norm(&c, &sol.sigma, &sol.u);
        // Independent route: integrate |grad σ_h|² + |rot u_h|² element by
        // element (both integrands are constant per triangle, degree-2 rule
        // is more than enough).
        let rule = triangle_rule(2);
        let mut acc = 0.0;
        for t in 0..c.mesh().n_triangles() {
            let g = c.eval_0form_gradient(&sol.sigma, t);
            let r = c.eval_rot(&sol.u, t);
            let pts = c.mesh().points(t);
            acc += rule
                .map_to(pts[0], pts[1], pts[2])
                .iter()
                .map(|&(_, w)| w * (g[0] * g[0] + g[1] * g[1] + r * r))
                .sum::<f64>();
        }
        let independent = acc.sqrt();
        assert!(
            (gn - independent).abs() <= 1e-12 * independent,
            "{gn} vs {independent}"
        );
    }

    #[test]
    fn tolerance_precondition_is_enforced() {
        let c = cx_refined(Mesh::criss_cross(), 1);
        let sys = assemble(&c, smooth_f, Variant::Hodge, 2);
        assert!(matches!(
            solve(&sys, 0.0),
            Err(SaddleError::InvalidTolerance(_))
        ));
        assert!(matches!(
            solve(&sys, 1e-5),
            Err(SaddleError::InvalidTolerance(_))
        ));
    }
}
