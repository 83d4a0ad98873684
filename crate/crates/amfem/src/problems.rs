//! Benchmark problem library.
//!
//! Every problem with a known solution is built from scalar potentials
//! `(ψ, χ)` through fourth-order jets ([`crate::jet::Jet4`]): the exact pair
//! is `u = rot* ψ + grad χ` and `σ = −Δχ`, from which the source
//! `f = grad σ + rot*(rot u)` and its divergence follow by differentiating
//! the same jets. One code path produces values, derivatives, sources, and
//! divergences, so the strong-form identities hold by construction and are
//! cross-checked against finite differences in the tests.
//!
//! Catalog:
//! - `m1` — unit square, full mixed system, smooth solution with σ ≠ 0.
//! - `m2` — unit square, constrained (maxwell) variant, divergence-free
//!   solution from a stream function.
//! - `s1` — L-shape, smooth polynomial source, no closed-form solution.
//! - `s1m` — L-shape, maxwell variant, divergence-free trigonometric source.
//! - `s2` — L-shape, manufactured solution whose scalar part carries an
//!   `r^{1/6}` reentrant-corner singularity; drives adaptive-vs-uniform
//!   comparisons.

use crate::feec::Complex;
use crate::jet::Jet4;
use crate::mesh::Mesh;
use crate::quadrature::triangle_rule;
use crate::saddle::{MixedSolution, Variant};
use serde::Serialize;
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("problem has no exact solution; use a reference-mesh surrogate instead")]
    NoExactSolution,
    #[error("failed to read source samples: {0}")]
    Io(#[from] std::io::Error),
    #[error("sample file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("sample file contains no usable samples")]
    EmptySamples,
}

/// Computational domain of a benchmark problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    UnitSquare,
    LShape,
}

impl Domain {
    /// Coarsest conforming mesh on which the discrete complex is nontrivial
    /// (at least one interior vertex).
    pub fn initial_mesh(&self) -> Mesh {
        match self {
            Domain::UnitSquare => Mesh::criss_cross(),
            // The raw corner fan has no interior vertex, so start one
            // bisection round up.
            Domain::LShape => Mesh::l_shape_fan().uniform_refine().0,
        }
    }
}

pub type VecField = Arc<dyn Fn([f64; 2]) -> [f64; 2] + Send + Sync>;
pub type ScalarField = Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>;

/// Source term: vector field together with its element-wise divergence.
#[derive(Clone)]
pub struct SourceField {
    f: VecField,
    div_f: ScalarField,
}

impl SourceField {
    pub fn new(
        f: impl Fn([f64; 2]) -> [f64; 2] + Send + Sync + 'static,
        div_f: impl Fn([f64; 2]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        SourceField {
            f: Arc::new(f),
            div_f: Arc::new(div_f),
        }
    }

    pub fn eval(&self, p: [f64; 2]) -> [f64; 2] {
        (self.f)(p)
    }

    pub fn div(&self, p: [f64; 2]) -> f64 {
        (self.div_f)(p)
    }

    /// Closure view of the field values (for assembly routines).
    pub fn as_fn(&self) -> impl Fn([f64; 2]) -> [f64; 2] + '_ {
        move |p| (self.f)(p)
    }

    /// Piecewise-constant fit through point samples: each evaluation returns
    /// the value at the nearest sample (so the divergence of the fit is zero
    /// away from cell interfaces).
    pub fn from_samples(samples: Vec<([f64; 2], [f64; 2])>) -> Result<Self, ProblemError> {
        if samples.is_empty() {
            return Err(ProblemError::EmptySamples);
        }
        let table = Arc::new(samples);
        let lookup = {
            let table = Arc::clone(&table);
            move |p: [f64; 2]| {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (i, (q, _)) in table.iter().enumerate() {
                    let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
                    if d < best_d {
                        best_d = d;
                        best = i;
                    }
                }
                table[best].1
            }
        };
        Ok(SourceField {
            f: Arc::new(lookup),
            div_f: Arc::new(|_| 0.0),
        })
    }

    /// Loads samples from a CSV file with rows `x,y,fx,fy` (comments with
    /// `#`, blank lines skipped).
    pub fn from_csv(path: &Path) -> Result<Self, ProblemError> {
        let text = std::fs::read_to_string(path)?;
        let mut samples = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(ProblemError::Parse {
                    line,
                    msg: format!("expected 4 comma-separated values, got {}", fields.len()),
                });
            }
            let mut vals = [0.0f64; 4];
            for (k, field) in fields.iter().enumerate() {
                vals[k] = field.parse().map_err(|e| ProblemError::Parse {
                    line,
                    msg: format!("bad number '{field}': {e}"),
                })?;
            }
            samples.push(([vals[0], vals[1]], [vals[2], vals[3]]));
        }
        Self::from_samples(samples)
    }
}

/// Exact solution evaluators: the scalar part, its gradient, the vector
/// part, and its scalar rotation.
#[derive(Clone)]
pub struct ExactSolution {
    pub sigma: ScalarField,
    pub grad_sigma: VecField,
    pub u: VecField,
    pub rot_u: ScalarField,
}

/// A benchmark problem: domain, variant, source, and optional exact solution.
#[derive(Clone)]
pub struct Problem {
    pub name: &'static str,
    pub description: &'static str,
    pub domain: Domain,
    pub variant: Variant,
    pub source: SourceField,
    pub exact: Option<ExactSolution>,
}

/// Energy-error breakdown measured against an exact solution.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ErrorBreakdown {
    /// `√(sigma_part² + u_part²)`.
    pub energy: f64,
    /// `∥grad(σ − σ_h)∥`.
    pub sigma_part: f64,
    /// `∥rot(u − u_h)∥`.
    pub u_part: f64,
}

type JetFn = Arc<dyn Fn([f64; 2]) -> Jet4 + Send + Sync>;

/// Builds source and exact solution from potentials: `u = rot* ψ + grad χ`,
/// `σ = −Δχ`, `f = grad σ + rot*(rot u)`, `div f = −Δ²χ`, with
/// `rot* g = (∂_y g, −∂_x g)`.
fn potential_problem(psi: Option<JetFn>, chi: Option<JetFn>) -> (SourceField, ExactSolution) {
    let jets = move |p: [f64; 2]| -> (Jet4, Jet4) {
        let pj = psi.as_ref().map_or(Jet4::zero(), |f| f(p));
        let cj = chi.as_ref().map_or(Jet4::zero(), |f| f(p));
        (pj, cj)
    };
    let jets = Arc::new(jets);

    let j1 = Arc::clone(&jets);
    let sigma: ScalarField = Arc::new(move |p| -j1(p).1.laplacian());
    let j2 = Arc::clone(&jets);
    let grad_sigma: VecField = Arc::new(move |p| {
        let gl = j2(p).1.grad_laplacian();
        [-gl[0], -gl[1]]
    });
    let j3 = Arc::clone(&jets);
    let u: VecField = Arc::new(move |p| {
        let (pj, cj) = j3(p);
        [pj.dy() + cj.dx(), -pj.dx() + cj.dy()]
    });
    let j4 = Arc::clone(&jets);
    let rot_u: ScalarField = Arc::new(move |p| -j4(p).0.laplacian());
    let j5 = Arc::clone(&jets);
    let f: VecField = Arc::new(move |p| {
        let (pj, cj) = j5(p);
        let glc = cj.grad_laplacian();
        let glp = pj.grad_laplacian();
        // grad σ = −grad Δχ; rot*(rot u) = rot*(−Δψ) = (−∂_y Δψ, ∂_x Δψ).
        [-glc[0] - glp[1], -glc[1] + glp[0]]
    });
    let j6 = Arc::clone(&jets);
    let div_f: ScalarField = Arc::new(move |p| -j6(p).1.bilaplacian());

    (
        SourceField { f, div_f },
        ExactSolution {
            sigma,
            grad_sigma,
            u,
            rot_u,
        },
    )
}

fn sin_pi_jet(v: Jet4) -> Jet4 {
    (v * std::f64::consts::PI).sin()
}

/// Stream function `sin²(πx) sin²(πy)`: both the function and its gradient
/// vanish on the unit-square boundary, so `rot* ψ` has zero tangential trace.
fn bubble_stream(p: [f64; 2]) -> Jet4 {
    let sx = sin_pi_jet(Jet4::var_x(p[0]));
    let sy = sin_pi_jet(Jet4::var_y(p[1]));
    sx.powi(2) * sy.powi(2)
}

/// Scalar potential `sin(πx) sin(πy)`: zero trace, so both `σ = −Δχ` and the
/// tangential part of `grad χ` vanish on the unit-square boundary.
fn sine_potential(p: [f64; 2]) -> Jet4 {
    sin_pi_jet(Jet4::var_x(p[0])) * sin_pi_jet(Jet4::var_y(p[1]))
}

/// Singular scalar potential on the L-shape:
/// `χ = −Im(z^{2/3})³ · Im(z^{1/6}) · ((1−x²)(1−y²))³
///    = −r^{13/6} sin³(2θ/3) sin(θ/6) · ((1−x²)(1−y²))³`.
///
/// With `g(θ) = sin³(2θ/3) sin(θ/6)`, the leading part of `σ = −Δχ` is
/// `r^{1/6} ((169/36) g + g'')`: an `r^{1/6}` reentrant-corner singularity.
/// `g` vanishes to third order on both legs (θ = 0 and θ = 3π/2), so `g`,
/// `g'`, and `g''` are all zero there and `χ`, `∇χ`, and the trace of `σ`
/// vanish on the legs; the polynomial factor has triple zeros on the outer
/// boundary and does the same job there. No radial cutoff is used — a
/// cutoff would push the singular energy below mesh resolution and hide
/// the degraded uniform rate. The exponent is deliberately 1/6 rather than
/// the corner's natural 2/3: the smooth remainder produced by the bump
/// factor dominates an `r^{2/3}` profile until roughly 10⁷ unknowns, so
/// uniform refinement would look optimal at any testable size, while
/// `r^{1/6}` caps the uniform rate at `N^{-1/12}` and makes the degraded
/// rate visible within a few thousand unknowns.
fn singular_potential(p: [f64; 2]) -> Jet4 {
    let x = Jet4::var_x(p[0]);
    let y = Jet4::var_y(p[1]);
    let im23 = Jet4::harmonic_im(p[0], p[1], 2.0 / 3.0);
    let im13 = Jet4::harmonic_im(p[0], p[1], 1.0 / 6.0);
    let phi0 = im23.powi(3) * im13 * (-1.0);
    let one = Jet4::constant(1.0);
    let bump = (one - x * x) * (one - y * y);
    phi0 * bump.powi(3)
}

pub fn problem_catalog() -> Vec<Problem> {
    let mut catalog = Vec::new();

    {
        let (source, exact) = potential_problem(
            Some(Arc::new(bubble_stream)),
            Some(Arc::new(sine_potential)),
        );
        catalog.push(Problem {
            name: "m1",
            description: "unit square, smooth mixed solution with nonzero scalar part",
            domain: Domain::UnitSquare,
            variant: Variant::Hodge,
            source,
            exact: Some(exact),
        });
    }

    {
        let (source, exact) = potential_problem(Some(Arc::new(bubble_stream)), None);
        catalog.push(Problem {
            name: "m2",
            description: "unit square, divergence-free solution from a stream function",
            domain: Domain::UnitSquare,
            variant: Variant::Maxwell,
            source,
            exact: Some(exact),
        });
    }

    catalog.push(Problem {
        name: "s1",
        description: "L-shape, smooth polynomial source, no closed-form solution",
        domain: Domain::LShape,
        variant: Variant::Hodge,
        source: SourceField::new(
            |p| [p[0] * p[1] + 1.0, p[0] - p[1] * p[1]],
            |p| -p[1],
        ),
        exact: None,
    });

    catalog.push(Problem {
        name: "s1m",
        description: "L-shape, divergence-free trigonometric source, constrained variant",
        domain: Domain::LShape,
        variant: Variant::Maxwell,
        source: SourceField::new(
            |p| {
                let pi = std::f64::consts::PI;
                [
                    pi * (pi * p[0]).sin() * (pi * p[1]).cos(),
                    -pi * (pi * p[0]).cos() * (pi * p[1]).sin(),
                ]
            },
            |_| 0.0,
        ),
        exact: None,
    });

    {
        let (source, exact) = potential_problem(None, Some(Arc::new(singular_potential)));
        catalog.push(Problem {
            name: "s2",
            description: "L-shape, manufactured r^(1/6) corner singularity in the scalar part",
            domain: Domain::LShape,
            variant: Variant::Hodge,
            source,
            exact: Some(exact),
        });
    }

    catalog
}

pub fn by_name(name: &str) -> Option<Problem> {
    problem_catalog().into_iter().find(|p| p.name == name)
}

/// Energy error of a discrete solution against exact derivative evaluators,
/// by element-wise quadrature of the stated degree.
pub fn eval_error_against(
    cx: &Complex,
    sol: &MixedSolution,
    exact: &ExactSolution,
    quad_degree: usize,
) -> ErrorBreakdown {
    let rule = triangle_rule(quad_degree);
    let mesh = cx.mesh();
    let mut sigma_sq = 0.0;
    let mut u_sq = 0.0;
    for t in 0..mesh.n_triangles() {
        let pts = mesh.points(t);
        let gh = cx.eval_0form_gradient(&sol.sigma, t);
        let rh = cx.eval_rot(&sol.u, t);
        for (p, w) in rule.map_to(pts[0], pts[1], pts[2]) {
            let g = (exact.grad_sigma)(p);
            let r = (exact.rot_u)(p);
            sigma_sq += w * ((g[0] - gh[0]).powi(2) + (g[1] - gh[1]).powi(2));
            u_sq += w * (r - rh).powi(2);
        }
    }
    ErrorBreakdown {
        energy: (sigma_sq + u_sq).sqrt(),
        sigma_part: sigma_sq.sqrt(),
        u_part: u_sq.sqrt(),
    }
}

impl Problem {
    pub fn eval_error(
        &self,
        cx: &Complex,
        sol: &MixedSolution,
        quad_degree: usize,
    ) -> Result<ErrorBreakdown, ProblemError> {
        let exact = self.exact.as_ref().ok_or(ProblemError::NoExactSolution)?;
        Ok(eval_error_against(cx, sol, exact, quad_degree))
    }
}
