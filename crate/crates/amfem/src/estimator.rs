//! Residual a-posteriori error indicators and data oscillation.
//!
//! For a discrete pair `(σ_h, u_h)` and source `f`, each triangle `K`
//! receives (with `h_K = |K|^{1/2}`, `h_e = |e|`, and `n_e` the unit normal
//! of the globally oriented edge):
//!
//! ```text
//! η²_σ(K)  =  h_K² ∥div(f − grad σ_h)∥²_K
//!           + ½ Σ_{e ⊂ ∂K interior}  h_e ∥[(f − grad σ_h)·n_e]∥²_e
//! η²(K)    =  η²_σ(K)
//!           + h_K² ∥f − grad σ_h − rot*(rot u_h)∥²_K
//!           + ½ Σ_{e ⊂ ∂K interior}  h_e ∥[rot u_h]∥²_e
//! ```
//!
//! Every interior-edge term is split half/half between the two adjacent
//! triangles, so the element values sum to the global estimator with each
//! edge counted once. Boundary edges carry no jump terms: the reliability
//! argument tests against fields with vanishing traces.
//!
//! At lowest order the divergence of the element-wise constant `grad σ_h`
//! and the rotation adjoint of the element-wise constant `rot u_h` vanish;
//! both enter the formulas as the (zero) derivatives of the actual discrete
//! representations rather than being dropped from the expressions.
//!
//! Source fields are point evaluators, hence single-valued on edges: a
//! source jump across an element interface is not representable, and the
//! face terms see only the discrete jumps. All catalog sources are
//! continuous, so nothing is lost.

use crate::feec::{barycentric, Complex};
use crate::problems::SourceField;
use crate::quadrature::{segment_rule, triangle_rule};
use crate::saddle::MixedSolution;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("estimator is zero but the supplied error {error:e} is not; reliability violated")]
    ReliabilityViolation { error: f64 },
}

/// Per-element indicator values (energy-squared units).
#[derive(Debug, Clone)]
pub struct IndicatorField {
    mesh_id: u64,
    pub eta_total_sq: Vec<f64>,
    pub eta_sigma_sq: Vec<f64>,
    pub osc_sq: Vec<f64>,
    pub quad_degree: usize,
}

impl IndicatorField {
    /// Assembles an indicator field from raw per-element values (one entry
    /// per triangle, all finite and non-negative).
    pub fn from_values(
        mesh: &crate::mesh::Mesh,
        eta_total_sq: Vec<f64>,
        eta_sigma_sq: Vec<f64>,
        osc_sq: Vec<f64>,
        quad_degree: usize,
    ) -> IndicatorField {
        let nt = mesh.n_triangles();
        assert!(
            eta_total_sq.len() == nt && eta_sigma_sq.len() == nt && osc_sq.len() == nt,
            "one indicator value per triangle"
        );
        assert!(
            eta_total_sq
                .iter()
                .chain(&eta_sigma_sq)
                .chain(&osc_sq)
                .all(|v| v.is_finite() && *v >= 0.0),
            "indicator values must be finite and non-negative"
        );
        IndicatorField {
            mesh_id: mesh.id(),
            eta_total_sq,
            eta_sigma_sq,
            osc_sq,
            quad_degree,
        }
    }

    pub fn mesh_id(&self) -> u64 {
        self.mesh_id
    }

    pub fn n_elements(&self) -> usize {
        self.eta_total_sq.len()
    }

    /// Global squared estimator `η²` (plain sum over elements).
    pub fn global_eta_sq(&self) -> f64 {
        self.eta_total_sq.iter().sum()
    }

    /// Global squared scalar-part estimator `η²_σ`.
    pub fn global_eta_sigma_sq(&self) -> f64 {
        self.eta_sigma_sq.iter().sum()
    }

    pub fn global_osc_sq(&self) -> f64 {
        self.osc_sq.iter().sum()
    }

    /// CSV dump `element_id,eta_total_sq,eta_sigma_sq,osc_sq`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("element_id,eta_total_sq,eta_sigma_sq,osc_sq\n");
        for k in 0..self.n_elements() {
            out.push_str(&format!(
                "{},{:e},{:e},{:e}\n",
                k, self.eta_total_sq[k], self.eta_sigma_sq[k], self.osc_sq[k]
            ));
        }
        out
    }
}

/// Computes the residual indicators for a solved pair, including the data
/// oscillation. `quad_degree` (≥ 2) is used for all volume and edge
/// quadratures of the source.
pub fn estimate(
    cx: &Complex,
    sol: &MixedSolution,
    f: &SourceField,
    quad_degree: usize,
) -> IndicatorField {
    assert!(quad_degree >= 2, "estimator quadrature degree must be >= 2");
    let mesh = cx.mesh();
    let nt = mesh.n_triangles();
    let vol_rule = triangle_rule(quad_degree);
    let seg_rule = segment_rule(quad_degree);

    let grad_sigma: Vec<[f64; 2]> = (0..nt)
        .map(|t| cx.eval_0form_gradient(&sol.sigma, t))
        .collect();
    let rot_u: Vec<f64> = (0..nt).map(|t| cx.eval_rot(&sol.u, t)).collect();
    // Element-wise derivatives of the discrete parts: the divergence of a
    // constant gradient and the rotation adjoint of a constant rotation are
    // identically zero at lowest order.
    let div_grad_sigma = vec![0.0f64; nt];
    let rot_star_rot_u = vec![[0.0f64; 2]; nt];

    let mut eta_sigma_sq = vec![0.0; nt];
    let mut extra_sq = vec![0.0; nt];

    for t in 0..nt {
        let hk_sq = mesh.area(t);
        let pts = mesh.points(t);
        let g = grad_sigma[t];
        let mut vol_sigma = 0.0;
        let mut vol_total = 0.0;
        for (p, w) in vol_rule.map_to(pts[0], pts[1], pts[2]) {
            let fv = f.eval(p);
            let div_res = f.div(p) - div_grad_sigma[t];
            vol_sigma += w * div_res * div_res;
            let rx = fv[0] - g[0] - rot_star_rot_u[t][0];
            let ry = fv[1] - g[1] - rot_star_rot_u[t][1];
            vol_total += w * (rx * rx + ry * ry);
        }
        eta_sigma_sq[t] += hk_sq * vol_sigma;
        extra_sq[t] += hk_sq * vol_total;
    }

    for &e in mesh.interior_edges() {
        let [t0, t1] = mesh.edge_tris(e);
        let (t0, t1) = (t0.expect("interior edge"), t1.expect("interior edge"));
        let [lo, hi] = mesh.edge(e);
        let (a, b) = (mesh.vertex(lo), mesh.vertex(hi));
        let h_e = mesh.edge_length(e);
        let n = [(b[1] - a[1]) / h_e, -(b[0] - a[0]) / h_e];
        // The source is single-valued on the edge, so the jump of
        // (f − grad σ_h)·n reduces to the jump of the discrete gradients.
        let jump_grad =
            (grad_sigma[t1][0] - grad_sigma[t0][0]) * n[0] + (grad_sigma[t1][1] - grad_sigma[t0][1]) * n[1];
        let jump_rot = rot_u[t1] - rot_u[t0];
        let mut int_grad = 0.0;
        let mut int_rot = 0.0;
        for (_, w) in seg_rule.map_to(a, b) {
            int_grad += w * jump_grad * jump_grad;
            int_rot += w * jump_rot * jump_rot;
        }
        let half_sigma = 0.5 * h_e * int_grad;
        let half_rot = 0.5 * h_e * int_rot;
        eta_sigma_sq[t0] += half_sigma;
        eta_sigma_sq[t1] += half_sigma;
        extra_sq[t0] += half_rot;
        extra_sq[t1] += half_rot;
    }

    let eta_total_sq: Vec<f64> = eta_sigma_sq
        .iter()
        .zip(&extra_sq)
        .map(|(s, x)| s + x)
        .collect();
    let osc_sq = oscillation(cx, f, quad_degree);
    IndicatorField {
        mesh_id: mesh.id(),
        eta_total_sq,
        eta_sigma_sq,
        osc_sq,
        quad_degree,
    }
}

/// Element-wise data oscillation
/// `osc²(K) = h_K² (∥f − Q⁰f∥²_K + ∥div f − Q¹ div f∥²_K)` where `Q⁰` is the
/// L² projection onto constants per component and `Q¹` the L² projection
/// onto linear functions (the local spaces of the corresponding discrete
/// forms at lowest order).
pub fn oscillation(cx: &Complex, f: &SourceField, quad_degree: usize) -> Vec<f64> {
    assert!(quad_degree >= 2, "oscillation quadrature degree must be >= 2");
    let mesh = cx.mesh();
    let rule = triangle_rule(quad_degree);
    let mut osc = vec![0.0; mesh.n_triangles()];
    for t in 0..mesh.n_triangles() {
        let area = mesh.area(t);
        let pts = mesh.points(t);
        let mapped = rule.map_to(pts[0], pts[1], pts[2]);
        // Q⁰: component-wise mean of f.
        let mut mean = [0.0f64; 2];
        // Q¹: moments of div f against the barycentric basis.
        let mut moments = [0.0f64; 3];
        for &(p, w) in &mapped {
            let fv = f.eval(p);
            mean[0] += w * fv[0];
            mean[1] += w * fv[1];
            let lam = barycentric(&pts, p);
            let dv = f.div(p);
            for i in 0..3 {
                moments[i] += w * dv * lam[i];
            }
        }
        mean[0] /= area;
        mean[1] /= area;
        // Invert the barycentric mass matrix (|K|/12)(I + 1·1ᵀ):
        // inverse = (12/|K|)(I − 1·1ᵀ/4).
        let sum_m: f64 = moments.iter().sum();
        let coeff: Vec<f64> = moments
            .iter()
            .map(|m| 12.0 / area * (m - 0.25 * sum_m))
            .collect();
        let mut err_f = 0.0;
        let mut err_div = 0.0;
        for &(p, w) in &mapped {
            let fv = f.eval(p);
            err_f += w * ((fv[0] - mean[0]).powi(2) + (fv[1] - mean[1]).powi(2));
            let lam = barycentric(&pts, p);
            let proj = coeff[0] * lam[0] + coeff[1] * lam[1] + coeff[2] * lam[2];
            err_div += w * (f.div(p) - proj).powi(2);
        }
        osc[t] = area * (err_f + err_div);
    }
    osc
}

/// Effectivity index `err / η`. A zero estimator with a (numerically)
/// nonzero error violates reliability and is reported as an error.
pub fn effectivity(err: f64, ind: &IndicatorField) -> Result<f64, EstimatorError> {
    let eta = ind.global_eta_sq().sqrt();
    if eta > 0.0 {
        Ok(err / eta)
    } else if err.abs() <= 1e-14 {
        Ok(0.0)
    } else {
        Err(EstimatorError::ReliabilityViolation { error: err })
    }
}
