//! Adaptive mixed finite elements for the Hodge Laplacian on 2D polygonal domains.
//!
//! The crate assembles the lowest-order discrete de Rham complex
//! (continuous piecewise linears → lowest-order edge elements → piecewise
//! constants) on conforming triangle meshes, solves the mixed saddle-point
//! formulation of the Hodge Laplacian for 1-forms, drives an adaptive
//! refine–estimate–mark loop based on residual error indicators and
//! newest-vertex bisection, and ships a verification harness that measures
//! the structural identities (exact sequence, discrete orthogonality,
//! quasi-orthogonality, estimator contraction) the method relies on.
//!
//! Modules, bottom of the tower first:
//!
//! * [`quadrature`] — Gauss rules on segments and triangles.
//! * [`jet`] — second-order forward-mode derivatives used by the benchmark
//!   problems to produce consistent `f`, `div f`, and exact-solution data.
//! * [`sparse`] — CSR matrices, reverse Cuthill–McKee, simplicial LDLᵀ,
//!   and MINRES.
//! * [`mesh`] — conforming triangle meshes with newest-vertex bisection.
//! * [`feec`] — the discrete complex: incidence and mass matrices, Hodge
//!   decomposition, discrete codifferential, Poincaré constants.
//! * [`saddle`] — assembly and direct solution of the mixed system.
//! * [`estimator`] — residual error indicators and data oscillation.
//! * [`adaptivity`] — Dörfler marking, the adaptive loop, prolongation.
//! * [`problems`] — benchmark problem catalog with exact solutions.
//! * [`verify`] — theorem-check harness producing machine-readable reports.

pub mod adaptivity;
pub mod estimator;
pub mod feec;
pub mod jet;
pub mod mesh;
pub mod problems;
pub mod quadrature;
pub mod saddle;
pub mod sparse;
pub mod verify;
