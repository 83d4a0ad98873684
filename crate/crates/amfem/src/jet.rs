//! Fourth-order forward-mode derivatives in two variables.
//!
//! A [`Jet4`] carries the truncated Taylor expansion of a scalar function at
//! a point: all normalized coefficients `c[i][j] = ∂_x^i ∂_y^j f / (i! j!)`
//! with `i + j <= 4`. Arithmetic on jets propagates derivatives exactly, so
//! benchmark problems defined through scalar potentials obtain their vector
//! fields, divergences, and source terms from a single code path instead of
//! hand-differentiated formulas.

use std::ops::{Add, Mul, Neg, Sub};

const ORDER: usize = 4;

/// Truncated 2D Taylor expansion of order 4 (15 active coefficients).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet4 {
    /// `c[i][j]` is the normalized coefficient of `Δx^i Δy^j`.
    pub c: [[f64; ORDER + 1]; ORDER + 1],
}

impl Jet4 {
    pub fn zero() -> Self {
        Jet4 {
            c: [[0.0; ORDER + 1]; ORDER + 1],
        }
    }

    pub fn constant(v: f64) -> Self {
        let mut j = Self::zero();
        j.c[0][0] = v;
        j
    }

    /// The coordinate function `x` expanded at `x0`.
    pub fn var_x(x0: f64) -> Self {
        let mut j = Self::constant(x0);
        j.c[1][0] = 1.0;
        j
    }

    /// The coordinate function `y` expanded at `y0`.
    pub fn var_y(y0: f64) -> Self {
        let mut j = Self::constant(y0);
        j.c[0][1] = 1.0;
        j
    }

    pub fn value(&self) -> f64 {
        self.c[0][0]
    }
    pub fn dx(&self) -> f64 {
        self.c[1][0]
    }
    pub fn dy(&self) -> f64 {
        self.c[0][1]
    }
    pub fn dxx(&self) -> f64 {
        2.0 * self.c[2][0]
    }
    pub fn dxy(&self) -> f64 {
        self.c[1][1]
    }
    pub fn dyy(&self) -> f64 {
        2.0 * self.c[0][2]
    }
    pub fn laplacian(&self) -> f64 {
        self.dxx() + self.dyy()
    }
    pub fn grad(&self) -> [f64; 2] {
        [self.dx(), self.dy()]
    }

    /// Gradient of the Laplacian, `(∂_x Δf, ∂_y Δf)`.
    pub fn grad_laplacian(&self) -> [f64; 2] {
        let fxxx = 6.0 * self.c[3][0];
        let fxyy = 2.0 * self.c[1][2];
        let fxxy = 2.0 * self.c[2][1];
        let fyyy = 6.0 * self.c[0][3];
        [fxxx + fxyy, fxxy + fyyy]
    }

    /// `Δ(Δf)`.
    pub fn bilaplacian(&self) -> f64 {
        24.0 * self.c[4][0] + 8.0 * self.c[2][2] + 24.0 * self.c[0][4]
    }

    /// Compose with a univariate function `g` given its derivatives
    /// `derivs = [g, g', g'', g''', g'''']` evaluated at `self.value()`.
    pub fn compose(&self, derivs: [f64; ORDER + 1]) -> Jet4 {
        let mut t = *self;
        t.c[0][0] = 0.0;
        // Horner evaluation of the Taylor polynomial of g in t.
        let factorial = [1.0, 1.0, 2.0, 6.0, 24.0];
        let mut out = Jet4::constant(derivs[ORDER] / factorial[ORDER]);
        for k in (0..ORDER).rev() {
            out = out * t + Jet4::constant(derivs[k] / factorial[k]);
        }
        out
    }

    pub fn sin(&self) -> Jet4 {
        let (s, c) = self.value().sin_cos();
        self.compose([s, c, -s, -c, s])
    }

    pub fn cos(&self) -> Jet4 {
        let (s, c) = self.value().sin_cos();
        self.compose([c, -s, -c, s, c])
    }

    /// Integer power by repeated multiplication.
    pub fn powi(&self, n: u32) -> Jet4 {
        let mut out = Jet4::constant(1.0);
        for _ in 0..n {
            out = out * *self;
        }
        out
    }

    /// Expansion of `Im(z^alpha)` at `(x0, y0)` with `z = x + i y` and the
    /// branch `arg z` in `[0, 2π)`. For non-integer `alpha` the point must
    /// stay away from the origin. `r^alpha sin(alpha θ)` in polar terms.
    pub fn harmonic_im(x0: f64, y0: f64, alpha: f64) -> Jet4 {
        let r0 = x0.hypot(y0);
        assert!(r0 > 0.0, "harmonic expansion undefined at the origin");
        let mut theta0 = y0.atan2(x0);
        if theta0 < 0.0 {
            theta0 += 2.0 * std::f64::consts::PI;
        }
        let mut out = Jet4::zero();
        // binom(alpha, k) accumulated incrementally.
        let mut binom_alpha = 1.0;
        for k in 0..=ORDER {
            if k > 0 {
                binom_alpha *= (alpha - (k as f64 - 1.0)) / k as f64;
            }
            // coef = binom(alpha, k) * z0^(alpha - k) as (re, im)
            let mag = binom_alpha * r0.powf(alpha - k as f64);
            let ang = (alpha - k as f64) * theta0;
            let (coef_re, coef_im) = (mag * ang.cos(), mag * ang.sin());
            // (Δz)^k = Σ_j binom(k, j) i^j Δx^(k-j) Δy^j
            let mut binom_k = 1.0;
            for j in 0..=k {
                if j > 0 {
                    binom_k *= (k - j + 1) as f64 / j as f64;
                }
                // i^j cycles through (1, i, -1, -i)
                let (ij_re, ij_im) = match j % 4 {
                    0 => (1.0, 0.0),
                    1 => (0.0, 1.0),
                    2 => (-1.0, 0.0),
                    _ => (0.0, -1.0),
                };
                let im_part = coef_re * ij_im + coef_im * ij_re;
                out.c[k - j][j] += binom_k * im_part;
            }
        }
        out
    }
}

impl Add for Jet4 {
    type Output = Jet4;
    fn add(self, rhs: Jet4) -> Jet4 {
        let mut out = self;
        for i in 0..=ORDER {
            for j in 0..=ORDER - i {
                out.c[i][j] += rhs.c[i][j];
            }
        }
        out
    }
}

impl Sub for Jet4 {
    type Output = Jet4;
    fn sub(self, rhs: Jet4) -> Jet4 {
        let mut out = self;
        for i in 0..=ORDER {
            for j in 0..=ORDER - i {
                out.c[i][j] -= rhs.c[i][j];
            }
        }
        out
    }
}

impl Neg for Jet4 {
    type Output = Jet4;
    fn neg(self) -> Jet4 {
        self * -1.0
    }
}

impl Mul for Jet4 {
    type Output = Jet4;
    fn mul(self, rhs: Jet4) -> Jet4 {
        let mut out = Jet4::zero();
        for i in 0..=ORDER {
            for j in 0..=ORDER - i {
                let a = self.c[i][j];
                if a == 0.0 {
                    continue;
                }
                for k in 0..=ORDER - i - j {
                    for l in 0..=ORDER - i - j - k {
                        out.c[i + k][j + l] += a * rhs.c[k][l];
                    }
                }
            }
        }
        out
    }
}

impl Mul<f64> for Jet4 {
    type Output = Jet4;
    fn mul(self, s: f64) -> Jet4 {
        let mut out = self;
        for i in 0..=ORDER {
            for j in 0..=ORDER - i {
                out.c[i][j] *= s;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval<F: Fn(Jet4, Jet4) -> Jet4>(f: &F, x: f64, y: f64) -> Jet4 {
        f(Jet4::var_x(x), Jet4::var_y(y))
    }

    /// Central finite differences of the jet's value field. First
    /// derivatives use a smaller step than second derivatives to balance
    /// truncation against roundoff.
    fn fd_check<F: Fn(Jet4, Jet4) -> Jet4>(f: F, x: f64, y: f64, tol1: f64, tol2: f64) {
        let j = eval(&f, x, y);
        let v = |x: f64, y: f64| eval(&f, x, y).value();
        let h = 1e-6;
        let dx = (v(x + h, y) - v(x - h, y)) / (2.0 * h);
        let dy = (v(x, y + h) - v(x, y - h)) / (2.0 * h);
        let h = 1e-4;
        let dxx = (v(x + h, y) - 2.0 * v(x, y) + v(x - h, y)) / (h * h);
        let dyy = (v(x, y + h) - 2.0 * v(x, y) + v(x, y - h)) / (h * h);
        let dxy = (v(x + h, y + h) - v(x + h, y - h) - v(x - h, y + h) + v(x - h, y - h))
            / (4.0 * h * h);
        let scale = 1.0 + j.value().abs();
        assert!((j.dx() - dx).abs() / scale < tol1, "dx: {} vs {}", j.dx(), dx);
        assert!((j.dy() - dy).abs() / scale < tol1, "dy: {} vs {}", j.dy(), dy);
        assert!(
            (j.dxx() - dxx).abs() / scale < tol2,
            "dxx: {} vs {}",
            j.dxx(),
            dxx
        );
        assert!(
            (j.dyy() - dyy).abs() / scale < tol2,
            "dyy: {} vs {}",
            j.dyy(),
            dyy
        );
        assert!(
            (j.dxy() - dxy).abs() / scale < tol2,
            "dxy: {} vs {}",
            j.dxy(),
            dxy
        );
    }

    #[test]
    fn polynomial_jet_matches_symbolic_derivatives() {
        // f = x^3 y + 2 x y^2 at (1.5, -0.5)
        let f = |x: Jet4, y: Jet4| x.powi(3) * y + x * y.powi(2) * 2.0;
        let j = eval(&f, 1.5, -0.5);
        assert!((j.value() - (1.5f64.powi(3) * -0.5 + 2.0 * 1.5 * 0.25)).abs() < 1e-14);
        assert!((j.dx() - (3.0 * 1.5f64.powi(2) * -0.5 + 2.0 * 0.25)).abs() < 1e-14);
        assert!((j.dy() - (1.5f64.powi(3) + 4.0 * 1.5 * -0.5)).abs() < 1e-14);
        // fourth derivative: ∂x^3 ∂y f = 6
        assert!((6.0 * j.c[3][1] - 6.0).abs() < 1e-13);
    }

    #[test]
    fn trig_jets_match_finite_differences() {
        let pi = std::f64::consts::PI;
        let f = move |x: Jet4, y: Jet4| (x * pi).sin() * (y * pi).sin() + (x * pi).cos() * 0.3;
        fd_check(f, 0.37, 0.61, 1e-9, 1e-6);
        fd_check(f, 0.9, 0.13, 1e-9, 1e-6);
    }

    #[test]
    fn harmonic_branch_power_is_harmonic_and_matches_polar_form() {
        let alpha = 2.0 / 3.0;
        for &(x, y) in &[(0.4, 0.3), (-0.5, 0.2), (-0.3, -0.6), (0.7, -0.0001)] {
            let j = Jet4::harmonic_im(x, y, alpha);
            let r = x.hypot(y);
            let mut th = y.atan2(x);
            if th < 0.0 {
                th += 2.0 * std::f64::consts::PI;
            }
            let exact = r.powf(alpha) * (alpha * th).sin();
            assert!((j.value() - exact).abs() < 1e-13, "value at ({x},{y})");
            assert!(
                j.laplacian().abs() < 1e-10 * (1.0 + r.powf(alpha - 2.0)),
                "harmonicity at ({x},{y}): {}",
                j.laplacian()
            );
        }
    }

    #[test]
    fn harmonic_integer_power_reduces_to_polynomial() {
        // Im(z^2) = 2xy
        let j = Jet4::harmonic_im(0.8, 0.35, 2.0);
        assert!((j.value() - 2.0 * 0.8 * 0.35).abs() < 1e-13);
        assert!((j.dx() - 2.0 * 0.35).abs() < 1e-13);
        assert!((j.dy() - 2.0 * 0.8).abs() < 1e-13);
        assert!((j.dxy() - 2.0).abs() < 1e-13);
        assert!(j.dxx().abs() < 1e-13);
    }

    #[test]
    fn composite_singular_jet_matches_finite_differences() {
        let f = |x: Jet4, y: Jet4| {
            let p = (Jet4::constant(1.0) - x * x) * (Jet4::constant(1.0) - y * y);
            Jet4::harmonic_im(x.value(), y.value(), 2.0 / 3.0) * p.powi(3) * (x * x + y * y)
        };
        fd_check(f, -0.45, 0.3, 1e-8, 1e-5);
        fd_check(f, 0.25, -0.002, 1e-7, 1e-4);
    }

    #[test]
    fn third_and_fourth_order_accessors_are_consistent() {
        // f = x^4: Δf = 12x^2, ∂_x Δf = 24x, ΔΔf = 24
        let j = Jet4::var_x(2.0).powi(4);
        assert!((j.laplacian() - 48.0).abs() < 1e-12);
        assert!((j.grad_laplacian()[0] - 48.0).abs() < 1e-12);
        assert!((j.bilaplacian() - 24.0).abs() < 1e-12);
    }
}
