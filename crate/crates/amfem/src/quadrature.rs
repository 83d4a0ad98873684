//! Gauss quadrature on segments and triangles.
//!
//! Segment rules are classical Gauss–Legendre; triangle rules are obtained
//! by collapsing a tensor Gauss–Legendre rule on the unit square onto the
//! reference triangle (Duffy transform), which is exact for any requested
//! polynomial degree.

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
///
/// Nodes are computed by Newton iteration on the Legendre polynomial
/// `P_n`; the rule integrates polynomials of degree `2n - 1` exactly.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1, "quadrature rule needs at least one point");
    let mut rule = Vec::with_capacity(n);
    for i in 0..n {
        // Chebyshev-based initial guess, then Newton on P_n.
        let mut x = -(std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        rule.push((x, w));
    }
    rule
}

/// Value and derivative of the Legendre polynomial `P_n` at `x`.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Quadrature rule on the reference segment `[0, 1]`.
#[derive(Debug, Clone)]
pub struct SegmentRule {
    /// `(t, w)` pairs with `t` in `[0, 1]`; weights sum to 1.
    pub points: Vec<(f64, f64)>,
    pub degree: usize,
}

/// Rule on `[0, 1]` exact for polynomials of degree `degree`.
pub fn segment_rule(degree: usize) -> SegmentRule {
    let n = degree / 2 + 1;
    let points = gauss_legendre(n)
        .into_iter()
        .map(|(x, w)| (0.5 * (x + 1.0), 0.5 * w))
        .collect();
    SegmentRule { points, degree }
}

impl SegmentRule {
    /// Physical points and weights along the segment from `a` to `b`.
    /// Weights sum to the segment length.
    pub fn map_to(&self, a: [f64; 2], b: [f64; 2]) -> Vec<([f64; 2], f64)> {
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        self.points
            .iter()
            .map(|&(t, w)| {
                (
                    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])],
                    w * len,
                )
            })
            .collect()
    }

    /// Integrate a scalar function along the segment from `a` to `b`.
    pub fn integrate(&self, a: [f64; 2], b: [f64; 2], f: impl Fn(f64, f64) -> f64) -> f64 {
        self.map_to(a, b)
            .into_iter()
            .map(|(p, w)| w * f(p[0], p[1]))
            .sum()
    }
}

/// Quadrature rule on the reference triangle `{(x, y) : x, y >= 0, x + y <= 1}`.
#[derive(Debug, Clone)]
pub struct TriangleRule {
    /// `([x, y], w)` pairs in reference coordinates; weights sum to 1/2.
    pub points: Vec<([f64; 2], f64)>,
    pub degree: usize,
}

/// Rule on the reference triangle exact for total degree `degree`.
pub fn triangle_rule(degree: usize) -> TriangleRule {
    // Duffy map (u, v) -> (u, v(1 - u)) with Jacobian (1 - u) raises the
    // u-direction degree by one, hence the +2.
    let n = (degree + 2).div_ceil(2);
    let gl: Vec<(f64, f64)> = gauss_legendre(n)
        .into_iter()
        .map(|(x, w)| (0.5 * (x + 1.0), 0.5 * w))
        .collect();
    let mut points = Vec::with_capacity(n * n);
    for &(u, wu) in &gl {
        for &(v, wv) in &gl {
            points.push(([u, v * (1.0 - u)], wu * wv * (1.0 - u)));
        }
    }
    TriangleRule { points, degree }
}

impl TriangleRule {
    /// Physical points and weights on the triangle `(a, b, c)`.
    /// Weights sum to the (unsigned) triangle area.
    pub fn map_to(&self, a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> Vec<([f64; 2], f64)> {
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        let scale = det.abs();
        self.points
            .iter()
            .map(|&([x, y], w)| {
                (
                    [
                        a[0] + x * (b[0] - a[0]) + y * (c[0] - a[0]),
                        a[1] + x * (b[1] - a[1]) + y * (c[1] - a[1]),
                    ],
                    w * scale,
                )
            })
            .collect()
    }

    /// Integrate a scalar function over the triangle `(a, b, c)`.
    pub fn integrate(
        &self,
        a: [f64; 2],
        b: [f64; 2],
        c: [f64; 2],
        f: impl Fn(f64, f64) -> f64,
    ) -> f64 {
        self.map_to(a, b, c)
            .into_iter()
            .map(|(p, w)| w * f(p[0], p[1]))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_legendre_integrates_monomials_exactly() {
        for n in 1..=20 {
            let rule = gauss_legendre(n);
            for k in 0..=(2 * n - 1) {
                let quad: f64 = rule.iter().map(|&(x, w)| w * x.powi(k as i32)).sum();
                let exact = if k % 2 == 0 {
                    2.0 / (k as f64 + 1.0)
                } else {
                    0.0
                };
                assert!(
                    (quad - exact).abs() < 1e-13,
                    "n={n} k={k}: {quad} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn gauss_legendre_weights_are_positive_and_sum_to_two() {
        for n in 1..=32 {
            let rule = gauss_legendre(n);
            assert!(rule.iter().all(|&(_, w)| w > 0.0));
            let total: f64 = rule.iter().map(|&(_, w)| w).sum();
            assert_relative_eq!(total, 2.0, epsilon = 1e-13);
        }
    }

    /// Exact integral of x^a y^b over the reference triangle: a! b! / (a+b+2)!.
    fn reference_monomial_integral(a: u32, b: u32) -> f64 {
        let fact = |m: u32| (1..=m as u64).product::<u64>() as f64;
        fact(a) * fact(b) / fact(a + b + 2)
    }

    #[test]
    fn triangle_rule_is_exact_up_to_requested_degree() {
        for degree in 0..=12 {
            let rule = triangle_rule(degree);
            for a in 0..=degree as u32 {
                for b in 0..=(degree as u32 - a) {
                    let quad: f64 = rule
                        .points
                        .iter()
                        .map(|&([x, y], w)| w * x.powi(a as i32) * y.powi(b as i32))
                        .sum();
                    let exact = reference_monomial_integral(a, b);
                    assert!(
                        (quad - exact).abs() < 1e-14,
                        "degree={degree} a={a} b={b}: {quad} vs {exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn mapped_triangle_rule_reproduces_area_and_centroid() {
        let (a, b, c): ([f64; 2], [f64; 2], [f64; 2]) = ([0.3, -0.2], [1.7, 0.4], [0.5, 2.1]);
        let rule = triangle_rule(2);
        let area_t = {
            let det = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
            det.abs() / 2.0
        };
        let quad_area: f64 = rule.map_to(a, b, c).iter().map(|&(_, w)| w).sum();
        assert_relative_eq!(quad_area, area_t, epsilon = 1e-14);
        let cx = rule.integrate(a, b, c, |x, _| x) / quad_area;
        assert_relative_eq!(cx, (a[0] + b[0] + c[0]) / 3.0, epsilon = 1e-13);
    }

    #[test]
    fn segment_rule_integrates_polynomials_along_physical_edges() {
        let rule = segment_rule(5);
        // integral of x^2 along the segment (0,0)-(2,0) is 8/3 * ... times arclength element
        let val = rule.integrate([0.0, 0.0], [2.0, 0.0], |x, _| x * x);
        assert_relative_eq!(val, 8.0 / 3.0, epsilon = 1e-13);
        // diagonal segment with mixed integrand
        let val = rule.integrate([0.0, 0.0], [1.0, 1.0], |x, y| x * y);
        assert_relative_eq!(val, 2.0_f64.sqrt() / 3.0, epsilon = 1e-13);
    }
}
