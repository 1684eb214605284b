//! Numerical quadrature on triangles, 1D intervals and boundary edges.
//!
//! Triangle rules are stored in barycentric coordinates with weights that sum
//! to one, so `integral over T ~= |T| * sum_i w_i f(x_i)`.  The named rules
//! cover the degrees the assembly needs (the default bilinear-form rule is
//! exact through degree 5); `gauss_collapsed` provides arbitrary-degree rules
//! via a Duffy-type map and backs high-accuracy error integration.

/// A quadrature rule on the reference triangle in barycentric coordinates.
#[derive(Debug, Clone)]
pub struct TriRule {
    /// Barycentric coordinates of each node, summing to 1.
    pub points: Vec<[f64; 3]>,
    /// Weights summing to 1 (multiply by the physical triangle area).
    pub weights: Vec<f64>,
    /// Highest total polynomial degree integrated exactly.
    pub degree: usize,
}

impl TriRule {
    /// Midpoint (centroid) rule, exact for linears.
    pub fn degree1() -> Self {
        TriRule {
            points: vec![[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]],
            weights: vec![1.0],
            degree: 1,
        }
    }

    /// Three-point rule at the edge midpoints, exact through degree 2.
    pub fn degree2() -> Self {
        TriRule {
            points: vec![
                [0.5, 0.5, 0.0],
                [0.0, 0.5, 0.5],
                [0.5, 0.0, 0.5],
            ],
            weights: vec![1.0 / 3.0; 3],
            degree: 2,
        }
    }

    /// Radon's seven-point rule, exact through degree 5.  This is the default
    /// rule for all bilinear-form assembly.
    pub fn degree5() -> Self {
        let sqrt15 = 15.0_f64.sqrt();
        let a = (6.0 - sqrt15) / 21.0;
        let b = (6.0 + sqrt15) / 21.0;
        let wa = (155.0 - sqrt15) / 1200.0;
        let wb = (155.0 + sqrt15) / 1200.0;
        let mut points = vec![[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]];
        let mut weights = vec![9.0 / 40.0];
        for &(c, w) in &[(a, wa), (b, wb)] {
            let d = 1.0 - 2.0 * c;
            points.push([d, c, c]);
            points.push([c, d, c]);
            points.push([c, c, d]);
            weights.extend_from_slice(&[w, w, w]);
        }
        TriRule { points, weights, degree: 5 }
    }

    /// Rule of at least the requested degree, assembled from a tensor
    /// Gauss-Legendre rule mapped through the Duffy transform
    /// `(u, v) -> (u, v(1-u))`.  The Jacobian `1-u` raises the polynomial
    /// degree in `u` by one, hence `n >= (degree+2)/2` points per direction.
    pub fn gauss_collapsed(degree: usize) -> Self {
        let n = (degree + 2).div_ceil(2);
        let line = GaussLegendre::new(n);
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for (&u, &wu) in line.nodes.iter().zip(&line.weights) {
            for (&v, &wv) in line.nodes.iter().zip(&line.weights) {
                // Map [0,1]^2 onto the reference triangle {x>=0, y>=0, x+y<=1}.
                let x = u;
                let y = v * (1.0 - u);
                points.push([1.0 - x - y, x, y]);
                // The reference triangle has area 1/2; weights normalised to 1.
                weights.push(wu * wv * (1.0 - u) * 2.0);
            }
        }
        TriRule { points, weights, degree: 2 * n - 2 }
    }

    /// The rule used when a caller asks for "at least this degree": named
    /// compact rules where available, collapsed Gauss beyond.
    pub fn with_degree(degree: usize) -> Self {
        match degree {
            0 | 1 => Self::degree1(),
            2 => Self::degree2(),
            3..=5 => Self::degree5(),
            d => Self::gauss_collapsed(d),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Gauss-Legendre rule on [0,1] with weights summing to 1.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// `n`-point rule, exact for polynomials of degree `2n-1`.  Nodes are the
    /// Legendre roots found by Newton iteration from the Chebyshev guesses.
    pub fn new(n: usize) -> Self {
        assert!(n > 0);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for k in 0..n {
            // Root of P_n in (-1, 1).
            let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, dp) = legendre_with_derivative(n, x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            let (_, dp) = legendre_with_derivative(n, x);
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            // Map from [-1,1] to [0,1].
            nodes[n - 1 - k] = 0.5 * (x + 1.0);
            weights[n - 1 - k] = 0.5 * w;
        }
        GaussLegendre { nodes, weights }
    }
}

/// Value and derivative of the Legendre polynomial `P_n` at `x`.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Exact integral of x^a y^b over the reference triangle
    /// {x >= 0, y >= 0, x + y <= 1}: a! b! / (a + b + 2)!.
    fn monomial_integral(a: u32, b: u32) -> f64 {
        let fact = |m: u32| (1..=m as u64).product::<u64>() as f64;
        fact(a) * fact(b) / fact(a + b + 2)
    }

    fn check_rule_exactness(rule: &TriRule, tol: f64) {
        for a in 0..=rule.degree as u32 {
            for b in 0..=(rule.degree as u32 - a) {
                // The rule integrates over area-1 weights; reference area 1/2.
                let mut acc = 0.0;
                for (p, w) in rule.points.iter().zip(&rule.weights) {
                    let (x, y) = (p[1], p[2]);
                    acc += w * x.powi(a as i32) * y.powi(b as i32);
                }
                acc *= 0.5;
                let exact = monomial_integral(a, b);
                assert!(
                    (acc - exact).abs() <= tol * exact.abs().max(1.0),
                    "degree-{} rule missed x^{} y^{}: {acc:.16e} vs {exact:.16e}",
                    rule.degree,
                    a,
                    b
                );
            }
        }
    }

    #[test]
    fn named_rules_are_exact_to_declared_degree() {
        check_rule_exactness(&TriRule::degree1(), 1e-14);
        check_rule_exactness(&TriRule::degree2(), 1e-14);
        check_rule_exactness(&TriRule::degree5(), 1e-14);
    }

    #[test]
    fn collapsed_gauss_rules_are_exact_to_declared_degree() {
        for degree in [4, 7, 9, 12] {
            let rule = TriRule::gauss_collapsed(degree);
            assert!(rule.degree >= degree);
            check_rule_exactness(&rule, 1e-13);
        }
    }

    #[test]
    fn weights_sum_to_one_and_points_stay_inside() {
        for rule in [
            TriRule::degree1(),
            TriRule::degree2(),
            TriRule::degree5(),
            TriRule::gauss_collapsed(9),
        ] {
            assert_relative_eq!(rule.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-13);
            for p in &rule.points {
                assert_relative_eq!(p[0] + p[1] + p[2], 1.0, epsilon = 1e-12);
                assert!(p.iter().all(|&l| (-1e-12..=1.0 + 1e-12).contains(&l)));
            }
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in 1..=8 {
            let rule = GaussLegendre::new(n);
            assert_relative_eq!(rule.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
            for d in 0..=(2 * n - 1) as u32 {
                let acc: f64 = rule
                    .nodes
                    .iter()
                    .zip(&rule.weights)
                    .map(|(&x, &w)| w * x.powi(d as i32))
                    .sum();
                let exact = 1.0 / (d as f64 + 1.0);
                assert_relative_eq!(acc, exact, epsilon = 1e-13);
            }
        }
    }
}
