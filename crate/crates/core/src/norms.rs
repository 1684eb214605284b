//! Integral norms of finite-element fields and errors against analytic
//! solutions.
//!
//! Norms of pure FE fields use a rule that is exact for the integrand
//! (quadratics squared are degree 4).  Errors against analytic reference
//! solutions use a high-degree rule so the quadrature error stays far below
//! the discretisation error being measured.

use std::collections::HashMap;

use crate::mesh::{sorted_pair, BoundaryTag};
use crate::quadrature::{GaussLegendre, TriRule};
use crate::space::{ElementGeometry, FeFunction};

/// Rule used for errors against analytic (non-polynomial) references.
pub fn reference_rule() -> TriRule {
    TriRule::gauss_collapsed(9)
}

/// L2 norm of a (scalar or vector) field.
pub fn l2_norm(f: &FeFunction, rule: &TriRule) -> f64 {
    let mesh = f.space().mesh().clone();
    let nc = f.space().components();
    let mut val = [0.0; 2];
    let mut total = 0.0;
    for t in 0..mesh.n_triangles() {
        let geom = ElementGeometry::new(&mesh, t);
        for (q, &l) in rule.points.iter().enumerate() {
            f.eval(t, l, &mut val);
            let sq: f64 = val[..nc].iter().map(|v| v * v).sum();
            total += rule.weights[q] * geom.area * sq;
        }
    }
    total.sqrt()
}

/// H1 seminorm: the L2 norm of the (full) gradient.
pub fn h1_seminorm(f: &FeFunction, rule: &TriRule) -> f64 {
    let mesh = f.space().mesh().clone();
    let nc = f.space().components();
    let mut grad = [[0.0; 2]; 2];
    let mut total = 0.0;
    for t in 0..mesh.n_triangles() {
        let geom = ElementGeometry::new(&mesh, t);
        for (q, &l) in rule.points.iter().enumerate() {
            f.eval_grad(t, l, &geom, &mut grad);
            let sq: f64 = grad[..nc]
                .iter()
                .map(|g| g[0] * g[0] + g[1] * g[1])
                .sum();
            total += rule.weights[q] * geom.area * sq;
        }
    }
    total.sqrt()
}

/// Full H1 norm, `sqrt(|f|_0^2 + |grad f|_0^2)`.
pub fn h1_norm(f: &FeFunction, rule: &TriRule) -> f64 {
    let l2 = l2_norm(f, rule);
    let semi = h1_seminorm(f, rule);
    (l2 * l2 + semi * semi).sqrt()
}

/// L2 norm of the divergence of a vector field.
pub fn div_l2(f: &FeFunction, rule: &TriRule) -> f64 {
    assert_eq!(f.space().components(), 2);
    let mesh = f.space().mesh().clone();
    let mut grad = [[0.0; 2]; 2];
    let mut total = 0.0;
    for t in 0..mesh.n_triangles() {
        let geom = ElementGeometry::new(&mesh, t);
        for (q, &l) in rule.points.iter().enumerate() {
            f.eval_grad(t, l, &geom, &mut grad);
            let div = grad[0][0] + grad[1][1];
            total += rule.weights[q] * geom.area * div * div;
        }
    }
    total.sqrt()
}

/// L2 error of a vector field against an analytic reference.
pub fn error_l2(
    f: &FeFunction,
    exact: impl Fn([f64; 2]) -> [f64; 2],
    rule: &TriRule,
) -> f64 {
    assert_eq!(f.space().components(), 2);
    let mesh = f.space().mesh().clone();
    let mut val = [0.0; 2];
    let mut total = 0.0;
    for t in 0..mesh.n_triangles() {
        let geom = ElementGeometry::new(&mesh, t);
        for (q, &l) in rule.points.iter().enumerate() {
            f.eval(t, l, &mut val);
            let ex = exact(geom.point(l));
            let d0 = val[0] - ex[0];
            let d1 = val[1] - ex[1];
            total += rule.weights[q] * geom.area * (d0 * d0 + d1 * d1);
        }
    }
    total.sqrt()
}

/// Full H1 error of a vector field against an analytic reference with known
/// gradient (`exact_grad(x)[c][d] = d u_c / d x_d`).
pub fn error_h1(
    f: &FeFunction,
    exact: impl Fn([f64; 2]) -> [f64; 2],
    exact_grad: impl Fn([f64; 2]) -> [[f64; 2]; 2],
    rule: &TriRule,
) -> f64 {
    assert_eq!(f.space().components(), 2);
    let mesh = f.space().mesh().clone();
    let mut val = [0.0; 2];
    let mut grad = [[0.0; 2]; 2];
    let mut total = 0.0;
    for t in 0..mesh.n_triangles() {
        let geom = ElementGeometry::new(&mesh, t);
        for (q, &l) in rule.points.iter().enumerate() {
            let x = geom.point(l);
            f.eval(t, l, &mut val);
            f.eval_grad(t, l, &geom, &mut grad);
            let ex = exact(x);
            let eg = exact_grad(x);
            let mut sq = 0.0;
            for c in 0..2 {
                let d = val[c] - ex[c];
                sq += d * d;
                for dxe in 0..2 {
                    let g = grad[c][dxe] - eg[c][dxe];
                    sq += g * g;
                }
            }
            total += rule.weights[q] * geom.area * sq;
        }
    }
    total.sqrt()
}

/// Discrete space-time norm `sqrt(dt * sum_n e_n^2)` over the per-step errors
/// `e_1..e_M` (the initial level is excluded by not being passed in).
pub fn space_time_norm(dt: f64, step_errors: &[f64]) -> f64 {
    (dt * step_errors.iter().map(|e| e * e).sum::<f64>()).sqrt()
}

/// Net outward flux of a vector field through the whole boundary,
/// `integral of f . n ds`; zero (to roundoff) for discretely divergence-free
/// fields with impermeable boundaries.
pub fn boundary_flux(f: &FeFunction) -> f64 {
    boundary_flux_where(f, |_| true)
}

/// Net outward flux through the boundary edges whose tag satisfies `keep` —
/// e.g. the mass flux through just the outflow section of a channel.
pub fn boundary_flux_where(f: &FeFunction, keep: impl Fn(BoundaryTag) -> bool) -> f64 {
    assert_eq!(f.space().components(), 2);
    let mesh = f.space().mesh().clone();
    // Locate the owning triangle and local vertex indices of each boundary
    // edge so the trace can be evaluated in barycentric coordinates.
    let mut owner: HashMap<(usize, usize), (usize, usize, usize)> = HashMap::new();
    for t in 0..mesh.n_triangles() {
        let tri = mesh.triangle(t);
        for k in 0..3 {
            let (p, q) = (tri[k], tri[(k + 1) % 3]);
            owner.insert(sorted_pair(p, q), (t, k, (k + 1) % 3));
        }
    }
    let gauss = GaussLegendre::new(3);
    let mut val = [0.0; 2];
    let mut flux = 0.0;
    for edge in mesh.boundary_edges() {
        if !keep(edge.tag) {
            continue;
        }
        let (t, la, lb) = owner[&sorted_pair(edge.v[0], edge.v[1])];
        let tri = mesh.triangle(t);
        // Orient the parameter to run from edge.v[0] to edge.v[1].
        let (la, lb) = if tri[la] == edge.v[0] { (la, lb) } else { (lb, la) };
        let n = edge.outward_normal(&mesh);
        let len = edge.length(&mesh);
        for (s, w) in gauss.nodes.iter().zip(&gauss.weights) {
            let mut bary = [0.0; 3];
            bary[la] = 1.0 - s;
            bary[lb] = *s;
            f.eval(t, bary, &mut val);
            flux += w * len * (val[0] * n[0] + val[1] * n[1]);
        }
    }
    flux
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::TriMesh;
    use crate::space::{Family, FeSpace};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    #[test]
    fn norms_of_simple_fields_match_closed_forms() {
        let mesh = Arc::new(TriMesh::unit_square(4));
        let space = FeSpace::vector(mesh, Family::P2);
        // u = (x, y): |u|^2 integrates to 2/3, |grad u|^2 = 2, div = 2.
        let u = space.interpolate_vector(|x| [x[0], x[1]]);
        let rule = TriRule::degree5();
        assert_relative_eq!(l2_norm(&u, &rule), (2.0_f64 / 3.0).sqrt(), epsilon = 1e-12);
        assert_relative_eq!(h1_seminorm(&u, &rule), 2.0_f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(
            h1_norm(&u, &rule),
            (2.0 / 3.0 + 2.0_f64).sqrt(),
            epsilon = 1e-12
        );
        assert_relative_eq!(div_l2(&u, &rule), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn errors_vanish_for_reproduced_fields_and_match_known_gap() {
        let mesh = Arc::new(TriMesh::unit_square(3));
        let space = FeSpace::vector(mesh, Family::P2);
        let u = space.interpolate_vector(|x| [x[0] * x[1], x[1]]);
        let rule = reference_rule();
        assert!(error_l2(&u, |x| [x[0] * x[1], x[1]], &rule) < 1e-13);
        assert!(
            error_h1(
                &u,
                |x| [x[0] * x[1], x[1]],
                |x| [[x[1], x[0]], [0.0, 1.0]],
                &rule
            ) < 1e-12
        );
        // Shifting the reference by a constant (1, 0) gives L2 error exactly 1
        // on the unit square.
        let e = error_l2(&u, |x| [x[0] * x[1] + 1.0, x[1]], &rule);
        assert_relative_eq!(e, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn space_time_accumulation() {
        assert_relative_eq!(
            space_time_norm(0.25, &[3.0, 4.0]),
            (0.25 * 25.0_f64).sqrt(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn boundary_flux_of_linear_fields() {
        let mesh = Arc::new(TriMesh::unit_square(3));
        let space = FeSpace::vector(mesh, Family::P2);
        // Divergence theorem: flux of (x, y) = integral of div = 2 |domain|.
        let u = space.interpolate_vector(|x| [x[0], x[1]]);
        assert_relative_eq!(boundary_flux(&u), 2.0, epsilon = 1e-12);
        // A rotation has zero net flux.
        let r = space.interpolate_vector(|x| [x[1], -x[0]]);
        assert_relative_eq!(boundary_flux(&r), 0.0, epsilon = 1e-12);
        // Quadratic field through the divergence theorem: div (x^2, xy) = 3x,
        // integral over unit square = 3/2.
        let q = space.interpolate_vector(|x| [x[0] * x[0], x[0] * x[1]]);
        assert_relative_eq!(boundary_flux(&q), 1.5, epsilon = 1e-12);
    }
}
