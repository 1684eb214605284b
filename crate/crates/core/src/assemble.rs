//! Assembly of the bilinear forms and right-hand sides used by both time
//! steppers.
//!
//! An [`Assembler`] is created once per (trial, test) space pair: it owns the
//! sparsity pattern and the basis tables at the quadrature points, so per-step
//! reassembly only touches matrix values.  All element loops run in a fixed
//! order, which keeps assembled values reproducible run to run.
//!
//! The default quadrature is exact through degree 5, which integrates every
//! form here exactly except the eddy-viscosity term with quadratic
//! fluctuation fields (degree 6); that variational crime is standard and
//! harmless at the orders the schemes deliver.

use std::sync::Arc;

use crate::quadrature::TriRule;
use crate::space::{ElementGeometry, FeFunction, FeSpace};
use crate::sparse::{CsrMatrix, SparsityPattern};

/// Values of a coefficient field at every quadrature point of a fixed rule,
/// laid out `[element * nq + point]`.  This is how ensemble statistics (mean
/// viscosities, fluctuation magnitudes) enter the forms.
#[derive(Debug, Clone)]
pub struct QuadGrid {
    nq: usize,
    values: Vec<f64>,
}

impl QuadGrid {
    pub fn constant(mesh_elems: usize, rule: &TriRule, value: f64) -> Self {
        QuadGrid { nq: rule.len(), values: vec![value; mesh_elems * rule.len()] }
    }

    /// Samples an analytic coefficient at the quadrature points.
    pub fn from_fn(
        space_mesh: &crate::mesh::TriMesh,
        rule: &TriRule,
        f: impl Fn([f64; 2]) -> f64,
    ) -> Self {
        let nq = rule.len();
        let mut values = Vec::with_capacity(space_mesh.n_triangles() * nq);
        for t in 0..space_mesh.n_triangles() {
            let geom = ElementGeometry::new(space_mesh, t);
            for &l in &rule.points {
                values.push(f(geom.point(l)));
            }
        }
        QuadGrid { nq, values }
    }

    /// Squared mixing length of an ensemble of fluctuation fields:
    /// `sum_j |z'_j(x)|^2` at every quadrature point.
    pub fn fluctuation_sq_sum(fields: &[FeFunction], rule: &TriRule) -> Self {
        assert!(!fields.is_empty());
        let space = fields[0].space().clone();
        let mesh = space.mesh().clone();
        let nq = rule.len();
        let mut values = vec![0.0; mesh.n_triangles() * nq];
        let mut val = [0.0; 2];
        for f in fields {
            assert!(f.space().same_space(&space));
            for t in 0..mesh.n_triangles() {
                for (q, &l) in rule.points.iter().enumerate() {
                    f.eval(t, l, &mut val);
                    let sq: f64 = val[..space.components()].iter().map(|v| v * v).sum();
                    values[t * nq + q] += sq;
                }
            }
        }
        QuadGrid { nq, values }
    }

    #[inline]
    pub fn value(&self, elem: usize, q: usize) -> f64 {
        self.values[elem * self.nq + q]
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.values {
            *v *= s;
        }
    }

    /// self += s * other.
    pub fn add_scaled(&mut self, s: f64, other: &QuadGrid) {
        assert_eq!(self.values.len(), other.values.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += s * b;
        }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, &v| m.max(v.abs()))
    }
}

/// A scalar coefficient in a bilinear form.
#[derive(Clone, Copy)]
pub enum Coeff<'a> {
    Const(f64),
    Grid(&'a QuadGrid),
}

impl Coeff<'_> {
    #[inline]
    fn at(&self, elem: usize, q: usize) -> f64 {
        match self {
            Coeff::Const(c) => *c,
            Coeff::Grid(g) => g.value(elem, q),
        }
    }
}

/// The bilinear forms the schemes assemble.
pub enum OperatorKind<'a> {
    /// (u, chi)
    Mass,
    /// (kappa grad u, grad chi)
    Stiffness(Coeff<'a>),
    /// (div u, div chi)
    GradDiv,
    /// ((wind . grad) u, chi) — the wind is a same-mesh vector field.
    Convection(&'a FeFunction),
    /// (div u, zeta): trial is a vector space, test a scalar pressure space.
    Divergence,
    /// (2 mu dt sum_j |z'_j|^2 grad u, grad chi): the ensemble eddy-viscosity
    /// stabilisation built from fluctuation fields.
    EddyViscosity {
        fluctuations: &'a [FeFunction],
        mu: f64,
        dt: f64,
    },
}

/// Precomputed basis values/derivatives at the quadrature points of a rule.
struct BasisTab {
    /// `values[q][a]`
    values: Vec<Vec<f64>>,
    /// `dndl[q][a][k] = dN_a/dlambda_k`
    dndl: Vec<Vec<[f64; 3]>>,
}

impl BasisTab {
    fn build(space: &FeSpace, rule: &TriRule) -> Self {
        let nb = space.dofs_per_element();
        let mut values = Vec::with_capacity(rule.len());
        let mut dndl = Vec::with_capacity(rule.len());
        for &l in &rule.points {
            let mut v = vec![0.0; nb];
            space.basis_values(l, &mut v);
            values.push(v);
            let mut d = vec![[0.0; 3]; nb];
            space.basis_bary_derivs(l, &mut d);
            dndl.push(d);
        }
        BasisTab { values, dndl }
    }
}

/// Matrix assembler for one (trial, test) pair with a cached pattern.
pub struct Assembler {
    trial: FeSpace,
    test: FeSpace,
    rule: TriRule,
    pattern: Arc<SparsityPattern>,
    trial_tab: BasisTab,
    test_tab: BasisTab,
}

impl Assembler {
    pub fn new(trial: FeSpace, test: FeSpace, rule: TriRule) -> Self {
        assert!(
            Arc::ptr_eq(trial.mesh(), test.mesh()),
            "trial and test spaces must share a mesh"
        );
        let mesh = trial.mesh().clone();
        let mut pairs = Vec::new();
        for t in 0..mesh.n_triangles() {
            for a in 0..test.dofs_per_element() {
                let sa = test.scalar_dof(t, a);
                for ca in 0..test.components() {
                    let row = test.dof(sa, ca);
                    for b in 0..trial.dofs_per_element() {
                        let sb = trial.scalar_dof(t, b);
                        for cb in 0..trial.components() {
                            pairs.push((row, trial.dof(sb, cb)));
                        }
                    }
                }
            }
        }
        let pattern = SparsityPattern::from_pairs(test.n_dofs(), trial.n_dofs(), pairs);
        let trial_tab = BasisTab::build(&trial, &rule);
        let test_tab = BasisTab::build(&test, &rule);
        Assembler { trial, test, rule, pattern, trial_tab, test_tab }
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn trial(&self) -> &FeSpace {
        &self.trial
    }

    pub fn test(&self) -> &FeSpace {
        &self.test
    }

    pub fn rule(&self) -> &TriRule {
        &self.rule
    }

    /// Assembles `scale * form` into a fresh matrix.
    pub fn assemble(&self, kind: OperatorKind<'_>) -> CsrMatrix {
        let mut m = CsrMatrix::zeros(self.pattern.clone());
        self.add_to(&mut m, kind, 1.0);
        m
    }

    /// Adds `scale * form` into `m`, which must use this assembler's pattern.
    pub fn add_to(&self, m: &mut CsrMatrix, kind: OperatorKind<'_>, scale: f64) {
        assert!(Arc::ptr_eq(m.pattern(), &self.pattern), "matrix pattern mismatch");
        let mesh = self.trial.mesh().clone();
        let nbt = self.test.dofs_per_element();
        let nbu = self.trial.dofs_per_element();
        let (ct, cu) = (self.test.components(), self.trial.components());
        let nq = self.rule.len();

        // Eddy viscosity is a stiffness form with a precomputed grid.
        if let OperatorKind::EddyViscosity { fluctuations, mu, dt } = kind {
            let mut grid = QuadGrid::fluctuation_sq_sum(fluctuations, &self.rule);
            grid.scale(2.0 * mu * dt);
            return self.add_to(m, OperatorKind::Stiffness(Coeff::Grid(&grid)), scale);
        }

        let mut local = vec![0.0; nbt * ct * nbu * cu];
        let mut wind_val = [0.0; 2];
        let mut grad_t = vec![[0.0; 2]; nbt];
        let mut grad_u = vec![[0.0; 2]; nbu];

        for t in 0..mesh.n_triangles() {
            let geom = ElementGeometry::new(&mesh, t);
            local.fill(0.0);
            for q in 0..nq {
                let wq = self.rule.weights[q] * geom.area * scale;
                // physical gradients of both bases at this point
                for (a, row) in self.test_tab.dndl[q].iter().enumerate() {
                    grad_t[a] = phys_grad(row, &geom);
                }
                for (b, row) in self.trial_tab.dndl[q].iter().enumerate() {
                    grad_u[b] = phys_grad(row, &geom);
                }
                let nt = &self.test_tab.values[q];
                let nu = &self.trial_tab.values[q];

                match &kind {
                    OperatorKind::Mass => {
                        for a in 0..nbt {
                            for b in 0..nbu {
                                let v = wq * nt[a] * nu[b];
                                for c in 0..ct.min(cu) {
                                    local[idx(a, c, b, c, ct, nbu, cu)] += v;
                                }
                            }
                        }
                    }
                    OperatorKind::Stiffness(kappa) => {
                        let k = kappa.at(t, q) * wq;
                        for a in 0..nbt {
                            for b in 0..nbu {
                                let v = k * (grad_t[a][0] * grad_u[b][0]
                                    + grad_t[a][1] * grad_u[b][1]);
                                for c in 0..ct.min(cu) {
                                    local[idx(a, c, b, c, ct, nbu, cu)] += v;
                                }
                            }
                        }
                    }
                    OperatorKind::GradDiv => {
                        debug_assert!(ct == 2 && cu == 2);
                        for a in 0..nbt {
                            for ca in 0..2 {
                                for b in 0..nbu {
                                    for cb in 0..2 {
                                        local[idx(a, ca, b, cb, ct, nbu, cu)] +=
                                            wq * grad_t[a][ca] * grad_u[b][cb];
                                    }
                                }
                            }
                        }
                    }
                    OperatorKind::Convection(wind) => {
                        wind.eval(t, self.rule.points[q], &mut wind_val);
                        for b in 0..nbu {
                            let adv = wind_val[0] * grad_u[b][0] + wind_val[1] * grad_u[b][1];
                            for a in 0..nbt {
                                let v = wq * nt[a] * adv;
                                for c in 0..ct.min(cu) {
                                    local[idx(a, c, b, c, ct, nbu, cu)] += v;
                                }
                            }
                        }
                    }
                    OperatorKind::Divergence => {
                        debug_assert!(ct == 1 && cu == 2);
                        for a in 0..nbt {
                            for b in 0..nbu {
                                for cb in 0..2 {
                                    local[idx(a, 0, b, cb, ct, nbu, cu)] +=
                                        wq * nt[a] * grad_u[b][cb];
                                }
                            }
                        }
                    }
                    OperatorKind::EddyViscosity { .. } => unreachable!("handled above"),
                }
            }
            // scatter
            for a in 0..nbt {
                let sa = self.test.scalar_dof(t, a);
                for ca in 0..ct {
                    let row = self.test.dof(sa, ca);
                    for b in 0..nbu {
                        let sb = self.trial.scalar_dof(t, b);
                        for cb in 0..cu {
                            let v = local[idx(a, ca, b, cb, ct, nbu, cu)];
                            if v != 0.0 {
                                m.add_at(row, self.trial.dof(sb, cb), v);
                            }
                        }
                    }
                }
            }
        }
    }
}

#[inline]
fn idx(a: usize, ca: usize, b: usize, cb: usize, ct: usize, nbu: usize, cu: usize) -> usize {
    ((a * ct + ca) * nbu + b) * cu + cb
}

#[inline]
fn phys_grad(dndl: &[f64; 3], geom: &ElementGeometry) -> [f64; 2] {
    let mut g = [0.0; 2];
    for k in 0..3 {
        g[0] += dndl[k] * geom.grad_lambda[k][0];
        g[1] += dndl[k] * geom.grad_lambda[k][1];
    }
    g
}

/// `(f, chi)` for a vector test space and analytic `f`.
pub fn assemble_load(
    test: &FeSpace,
    rule: &TriRule,
    f: impl Fn([f64; 2]) -> [f64; 2],
) -> Vec<f64> {
    assert_eq!(test.components(), 2);
    let mesh = test.mesh().clone();
    let nb = test.dofs_per_element();
    let mut out = vec![0.0; test.n_dofs()];
    let mut basis = vec![0.0; nb];
    for t in 0..mesh.n_triangles() {
        let geom = ElementGeometry::new(&mesh, t);
        for (q, &l) in rule.points.iter().enumerate() {
            let wq = rule.weights[q] * geom.area;
            let fx = f(geom.point(l));
            test.basis_values(l, &mut basis);
            for a in 0..nb {
                let s = test.scalar_dof(t, a);
                out[test.dof(s, 0)] += wq * basis[a] * fx[0];
                out[test.dof(s, 1)] += wq * basis[a] * fx[1];
            }
        }
    }
    out
}

/// `((wind . grad) field, chi)` with both `wind` and `field` finite-element
/// vector fields; used for the explicit fluctuation convection terms.
pub fn convection_apply(
    wind: &FeFunction,
    field: &FeFunction,
    test: &FeSpace,
    rule: &TriRule,
) -> Vec<f64> {
    let mesh = test.mesh().clone();
    let nb = test.dofs_per_element();
    let mut out = vec![0.0; test.n_dofs()];
    let mut basis = vec![0.0; nb];
    let mut wv = [0.0; 2];
    let mut grad = [[0.0; 2]; 2];
    for t in 0..mesh.n_triangles() {
        let geom = ElementGeometry::new(&mesh, t);
        for (q, &l) in rule.points.iter().enumerate() {
            let wq = rule.weights[q] * geom.area;
            wind.eval(t, l, &mut wv);
            field.eval_grad(t, l, &geom, &mut grad);
            let conv = [
                wv[0] * grad[0][0] + wv[1] * grad[0][1],
                wv[0] * grad[1][0] + wv[1] * grad[1][1],
            ];
            test.basis_values(l, &mut basis);
            for a in 0..nb {
                let s = test.scalar_dof(t, a);
                out[test.dof(s, 0)] += wq * basis[a] * conv[0];
                out[test.dof(s, 1)] += wq * basis[a] * conv[1];
            }
        }
    }
    out
}

/// `(kappa grad field, grad chi)` for a known vector field; used for the
/// explicit mixed/fluctuation viscosity terms.
pub fn weighted_grad_apply(
    kappa: Coeff<'_>,
    field: &FeFunction,
    test: &FeSpace,
    rule: &TriRule,
) -> Vec<f64> {
    let mesh = test.mesh().clone();
    let nb = test.dofs_per_element();
    let mut out = vec![0.0; test.n_dofs()];
    let mut dndl = vec![[0.0; 3]; nb];
    let mut grad = [[0.0; 2]; 2];
    for t in 0..mesh.n_triangles() {
        let geom = ElementGeometry::new(&mesh, t);
        for (q, &l) in rule.points.iter().enumerate() {
            let wq = rule.weights[q] * geom.area * kappa.at(t, q);
            field.eval_grad(t, l, &geom, &mut grad);
            test.basis_bary_derivs(l, &mut dndl);
            for a in 0..nb {
                let ga = phys_grad(&dndl[a], &geom);
                let s = test.scalar_dof(t, a);
                out[test.dof(s, 0)] += wq * (ga[0] * grad[0][0] + ga[1] * grad[0][1]);
                out[test.dof(s, 1)] += wq * (ga[0] * grad[1][0] + ga[1] * grad[1][1]);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::TriMesh;
    use crate::space::Family;
    use approx::assert_relative_eq;

    fn two_triangle_mesh() -> Arc<TriMesh> {
        Arc::new(TriMesh::unit_square(1))
    }

    #[test]
    fn mass_matrix_row_sums_integrate_one() {
        // sum_b (N_a, N_b) = (N_a, 1); summing over all rows gives |domain|.
        let mesh = two_triangle_mesh();
        let space = FeSpace::scalar(mesh, Family::P2);
        let asm = Assembler::new(space.clone(), space, TriRule::degree5());
        let m = asm.assemble(OperatorKind::Mass);
        let total: f64 = m.values().iter().sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-13);
    }

    #[test]
    fn stiffness_annihilates_constants_and_matches_linears() {
        let mesh = Arc::new(TriMesh::unit_square(2));
        let space = FeSpace::scalar(mesh, Family::P2);
        let asm = Assembler::new(space.clone(), space.clone(), TriRule::degree5());
        let k = asm.assemble(OperatorKind::Stiffness(Coeff::Const(1.0)));
        let ones = vec![1.0; space.n_dofs()];
        let y = k.matvec_alloc(&ones);
        for v in y {
            assert_relative_eq!(v, 0.0, epsilon = 1e-12);
        }
        // Energy of u = x: integral of |grad u|^2 = 1.
        let u = space.interpolate_scalar(|x| x[0]);
        let ku = k.matvec_alloc(u.coeffs());
        let energy: f64 = u.coeffs().iter().zip(&ku).map(|(a, b)| a * b).sum();
        assert_relative_eq!(energy, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn divergence_form_vanishes_on_rigid_motions() {
        let mesh = Arc::new(TriMesh::unit_square(2));
        let vel = FeSpace::vector(mesh.clone(), Family::P2);
        let pre = FeSpace::scalar(mesh, Family::P1);
        let asm = Assembler::new(vel.clone(), pre, TriRule::degree5());
        let b = asm.assemble(OperatorKind::Divergence);
        // div of a rotation (y, -x) is zero.
        let u = vel.interpolate_vector(|x| [x[1], -x[0]]);
        for v in b.matvec_alloc(u.coeffs()) {
            assert_relative_eq!(v, 0.0, epsilon = 1e-13);
        }
        // div of (x, y) is 2: (div u, 1) = 2 |domain|.
        let u = vel.interpolate_vector(|x| [x[0], x[1]]);
        let total: f64 = b.matvec_alloc(u.coeffs()).iter().sum();
        assert_relative_eq!(total, 2.0, epsilon = 1e-13);
    }

    #[test]
    fn grad_div_energy_of_linear_field() {
        let mesh = Arc::new(TriMesh::unit_square(2));
        let vel = FeSpace::vector(mesh, Family::P2);
        let asm = Assembler::new(vel.clone(), vel.clone(), TriRule::degree5());
        let g = asm.assemble(OperatorKind::GradDiv);
        // u = (2x, 3y): div u = 5, energy = 25 * |domain|.
        let u = vel.interpolate_vector(|x| [2.0 * x[0], 3.0 * x[1]]);
        let gu = g.matvec_alloc(u.coeffs());
        let energy: f64 = u.coeffs().iter().zip(&gu).map(|(a, b)| a * b).sum();
        assert_relative_eq!(energy, 25.0, epsilon = 1e-11);
    }

    #[test]
    fn convection_is_skew_free_but_consistent() {
        // b(w, u, chi) with w = (1, 0): (du/dx, chi). For u = (x, 0) and
        // chi spanning the space, sum over chi of (1, chi_1) = |domain|.
        let mesh = Arc::new(TriMesh::unit_square(2));
        let vel = FeSpace::vector(mesh, Family::P2);
        let asm = Assembler::new(vel.clone(), vel.clone(), TriRule::degree5());
        let wind = vel.interpolate_vector(|_| [1.0, 0.0]);
        let c = asm.assemble(OperatorKind::Convection(&wind));
        let u = vel.interpolate_vector(|x| [x[0], 0.0]);
        let cu = c.matvec_alloc(u.coeffs());
        // Sum the x-component rows only: component dofs are interleaved.
        let total: f64 = cu.iter().step_by(2).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);
        let total_y: f64 = cu.iter().skip(1).step_by(2).sum();
        assert_relative_eq!(total_y, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn convection_apply_matches_assembled_operator() {
        let mesh = Arc::new(TriMesh::unit_square(2));
        let vel = FeSpace::vector(mesh, Family::P2);
        let asm = Assembler::new(vel.clone(), vel.clone(), TriRule::degree5());
        let wind = vel.interpolate_vector(|x| [x[1] + 0.5, x[0] * x[0]]);
        let field = vel.interpolate_vector(|x| [x[0] * x[1], x[1] - x[0]]);
        let via_matrix = asm
            .assemble(OperatorKind::Convection(&wind))
            .matvec_alloc(field.coeffs());
        let direct = convection_apply(&wind, &field, &vel, &TriRule::degree5());
        for (a, b) in via_matrix.iter().zip(&direct) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn weighted_grad_apply_matches_assembled_stiffness() {
        let mesh = Arc::new(TriMesh::unit_square(2));
        let vel = FeSpace::vector(mesh.clone(), Family::P2);
        let rule = TriRule::degree5();
        let grid = QuadGrid::from_fn(&mesh, &rule, |x| 1.0 + x[0]);
        let asm = Assembler::new(vel.clone(), vel.clone(), rule.clone());
        let field = vel.interpolate_vector(|x| [x[1], x[0] + x[1]]);
        let via_matrix = asm
            .assemble(OperatorKind::Stiffness(Coeff::Grid(&grid)))
            .matvec_alloc(field.coeffs());
        let direct = weighted_grad_apply(Coeff::Grid(&grid), &field, &vel, &rule);
        for (a, b) in via_matrix.iter().zip(&direct) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn load_vector_integrates_constants() {
        let mesh = Arc::new(TriMesh::unit_square(3));
        let vel = FeSpace::vector(mesh, Family::P2);
        let load = assemble_load(&vel, &TriRule::degree5(), |_| [2.0, -1.0]);
        let sum_x: f64 = load.iter().step_by(2).sum();
        let sum_y: f64 = load.iter().skip(1).step_by(2).sum();
        assert_relative_eq!(sum_x, 2.0, epsilon = 1e-13);
        assert_relative_eq!(sum_y, -1.0, epsilon = 1e-13);
    }

    #[test]
    fn eddy_viscosity_matches_manual_grid() {
        let mesh = Arc::new(TriMesh::unit_square(2));
        let vel = FeSpace::vector(mesh, Family::P2);
        let rule = TriRule::degree5();
        let asm = Assembler::new(vel.clone(), vel.clone(), rule.clone());
        let f1 = vel.interpolate_vector(|x| [x[0], -x[1]]);
        let f2 = vel.interpolate_vector(|x| [x[1], 0.0]);
        let (mu, dt) = (1.5, 0.1);

        let via_kind = asm.assemble(OperatorKind::EddyViscosity {
            fluctuations: &[f1.clone(), f2.clone()],
            mu,
            dt,
        });
        let mut grid = QuadGrid::fluctuation_sq_sum(&[f1, f2], &rule);
        grid.scale(2.0 * mu * dt);
        let via_grid = asm.assemble(OperatorKind::Stiffness(Coeff::Grid(&grid)));
        for (a, b) in via_kind.values().iter().zip(via_grid.values()) {
            assert_relative_eq!(a, b, epsilon = 1e-14);
        }
    }
}
