//! Scalar and vector Lagrange finite-element spaces on triangle meshes.
//!
//! Three families are supported: continuous linears (`P1`, used for the
//! Taylor–Hood pressure), continuous quadratics (`P2`, used for velocities),
//! and elementwise-discontinuous linears (`P1Disc`, the pressure of the
//! divergence-free pairing on barycentric-refined meshes).  Vector spaces
//! interleave components (`global = components * scalar_dof + component`),
//! which keeps matrix bandwidth small on structured meshes.

use std::collections::HashMap;
use std::sync::Arc;

use crate::mesh::{sorted_pair, TriMesh};

/// Finite-element family of a scalar space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Continuous piecewise linears (3 nodes per triangle, at vertices).
    P1,
    /// Continuous piecewise quadratics (6 nodes: vertices + edge midpoints).
    P2,
    /// Discontinuous piecewise linears (3 private nodes per triangle).
    P1Disc,
}

impl Family {
    pub fn dofs_per_element(self) -> usize {
        match self {
            Family::P1 | Family::P1Disc => 3,
            Family::P2 => 6,
        }
    }

    /// Polynomial degree of the basis.
    pub fn degree(self) -> usize {
        match self {
            Family::P1 | Family::P1Disc => 1,
            Family::P2 => 2,
        }
    }
}

/// Mesh edge table: unique undirected edges plus the per-triangle edge ids,
/// with local edge `k` opposite local vertex `k`.
#[derive(Debug)]
pub struct EdgeTable {
    edges: Vec<[usize; 2]>,
    tri_edges: Vec<[usize; 3]>,
    lookup: HashMap<(usize, usize), usize>,
}

impl EdgeTable {
    pub fn build(mesh: &TriMesh) -> Self {
        let mut lookup = HashMap::new();
        let mut edges = Vec::new();
        let mut tri_edges = Vec::with_capacity(mesh.n_triangles());
        for &[a, b, c] in mesh.triangles() {
            let mut ids = [0usize; 3];
            // local edge k connects the two vertices other than local vertex k
            for (k, (p, q)) in [(b, c), (c, a), (a, b)].into_iter().enumerate() {
                let key = sorted_pair(p, q);
                let id = *lookup.entry(key).or_insert_with(|| {
                    edges.push([key.0, key.1]);
                    edges.len() - 1
                });
                ids[k] = id;
            }
            tri_edges.push(ids);
        }
        EdgeTable { edges, tri_edges, lookup }
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edge_vertices(&self, e: usize) -> [usize; 2] {
        self.edges[e]
    }

    pub fn triangle_edges(&self, t: usize) -> [usize; 3] {
        self.tri_edges[t]
    }

    pub fn edge_id(&self, a: usize, b: usize) -> Option<usize> {
        self.lookup.get(&sorted_pair(a, b)).copied()
    }
}

struct SpaceInner {
    mesh: Arc<TriMesh>,
    family: Family,
    components: usize,
    edges: EdgeTable,
    n_scalar: usize,
}

/// A (possibly vector-valued) finite-element space; cheap to clone.
#[derive(Clone)]
pub struct FeSpace(Arc<SpaceInner>);

impl FeSpace {
    pub fn new(mesh: Arc<TriMesh>, family: Family, components: usize) -> Self {
        assert!(components == 1 || components == 2, "only scalar/planar fields");
        let edges = EdgeTable::build(&mesh);
        let n_scalar = match family {
            Family::P1 => mesh.n_vertices(),
            Family::P2 => mesh.n_vertices() + edges.n_edges(),
            Family::P1Disc => 3 * mesh.n_triangles(),
        };
        FeSpace(Arc::new(SpaceInner { mesh, family, components, edges, n_scalar }))
    }

    pub fn scalar(mesh: Arc<TriMesh>, family: Family) -> Self {
        Self::new(mesh, family, 1)
    }

    pub fn vector(mesh: Arc<TriMesh>, family: Family) -> Self {
        Self::new(mesh, family, 2)
    }

    pub fn mesh(&self) -> &Arc<TriMesh> {
        &self.0.mesh
    }

    pub fn family(&self) -> Family {
        self.0.family
    }

    pub fn components(&self) -> usize {
        self.0.components
    }

    pub fn edges(&self) -> &EdgeTable {
        &self.0.edges
    }

    pub fn n_scalar_dofs(&self) -> usize {
        self.0.n_scalar
    }

    pub fn n_dofs(&self) -> usize {
        self.0.n_scalar * self.0.components
    }

    /// Number of (scalar) basis functions per element.
    pub fn dofs_per_element(&self) -> usize {
        self.0.family.dofs_per_element()
    }

    /// Global scalar dof of local node `a` in element `t`.
    pub fn scalar_dof(&self, t: usize, a: usize) -> usize {
        let tri = self.0.mesh.triangle(t);
        match self.0.family {
            Family::P1 => tri[a],
            Family::P1Disc => 3 * t + a,
            Family::P2 => {
                if a < 3 {
                    tri[a]
                } else {
                    self.0.mesh.n_vertices() + self.0.edges.triangle_edges(t)[a - 3]
                }
            }
        }
    }

    /// Global dof for (scalar dof, component), interleaved.
    #[inline]
    pub fn dof(&self, scalar: usize, comp: usize) -> usize {
        scalar * self.0.components + comp
    }

    /// Coordinates of every scalar dof's node (interpolation points).
    pub fn scalar_dof_coords(&self) -> Vec<[f64; 2]> {
        let mesh = &self.0.mesh;
        match self.0.family {
            Family::P1 => mesh.vertices().to_vec(),
            Family::P2 => {
                let mut coords = mesh.vertices().to_vec();
                coords.extend(self.0.edges.edges.iter().map(|&[a, b]| {
                    let (pa, pb) = (mesh.vertex(a), mesh.vertex(b));
                    [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]
                }));
                coords
            }
            Family::P1Disc => {
                let mut coords = Vec::with_capacity(3 * mesh.n_triangles());
                for &tri in mesh.triangles() {
                    for v in tri {
                        coords.push(mesh.vertex(v));
                    }
                }
                coords
            }
        }
    }

    /// Basis values at a barycentric point, one per local node.
    pub fn basis_values(&self, bary: [f64; 3], out: &mut [f64]) {
        basis_values(self.0.family, bary, out);
    }

    /// Derivatives of the basis with respect to the barycentric coordinates:
    /// `out[a][k] = dN_a/dlambda_k`.  Physical gradients follow by the chain
    /// rule with the element's `grad_lambda`.
    pub fn basis_bary_derivs(&self, bary: [f64; 3], out: &mut [[f64; 3]]) {
        basis_bary_derivs(self.0.family, bary, out);
    }

    /// Nodal interpolant of an analytic function (one value per component).
    pub fn interpolate(&self, f: impl Fn([f64; 2]) -> Vec<f64>) -> FeFunction {
        let coords = self.scalar_dof_coords();
        let mut coeffs = vec![0.0; self.n_dofs()];
        for (s, &x) in coords.iter().enumerate() {
            let vals = f(x);
            assert_eq!(vals.len(), self.0.components);
            for (c, &v) in vals.iter().enumerate() {
                coeffs[self.dof(s, c)] = v;
            }
        }
        FeFunction { space: self.clone(), coeffs }
    }

    /// Interpolant of a planar vector field.
    pub fn interpolate_vector(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> FeFunction {
        assert_eq!(self.0.components, 2);
        self.interpolate(|x| f(x).to_vec())
    }

    /// Interpolant of a scalar field.
    pub fn interpolate_scalar(&self, f: impl Fn([f64; 2]) -> f64) -> FeFunction {
        assert_eq!(self.0.components, 1);
        self.interpolate(|x| vec![f(x)])
    }

    pub fn zero_function(&self) -> FeFunction {
        FeFunction { space: self.clone(), coeffs: vec![0.0; self.n_dofs()] }
    }

    /// True when `other` is backed by the same space object.
    /// Whether two space handles index dofs identically.  The dof numbering
    /// is a pure function of (mesh, family, components), so two instances
    /// built over the same mesh are interchangeable.
    pub fn same_space(&self, other: &FeSpace) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
            || (Arc::ptr_eq(&self.0.mesh, &other.0.mesh)
                && self.0.family == other.0.family
                && self.0.components == other.0.components)
    }
}

impl std::fmt::Debug for FeSpace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FeSpace")
            .field("family", &self.0.family)
            .field("components", &self.0.components)
            .field("n_dofs", &self.n_dofs())
            .finish()
    }
}

fn basis_values(family: Family, l: [f64; 3], out: &mut [f64]) {
    match family {
        Family::P1 | Family::P1Disc => {
            out[..3].copy_from_slice(&l);
        }
        Family::P2 => {
            for k in 0..3 {
                out[k] = l[k] * (2.0 * l[k] - 1.0);
            }
            out[3] = 4.0 * l[1] * l[2];
            out[4] = 4.0 * l[2] * l[0];
            out[5] = 4.0 * l[0] * l[1];
        }
    }
}

fn basis_bary_derivs(family: Family, l: [f64; 3], out: &mut [[f64; 3]]) {
    match family {
        Family::P1 | Family::P1Disc => {
            for (k, row) in out.iter_mut().take(3).enumerate() {
                *row = [0.0; 3];
                row[k] = 1.0;
            }
        }
        Family::P2 => {
            for (k, row) in out.iter_mut().take(3).enumerate() {
                *row = [0.0; 3];
                row[k] = 4.0 * l[k] - 1.0;
            }
            out[3] = [0.0, 4.0 * l[2], 4.0 * l[1]];
            out[4] = [4.0 * l[2], 0.0, 4.0 * l[0]];
            out[5] = [4.0 * l[1], 4.0 * l[0], 0.0];
        }
    }
}

/// Affine geometry of one triangle: area and the (constant) gradients of the
/// barycentric coordinates.
#[derive(Debug, Clone, Copy)]
pub struct ElementGeometry {
    pub area: f64,
    pub grad_lambda: [[f64; 2]; 3],
    pub vertices: [[f64; 2]; 3],
}

impl ElementGeometry {
    pub fn new(mesh: &TriMesh, t: usize) -> Self {
        let [a, b, c] = mesh.triangle(t);
        let (pa, pb, pc) = (mesh.vertex(a), mesh.vertex(b), mesh.vertex(c));
        let det = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]);
        let area = 0.5 * det;
        let grad_lambda = [
            [(pb[1] - pc[1]) / det, (pc[0] - pb[0]) / det],
            [(pc[1] - pa[1]) / det, (pa[0] - pc[0]) / det],
            [(pa[1] - pb[1]) / det, (pb[0] - pa[0]) / det],
        ];
        ElementGeometry { area, grad_lambda, vertices: [pa, pb, pc] }
    }

    /// Physical coordinates of a barycentric point.
    pub fn point(&self, l: [f64; 3]) -> [f64; 2] {
        let [pa, pb, pc] = self.vertices;
        [
            l[0] * pa[0] + l[1] * pb[0] + l[2] * pc[0],
            l[0] * pa[1] + l[1] * pb[1] + l[2] * pc[1],
        ]
    }
}

/// A finite-element field: a space plus one coefficient per dof.
#[derive(Debug, Clone)]
pub struct FeFunction {
    space: FeSpace,
    coeffs: Vec<f64>,
}

impl FeFunction {
    pub fn from_coeffs(space: FeSpace, coeffs: Vec<f64>) -> Self {
        assert_eq!(coeffs.len(), space.n_dofs());
        FeFunction { space, coeffs }
    }

    pub fn space(&self) -> &FeSpace {
        &self.space
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// self += alpha * other (same space).
    pub fn axpy(&mut self, alpha: f64, other: &FeFunction) {
        assert!(self.space.same_space(&other.space));
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in &mut self.coeffs {
            *a *= alpha;
        }
    }

    /// Pointwise evaluation inside element `t` at barycentric `l`; writes one
    /// value per component into `out`.
    pub fn eval(&self, t: usize, l: [f64; 3], out: &mut [f64]) {
        let nb = self.space.dofs_per_element();
        let mut basis = [0.0; 6];
        self.space.basis_values(l, &mut basis[..nb]);
        out[..self.space.components()].fill(0.0);
        for a in 0..nb {
            let s = self.space.scalar_dof(t, a);
            for c in 0..self.space.components() {
                out[c] += self.coeffs[self.space.dof(s, c)] * basis[a];
            }
        }
    }

    /// Gradient inside element `t`: `out[c][d] = d u_c / d x_d`.
    pub fn eval_grad(&self, t: usize, l: [f64; 3], geom: &ElementGeometry, out: &mut [[f64; 2]]) {
        let nb = self.space.dofs_per_element();
        let mut dndl = [[0.0; 3]; 6];
        self.space.basis_bary_derivs(l, &mut dndl[..nb]);
        for row in out.iter_mut().take(self.space.components()) {
            *row = [0.0; 2];
        }
        for a in 0..nb {
            let s = self.space.scalar_dof(t, a);
            let mut grad = [0.0; 2];
            for k in 0..3 {
                grad[0] += dndl[a][k] * geom.grad_lambda[k][0];
                grad[1] += dndl[a][k] * geom.grad_lambda[k][1];
            }
            for c in 0..self.space.components() {
                let coeff = self.coeffs[self.space.dof(s, c)];
                out[c][0] += coeff * grad[0];
                out[c][1] += coeff * grad[1];
            }
        }
    }

    /// Largest absolute nodal coefficient (an L-infinity proxy exact at the
    /// interpolation nodes of these nodal bases).
    pub fn max_abs_nodal(&self) -> f64 {
        self.coeffs.iter().fold(0.0_f64, |m, &c| m.max(c.abs()))
    }
}

/// Mean of same-space fields, `(1/N) sum_j f_j` (exact: the bases are nodal).
pub fn ensemble_mean(fields: &[FeFunction]) -> FeFunction {
    assert!(!fields.is_empty());
    let mut mean = fields[0].clone();
    for f in &fields[1..] {
        mean.axpy(1.0, f);
    }
    mean.scale(1.0 / fields.len() as f64);
    mean
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::TriMesh;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn dof_counts_match_mesh_entities() {
        let mesh = Arc::new(TriMesh::unit_square(4));
        // Euler: E = T + V - 1 for a simply connected planar triangulation.
        let (v, t) = (mesh.n_vertices(), mesh.n_triangles());
        let e = t + v - 1;

        let p1 = FeSpace::scalar(mesh.clone(), Family::P1);
        assert_eq!(p1.n_dofs(), v);

        let p2v = FeSpace::vector(mesh.clone(), Family::P2);
        assert_eq!(p2v.n_dofs(), 2 * (v + e));
        assert_eq!(p2v.edges().n_edges(), e);

        let p1d = FeSpace::scalar(mesh, Family::P1Disc);
        assert_eq!(p1d.n_dofs(), 3 * t);
    }

    #[test]
    fn p2_reproduces_quadratics_exactly() {
        let mesh = Arc::new(TriMesh::unit_square(3));
        let space = FeSpace::scalar(mesh.clone(), Family::P2);
        let f = |x: [f64; 2]| 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1] + x[0] * x[0];
        let grad = |x: [f64; 2]| [2.0 + 0.5 * x[1] + 2.0 * x[0], -1.0 + 0.5 * x[0]];
        let u = space.interpolate_scalar(f);

        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..50 {
            let t = rng.random_range(0..mesh.n_triangles());
            let (a, b): (f64, f64) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
            let (a, b) = if a + b > 1.0 { (1.0 - a, 1.0 - b) } else { (a, b) };
            let l = [1.0 - a - b, a, b];
            let geom = ElementGeometry::new(&mesh, t);
            let x = geom.point(l);

            let mut val = [0.0];
            u.eval(t, l, &mut val);
            assert_relative_eq!(val[0], f(x), epsilon = 1e-13);

            let mut g = [[0.0; 2]];
            u.eval_grad(t, l, &geom, &mut g);
            let ge = grad(x);
            assert_relative_eq!(g[0][0], ge[0], epsilon = 1e-12);
            assert_relative_eq!(g[0][1], ge[1], epsilon = 1e-12);
        }
    }

    #[test]
    fn p1_and_p1disc_reproduce_linears() {
        let mesh = Arc::new(TriMesh::unit_square(2));
        let f = |x: [f64; 2]| 3.0 - x[0] + 2.0 * x[1];
        for family in [Family::P1, Family::P1Disc] {
            let space = FeSpace::scalar(mesh.clone(), family);
            let u = space.interpolate_scalar(f);
            for t in 0..mesh.n_triangles() {
                let geom = ElementGeometry::new(&mesh, t);
                let l = [0.3, 0.25, 0.45];
                let mut val = [0.0];
                u.eval(t, l, &mut val);
                assert_relative_eq!(val[0], f(geom.point(l)), epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn vector_interpolation_and_mean() {
        let mesh = Arc::new(TriMesh::unit_square(2));
        let space = FeSpace::vector(mesh, Family::P2);
        let u1 = space.interpolate_vector(|x| [x[0], -x[1]]);
        let u2 = space.interpolate_vector(|x| [3.0 * x[0], x[1]]);
        let mean = ensemble_mean(&[u1, u2]);
        let geom = ElementGeometry::new(mean.space().mesh(), 0);
        let l = [0.2, 0.5, 0.3];
        let x = geom.point(l);
        let mut val = [0.0; 2];
        mean.eval(0, l, &mut val);
        assert_relative_eq!(val[0], 2.0 * x[0], epsilon = 1e-13);
        assert_relative_eq!(val[1], 0.0, epsilon = 1e-13);
    }

    #[test]
    fn p2_basis_is_partition_of_unity() {
        let mut vals = [0.0; 6];
        basis_values(Family::P2, [0.2, 0.3, 0.5], &mut vals);
        assert_relative_eq!(vals.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
        // The barycentric coordinates are not independent, so the derivative
        // columns sum to a common constant rather than zero; the physical
        // gradient of the unity sum still vanishes because sum_k grad(l_k)=0.
        let mut dndl = [[0.0; 3]; 6];
        basis_bary_derivs(Family::P2, [0.2, 0.3, 0.5], &mut dndl);
        let col = |k: usize| dndl.iter().map(|row| row[k]).sum::<f64>();
        assert_relative_eq!(col(0), col(1), epsilon = 1e-13);
        assert_relative_eq!(col(1), col(2), epsilon = 1e-13);

        let mesh = Arc::new(TriMesh::unit_square(1));
        let geom = ElementGeometry::new(&mesh, 0);
        let mut grad_sum = [0.0; 2];
        for row in &dndl {
            for k in 0..3 {
                grad_sum[0] += row[k] * geom.grad_lambda[k][0];
                grad_sum[1] += row[k] * geom.grad_lambda[k][1];
            }
        }
        assert_relative_eq!(grad_sum[0], 0.0, epsilon = 1e-13);
        assert_relative_eq!(grad_sum[1], 0.0, epsilon = 1e-13);
    }
}
