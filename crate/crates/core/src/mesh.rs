//! Conforming triangular meshes for the 2D flow domains.
//!
//! Meshes are plain vertex/triangle soups with derived, tagged boundary
//! edges.  All triangles are stored counter-clockwise.  The generators cover
//! the domains used by the solvers: structured squares/rectangles (split
//! along the bottom-left-to-top-right diagonal), the forward-facing step
//! channel, and barycentric refinements of either (needed by the
//! divergence-free velocity/pressure pairing).

use std::collections::HashMap;
use thiserror::Error;

/// Label attached to every boundary edge.  Tags drive boundary-condition
/// application; a generator tags everything `Wall` unless told otherwise and
/// callers retag sides afterwards (e.g. the moving lid of the cavity).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BoundaryTag {
    /// Upstream channel cross-section.
    Inflow,
    /// Downstream channel cross-section.
    Outflow,
    /// Solid no-penetration boundary.
    Wall,
    /// Driven lid of the cavity.
    Lid,
}

impl BoundaryTag {
    /// Every tag, in precedence order used to resolve corner vertices shared
    /// by two differently tagged edges (strong wall data wins over in/outflow).
    pub const ALL: [BoundaryTag; 4] = [
        BoundaryTag::Wall,
        BoundaryTag::Lid,
        BoundaryTag::Inflow,
        BoundaryTag::Outflow,
    ];

    /// Rank used when a corner vertex belongs to edges of different tags;
    /// lower rank wins.
    pub(crate) fn precedence(self) -> usize {
        match self {
            BoundaryTag::Wall => 0,
            BoundaryTag::Lid => 1,
            BoundaryTag::Inflow => 2,
            BoundaryTag::Outflow => 3,
        }
    }
}

/// One boundary edge, oriented as it appears in its owning (CCW) triangle,
/// so the outward normal is the edge direction rotated by -90 degrees.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryEdge {
    /// Endpoint vertex indices, in the owning triangle's orientation.
    pub v: [usize; 2],
    pub tag: BoundaryTag,
}

impl BoundaryEdge {
    /// Outward unit normal (valid because triangles are CCW and the edge is
    /// stored with the triangle's winding).
    pub fn outward_normal(&self, mesh: &TriMesh) -> [f64; 2] {
        let a = mesh.vertices[self.v[0]];
        let b = mesh.vertices[self.v[1]];
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len = (dx * dx + dy * dy).sqrt();
        [dy / len, -dx / len]
    }

    pub fn length(&self, mesh: &TriMesh) -> f64 {
        let a = mesh.vertices[self.v[0]];
        let b = mesh.vertices[self.v[1]];
        ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
    }
}

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("triangle {0} is degenerate or clockwise (signed area {1:.3e})")]
    BadOrientation(usize, f64),
    #[error("edge ({0}, {1}) is shared by more than two triangles")]
    NonManifoldEdge(usize, usize),
    #[error("vertex {0} is not referenced by any triangle")]
    DanglingVertex(usize),
}

/// A conforming triangulation of a polygonal domain.
#[derive(Debug, Clone)]
pub struct TriMesh {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<BoundaryEdge>,
}

impl TriMesh {
    /// Builds a mesh from raw cells.  Triangles are reoriented CCW if needed,
    /// boundary edges are derived (edges owned by exactly one triangle) and
    /// tagged by `tagger`, which receives the edge midpoint.
    pub fn from_cells(
        vertices: Vec<[f64; 2]>,
        mut triangles: Vec<[usize; 3]>,
        tagger: impl Fn([f64; 2]) -> BoundaryTag,
    ) -> Self {
        for tri in &mut triangles {
            if signed_area(&vertices, *tri) < 0.0 {
                tri.swap(1, 2);
            }
        }
        let boundary_edges = derive_boundary(&vertices, &triangles, &tagger);
        TriMesh { vertices, triangles, boundary_edges }
    }

    /// Structured triangulation of an axis-aligned rectangle with `nx` by
    /// `ny` cells, each split along its bottom-left-to-top-right diagonal.
    /// All boundary edges are tagged `Wall`.
    pub fn rectangle(lo: [f64; 2], hi: [f64; 2], nx: usize, ny: usize) -> Self {
        assert!(nx > 0 && ny > 0, "rectangle needs at least one cell per side");
        let (dx, dy) = ((hi[0] - lo[0]) / nx as f64, (hi[1] - lo[1]) / ny as f64);
        let vid = |i: usize, j: usize| j * (nx + 1) + i;
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push([lo[0] + i as f64 * dx, lo[1] + j as f64 * dy]);
            }
        }
        let mut triangles = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let (v00, v10) = (vid(i, j), vid(i + 1, j));
                let (v01, v11) = (vid(i, j + 1), vid(i + 1, j + 1));
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            }
        }
        Self::from_cells(vertices, triangles, |_| BoundaryTag::Wall)
    }

    /// Unit square `[0,1]^2` with `n` cells per side; `h = sqrt(2)/n`.
    pub fn unit_square(n: usize) -> Self {
        Self::rectangle([0.0, 0.0], [1.0, 1.0], n, n)
    }

    /// The benchmark step channel: a 40 x 10 rectangle (30-unit channel plus
    /// a 10-unit outflow extension) with a unit square block removed from the
    /// lower wall on `[5,6] x [0,1]`.  `resolution` is the number of cells
    /// per unit length.  Tags: `Inflow` at x=0, `Outflow` at x=40, `Wall`
    /// elsewhere (top, bottom and the three exposed step faces).
    pub fn step_channel(resolution: usize) -> Self {
        assert!(resolution > 0, "step channel needs at least one cell per unit");
        let r = resolution;
        let (nx, ny) = (40 * r, 10 * r);
        let h = 1.0 / r as f64;
        let inside_step = |i: usize, j: usize| (5 * r..6 * r).contains(&i) && j < r;

        // Keep only grid vertices referenced by a retained cell.
        let full_vid = |i: usize, j: usize| j * (nx + 1) + i;
        let mut keep = vec![false; (nx + 1) * (ny + 1)];
        for j in 0..ny {
            for i in 0..nx {
                if !inside_step(i, j) {
                    for (di, dj) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                        keep[full_vid(i + di, j + dj)] = true;
                    }
                }
            }
        }
        let mut remap = vec![usize::MAX; keep.len()];
        let mut vertices = Vec::new();
        for j in 0..=ny {
            for i in 0..=nx {
                let id = full_vid(i, j);
                if keep[id] {
                    remap[id] = vertices.len();
                    vertices.push([i as f64 * h, j as f64 * h]);
                }
            }
        }
        let mut triangles = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                if inside_step(i, j) {
                    continue;
                }
                let (v00, v10) = (remap[full_vid(i, j)], remap[full_vid(i + 1, j)]);
                let (v01, v11) = (remap[full_vid(i, j + 1)], remap[full_vid(i + 1, j + 1)]);
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            }
        }
        Self::from_cells(vertices, triangles, |mid| {
            if mid[0] == 0.0 {
                BoundaryTag::Inflow
            } else if mid[0] == 40.0 {
                BoundaryTag::Outflow
            } else {
                BoundaryTag::Wall
            }
        })
    }

    /// Splits every triangle into three by inserting its barycenter.  Parent
    /// vertices keep their indices, boundary edges (and tags) are unchanged,
    /// and the mesh size `h` is preserved because every parent edge survives.
    pub fn barycentric_refine(&self) -> Self {
        let mut vertices = self.vertices.clone();
        let mut triangles = Vec::with_capacity(3 * self.triangles.len());
        for &[a, b, c] in &self.triangles {
            let (pa, pb, pc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
            let center = [(pa[0] + pb[0] + pc[0]) / 3.0, (pa[1] + pb[1] + pc[1]) / 3.0];
            let m = vertices.len();
            vertices.push(center);
            triangles.push([a, b, m]);
            triangles.push([b, c, m]);
            triangles.push([c, a, m]);
        }
        TriMesh {
            vertices,
            triangles,
            boundary_edges: self.boundary_edges.clone(),
        }
    }

    /// Re-tags boundary edges: `f` gets each edge midpoint and returns the
    /// new tag, or `None` to keep the current one.
    pub fn retag(&mut self, f: impl Fn([f64; 2]) -> Option<BoundaryTag>) {
        for edge in iter_mut_edges(&mut self.boundary_edges) {
            let a = self.vertices[edge.v[0]];
            let b = self.vertices[edge.v[1]];
            if let Some(tag) = f([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]) {
                edge.tag = tag;
            }
        }
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn vertex(&self, v: usize) -> [f64; 2] {
        self.vertices[v]
    }

    pub fn triangle(&self, t: usize) -> [usize; 3] {
        self.triangles[t]
    }

    /// Area of triangle `t` (positive; triangles are CCW).
    pub fn triangle_area(&self, t: usize) -> f64 {
        signed_area(&self.vertices, self.triangles[t])
    }

    /// Total mesh area.
    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Mesh size: the largest triangle diameter (longest edge).
    pub fn h_max(&self) -> f64 {
        let mut h: f64 = 0.0;
        for &[a, b, c] in &self.triangles {
            for (p, q) in [(a, b), (b, c), (c, a)] {
                let (pp, pq) = (self.vertices[p], self.vertices[q]);
                h = h.max(((pq[0] - pp[0]).powi(2) + (pq[1] - pp[1]).powi(2)).sqrt());
            }
        }
        h
    }

    /// Checks orientation, edge manifoldness and vertex usage.
    pub fn validate(&self) -> Result<(), MeshError> {
        let mut used = vec![false; self.vertices.len()];
        for (t, &tri) in self.triangles.iter().enumerate() {
            let area = signed_area(&self.vertices, tri);
            if area <= 0.0 {
                return Err(MeshError::BadOrientation(t, area));
            }
            for v in tri {
                used[v] = true;
            }
        }
        if let Some(v) = used.iter().position(|&u| !u) {
            return Err(MeshError::DanglingVertex(v));
        }
        let mut counts: HashMap<(usize, usize), usize> = HashMap::new();
        for &tri in &self.triangles {
            for (a, b) in tri_edges(tri) {
                *counts.entry(sorted_pair(a, b)).or_insert(0) += 1;
            }
        }
        for (&(a, b), &c) in &counts {
            if c > 2 {
                return Err(MeshError::NonManifoldEdge(a, b));
            }
        }
        Ok(())
    }
}

fn iter_mut_edges(edges: &mut [BoundaryEdge]) -> impl Iterator<Item = &mut BoundaryEdge> {
    edges.iter_mut()
}

fn signed_area(vertices: &[[f64; 2]], [a, b, c]: [usize; 3]) -> f64 {
    let (pa, pb, pc) = (vertices[a], vertices[b], vertices[c]);
    0.5 * ((pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]))
}

fn tri_edges([a, b, c]: [usize; 3]) -> [(usize, usize); 3] {
    [(a, b), (b, c), (c, a)]
}

pub(crate) fn sorted_pair(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn derive_boundary(
    vertices: &[[f64; 2]],
    triangles: &[[usize; 3]],
    tagger: &impl Fn([f64; 2]) -> BoundaryTag,
) -> Vec<BoundaryEdge> {
    // Count undirected edges; the ones owned by a single triangle form the
    // boundary.  Keep the owning triangle's orientation for outward normals.
    let mut counts: HashMap<(usize, usize), (usize, (usize, usize))> = HashMap::new();
    for &tri in triangles {
        for (a, b) in tri_edges(tri) {
            let entry = counts.entry(sorted_pair(a, b)).or_insert((0, (a, b)));
            entry.0 += 1;
        }
    }
    let mut edges: Vec<BoundaryEdge> = counts
        .into_iter()
        .filter(|&(_, (count, _))| count == 1)
        .map(|(_, (_, (a, b)))| {
            let (pa, pb) = (vertices[a], vertices[b]);
            let mid = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
            BoundaryEdge { v: [a, b], tag: tagger(mid) }
        })
        .collect();
    // HashMap iteration order is unspecified; sort for reproducible output.
    edges.sort_by_key(|e| e.v);
    edges
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn unit_square_counts_and_size() {
        let mesh = TriMesh::unit_square(4);
        assert_eq!(mesh.n_triangles(), 32);
        assert_eq!(mesh.n_vertices(), 25);
        assert_eq!(mesh.boundary_edges().len(), 16);
        assert_relative_eq!(mesh.area(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(mesh.h_max(), 2.0_f64.sqrt() / 4.0, epsilon = 1e-14);
        mesh.validate().unwrap();
    }

    #[test]
    fn rectangle_area_and_tags() {
        let mesh = TriMesh::rectangle([-1.0, -1.0], [1.0, 1.0], 3, 5);
        assert_relative_eq!(mesh.area(), 4.0, epsilon = 1e-13);
        assert!(mesh.boundary_edges().iter().all(|e| e.tag == BoundaryTag::Wall));
        mesh.validate().unwrap();
    }

    #[test]
    fn step_channel_geometry() {
        let mesh = TriMesh::step_channel(1);
        // 40x10 cells minus the unit step, two triangles per cell.
        assert_eq!(mesh.n_triangles(), 2 * (400 - 1));
        assert_relative_eq!(mesh.area(), 399.0, epsilon = 1e-10);
        mesh.validate().unwrap();

        let count = |tag| {
            mesh.boundary_edges()
                .iter()
                .filter(|e| e.tag == tag)
                .count()
        };
        assert_eq!(count(BoundaryTag::Inflow), 10);
        assert_eq!(count(BoundaryTag::Outflow), 10);
        // walls: top 40, bottom 39, three step faces 1 each.
        assert_eq!(count(BoundaryTag::Wall), 40 + 39 + 3);

        // Outward normals at the extremes point out of the domain.
        for e in mesh.boundary_edges() {
            let n = e.outward_normal(&mesh);
            match e.tag {
                BoundaryTag::Inflow => assert_relative_eq!(n[0], -1.0, epsilon = 1e-14),
                BoundaryTag::Outflow => assert_relative_eq!(n[0], 1.0, epsilon = 1e-14),
                _ => {}
            }
        }
    }

    #[test]
    fn step_channel_refines_to_finer_resolution() {
        let mesh = TriMesh::step_channel(2);
        assert_eq!(mesh.n_triangles(), 2 * (40 * 2 * 10 * 2 - 4));
        assert_relative_eq!(mesh.area(), 399.0, epsilon = 1e-10);
        mesh.validate().unwrap();
    }

    #[test]
    fn barycentric_refine_triples_cells_and_preserves_boundary() {
        let parent = TriMesh::unit_square(4);
        let refined = parent.barycentric_refine();
        assert_eq!(refined.n_triangles(), 3 * parent.n_triangles());
        assert_eq!(refined.n_vertices(), parent.n_vertices() + parent.n_triangles());
        assert_eq!(refined.boundary_edges().len(), parent.boundary_edges().len());
        assert_relative_eq!(refined.area(), 1.0, epsilon = 1e-13);
        assert_relative_eq!(refined.h_max(), parent.h_max(), epsilon = 1e-14);
        refined.validate().unwrap();
    }

    #[test]
    fn retag_marks_cavity_lid() {
        let mut mesh = TriMesh::rectangle([-1.0, -1.0], [1.0, 1.0], 4, 4);
        mesh.retag(|mid| (mid[1] == 1.0).then_some(BoundaryTag::Lid));
        let lids = mesh
            .boundary_edges()
            .iter()
            .filter(|e| e.tag == BoundaryTag::Lid)
            .count();
        assert_eq!(lids, 4);
        assert_eq!(mesh.boundary_edges().len(), 16);
    }

    #[test]
    fn boundary_edges_are_deterministic() {
        let a = TriMesh::unit_square(3);
        let b = TriMesh::unit_square(3);
        let pairs =
            |m: &TriMesh| m.boundary_edges().iter().map(|e| e.v).collect::<Vec<_>>();
        assert_eq!(pairs(&a), pairs(&b));
    }
}
