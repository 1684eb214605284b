//! Essential boundary conditions on velocity-like spaces.
//!
//! Two constraint flavours are supported: full Dirichlet conditions (both
//! components prescribed) and normal-component conditions (`u . n = 0`, used
//! by the projection sub-step, restricted to axis-aligned boundary parts).
//! Constraints are imposed strongly: each constrained row of the system is
//! replaced by an identity row and the right-hand side carries the boundary
//! value.
//!
//! Nodes where differently tagged boundary parts meet take the tag of higher
//! [`BoundaryTag::precedence`] (walls beat lids beat inflow beat outflow), so
//! no-slip corners stay no-slip.  A node shared by two normal-constrained
//! edges with different normal axes gets both components constrained.

use std::collections::HashMap;

use crate::mesh::BoundaryTag;
use crate::space::{Family, FeSpace};
use crate::sparse::CsrMatrix;

/// One constrained degree of freedom.
#[derive(Debug, Clone, Copy)]
pub struct ConstraintEntry {
    /// Global dof index in the space.
    pub dof: usize,
    /// Scalar node the dof belongs to.
    pub scalar: usize,
    /// Constrained component.
    pub comp: usize,
    /// Node coordinates (where boundary data is evaluated).
    pub x: [f64; 2],
    /// Tag the value is taken from.
    pub tag: BoundaryTag,
}

/// A set of essential constraints on one space.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    entries: Vec<ConstraintEntry>,
}

/// Scalar boundary nodes of `space` on edges with a tag in `tags`, with the
/// winning tag at junction nodes; sorted by node id.
fn boundary_nodes(space: &FeSpace, tags: &[BoundaryTag]) -> Vec<(usize, [f64; 2], BoundaryTag)> {
    assert!(
        matches!(space.family(), Family::P1 | Family::P2),
        "essential constraints need a continuous nodal basis"
    );
    let mesh = space.mesh();
    let mut best: HashMap<usize, BoundaryTag> = HashMap::new();
    let mut claim = |node: usize, tag: BoundaryTag| {
        best.entry(node)
            .and_modify(|t| {
                if tag.precedence() < t.precedence() {
                    *t = tag;
                }
            })
            .or_insert(tag);
    };
    for edge in mesh.boundary_edges() {
        if !tags.contains(&edge.tag) {
            continue;
        }
        claim(edge.v[0], edge.tag);
        claim(edge.v[1], edge.tag);
        if space.family() == Family::P2 {
            let mid = space
                .edges()
                .edge_id(edge.v[0], edge.v[1])
                .expect("boundary edge missing from edge table");
            claim(mesh.n_vertices() + mid, edge.tag);
        }
    }
    let coords = space.scalar_dof_coords();
    let mut nodes: Vec<_> = best
        .into_iter()
        .map(|(node, tag)| (node, coords[node], tag))
        .collect();
    nodes.sort_by_key(|&(node, _, _)| node);
    nodes
}

impl ConstraintSet {
    /// Full Dirichlet constraints (every component) on the given tags.
    pub fn dirichlet(space: &FeSpace, tags: &[BoundaryTag]) -> Self {
        let mut entries = Vec::new();
        for (scalar, x, tag) in boundary_nodes(space, tags) {
            for comp in 0..space.components() {
                entries.push(ConstraintEntry { dof: space.dof(scalar, comp), scalar, comp, x, tag });
            }
        }
        ConstraintSet { entries }
    }

    /// Normal-component constraints (`u . n`) on the given tags.  Each tagged
    /// edge must be axis-aligned; a node where two constrained axes meet gets
    /// both components constrained.
    pub fn normal_component(space: &FeSpace, tags: &[BoundaryTag]) -> Self {
        assert_eq!(space.components(), 2);
        assert!(
            matches!(space.family(), Family::P1 | Family::P2),
            "essential constraints need a continuous nodal basis"
        );
        let mesh = space.mesh();
        // node -> per-axis winning tag
        let mut axes: HashMap<usize, [Option<BoundaryTag>; 2]> = HashMap::new();
        let mut claim = |node: usize, axis: usize, tag: BoundaryTag| {
            let slot = &mut axes.entry(node).or_insert([None; 2])[axis];
            match slot {
                Some(t) if tag.precedence() >= t.precedence() => {}
                _ => *slot = Some(tag),
            }
        };
        for edge in mesh.boundary_edges() {
            if !tags.contains(&edge.tag) {
                continue;
            }
            let n = edge.outward_normal(mesh);
            let axis = if n[1].abs() < 1e-12 {
                0
            } else if n[0].abs() < 1e-12 {
                1
            } else {
                panic!("normal-component constraints require axis-aligned edges (normal {n:?})");
            };
            claim(edge.v[0], axis, edge.tag);
            claim(edge.v[1], axis, edge.tag);
            if space.family() == Family::P2 {
                let mid = space
                    .edges()
                    .edge_id(edge.v[0], edge.v[1])
                    .expect("boundary edge missing from edge table");
                claim(mesh.n_vertices() + mid, axis, edge.tag);
            }
        }
        let coords = space.scalar_dof_coords();
        let mut nodes: Vec<_> = axes.into_iter().collect();
        nodes.sort_by_key(|&(node, _)| node);
        let mut entries = Vec::new();
        for (scalar, per_axis) in nodes {
            for (comp, tag) in per_axis.into_iter().enumerate() {
                if let Some(tag) = tag {
                    entries.push(ConstraintEntry {
                        dof: space.dof(scalar, comp),
                        scalar,
                        comp,
                        x: coords[scalar],
                        tag,
                    });
                }
            }
        }
        ConstraintSet { entries }
    }

    pub fn entries(&self) -> &[ConstraintEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dofs(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.dof)
    }

    /// Replaces each constrained row of `m` by an identity row.  The matrix
    /// may be a larger block system as long as the constrained dofs keep
    /// their indices (velocity blocks are always placed first).
    pub fn constrain_matrix(&self, m: &mut CsrMatrix) {
        for e in &self.entries {
            m.zero_row(e.dof);
            m.set(e.dof, e.dof, 1.0);
        }
    }

    /// Writes boundary values into `rhs`: `rhs[dof] = g(tag, x)[comp]`.
    pub fn apply_values(&self, rhs: &mut [f64], g: impl Fn(BoundaryTag, [f64; 2]) -> [f64; 2]) {
        for e in &self.entries {
            rhs[e.dof] = g(e.tag, e.x)[e.comp];
        }
    }

    /// Homogeneous version: zeroes the constrained rhs entries.
    pub fn apply_zero(&self, rhs: &mut [f64]) {
        for e in &self.entries {
            rhs[e.dof] = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::TriMesh;
    use std::sync::Arc;

    #[test]
    fn dirichlet_covers_all_boundary_nodes_of_p2() {
        let mesh = Arc::new(TriMesh::unit_square(2));
        let space = FeSpace::vector(mesh, Family::P2);
        let bc = ConstraintSet::dirichlet(&space, &BoundaryTag::ALL);
        // 8 boundary vertices + 8 boundary edge midpoints, two components.
        assert_eq!(bc.len(), 2 * 16);
        // Every constrained node actually sits on the unit-square boundary.
        for e in bc.entries() {
            let on = e.x[0] == 0.0 || e.x[0] == 1.0 || e.x[1] == 0.0 || e.x[1] == 1.0;
            assert!(on, "node {:?} not on boundary", e.x);
        }
    }

    #[test]
    fn junction_nodes_take_the_stronger_tag() {
        // In the step channel, inflow boundary meets walls at (0,0) and
        // (0,10); those shared nodes must be tagged Wall.
        let mesh = Arc::new(TriMesh::step_channel(1));
        let space = FeSpace::vector(mesh, Family::P2);
        let bc = ConstraintSet::dirichlet(&space, &BoundaryTag::ALL);
        for e in bc.entries() {
            if e.x == [0.0, 0.0] || e.x == [0.0, 10.0] {
                assert_eq!(e.tag, BoundaryTag::Wall);
            } else if e.x[0] == 0.0 {
                assert_eq!(e.tag, BoundaryTag::Inflow);
            }
        }
    }

    #[test]
    fn normal_component_constrains_one_axis_on_straight_walls() {
        let mesh = Arc::new(TriMesh::step_channel(1));
        let space = FeSpace::vector(mesh.clone(), Family::P2);
        let bc = ConstraintSet::normal_component(&space, &[BoundaryTag::Wall]);
        assert!(!bc.is_empty());
        let comps_at = |x: [f64; 2]| -> Vec<usize> {
            let mut c: Vec<_> =
                bc.entries().iter().filter(|e| e.x == x).map(|e| e.comp).collect();
            c.sort_unstable();
            c
        };
        // Interior of a horizontal wall: only the y component.
        assert_eq!(comps_at([2.0, 0.0]), vec![1]);
        assert_eq!(comps_at([2.0, 10.0]), vec![1]);
        assert_eq!(comps_at([5.5, 1.0]), vec![1]);
        // Interior of the vertical step sides: only the x component.
        assert_eq!(comps_at([5.0, 0.5]), vec![0]);
        assert_eq!(comps_at([6.0, 0.5]), vec![0]);
        // Step corners join a vertical and a horizontal wall: both components.
        for corner in [[5.0, 0.0], [6.0, 0.0], [5.0, 1.0], [6.0, 1.0]] {
            assert_eq!(comps_at(corner), vec![0, 1], "corner {corner:?}");
        }
        // Wall/inflow junctions constrain only the wall's normal axis,
        // because inflow was not in the constrained tag set.
        assert_eq!(comps_at([0.0, 0.0]), vec![1]);
        assert_eq!(comps_at([0.0, 10.0]), vec![1]);
        // Inflow interior nodes are untouched.
        assert_eq!(comps_at([0.0, 5.0]), Vec::<usize>::new());
        for e in bc.entries() {
            assert!(e.tag == BoundaryTag::Wall);
        }
    }

    #[test]
    fn constrain_matrix_and_values() {
        let mesh = Arc::new(TriMesh::unit_square(1));
        let space = FeSpace::vector(mesh, Family::P1);
        let bc = ConstraintSet::dirichlet(&space, &[BoundaryTag::Wall]);
        let n = space.n_dofs();
        let pairs: Vec<_> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
        let pattern = crate::sparse::SparsityPattern::from_pairs(n, n, pairs);
        let mut m = CsrMatrix::zeros(pattern);
        for i in 0..n {
            for j in 0..n {
                m.set(i, j, 2.0);
            }
        }
        bc.constrain_matrix(&mut m);
        let mut rhs = vec![7.0; n];
        bc.apply_values(&mut rhs, |_, x| [x[0], 10.0 * x[1]]);
        for e in bc.entries() {
            let (cols, vals) = m.row(e.dof);
            for (c, v) in cols.iter().zip(vals) {
                let expect = if *c == e.dof { 1.0 } else { 0.0 };
                assert_eq!(*v, expect);
            }
            let want = if e.comp == 0 { e.x[0] } else { 10.0 * e.x[1] };
            assert_eq!(rhs[e.dof], want);
        }
    }
}
