//! Degree-of-freedom maps and local shape functions for the two discrete
//! spaces: continuous quadratic vectors (displacement) and discontinuous
//! linear scalars (pressure).

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Result};
use crate::mesh::Mesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpaceKind {
    VectorCg2,
    ScalarDg1,
}

impl SpaceKind {
    pub fn components(self) -> usize {
        match self {
            SpaceKind::VectorCg2 => 2,
            SpaceKind::ScalarDg1 => 1,
        }
    }

    pub fn local_dofs(self) -> usize {
        match self {
            SpaceKind::VectorCg2 => 12,
            SpaceKind::ScalarDg1 => 3,
        }
    }
}

/// Cell-local to global dof table.
///
/// Vector CG2 dofs are interleaved by node: global dof `2 * node + comp`,
/// where nodes are the mesh vertices followed by one node per edge.
/// Local CG2 dof `2 * l + comp` uses local node `l` (0..3 vertices, 3..6 the
/// midpoint of the edge opposite vertex `l - 3`). DG1 dofs are `3 * cell + k`.
#[derive(Debug, Clone)]
pub struct DofMap {
    kind: SpaceKind,
    table: Vec<usize>,
    n_dofs: usize,
}

impl DofMap {
    pub fn vector_cg2(mesh: &Mesh) -> DofMap {
        let nv = mesh.num_vertices();
        let mut table = Vec::with_capacity(12 * mesh.num_cells());
        for c in 0..mesh.num_cells() {
            let verts = mesh.cell(c);
            let edges = mesh.cell_edges(c);
            for l in 0..6 {
                let node = if l < 3 { verts[l] } else { nv + edges[l - 3] };
                table.push(2 * node);
                table.push(2 * node + 1);
            }
        }
        DofMap { kind: SpaceKind::VectorCg2, table, n_dofs: 2 * (nv + mesh.num_edges()) }
    }

    pub fn scalar_dg1(mesh: &Mesh) -> DofMap {
        let n = 3 * mesh.num_cells();
        DofMap { kind: SpaceKind::ScalarDg1, table: (0..n).collect(), n_dofs: n }
    }

    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    pub fn cell_dofs(&self, c: usize) -> &[usize] {
        let k = self.kind.local_dofs();
        &self.table[k * c..k * (c + 1)]
    }

    /// Coordinates of each dof's node, one entry per dof.
    pub fn dof_coordinates(&self, mesh: &Mesh) -> Vec<[f64; 2]> {
        let mut coords = vec![[0.0; 2]; self.n_dofs];
        for c in 0..mesh.num_cells() {
            let x = mesh.cell_coords(c);
            let nodes = local_node_coords(&x);
            let dofs = self.cell_dofs(c);
            match self.kind {
                SpaceKind::VectorCg2 => {
                    for (i, &d) in dofs.iter().enumerate() {
                        coords[d] = nodes[i / 2];
                    }
                }
                SpaceKind::ScalarDg1 => {
                    for (k, &d) in dofs.iter().enumerate() {
                        coords[d] = x[k];
                    }
                }
            }
        }
        coords
    }

    /// Nodal interpolant of `f` (returns `components()` values per point).
    pub fn interpolate<F>(&self, mesh: &Mesh, f: F) -> Vec<f64>
    where
        F: Fn([f64; 2]) -> [f64; 2],
    {
        let coords = self.dof_coordinates(mesh);
        match self.kind {
            SpaceKind::VectorCg2 => (0..self.n_dofs).map(|d| f(coords[d])[d % 2]).collect(),
            SpaceKind::ScalarDg1 => coords.iter().map(|&x| f(x)[0]).collect(),
        }
    }

    /// Evaluates a discrete field at arbitrary points; one `Vec` of
    /// components per point. Points on shared facets use the lowest-index cell.
    pub fn interpolate_at_points(
        &self,
        mesh: &Mesh,
        dofs: &[f64],
        points: &[[f64; 2]],
    ) -> Result<Vec<Vec<f64>>> {
        ensure_len(self.n_dofs, dofs.len())?;
        points
            .iter()
            .map(|&p| {
                let c = mesh.locate(p)?;
                let bary = mesh.barycentric(c, p);
                let local = self.cell_dofs(c);
                Ok(match self.kind {
                    SpaceKind::VectorCg2 => {
                        let phi = p2_values(bary);
                        let mut v = vec![0.0; 2];
                        for (l, w) in phi.iter().enumerate() {
                            v[0] += w * dofs[local[2 * l]];
                            v[1] += w * dofs[local[2 * l + 1]];
                        }
                        v
                    }
                    SpaceKind::ScalarDg1 => {
                        vec![(0..3).map(|k| bary[k] * dofs[local[k]]).sum()]
                    }
                })
            })
            .collect()
    }
}

/// Per-cell geometric data for affine triangles.
#[derive(Debug, Clone, Copy)]
pub struct CellGeometry {
    pub coords: [[f64; 2]; 3],
    pub area: f64,
    /// Gradients of the barycentric coordinates.
    pub grad_bary: [[f64; 2]; 3],
}

impl CellGeometry {
    pub fn new(mesh: &Mesh, c: usize) -> CellGeometry {
        let x = mesh.cell_coords(c);
        let det = (x[1][0] - x[0][0]) * (x[2][1] - x[0][1]) - (x[2][0] - x[0][0]) * (x[1][1] - x[0][1]);
        let grad_bary = [
            [(x[1][1] - x[2][1]) / det, (x[2][0] - x[1][0]) / det],
            [(x[2][1] - x[0][1]) / det, (x[0][0] - x[2][0]) / det],
            [(x[0][1] - x[1][1]) / det, (x[1][0] - x[0][0]) / det],
        ];
        CellGeometry { coords: x, area: 0.5 * det, grad_bary }
    }

    pub fn point(&self, bary: [f64; 3]) -> [f64; 2] {
        let x = &self.coords;
        [
            bary[0] * x[0][0] + bary[1] * x[1][0] + bary[2] * x[2][0],
            bary[0] * x[0][1] + bary[1] * x[1][1] + bary[2] * x[2][1],
        ]
    }

    /// Gradients of the six P2 shape functions at `bary`.
    pub fn p2_gradients(&self, bary: [f64; 3]) -> [[f64; 2]; 6] {
        let g = &self.grad_bary;
        let mut out = [[0.0; 2]; 6];
        for i in 0..3 {
            let s = 4.0 * bary[i] - 1.0;
            out[i] = [s * g[i][0], s * g[i][1]];
        }
        for k in 0..3 {
            let (a, b) = ((k + 1) % 3, (k + 2) % 3);
            out[3 + k] = [
                4.0 * (bary[a] * g[b][0] + bary[b] * g[a][0]),
                4.0 * (bary[a] * g[b][1] + bary[b] * g[a][1]),
            ];
        }
        out
    }
}

/// Values of the six P2 shape functions at `bary`.
pub fn p2_values(bary: [f64; 3]) -> [f64; 6] {
    let l = bary;
    [
        l[0] * (2.0 * l[0] - 1.0),
        l[1] * (2.0 * l[1] - 1.0),
        l[2] * (2.0 * l[2] - 1.0),
        4.0 * l[1] * l[2],
        4.0 * l[2] * l[0],
        4.0 * l[0] * l[1],
    ]
}

/// Barycentric coordinates of local P2 node `l`.
pub fn p2_node_bary(l: usize) -> [f64; 3] {
    match l {
        0 => [1.0, 0.0, 0.0],
        1 => [0.0, 1.0, 0.0],
        2 => [0.0, 0.0, 1.0],
        3 => [0.0, 0.5, 0.5],
        4 => [0.5, 0.0, 0.5],
        _ => [0.5, 0.5, 0.0],
    }
}

fn local_node_coords(x: &[[f64; 2]; 3]) -> [[f64; 2]; 6] {
    let mid = |a: [f64; 2], b: [f64; 2]| [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
    [x[0], x[1], x[2], mid(x[1], x[2]), mid(x[2], x[0]), mid(x[0], x[1])]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_unit_square_mesh, MeshPattern};

    #[test]
    fn dof_counts() {
        let m = Mesh::unit_square(4, MeshPattern::Crossed, true).unwrap();
        let u = DofMap::vector_cg2(&m);
        let p = DofMap::scalar_dg1(&m);
        assert_eq!(u.n_dofs(), 2 * (m.num_vertices() + m.num_edges()));
        assert_eq!(p.n_dofs(), 3 * m.num_cells());
    }

    #[test]
    fn reference_dof_counts() {
        let m = Mesh::reference().unwrap();
        assert_eq!(DofMap::vector_cg2(&m).n_dofs(), 9722);
        assert_eq!(DofMap::scalar_dg1(&m).n_dofs(), 7110);
    }

    #[test]
    fn cg2_dofs_are_shared_dg1_are_not() {
        let m = build_unit_square_mesh(3, false).unwrap();
        let u = DofMap::vector_cg2(&m);
        let mut seen = vec![0usize; u.n_dofs()];
        for c in 0..m.num_cells() {
            for &d in u.cell_dofs(c) {
                seen[d] += 1;
            }
        }
        assert!(seen.iter().all(|&k| k >= 1));
        assert!(seen.iter().any(|&k| k > 1));
        let p = DofMap::scalar_dg1(&m);
        let mut seen = vec![0usize; p.n_dofs()];
        for c in 0..m.num_cells() {
            for &d in p.cell_dofs(c) {
                seen[d] += 1;
            }
        }
        assert!(seen.iter().all(|&k| k == 1));
    }

    #[test]
    fn p2_partition_of_unity_and_gradient_sum() {
        let m = build_unit_square_mesh(2, false).unwrap();
        let g = CellGeometry::new(&m, 3);
        let bary = [0.2, 0.3, 0.5];
        let s: f64 = p2_values(bary).iter().sum();
        assert!((s - 1.0).abs() < 1e-15);
        let gs = g.p2_gradients(bary).iter().fold([0.0, 0.0], |a, v| [a[0] + v[0], a[1] + v[1]]);
        assert!(gs[0].abs() < 1e-12 && gs[1].abs() < 1e-12);
    }

    #[test]
    fn constant_field_evaluates_to_constant() {
        let m = Mesh::unit_square(4, MeshPattern::Mixed { crossed: 5 }, true).unwrap();
        let pts = [[0.1, 0.2], [0.5, 0.5], [1.0, 1.0], [0.0, 0.3]];
        for space in [DofMap::vector_cg2(&m), DofMap::scalar_dg1(&m)] {
            let f = space.interpolate(&m, |_| [2.5, 2.5]);
            for v in space.interpolate_at_points(&m, &f, &pts).unwrap() {
                assert!(v.iter().all(|&c| (c - 2.5).abs() < 1e-13));
            }
        }
    }

    #[test]
    fn dg1_reproduces_linears() {
        let m = Mesh::unit_square(4, MeshPattern::Crossed, false).unwrap();
        let p = DofMap::scalar_dg1(&m);
        let f = p.interpolate(&m, |x| [x[0] + x[1], 0.0]);
        let pts = [[0.13, 0.77], [0.5, 0.25], [0.99, 0.01]];
        for (v, x) in p.interpolate_at_points(&m, &f, &pts).unwrap().iter().zip(pts) {
            assert!((v[0] - (x[0] + x[1])).abs() < 1e-13);
        }
    }

    #[test]
    fn cg2_reproduces_quadratics_at_centroids() {
        let m = build_unit_square_mesh(4, false).unwrap();
        let u = DofMap::vector_cg2(&m);
        let f = u.interpolate(&m, |x| [x[0] * x[0], x[0] * x[1]]);
        let centroids: Vec<[f64; 2]> = (0..m.num_cells()).map(|c| m.centroid(c)).collect();
        for (v, x) in u.interpolate_at_points(&m, &f, &centroids).unwrap().iter().zip(&centroids) {
            assert!((v[0] - x[0] * x[0]).abs() < 1e-13);
            assert!((v[1] - x[0] * x[1]).abs() < 1e-13);
        }
    }

    #[test]
    fn outside_points_are_errors() {
        let m = build_unit_square_mesh(2, false).unwrap();
        let p = DofMap::scalar_dg1(&m);
        let f = vec![0.0; p.n_dofs()];
        assert!(p.interpolate_at_points(&m, &f, &[[-0.1, 0.5]]).is_err());
        assert!(p.interpolate_at_points(&m, &[0.0], &[[0.5, 0.5]]).is_err());
    }
}
