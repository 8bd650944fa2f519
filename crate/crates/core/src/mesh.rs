//! Structured triangulations of the unit square and their facet topology.
//!
//! Cells are stored counter-clockwise. Local facet `k` of a cell is the edge
//! opposite its local vertex `k`. Interior facets are oriented from the lower
//! cell index (`plus`) to the higher one (`minus`); the facet normal is the
//! outward normal of the `plus` cell.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GEOM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundaryLabel {
    Left,
    Top,
    Right,
    Bottom,
}

impl BoundaryLabel {
    pub const ALL: [BoundaryLabel; 4] = [Self::Left, Self::Top, Self::Right, Self::Bottom];

    pub fn name(self) -> &'static str {
        match self {
            Self::Left => "left",
            Self::Top => "top",
            Self::Right => "right",
            Self::Bottom => "bottom",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Subdomain {
    /// y < 0.5
    Lower,
    /// y > 0.5
    Upper,
}

/// How each grid square is split into triangles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeshPattern {
    /// Two right triangles per square, diagonal from lower-left to upper-right.
    Right,
    /// Four triangles per square meeting at the square's centre.
    Crossed,
    /// `crossed` squares (spread evenly in row-major order) use the crossed
    /// split, the rest the right split.
    Mixed { crossed: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteriorFacet {
    pub edge: usize,
    pub plus: usize,
    pub minus: usize,
    /// Local facet index within `plus` / `minus`.
    pub local_plus: usize,
    pub local_minus: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryFacet {
    pub edge: usize,
    pub cell: usize,
    pub local: usize,
    pub label: BoundaryLabel,
}

/// A facet reference used by [`Mesh::facet_length_scale`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Facet {
    Interior(usize),
    Boundary(usize),
}

#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<[f64; 2]>,
    cells: Vec<[usize; 3]>,
    cell_edges: Vec<[usize; 3]>,
    edges: Vec<[usize; 2]>,
    interior: Vec<InteriorFacet>,
    boundary: Vec<BoundaryFacet>,
    subdomains: Vec<Subdomain>,
}

/// Characteristic facet length `(|T+| + |T-|) / (2 |e|)`.
pub fn facet_length_scale(area_plus: f64, area_minus: f64, length: f64) -> Result<f64> {
    if !(length > 0.0) {
        return Err(Error::DegenerateFacet { facet: usize::MAX, length });
    }
    Ok((area_plus + area_minus) / (2.0 * length))
}

/// Right-pattern triangulation of the unit square with `n` squares per edge.
pub fn build_unit_square_mesh(n: usize, split_at_half: bool) -> Result<Mesh> {
    Mesh::unit_square(n, MeshPattern::Right, split_at_half)
}

impl Mesh {
    /// Triangulates (0,1)² with an `n`×`n` grid of squares.
    pub fn unit_square(n: usize, pattern: MeshPattern, split_at_half: bool) -> Result<Mesh> {
        if n < 2 {
            return Err(Error::InvalidMesh(format!("need at least 2 cells per edge, got {n}")));
        }
        if split_at_half && !n.is_multiple_of(2) {
            return Err(Error::InvalidMesh(format!(
                "n = {n} is odd, so y = 0.5 is not a mesh line; use an even cell count \
                 to resolve the two-layer interface"
            )));
        }
        let squares = n * n;
        let crossed_count = match pattern {
            MeshPattern::Right => 0,
            MeshPattern::Crossed => squares,
            MeshPattern::Mixed { crossed } => {
                if crossed > squares {
                    return Err(Error::InvalidMesh(format!(
                        "{crossed} crossed squares requested but the grid only has {squares}"
                    )));
                }
                crossed
            }
        };
        let h = 1.0 / n as f64;
        let mut vertices = Vec::with_capacity((n + 1) * (n + 1) + crossed_count);
        for j in 0..=n {
            for i in 0..=n {
                vertices.push([i as f64 * h, j as f64 * h]);
            }
        }
        let vid = |i: usize, j: usize| j * (n + 1) + i;
        let mut cells = Vec::with_capacity(2 * squares + 2 * crossed_count);
        for j in 0..n {
            for i in 0..n {
                let q = j * n + i;
                // Bresenham-style spread of the crossed squares.
                let crossed = (q + 1) * crossed_count / squares > q * crossed_count / squares;
                let (v00, v10, v11, v01) = (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1));
                if crossed {
                    let c = vertices.len();
                    vertices.push([(i as f64 + 0.5) * h, (j as f64 + 0.5) * h]);
                    cells.push([v00, v10, c]);
                    cells.push([v10, v11, c]);
                    cells.push([v11, v01, c]);
                    cells.push([v01, v00, c]);
                } else {
                    cells.push([v00, v10, v11]);
                    cells.push([v00, v11, v01]);
                }
            }
        }
        Mesh::from_cells(vertices, cells)
    }

    /// The resolution used for the reference runs: a 30×30 grid with 285
    /// crossed squares, giving 2370 cells and h = √2/30.
    pub fn reference() -> Result<Mesh> {
        Mesh::unit_square(30, MeshPattern::Mixed { crossed: 285 }, true)
    }

    /// Builds the facet topology of an arbitrary conforming triangulation of
    /// the unit square. Cells are reoriented counter-clockwise if needed.
    pub fn from_cells(vertices: Vec<[f64; 2]>, mut cells: Vec<[usize; 3]>) -> Result<Mesh> {
        for (c, cell) in cells.iter_mut().enumerate() {
            if cell.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::InvalidMesh(format!("cell {c} references a missing vertex")));
            }
            let a = signed_area(&vertices, cell);
            if a.abs() <= GEOM_TOL * GEOM_TOL {
                return Err(Error::InvalidMesh(format!("cell {c} has zero area")));
            }
            if a < 0.0 {
                cell.swap(1, 2);
            }
        }

        let mut edge_ids: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges = Vec::new();
        let mut edge_cells: Vec<Vec<(usize, usize)>> = Vec::new();
        let mut cell_edges = Vec::with_capacity(cells.len());
        for (c, cell) in cells.iter().enumerate() {
            let mut local = [0usize; 3];
            for k in 0..3 {
                let a = cell[(k + 1) % 3];
                let b = cell[(k + 2) % 3];
                let key = (a.min(b), a.max(b));
                let id = *edge_ids.entry(key).or_insert_with(|| {
                    edges.push([key.0, key.1]);
                    edge_cells.push(Vec::with_capacity(2));
                    edges.len() - 1
                });
                edge_cells[id].push((c, k));
                local[k] = id;
            }
            cell_edges.push(local);
        }

        let mut interior = Vec::new();
        let mut boundary = Vec::new();
        for (e, owners) in edge_cells.iter().enumerate() {
            match *owners.as_slice() {
                [(c, k)] => {
                    let [a, b] = edges[e];
                    let label = boundary_label(vertices[a], vertices[b]).ok_or_else(|| {
                        Error::InvalidMesh(format!(
                            "edge {e} has one owning cell but is not on the square's boundary \
                             (hanging node?)"
                        ))
                    })?;
                    boundary.push(BoundaryFacet { edge: e, cell: c, local: k, label });
                }
                [(c0, k0), (c1, k1)] => {
                    let (plus, local_plus, minus, local_minus) =
                        if c0 < c1 { (c0, k0, c1, k1) } else { (c1, k1, c0, k0) };
                    interior.push(InteriorFacet { edge: e, plus, minus, local_plus, local_minus });
                }
                _ => {
                    return Err(Error::InvalidMesh(format!(
                        "edge {e} is shared by {} cells",
                        owners.len()
                    )))
                }
            }
        }

        let subdomains = cells
            .iter()
            .map(|cell| {
                let cy = (vertices[cell[0]][1] + vertices[cell[1]][1] + vertices[cell[2]][1]) / 3.0;
                if cy < 0.5 {
                    Subdomain::Lower
                } else {
                    Subdomain::Upper
                }
            })
            .collect();

        Ok(Mesh { vertices, cells, cell_edges, edges, interior, boundary, subdomains })
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn vertex(&self, v: usize) -> [f64; 2] {
        self.vertices[v]
    }

    pub fn cells(&self) -> &[[usize; 3]] {
        &self.cells
    }

    pub fn cell(&self, c: usize) -> [usize; 3] {
        self.cells[c]
    }

    /// Global edge ids of a cell, indexed by the opposite local vertex.
    pub fn cell_edges(&self, c: usize) -> [usize; 3] {
        self.cell_edges[c]
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn interior_facets(&self) -> &[InteriorFacet] {
        &self.interior
    }

    pub fn boundary_facets(&self) -> &[BoundaryFacet] {
        &self.boundary
    }

    pub fn subdomain(&self, c: usize) -> Subdomain {
        self.subdomains[c]
    }

    pub fn cell_coords(&self, c: usize) -> [[f64; 2]; 3] {
        let [a, b, d] = self.cells[c];
        [self.vertices[a], self.vertices[b], self.vertices[d]]
    }

    pub fn area(&self, c: usize) -> f64 {
        signed_area(&self.vertices, &self.cells[c])
    }

    pub fn centroid(&self, c: usize) -> [f64; 2] {
        let x = self.cell_coords(c);
        [(x[0][0] + x[1][0] + x[2][0]) / 3.0, (x[0][1] + x[1][1] + x[2][1]) / 3.0]
    }

    /// Longest edge of the cell.
    pub fn diameter(&self, c: usize) -> f64 {
        let x = self.cell_coords(c);
        (0..3).map(|k| dist(x[k], x[(k + 1) % 3])).fold(0.0, f64::max)
    }

    /// Maximum cell diameter.
    pub fn h(&self) -> f64 {
        (0..self.num_cells()).map(|c| self.diameter(c)).fold(0.0, f64::max)
    }

    pub fn edge_length(&self, e: usize) -> f64 {
        let [a, b] = self.edges[e];
        dist(self.vertices[a], self.vertices[b])
    }

    /// Endpoints of local facet `k` of cell `c`, in counter-clockwise order.
    pub fn facet_endpoints(&self, c: usize, k: usize) -> ([f64; 2], [f64; 2]) {
        let cell = self.cells[c];
        (self.vertices[cell[(k + 1) % 3]], self.vertices[cell[(k + 2) % 3]])
    }

    /// Outward unit normal of local facet `k` of cell `c`.
    pub fn outward_normal(&self, c: usize, k: usize) -> [f64; 2] {
        let (a, b) = self.facet_endpoints(c, k);
        let t = [b[0] - a[0], b[1] - a[1]];
        let len = (t[0] * t[0] + t[1] * t[1]).sqrt();
        [t[1] / len, -t[0] / len]
    }

    /// `h_e` of an interior facet, or `|T| / |e|` on the boundary.
    pub fn facet_length_scale(&self, facet: Facet) -> Result<f64> {
        let (edge, a_plus, a_minus) = match facet {
            Facet::Interior(i) => {
                let f = &self.interior[i];
                (f.edge, self.area(f.plus), self.area(f.minus))
            }
            Facet::Boundary(i) => {
                let f = &self.boundary[i];
                let a = self.area(f.cell);
                (f.edge, a, a)
            }
        };
        let length = self.edge_length(edge);
        facet_length_scale(a_plus, a_minus, length)
            .map_err(|_| Error::DegenerateFacet { facet: edge, length })
    }

    /// Barycentric coordinates of `p` in cell `c`.
    pub fn barycentric(&self, c: usize, p: [f64; 2]) -> [f64; 3] {
        let x = self.cell_coords(c);
        let det = (x[1][0] - x[0][0]) * (x[2][1] - x[0][1]) - (x[2][0] - x[0][0]) * (x[1][1] - x[0][1]);
        let l1 = ((p[0] - x[0][0]) * (x[2][1] - x[0][1]) - (x[2][0] - x[0][0]) * (p[1] - x[0][1])) / det;
        let l2 = ((x[1][0] - x[0][0]) * (p[1] - x[0][1]) - (p[0] - x[0][0]) * (x[1][1] - x[0][1])) / det;
        [1.0 - l1 - l2, l1, l2]
    }

    /// Lowest-index cell containing `p` (closed cells).
    pub fn locate(&self, p: [f64; 2]) -> Result<usize> {
        (0..self.num_cells())
            .find(|&c| self.barycentric(c, p).iter().all(|&l| l >= -1e-10))
            .ok_or(Error::PointOutsideDomain { x: p[0], y: p[1] })
    }

    /// Plain-text dump with `vertices`, `cells` and `boundary` blocks.
    pub fn export_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "vertices {}", self.vertices.len());
        for v in &self.vertices {
            let _ = writeln!(out, "{:.17e} {:.17e}", v[0], v[1]);
        }
        let _ = writeln!(out, "cells {}", self.cells.len());
        for (c, cell) in self.cells.iter().enumerate() {
            let tag = match self.subdomains[c] {
                Subdomain::Lower => "lower",
                Subdomain::Upper => "upper",
            };
            let _ = writeln!(out, "{} {} {} {}", cell[0], cell[1], cell[2], tag);
        }
        let _ = writeln!(out, "boundary {}", self.boundary.len());
        for f in &self.boundary {
            let [a, b] = self.edges[f.edge];
            let _ = writeln!(out, "{} {} {}", a, b, f.label.name());
        }
        out
    }
}

fn signed_area(vertices: &[[f64; 2]], cell: &[usize; 3]) -> f64 {
    let [a, b, c] = [vertices[cell[0]], vertices[cell[1]], vertices[cell[2]]];
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn boundary_label(a: [f64; 2], b: [f64; 2]) -> Option<BoundaryLabel> {
    let on = |v: f64, target: f64| (v - target).abs() < 1e-10;
    if on(a[0], 0.0) && on(b[0], 0.0) {
        Some(BoundaryLabel::Left)
    } else if on(a[1], 1.0) && on(b[1], 1.0) {
        Some(BoundaryLabel::Top)
    } else if on(a[0], 1.0) && on(b[0], 1.0) {
        Some(BoundaryLabel::Right)
    } else if on(a[1], 0.0) && on(b[1], 0.0) {
        Some(BoundaryLabel::Bottom)
    } else {
        None
    }
}
