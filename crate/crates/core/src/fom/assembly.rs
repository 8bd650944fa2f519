//! Element-level assembly of the displacement and pressure operators.

use nalgebra_sparse::CsrMatrix;

use crate::error::{Error, Result};
use crate::linalg::TripletBuilder;
use crate::materials::{PermeabilityField, Tensor2};
use crate::mesh::{Facet, Mesh};
use crate::quadrature::{segment_gauss3, triangle_degree4};
use crate::space::{p2_values, CellGeometry, DofMap};

use super::bcs::{BoundaryConditions, PressureBc};

/// `δ_e = k⁻ / (k⁺ + k⁻)` from the normal permeabilities of the two sides.
pub fn weighted_average_weight(k_plus: f64, k_minus: f64) -> Result<f64> {
    let sum = k_plus + k_minus;
    if !(sum > 0.0) || k_plus < 0.0 || k_minus < 0.0 {
        return Err(Error::InvalidMaterial(format!(
            "normal permeabilities ({k_plus:e}, {k_minus:e}) give no weighted average"
        )));
    }
    Ok(k_minus / sum)
}

/// `k_e = 2 k⁺ k⁻ / (k⁺ + k⁻)`.
pub fn harmonic_permeability(k_plus: f64, k_minus: f64) -> f64 {
    2.0 * k_plus * k_minus / (k_plus + k_minus)
}

pub(crate) fn normal_component(k: &Tensor2, n: [f64; 2]) -> f64 {
    n[0] * (k[0][0] * n[0] + k[0][1] * n[1]) + n[1] * (k[1][0] * n[0] + k[1][1] * n[1])
}

fn tensor_apply(k: &Tensor2, g: [f64; 2]) -> [f64; 2] {
    [k[0][0] * g[0] + k[0][1] * g[1], k[1][0] * g[0] + k[1][1] * g[1]]
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// `∫ σ'(u) : ε(v)` on the vector CG2 space.
pub fn elasticity_matrix(mesh: &Mesh, dofs: &DofMap, lambda: f64, mu: f64) -> CsrMatrix<f64> {
    let n = dofs.n_dofs();
    let mut t = TripletBuilder::new(n, n);
    let rule = triangle_degree4();
    for c in 0..mesh.num_cells() {
        let geo = CellGeometry::new(mesh, c);
        let local = dofs.cell_dofs(c);
        let mut ke = [[0.0; 12]; 12];
        for q in &rule {
            let w = q.weight * geo.area;
            let g = geo.p2_gradients(q.bary);
            // strain of local dof 2l+comp: ε = sym(e_comp ⊗ ∇φ_l)
            for a in 0..12 {
                let (la, ca) = (a / 2, a % 2);
                for b in 0..12 {
                    let (lb, cb) = (b / 2, b % 2);
                    let div = g[la][ca] * g[lb][cb];
                    // ε_a : ε_b = ½ (δ_ab g_a·g_b + g_a[cb] g_b[ca])
                    let same = if ca == cb { dot(g[la], g[lb]) } else { 0.0 };
                    let eps = 0.5 * (same + g[la][cb] * g[lb][ca]);
                    ke[a][b] += w * (lambda * div + 2.0 * mu * eps);
                }
            }
        }
        for a in 0..12 {
            for b in 0..12 {
                t.add(local[a], local[b], ke[a][b]);
            }
        }
    }
    t.build()
}

/// L² mass matrix of the vector CG2 space.
pub fn vector_mass_matrix(mesh: &Mesh, dofs: &DofMap) -> CsrMatrix<f64> {
    let n = dofs.n_dofs();
    let mut t = TripletBuilder::new(n, n);
    let rule = triangle_degree4();
    for c in 0..mesh.num_cells() {
        let area = mesh.area(c);
        let local = dofs.cell_dofs(c);
        let mut me = [[0.0; 6]; 6];
        for q in &rule {
            let phi = p2_values(q.bary);
            for i in 0..6 {
                for j in 0..6 {
                    me[i][j] += q.weight * area * phi[i] * phi[j];
                }
            }
        }
        for i in 0..6 {
            for j in 0..6 {
                for comp in 0..2 {
                    t.add(local[2 * i + comp], local[2 * j + comp], me[i][j]);
                }
            }
        }
    }
    t.build()
}

/// L² mass matrix of the DG1 space (block diagonal).
pub fn dg_mass_matrix(mesh: &Mesh, dofs: &DofMap) -> CsrMatrix<f64> {
    let n = dofs.n_dofs();
    let mut t = TripletBuilder::new(n, n);
    for c in 0..mesh.num_cells() {
        let a = mesh.area(c);
        let local = dofs.cell_dofs(c);
        for i in 0..3 {
            for j in 0..3 {
                t.add(local[i], local[j], if i == j { a / 6.0 } else { a / 12.0 });
            }
        }
    }
    t.build()
}

/// `C_ij = ∫ α φ_j div ψ_i` with rows on the displacement space and columns
/// on the pressure space.
pub fn coupling_matrix(mesh: &Mesh, u: &DofMap, p: &DofMap, alpha: f64) -> CsrMatrix<f64> {
    let mut t = TripletBuilder::new(u.n_dofs(), p.n_dofs());
    let rule = triangle_degree4();
    for c in 0..mesh.num_cells() {
        let geo = CellGeometry::new(mesh, c);
        let lu = u.cell_dofs(c);
        let lp = p.cell_dofs(c);
        let mut ce = [[0.0; 3]; 12];
        for q in &rule {
            let w = q.weight * geo.area;
            let g = geo.p2_gradients(q.bary);
            for a in 0..12 {
                let div = g[a / 2][a % 2];
                for j in 0..3 {
                    ce[a][j] += w * alpha * div * q.bary[j];
                }
            }
        }
        for a in 0..12 {
            for j in 0..3 {
                t.add(lu[a], lp[j], ce[a][j]);
            }
        }
    }
    t.build()
}

/// Maps displacement dofs to the DG1 nodal values of `div u`. Exact, since the
/// divergence of a P2 field is P1 on every cell.
pub fn divergence_operator(mesh: &Mesh, u: &DofMap, p: &DofMap) -> CsrMatrix<f64> {
    let mut t = TripletBuilder::new(p.n_dofs(), u.n_dofs());
    for c in 0..mesh.num_cells() {
        let geo = CellGeometry::new(mesh, c);
        let lu = u.cell_dofs(c);
        let lp = p.cell_dofs(c);
        for k in 0..3 {
            let mut bary = [0.0; 3];
            bary[k] = 1.0;
            let g = geo.p2_gradients(bary);
            for a in 0..12 {
                t.add(lp[k], lu[a], g[a / 2][a % 2]);
            }
        }
    }
    t.build()
}

/// `∫ t_D · ψ` over traction facets.
pub fn traction_vector(mesh: &Mesh, u: &DofMap, bcs: &BoundaryConditions) -> Vec<f64> {
    let mut f = vec![0.0; u.n_dofs()];
    for bf in mesh.boundary_facets() {
        let Some(traction) = bcs.displacement(bf.label).traction() else {
            continue;
        };
        let (a, b) = mesh.facet_endpoints(bf.cell, bf.local);
        let len = mesh.edge_length(bf.edge);
        let local = u.cell_dofs(bf.cell);
        for (s, w) in segment_gauss3() {
            let x = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
            let phi = p2_values(mesh.barycentric(bf.cell, x));
            for l in 0..6 {
                for comp in 0..2 {
                    f[local[2 * l + comp]] += w * len * traction[comp] * phi[l];
                }
            }
        }
    }
    f
}

/// Geometric and coefficient data of one side of a pressure facet.
struct Side {
    cell: usize,
    /// `κ ∇φ_j · n` for the three P1 basis functions (n: facet normal of the plus side).
    flux: [f64; 3],
}

fn side(mesh: &Mesh, kappa: &Tensor2, cell: usize, n: [f64; 2]) -> Side {
    let geo = CellGeometry::new(mesh, cell);
    let mut flux = [0.0; 3];
    for (j, f) in flux.iter_mut().enumerate() {
        *f = dot(tensor_apply(kappa, geo.grad_bary[j]), n);
    }
    Side { cell, flux }
}

fn kappa_of(perm: &PermeabilityField, cell: usize, viscosity: f64) -> Tensor2 {
    crate::materials::conductivity(perm.tensor(cell), viscosity)
}

/// Local 6×6 SIPG facet block of an interior facet (plus dofs first).
pub(crate) fn interior_facet_block(
    mesh: &Mesh,
    perm: &PermeabilityField,
    viscosity: f64,
    penalty: f64,
    facet: usize,
) -> Result<[[f64; 6]; 6]> {
    let f = mesh.interior_facets()[facet];
    let n = mesh.outward_normal(f.plus, f.local_plus);
    let kp = normal_component(perm.tensor(f.plus), n);
    let km = normal_component(perm.tensor(f.minus), n);
    let delta = weighted_average_weight(kp, km)?;
    let kappa_e = harmonic_permeability(kp, km) / viscosity;
    let he = mesh.facet_length_scale(Facet::Interior(facet))?;
    let pen = penalty * kappa_e / he;
    let sp = side(mesh, &kappa_of(perm, f.plus, viscosity), f.plus, n);
    let sm = side(mesh, &kappa_of(perm, f.minus, viscosity), f.minus, n);
    let mut flux = [0.0; 6];
    for j in 0..3 {
        flux[j] = delta * sp.flux[j];
        flux[3 + j] = (1.0 - delta) * sm.flux[j];
    }
    let (a, b) = mesh.facet_endpoints(f.plus, f.local_plus);
    let len = mesh.edge_length(f.edge);
    let mut block = [[0.0; 6]; 6];
    for (s, w) in segment_gauss3() {
        let x = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
        let bp = mesh.barycentric(sp.cell, x);
        let bm = mesh.barycentric(sm.cell, x);
        let jump = [bp[0], bp[1], bp[2], -bm[0], -bm[1], -bm[2]];
        for i in 0..6 {
            for j in 0..6 {
                block[i][j] += w
                    * len
                    * (-flux[j] * jump[i] - flux[i] * jump[j] + pen * jump[i] * jump[j]);
            }
        }
    }
    Ok(block)
}

/// Volume diffusion block `∫_T κ∇φ_i·∇φ_j`.
pub(crate) fn cell_diffusion_block(mesh: &Mesh, kappa: &Tensor2, cell: usize) -> [[f64; 3]; 3] {
    let geo = CellGeometry::new(mesh, cell);
    let mut block = [[0.0; 3]; 3];
    for i in 0..3 {
        let kg = tensor_apply(kappa, geo.grad_bary[i]);
        for j in 0..3 {
            block[i][j] = geo.area * dot(kg, geo.grad_bary[j]);
        }
    }
    block
}

/// SIPG diffusion operator with weighted averages, and its right-hand side
/// from boundary data and the volumetric source.
pub fn sipg_system(
    mesh: &Mesh,
    p: &DofMap,
    perm: &PermeabilityField,
    viscosity: f64,
    penalty: f64,
    bcs: &BoundaryConditions,
) -> Result<(CsrMatrix<f64>, Vec<f64>)> {
    let n = p.n_dofs();
    let mut t = TripletBuilder::new(n, n);
    let mut rhs = vec![0.0; n];
    for c in 0..mesh.num_cells() {
        let block = cell_diffusion_block(mesh, &kappa_of(perm, c, viscosity), c);
        let local = p.cell_dofs(c);
        let area = mesh.area(c);
        for i in 0..3 {
            for j in 0..3 {
                t.add(local[i], local[j], block[i][j]);
            }
            rhs[local[i]] += bcs.source * area / 3.0;
        }
    }
    for (i, f) in mesh.interior_facets().iter().enumerate() {
        let block = interior_facet_block(mesh, perm, viscosity, penalty, i)?;
        let lp = p.cell_dofs(f.plus);
        let lm = p.cell_dofs(f.minus);
        let idx = [lp[0], lp[1], lp[2], lm[0], lm[1], lm[2]];
        for a in 0..6 {
            for b in 0..6 {
                t.add(idx[a], idx[b], block[a][b]);
            }
        }
    }
    for (i, bf) in mesh.boundary_facets().iter().enumerate() {
        let (a, b) = mesh.facet_endpoints(bf.cell, bf.local);
        let len = mesh.edge_length(bf.edge);
        let local = p.cell_dofs(bf.cell);
        match bcs.pressure(bf.label) {
            PressureBc::Flux(q) => {
                for (s, w) in segment_gauss3() {
                    let x = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
                    let phi = mesh.barycentric(bf.cell, x);
                    for k in 0..3 {
                        rhs[local[k]] += w * len * q * phi[k];
                    }
                }
            }
            PressureBc::Dirichlet(pd) => {
                let n = mesh.outward_normal(bf.cell, bf.local);
                let kappa = kappa_of(perm, bf.cell, viscosity);
                let kappa_e = normal_component(perm.tensor(bf.cell), n) / viscosity;
                let he = mesh.facet_length_scale(Facet::Boundary(i))?;
                let pen = penalty * kappa_e / he;
                let sd = side(mesh, &kappa, bf.cell, n);
                for (s, w) in segment_gauss3() {
                    let x = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
                    let phi = mesh.barycentric(bf.cell, x);
                    for r in 0..3 {
                        for c in 0..3 {
                            let v = -sd.flux[c] * phi[r] - sd.flux[r] * phi[c] + pen * phi[r] * phi[c];
                            t.add(local[r], local[c], w * len * v);
                        }
                        rhs[local[r]] += w * len * (-sd.flux[r] * pd + pen * phi[r] * pd);
                    }
                }
            }
        }
    }
    Ok((t.build(), rhs))
}

/// Checks that the SIPG form is coercive on a sampled two-cell patch: the
/// local block (both cells' diffusion plus the shared facet terms) must be
/// positive semi-definite with only the constants in its kernel.
pub fn check_coercivity(
    mesh: &Mesh,
    perm: &PermeabilityField,
    viscosity: f64,
    penalty: f64,
) -> Result<f64> {
    if !(penalty > 0.0) {
        return Err(Error::InvalidParameter(format!("penalty must be positive, got {penalty}")));
    }
    let facets = mesh.interior_facets();
    if facets.is_empty() {
        return Ok(f64::INFINITY);
    }
    // Sample the first facet and the one with the largest permeability contrast.
    let contrast = |i: usize| {
        let f = facets[i];
        let a = perm.tensor(f.plus)[0][0];
        let b = perm.tensor(f.minus)[0][0];
        (a / b).max(b / a)
    };
    let worst = (0..facets.len())
        .max_by(|&a, &b| contrast(a).total_cmp(&contrast(b)))
        .unwrap_or(0);
    let mut min_ratio = f64::INFINITY;
    for i in [0, worst] {
        let f = facets[i];
        let fb = interior_facet_block(mesh, perm, viscosity, penalty, i)?;
        let dp = cell_diffusion_block(mesh, &kappa_of(perm, f.plus, viscosity), f.plus);
        let dm = cell_diffusion_block(mesh, &kappa_of(perm, f.minus, viscosity), f.minus);
        let mut m = nalgebra::DMatrix::<f64>::zeros(6, 6);
        for a in 0..6 {
            for b in 0..6 {
                m[(a, b)] = fb[a][b];
            }
        }
        for a in 0..3 {
            for b in 0..3 {
                m[(a, b)] += dp[a][b];
                m[(3 + a, 3 + b)] += dm[a][b];
            }
        }
        // Eigenvalues of a 2-cell block, scaled to unit norm.
        let scale = m.abs().max();
        let mut eig: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().map(|v| v / scale).collect();
        eig.sort_by(f64::total_cmp);
        if eig[0] < -1e-10 || eig[1] <= 1e-10 {
            return Err(Error::InvalidParameter(format!(
                "penalty {penalty} is too small: local SIPG block on facet {i} has eigenvalues \
                 {:.3e}, {:.3e} (relative)",
                eig[0], eig[1]
            )));
        }
        min_ratio = min_ratio.min(eig[1]);
    }
    Ok(min_ratio)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fom::BoundaryConditions;
    use crate::linalg::{csr_matvec, csr_matvec_transpose};
    use crate::materials::{build_permeability, PermeabilityModel};
    use crate::mesh::build_unit_square_mesh;

    fn mesh() -> Mesh {
        build_unit_square_mesh(4, true).unwrap()
    }

    #[test]
    fn rigid_motions_are_in_the_elastic_kernel() {
        let m = mesh();
        let u = DofMap::vector_cg2(&m);
        let k = elasticity_matrix(&m, &u, 4e5, 6e5);
        for motion in [
            u.interpolate(&m, |_| [1.0, 0.0]),
            u.interpolate(&m, |_| [0.0, 1.0]),
            u.interpolate(&m, |x| [-x[1], x[0]]),
        ] {
            let r = csr_matvec(&k, &motion);
            assert!(r.iter().all(|v| v.abs() < 1e-6), "max {}", r.iter().fold(0.0f64, |a, v| a.max(v.abs())));
        }
        for (i, j, v) in k.triplet_iter() {
            let t = k.get_entry(j, i).unwrap().into_value();
            assert!((v - t).abs() <= 1e-9 * v.abs().max(1.0));
        }
    }

    #[test]
    fn mass_matrices_integrate_constants() {
        let m = mesh();
        let p = DofMap::scalar_dg1(&m);
        let u = DofMap::vector_cg2(&m);
        let ones = vec![1.0; p.n_dofs()];
        let total: f64 = csr_matvec(&dg_mass_matrix(&m, &p), &ones).iter().sum();
        assert!((total - 1.0).abs() < 1e-13);
        let ex = u.interpolate(&m, |_| [1.0, 0.0]);
        let mu = vector_mass_matrix(&m, &u);
        let total: f64 = csr_matvec(&mu, &ex).iter().zip(&ex).map(|(a, b)| a * b).sum();
        assert!((total - 1.0).abs() < 1e-13);
    }

    #[test]
    fn coupling_is_mass_times_divergence() {
        let m = mesh();
        let (u, p) = (DofMap::vector_cg2(&m), DofMap::scalar_dg1(&m));
        let c = coupling_matrix(&m, &u, &p, 0.7);
        let d = divergence_operator(&m, &u, &p);
        let mp = dg_mass_matrix(&m, &p);
        let field = u.interpolate(&m, |x| [x[0] * x[1], x[1] * x[1] - x[0]]);
        let q: Vec<f64> = (0..p.n_dofs()).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        // qᵀ Cᵀ u = 0.7 qᵀ M_p D u
        let lhs: f64 = csr_matvec_transpose(&c, &field).iter().zip(&q).map(|(a, b)| a * b).sum();
        let mdu = csr_matvec(&mp, &csr_matvec(&d, &field));
        let rhs: f64 = 0.7 * mdu.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
        // div(xy, y² - x) = y + 2y
        let div = csr_matvec(&d, &field);
        for (v, x) in div.iter().zip(p.dof_coordinates(&m)) {
            assert!((v - 3.0 * x[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn penalty_vanishes_on_linear_pressure() {
        let m = mesh();
        let perm = build_permeability(PermeabilityModel::Isotropic, 1e-12, &m, None).unwrap();
        let p = DofMap::scalar_dg1(&m);
        let lin = p.interpolate(&m, |x| [2.0 * x[0] - 3.0 * x[1] + 1.0, 0.0]);
        for i in 0..m.interior_facets().len() {
            let f = m.interior_facets()[i];
            let a = interior_facet_block(&m, &perm, 1e-3, 10.0, i).unwrap();
            let b = interior_facet_block(&m, &perm, 1e-3, 0.0, i).unwrap();
            let (lp, lm) = (p.cell_dofs(f.plus), p.cell_dofs(f.minus));
            let x = [lin[lp[0]], lin[lp[1]], lin[lp[2]], lin[lm[0]], lin[lm[1]], lin[lm[2]]];
            for r in 0..6 {
                let pen: f64 = (0..6).map(|c| (a[r][c] - b[r][c]) * x[c]).sum();
                assert!(pen.abs() < 1e-20, "facet {i}: {pen:e}");
            }
        }
    }

    #[test]
    fn sipg_is_symmetric_and_kills_constants_without_dirichlet_data() {
        let m = mesh();
        let perm = build_permeability(PermeabilityModel::TwoLayer, 1e-16, &m, None).unwrap();
        let p = DofMap::scalar_dg1(&m);
        let mut bcs = BoundaryConditions::consolidation([0.0, -1000.0]);
        bcs.set_pressure(crate::mesh::BoundaryLabel::Top, PressureBc::Flux(0.0));
        let (a, rhs) = sipg_system(&m, &p, &perm, 1e-3, 10.0, &bcs).unwrap();
        assert!(rhs.iter().all(|&v| v == 0.0));
        let r = csr_matvec(&a, &vec![1.0; p.n_dofs()]);
        assert!(r.iter().all(|v| v.abs() < 1e-20));
        for (i, j, v) in a.triplet_iter() {
            let t = a.get_entry(j, i).unwrap().into_value();
            assert!((v - t).abs() <= 1e-12 * v.abs());
        }
    }

    #[test]
    fn traction_resultant_equals_load_times_length() {
        let m = mesh();
        let u = DofMap::vector_cg2(&m);
        let f = traction_vector(&m, &u, &BoundaryConditions::consolidation([0.0, -1000.0]));
        let fy: f64 = f.iter().skip(1).step_by(2).sum();
        let fx: f64 = f.iter().step_by(2).sum();
        assert!((fy + 1000.0).abs() < 1e-9);
        assert!(fx.abs() < 1e-12);
    }

    #[test]
    fn sampled_block_is_coercive_for_strong_contrast() {
        let m = mesh();
        let perm = build_permeability(PermeabilityModel::TwoLayer, 1e-16, &m, None).unwrap();
        assert!(check_coercivity(&m, &perm, 1e-3, 10.0).unwrap() > 0.0);
    }
}
