//! Independent oracles shared by the integration and acceptance tests.

#![allow(dead_code)]

use std::sync::Arc;

use biotrom::fom::{BiotProblem, BoundaryConditions, Discretization, FomState, SolverSettings};
use biotrom::materials::{build_permeability, MaterialConfig, PermeabilityModel, SolidBulk};
use biotrom::mesh::Mesh;
use biotrom::quadrature::triangle_degree4;
use biotrom::linalg::InnerProduct;
use biotrom::pod::{FieldId, SnapshotSet};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const LOAD: f64 = 1000.0;

pub fn example1_material(nu: f64) -> MaterialConfig {
    MaterialConfig {
        bulk_modulus: 1.0e6,
        solid_bulk: SolidBulk::Infinite,
        poisson: nu,
        porosity: 0.3,
        fluid_compressibility: 1.0e-9,
        fluid_viscosity: 1.0e-3,
        biot_override: None,
    }
}

pub fn consolidation_problem(
    disc: Arc<Discretization>,
    nu: f64,
    model: PermeabilityModel,
    k: f64,
) -> BiotProblem {
    let perm = build_permeability(model, k, &disc.mesh, None).unwrap();
    BiotProblem::new(
        disc,
        example1_material(nu),
        perm,
        BoundaryConditions::consolidation([0.0, -LOAD]),
        SolverSettings::default(),
    )
    .unwrap()
}

/// Closed-form 1D consolidation constants `(p0, c_v)`: Skempton's undrained
/// pressure under `load` and the consolidation coefficient, from the raw
/// material constants.
pub fn terzaghi_constants(m: &MaterialConfig, k: f64, load: f64) -> (f64, f64) {
    let kb = m.bulk_modulus;
    let nu = m.poisson;
    let lambda = 3.0 * kb * nu / (1.0 + nu);
    let mu = 3.0 * kb * (1.0 - 2.0 * nu) / (2.0 * (1.0 + nu));
    let kv = lambda + 2.0 * mu;
    let alpha = 1.0;
    let inv_m = m.porosity * m.fluid_compressibility;
    let biot_m = 1.0 / inv_m;
    let p0 = alpha * biot_m * load / (kv + alpha * alpha * biot_m);
    let cv = (k / m.fluid_viscosity) / (inv_m + alpha * alpha / kv);
    (p0, cv)
}

/// Terzaghi series for pressure at depth `z` below the drained surface of a
/// layer of height `h`.
pub fn terzaghi_pressure(z: f64, t: f64, p0: f64, cv: f64, h: f64, terms: usize) -> f64 {
    let pi = std::f64::consts::PI;
    (0..terms)
        .map(|m| {
            let k = (2 * m + 1) as f64;
            (1.0 / k) * (k * pi * z / (2.0 * h)).sin() * (-k * k * pi * pi * cv * t / (4.0 * h * h)).exp()
        })
        .sum::<f64>()
        * 4.0
        * p0
        / pi
}

/// `(‖p_h - f‖, ‖f‖)` in L² by quadrature of a DG1 field.
pub fn dg_l2_error(mesh: &Mesh, p: &[f64], f: impl Fn([f64; 2]) -> f64) -> (f64, f64) {
    let (mut err, mut norm) = (0.0, 0.0);
    for c in 0..mesh.num_cells() {
        let x = mesh.cell_coords(c);
        let a = mesh.area(c);
        for q in triangle_degree4() {
            let pt = [
                q.bary[0] * x[0][0] + q.bary[1] * x[1][0] + q.bary[2] * x[2][0],
                q.bary[0] * x[0][1] + q.bary[1] * x[1][1] + q.bary[2] * x[2][1],
            ];
            let ph: f64 = (0..3).map(|k| q.bary[k] * p[3 * c + k]).sum();
            let fv = f(pt);
            err += q.weight * a * (ph - fv).powi(2);
            norm += q.weight * a * fv * fv;
        }
    }
    (err.sqrt(), norm.sqrt())
}

fn dense(a: &nalgebra_sparse::CsrMatrix<f64>) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(a.nrows(), a.ncols());
    for (i, j, v) in a.triplet_iter() {
        d[(i, j)] += *v;
    }
    d
}

/// One backward Euler step of the coupled system solved monolithically by
/// dense LU, with the volumetric stress eliminated in favour of `div u`.
pub fn monolithic_step(pb: &BiotProblem, prev: &FomState, dt: f64) -> (Vec<f64>, Vec<f64>) {
    let ops = pb.operators();
    let nu = ops.stiffness.nrows();
    let np = ops.mass_p.nrows();
    let kb = ops.bulk_modulus;
    let alpha = ops.alpha;
    let mut a = DMatrix::zeros(nu + np, nu + np);
    let mut b = DVector::zeros(nu + np);
    let kuu = dense(ops.stiffness);
    let c = dense(ops.coupling);
    let mp = dense(ops.mass_p);
    let d = dense(ops.divergence);
    let adg = dense(ops.diffusion);
    a.view_mut((0, 0), (nu, nu)).copy_from(&kuu);
    for i in 0..nu {
        if ops.fixed[i] {
            b[i] = ops.lift[i];
            continue;
        }
        for j in 0..np {
            a[(i, nu + j)] = -c[(i, j)];
        }
        b[i] = ops.traction[i] + ops.lift[i];
    }
    let s = ops.storage;
    let coupling = &mp * &d * (alpha / dt);
    let app = &mp * ((s - alpha * alpha / kb) / dt) + &adg;
    a.view_mut((nu, 0), (np, nu)).copy_from(&coupling);
    a.view_mut((nu, nu), (np, np)).copy_from(&app);
    let hist = DVector::from_iterator(
        np,
        (0..np).map(|i| (s * prev.p[i] + alpha / kb * prev.sigma_v[i]) / dt),
    );
    let rhs_p = &mp * hist + DVector::from_column_slice(ops.pressure_rhs);
    b.rows_mut(nu, np).copy_from(&rhs_p);
    let x = a.lu().solve(&b).expect("monolithic system is nonsingular");
    (x.rows(0, nu).iter().copied().collect(), x.rows(nu, np).iter().copied().collect())
}

/// Trajectories mixing a few smooth spatial profiles with decaying weights,
/// plus a little noise so that every mode carries some energy.
pub fn synthetic_snapshots(field: FieldId, inner: &InnerProduct, m: usize, nt: usize, seed: u64) -> SnapshotSet {
    let nh = match inner {
        InnerProduct::Mass(a) => a.nrows(),
        InnerProduct::Euclidean => 60,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let profiles: Vec<Vec<f64>> =
        (0..6).map(|k| (0..nh).map(|i| ((k + 1) as f64 * i as f64 / nh as f64 * 3.0).sin()).collect()).collect();
    let mut trajs = Vec::new();
    let mut params = Vec::new();
    for j in 0..m {
        let mu = j as f64 / m.max(2) as f64;
        params.push(vec![mu, 1.0 + mu]);
        let s = DMatrix::from_fn(nh, nt, |i, n| {
            let t = n as f64 / nt as f64;
            profiles
                .iter()
                .enumerate()
                .map(|(k, pr)| pr[i] * (-(k as f64 + mu) * t).exp() / (1.0 + k as f64).powi(2))
                .sum::<f64>()
                + 1e-4 * (rng.random::<f64>() - 0.5)
        });
        trajs.push(s);
    }
    let times = (0..nt).map(|n| n as f64 * 10.0).collect();
    SnapshotSet::new(field, trajs, params, times, inner.clone()).unwrap()
}
