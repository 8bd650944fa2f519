//! Full-order Biot solver: CG2 displacement, SIPG DG1 pressure, backward
//! Euler in time and fixed-stress splitting within each step.

mod assembly;
mod bcs;
mod schedule;

use std::sync::{Arc, Mutex};

use log::debug;
use nalgebra::DMatrix;
use nalgebra_sparse::CsrMatrix;
use serde::{Deserialize, Serialize};

pub use assembly::{
    check_coercivity, coupling_matrix, dg_mass_matrix, divergence_operator, elasticity_matrix,
    harmonic_permeability, sipg_system, traction_vector, vector_mass_matrix, weighted_average_weight,
};
pub use bcs::{BoundaryConditions, DisplacementBc, PressureBc};
pub use schedule::{bdf1, build_time_schedule, TimeSchedule};

use crate::error::{ensure_len, Error, Result};
use crate::linalg::{csr_add, csr_matvec, SparseCholesky, TripletBuilder};
use crate::materials::{MaterialConfig, PermeabilityField};
use crate::mesh::{Facet, Mesh};
use crate::space::DofMap;

/// Mesh, dof maps and the parameter-independent mass matrices.
#[derive(Debug)]
pub struct Discretization {
    pub mesh: Mesh,
    pub u_dofs: DofMap,
    pub p_dofs: DofMap,
    pub mass_u: Arc<CsrMatrix<f64>>,
    pub mass_p: Arc<CsrMatrix<f64>>,
}

impl Discretization {
    pub fn new(mesh: Mesh) -> Arc<Discretization> {
        let u_dofs = DofMap::vector_cg2(&mesh);
        let p_dofs = DofMap::scalar_dg1(&mesh);
        let mass_u = Arc::new(vector_mass_matrix(&mesh, &u_dofs));
        let mass_p = Arc::new(dg_mass_matrix(&mesh, &p_dofs));
        Arc::new(Discretization { mesh, u_dofs, p_dofs, mass_u, mass_p })
    }
}

/// How the fixed-stress iteration is driven within a time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Acceleration {
    /// Plain alternation of pressure and momentum solves.
    None,
    /// The fixed-stress pressure solve used as the preconditioner of conjugate
    /// gradients on the pressure Schur complement, closed by one plain sweep.
    /// Same fixed point; far fewer sweeps when `κΔt/h²` is tiny.
    #[default]
    ConjugateGradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// SIPG penalty β.
    pub penalty: f64,
    /// Relative increment tolerance of the fixed-stress loop.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Iteration cap for the undrained initial state.
    pub init_max_iterations: usize,
    #[serde(default)]
    pub acceleration: Acceleration,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            penalty: 10.0,
            tolerance: 1e-8,
            max_iterations: 50,
            init_max_iterations: 500,
            acceleration: Acceleration::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FomState {
    pub t: f64,
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    /// Volumetric stress `K div u - α p` in DG1.
    pub sigma_v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub iterations: usize,
    pub pressure_increment: f64,
    pub displacement_increment: f64,
    /// Volumetric stress the final pressure solve was built with.
    pub sigma_v_used: Vec<f64>,
}

/// A computed trajectory: `states[0]` is the initial state.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<FomState>,
    pub reports: Vec<StepReport>,
}

impl Trajectory {
    /// Displacement snapshots as an `N_h × (N^t + 1)` matrix.
    pub fn displacement_matrix(&self) -> DMatrix<f64> {
        let n = self.states[0].u.len();
        DMatrix::from_fn(n, self.states.len(), |i, j| self.states[j].u[i])
    }

    pub fn pressure_matrix(&self) -> DMatrix<f64> {
        let n = self.states[0].p.len();
        DMatrix::from_fn(n, self.states.len(), |i, j| self.states[j].p[i])
    }
}

/// Prescribed displacement dofs with their values.
#[derive(Debug, Clone)]
struct Constraints {
    values: Vec<Option<f64>>,
}

impl Constraints {
    fn build(disc: &Discretization, bcs: &BoundaryConditions) -> Result<Constraints> {
        let mesh = &disc.mesh;
        let mut values = vec![None; disc.u_dofs.n_dofs()];
        // Local P2 nodes on facet k: vertices k+1, k+2 and edge node 3+k.
        let mut rows: Vec<[f64; 3]> = Vec::new();
        let coords = disc.u_dofs.dof_coordinates(mesh);
        for bf in mesh.boundary_facets() {
            let fixed = bcs.displacement(bf.label).fixed();
            let local = disc.u_dofs.cell_dofs(bf.cell);
            for node in [(bf.local + 1) % 3, (bf.local + 2) % 3, 3 + bf.local] {
                for comp in 0..2 {
                    if let Some(v) = fixed[comp] {
                        let d = local[2 * node + comp];
                        if values[d].is_none() {
                            let x = coords[d];
                            rows.push(if comp == 0 { [1.0, 0.0, -x[1]] } else { [0.0, 1.0, x[0]] });
                        }
                        values[d] = Some(v);
                    }
                }
            }
        }
        // Rigid motions (tx, ty, ω) must be excluded by the constraints.
        let mut normal = nalgebra::Matrix3::<f64>::zeros();
        for r in &rows {
            let v = nalgebra::Vector3::new(r[0], r[1], r[2]);
            normal += v * v.transpose();
        }
        let eig = normal.symmetric_eigen().eigenvalues;
        let (lo, hi) = (eig.min(), eig.max());
        if !(hi > 0.0) || lo <= 1e-12 * hi {
            return Err(Error::RigidBodyMode);
        }
        Ok(Constraints { values })
    }

    fn is_fixed(&self, d: usize) -> bool {
        self.values[d].is_some()
    }

    /// Eliminates constrained rows/columns symmetrically. Returns the reduced
    /// matrix (unit diagonal on constrained dofs) and the lifting vector.
    fn apply(&self, a: &CsrMatrix<f64>) -> (CsrMatrix<f64>, Vec<f64>) {
        let n = a.nrows();
        let mut t = TripletBuilder::new(n, n);
        let mut lift = vec![0.0; n];
        for (i, j, &v) in a.triplet_iter() {
            match (self.values[i], self.values[j]) {
                (None, None) => t.add(i, j, v),
                (None, Some(g)) => lift[i] -= v * g,
                _ => {}
            }
        }
        for (d, v) in self.values.iter().enumerate() {
            if let Some(g) = v {
                t.add(d, d, 1.0);
                lift[d] = *g;
            }
        }
        (t.build(), lift)
    }
}

/// Assembled operators of one Biot problem instance.
pub struct BiotProblem {
    disc: Arc<Discretization>,
    material: MaterialConfig,
    permeability: PermeabilityField,
    bcs: BoundaryConditions,
    settings: SolverSettings,
    alpha: f64,
    storage: f64,
    constraints: Constraints,
    /// Elasticity with constraints eliminated.
    stiffness: CsrMatrix<f64>,
    stiffness_factor: SparseCholesky,
    lift: Vec<f64>,
    traction: Vec<f64>,
    coupling: CsrMatrix<f64>,
    divergence: CsrMatrix<f64>,
    diffusion: CsrMatrix<f64>,
    pressure_rhs: Vec<f64>,
    pressure_factors: Mutex<Vec<((u64, bool), Arc<SparseCholesky>)>>,
}

impl std::fmt::Debug for BiotProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BiotProblem")
            .field("material", &self.material)
            .field("alpha", &self.alpha)
            .field("storage", &self.storage)
            .field("settings", &self.settings)
            .finish_non_exhaustive()
    }
}

/// Borrowed view of the assembled operators, for external checks.
pub struct Operators<'a> {
    /// Constrained elasticity matrix.
    pub stiffness: &'a CsrMatrix<f64>,
    /// Unconstrained `∫ α φ div ψ` (displacement rows).
    pub coupling: &'a CsrMatrix<f64>,
    pub divergence: &'a CsrMatrix<f64>,
    pub diffusion: &'a CsrMatrix<f64>,
    pub mass_p: &'a CsrMatrix<f64>,
    pub pressure_rhs: &'a [f64],
    pub traction: &'a [f64],
    pub lift: &'a [f64],
    pub fixed: Vec<bool>,
    pub alpha: f64,
    pub storage: f64,
    pub biot_modulus_inverse: f64,
    pub bulk_modulus: f64,
}

fn increment(new: &[f64], old: &[f64]) -> (f64, f64) {
    let d: f64 = new.iter().zip(old).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let n: f64 = new.iter().map(|a| a * a).sum::<f64>().sqrt();
    (d, n)
}

fn converged(delta: f64, norm: f64, tol: f64) -> bool {
    delta == 0.0 || delta <= tol * norm
}

impl BiotProblem {
    pub fn new(
        disc: Arc<Discretization>,
        material: MaterialConfig,
        permeability: PermeabilityField,
        bcs: BoundaryConditions,
        settings: SolverSettings,
    ) -> Result<BiotProblem> {
        material.validate()?;
        let mesh = &disc.mesh;
        ensure_len(mesh.num_cells(), permeability.len())?;
        if !(settings.tolerance > 0.0) || settings.max_iterations == 0 {
            return Err(Error::InvalidParameter("fixed-stress tolerance and iteration cap must be positive".into()));
        }
        check_coercivity(mesh, &permeability, material.fluid_viscosity, settings.penalty)?;
        let (lambda, mu) = material.lame()?;
        let alpha = material.biot()?;
        let storage = material.fixed_stress_storage()?;
        let constraints = Constraints::build(&disc, &bcs)?;
        let elastic = elasticity_matrix(mesh, &disc.u_dofs, lambda, mu);
        let (stiffness, lift) = constraints.apply(&elastic);
        let stiffness_factor = SparseCholesky::factor(&stiffness).map_err(|_| Error::RigidBodyMode)?;
        let traction = traction_vector(mesh, &disc.u_dofs, &bcs);
        let coupling = coupling_matrix(mesh, &disc.u_dofs, &disc.p_dofs, alpha);
        let divergence = divergence_operator(mesh, &disc.u_dofs, &disc.p_dofs);
        let (diffusion, pressure_rhs) = sipg_system(
            mesh,
            &disc.p_dofs,
            &permeability,
            material.fluid_viscosity,
            settings.penalty,
            &bcs,
        )?;
        Ok(BiotProblem {
            disc,
            material,
            permeability,
            bcs,
            settings,
            alpha,
            storage,
            constraints,
            stiffness,
            stiffness_factor,
            lift,
            traction,
            coupling,
            divergence,
            diffusion,
            pressure_rhs,
            pressure_factors: Mutex::new(Vec::new()),
        })
    }

    pub fn discretization(&self) -> &Arc<Discretization> {
        &self.disc
    }

    pub fn material(&self) -> &MaterialConfig {
        &self.material
    }

    pub fn permeability(&self) -> &PermeabilityField {
        &self.permeability
    }

    pub fn boundary_conditions(&self) -> &BoundaryConditions {
        &self.bcs
    }

    pub fn settings(&self) -> &SolverSettings {
        &self.settings
    }

    pub fn operators(&self) -> Operators<'_> {
        Operators {
            stiffness: &self.stiffness,
            coupling: &self.coupling,
            divergence: &self.divergence,
            diffusion: &self.diffusion,
            mass_p: &self.disc.mass_p,
            pressure_rhs: &self.pressure_rhs,
            traction: &self.traction,
            lift: &self.lift,
            fixed: (0..self.lift.len()).map(|d| self.constraints.is_fixed(d)).collect(),
            alpha: self.alpha,
            storage: self.storage,
            biot_modulus_inverse: self.material.biot_modulus_inverse().unwrap_or(0.0),
            bulk_modulus: self.material.bulk_modulus,
        }
    }

    /// Constrained momentum system for a given pressure: `A_u u = L_u(p)`.
    pub fn momentum_system(&self, p: &[f64]) -> Result<(&CsrMatrix<f64>, Vec<f64>)> {
        ensure_len(self.disc.p_dofs.n_dofs(), p.len())?;
        let cp = csr_matvec(&self.coupling, p);
        let rhs = (0..self.lift.len())
            .map(|d| {
                if self.constraints.is_fixed(d) {
                    self.lift[d]
                } else {
                    cp[d] + self.traction[d] + self.lift[d]
                }
            })
            .collect();
        Ok((&self.stiffness, rhs))
    }

    pub fn solve_momentum(&self, p: &[f64]) -> Result<Vec<f64>> {
        let (_, rhs) = self.momentum_system(p)?;
        let u = self.stiffness_factor.solve(&rhs);
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("displacement solve"));
        }
        Ok(u)
    }

    /// `K div u - α p`.
    pub fn volumetric_stress(&self, u: &[f64], p: &[f64]) -> Vec<f64> {
        let k = self.material.bulk_modulus;
        csr_matvec(&self.divergence, u)
            .iter()
            .zip(p)
            .map(|(d, q)| k * d - self.alpha * q)
            .collect()
    }

    /// Pressure system of one fixed-stress iteration with `σ_v` frozen at `sigma_v_iter`.
    pub fn pressure_system(
        &self,
        prev: &FomState,
        sigma_v_iter: &[f64],
        dt: f64,
    ) -> Result<(CsrMatrix<f64>, Vec<f64>)> {
        let rhs = self.pressure_rhs(prev, sigma_v_iter, dt)?;
        let a = csr_add(self.storage / dt, &self.disc.mass_p, 1.0, &self.diffusion);
        Ok((a, rhs))
    }

    /// Right-hand side of the fixed-stress pressure solve; `drained = false`
    /// drops boundary and source data (undrained start).
    fn split_rhs(&self, prev: &FomState, sigma_v_iter: &[f64], dt: f64, drained: bool) -> Result<Vec<f64>> {
        let n = self.disc.p_dofs.n_dofs();
        ensure_len(n, sigma_v_iter.len())?;
        ensure_len(n, prev.p.len())?;
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("time step must be positive, got {dt}")));
        }
        let coef = self.alpha / self.material.bulk_modulus;
        let w: Vec<f64> = (0..n)
            .map(|i| (self.storage * prev.p[i] - coef * (sigma_v_iter[i] - prev.sigma_v[i])) / dt)
            .collect();
        let mut rhs = csr_matvec(&self.disc.mass_p, &w);
        if drained {
            for (r, b) in rhs.iter_mut().zip(&self.pressure_rhs) {
                *r += b;
            }
        }
        Ok(rhs)
    }

    fn pressure_rhs(&self, prev: &FomState, sigma_v_iter: &[f64], dt: f64) -> Result<Vec<f64>> {
        self.split_rhs(prev, sigma_v_iter, dt, true)
    }

    fn split_matrix(&self, dt: f64, drained: bool) -> CsrMatrix<f64> {
        let diffusion = if drained { 1.0 } else { 0.0 };
        csr_add(self.storage / dt, &self.disc.mass_p, diffusion, &self.diffusion)
    }

    fn pressure_factor(&self, dt: f64, drained: bool) -> Result<Arc<SparseCholesky>> {
        let key = (dt.to_bits(), drained);
        let mut cache = self.pressure_factors.lock().expect("pressure cache poisoned");
        if let Some((_, f)) = cache.iter().find(|(k, _)| *k == key) {
            return Ok(Arc::clone(f));
        }
        let f = Arc::new(SparseCholesky::factor(&self.split_matrix(dt, drained))?);
        cache.push((key, Arc::clone(&f)));
        Ok(f)
    }

    /// State with zero fields at `t`.
    pub fn zero_state(&self, t: f64) -> FomState {
        FomState {
            t,
            u: vec![0.0; self.disc.u_dofs.n_dofs()],
            p: vec![0.0; self.disc.p_dofs.n_dofs()],
            sigma_v: vec![0.0; self.disc.p_dofs.n_dofs()],
        }
    }

    /// `A_u⁻¹ C p` with homogeneous constraints and no load.
    fn momentum_response(&self, p: &[f64]) -> Vec<f64> {
        let mut rhs = csr_matvec(&self.coupling, p);
        for (d, v) in rhs.iter_mut().enumerate() {
            if self.constraints.is_fixed(d) {
                *v = 0.0;
            }
        }
        self.stiffness_factor.solve(&rhs)
    }

    /// One backward Euler step, iterating the fixed-stress split to convergence.
    pub fn fixed_stress_step(&self, prev: &FomState, dt: f64) -> Result<(FomState, StepReport)> {
        self.split_solve(prev, dt, true, self.settings.max_iterations)
    }

    fn split_solve(
        &self,
        prev: &FomState,
        dt: f64,
        drained: bool,
        max_iterations: usize,
    ) -> Result<(FomState, StepReport)> {
        let result = match self.settings.acceleration {
            Acceleration::None => self.plain_split(prev, dt, drained, max_iterations),
            Acceleration::ConjugateGradient => self.accelerated_split(prev, dt, drained, max_iterations),
        };
        result.map_err(|e| match e {
            Error::FixedStressDiverged { iterations, pressure_increment, displacement_increment, .. } => {
                Error::FixedStressDiverged {
                    time: if drained { prev.t + dt } else { prev.t },
                    iterations,
                    pressure_increment,
                    displacement_increment,
                }
            }
            other => other,
        })
    }

    /// Conjugate gradients on `S p = b`, where `S = P - (α²/KΔt) M_p + (α/Δt) M_p D A_u⁻¹ C`
    /// and `P` is the fixed-stress pressure matrix. The preconditioned
    /// residual `P⁻¹ r` equals the increment a plain sweep would make, so the
    /// stopping test matches the plain loop.
    fn accelerated_split(
        &self,
        prev: &FomState,
        dt: f64,
        drained: bool,
        max_iterations: usize,
    ) -> Result<(FomState, StepReport)> {
        let factor = self.pressure_factor(dt, drained)?;
        let tol = self.settings.tolerance;
        let mp = &self.disc.mass_p;
        let shift = self.alpha * self.alpha / (self.material.bulk_modulus * dt);
        let p_op = self.split_matrix(dt, drained);
        let apply = |d: &[f64], w: &[f64]| -> Vec<f64> {
            let pd = csr_matvec(&p_op, d);
            let div = csr_matvec(&self.divergence, w);
            let coupled: Vec<f64> =
                div.iter().zip(d).map(|(a, b)| self.alpha / dt * a - shift * b).collect();
            let mc = csr_matvec(mp, &coupled);
            pd.iter().zip(&mc).map(|(a, b)| a + b).collect()
        };
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let norm = |a: &[f64]| dot(a, a).sqrt();

        let mut x = prev.p.clone();
        let mut u = self.solve_momentum(&x)?;
        let sigma = self.volumetric_stress(&u, &x);
        let px = csr_matvec(&p_op, &x);
        let mut r: Vec<f64> =
            self.split_rhs(prev, &sigma, dt, drained)?.iter().zip(&px).map(|(a, b)| a - b).collect();
        let mut z = factor.solve(&r);
        let mut d = z.clone();
        let mut rz = dot(&r, &z);
        let (mut dp, mut du) = (f64::INFINITY, f64::INFINITY);
        let mut iterations = 1;
        let mut done = norm(&z) == 0.0;
        while !done {
            if iterations >= max_iterations {
                return Err(Error::FixedStressDiverged {
                    time: prev.t + dt,
                    iterations: max_iterations,
                    pressure_increment: dp,
                    displacement_increment: du,
                });
            }
            let w = self.momentum_response(&d);
            let q = apply(&d, &w);
            let dq = dot(&d, &q);
            if !(dq > 0.0) {
                return Err(Error::NotPositiveDefinite(format!("fixed-stress Schur complement (dᵀSd = {dq:e})")));
            }
            let a = rz / dq;
            for i in 0..x.len() {
                x[i] += a * d[i];
                r[i] -= a * q[i];
            }
            for i in 0..u.len() {
                u[i] += a * w[i];
            }
            z = factor.solve(&r);
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("pressure solve"));
            }
            let (pn, un) = (norm(&x), norm(&u));
            let (dpa, dua) = (norm(&z), a.abs() * norm(&w));
            dp = if pn > 0.0 { dpa / pn } else { dpa };
            du = if un > 0.0 { dua / un } else { dua };
            done = converged(dpa, pn, tol) && converged(dua, un, tol);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..d.len() {
                d[i] = z[i] + beta * d[i];
            }
            iterations += 1;
        }
        // Closing plain sweep, so the pressure equation holds exactly for the
        // reported volumetric stress.
        let used = self.volumetric_stress(&u, &x);
        let p = factor.solve(&self.split_rhs(prev, &used, dt, drained)?);
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pressure solve"));
        }
        let u = self.solve_momentum(&p)?;
        let sigma_v = self.volumetric_stress(&u, &p);
        debug!("t = {:.6e}: accelerated fixed stress converged in {iterations} sweeps", prev.t + dt);
        let state = FomState { t: prev.t + dt, u, p, sigma_v };
        let report = StepReport { iterations, pressure_increment: dp, displacement_increment: du, sigma_v_used: used };
        Ok((state, report))
    }

    fn plain_split(
        &self,
        prev: &FomState,
        dt: f64,
        drained: bool,
        max_iterations: usize,
    ) -> Result<(FomState, StepReport)> {
        let factor = self.pressure_factor(dt, drained)?;
        let tol = self.settings.tolerance;
        let mut u = prev.u.clone();
        let mut p = prev.p.clone();
        let mut sigma_v = prev.sigma_v.clone();
        let (mut dp, mut du) = (f64::INFINITY, f64::INFINITY);
        for k in 1..=max_iterations {
            let rhs = self.split_rhs(prev, &sigma_v, dt, drained)?;
            let p_new = factor.solve(&rhs);
            if p_new.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("pressure solve"));
            }
            let u_new = self.solve_momentum(&p_new)?;
            let (dpa, pn) = increment(&p_new, &p);
            let (dua, un) = increment(&u_new, &u);
            dp = if pn > 0.0 { dpa / pn } else { dpa };
            du = if un > 0.0 { dua / un } else { dua };
            let used = std::mem::replace(&mut sigma_v, self.volumetric_stress(&u_new, &p_new));
            u = u_new;
            p = p_new;
            if converged(dpa, pn, tol) && converged(dua, un, tol) {
                debug!("t = {:.6e}: fixed stress converged in {k} iterations", prev.t + dt);
                let state = FomState { t: prev.t + dt, u, p, sigma_v };
                let report = StepReport {
                    iterations: k,
                    pressure_increment: dp,
                    displacement_increment: du,
                    sigma_v_used: used,
                };
                return Ok((state, report));
            }
        }
        Err(Error::FixedStressDiverged {
            time: prev.t + dt,
            iterations: max_iterations,
            pressure_increment: dp,
            displacement_increment: du,
        })
    }

    /// Instantaneous response to the applied load with no drainage, starting
    /// from the unloaded state: the split iteration with zero conductivity.
    pub fn undrained_initialize(&self) -> Result<FomState> {
        let zero = self.zero_state(0.0);
        let (mut state, report) = self.split_solve(&zero, 1.0, false, self.settings.init_max_iterations)?;
        debug!("undrained state converged in {} sweeps", report.iterations);
        state.t = 0.0;
        Ok(state)
    }

    /// Undrained start followed by every step of `schedule`.
    pub fn run(&self, schedule: &TimeSchedule) -> Result<Trajectory> {
        let init = self.undrained_initialize()?;
        self.run_from(init, schedule)
    }

    pub fn run_from(&self, init: FomState, schedule: &TimeSchedule) -> Result<Trajectory> {
        let mut states = Vec::with_capacity(schedule.num_steps() + 1);
        let mut reports = Vec::with_capacity(schedule.num_steps());
        states.push(init);
        for n in 1..=schedule.num_steps() {
            let prev = states.last().expect("initial state present");
            let (mut next, report) = self
                .fixed_stress_step(prev, schedule.step(n))
                .map_err(|e| Error::StepFailed { step: n, time: schedule.times()[n], source: Box::new(e) })?;
            next.t = schedule.times()[n];
            states.push(next);
            reports.push(report);
        }
        Ok(Trajectory { states, reports })
    }

    /// Per-cell discrete mass balance of a converged step, evaluated from
    /// explicit facet fluxes and divided by the largest per-cell term magnitude
    /// (accumulation terms at both time levels).
    pub fn mass_balance_residuals(
        &self,
        prev: &FomState,
        next: &FomState,
        sigma_v_used: &[f64],
        dt: f64,
    ) -> Result<Vec<f64>> {
        let mesh = &self.disc.mesh;
        let pm = &self.disc.p_dofs;
        let mu_f = self.material.fluid_viscosity;
        let beta = self.settings.penalty;
        let coef = self.alpha / self.material.bulk_modulus;
        let nc = mesh.num_cells();
        let mut residual = vec![0.0; nc];
        let mut magnitude = vec![0.0f64; nc];
        let cell_mean = |v: &[f64], c: usize| pm.cell_dofs(c).iter().map(|&d| v[d]).sum::<f64>() / 3.0;
        let trace = |v: &[f64], c: usize, x: [f64; 2]| {
            let b = mesh.barycentric(c, x);
            pm.cell_dofs(c).iter().zip(b).map(|(&d, l)| v[d] * l).sum::<f64>()
        };
        let grad = |v: &[f64], c: usize| {
            let geo = crate::space::CellGeometry::new(mesh, c);
            let dofs = pm.cell_dofs(c);
            let mut g = [0.0; 2];
            for k in 0..3 {
                g[0] += v[dofs[k]] * geo.grad_bary[k][0];
                g[1] += v[dofs[k]] * geo.grad_bary[k][1];
            }
            let kap = crate::materials::conductivity(self.permeability.tensor(c), mu_f);
            [kap[0][0] * g[0] + kap[0][1] * g[1], kap[1][0] * g[0] + kap[1][1] * g[1]]
        };
        for c in 0..nc {
            let a = mesh.area(c);
            let (p1, p0) = (cell_mean(&next.p, c), cell_mean(&prev.p, c));
            let (s1, s0) = (cell_mean(sigma_v_used, c), cell_mean(&prev.sigma_v, c));
            let storage = a * self.storage * (p1 - p0) / dt;
            let stress = a * coef * (s1 - s0) / dt;
            let source = a * self.bcs.source;
            residual[c] += storage + stress - source;
            // Accumulation terms count both time levels: near steady state the
            // difference is tiny while its rounding error is not.
            magnitude[c] += a * (self.storage * (p1.abs() + p0.abs()) + coef * (s1.abs() + s0.abs())) / dt
                + source.abs();
        }
        for (i, f) in mesh.interior_facets().iter().enumerate() {
            let n = mesh.outward_normal(f.plus, f.local_plus);
            let kp = assembly::normal_component(self.permeability.tensor(f.plus), n);
            let km = assembly::normal_component(self.permeability.tensor(f.minus), n);
            let delta = km / (kp + km);
            let pen = beta * harmonic_permeability(kp, km) / mu_f
                / mesh.facet_length_scale(Facet::Interior(i))?;
            let (ga, gb) = (grad(&next.p, f.plus), grad(&next.p, f.minus));
            let avg = [delta * ga[0] + (1.0 - delta) * gb[0], delta * ga[1] + (1.0 - delta) * gb[1]];
            let (xa, xb) = mesh.facet_endpoints(f.plus, f.local_plus);
            let len = mesh.edge_length(f.edge);
            let jump = 0.5
                * ((trace(&next.p, f.plus, xa) - trace(&next.p, f.minus, xa))
                    + (trace(&next.p, f.plus, xb) - trace(&next.p, f.minus, xb)));
            let consistency = -len * (avg[0] * n[0] + avg[1] * n[1]);
            let penalty = len * pen * jump;
            let flux = consistency + penalty;
            residual[f.plus] += flux;
            residual[f.minus] -= flux;
            let m = consistency.abs() + penalty.abs();
            magnitude[f.plus] += m;
            magnitude[f.minus] += m;
        }
        for (i, bf) in mesh.boundary_facets().iter().enumerate() {
            let len = mesh.edge_length(bf.edge);
            match *self.bcs.pressure(bf.label) {
                PressureBc::Flux(q) => {
                    residual[bf.cell] -= len * q;
                    magnitude[bf.cell] += (len * q).abs();
                }
                PressureBc::Dirichlet(pd) => {
                    let n = mesh.outward_normal(bf.cell, bf.local);
                    let ke = assembly::normal_component(self.permeability.tensor(bf.cell), n);
                    let pen = beta * ke / mu_f / mesh.facet_length_scale(Facet::Boundary(i))?;
                    let g = grad(&next.p, bf.cell);
                    let (xa, xb) = mesh.facet_endpoints(bf.cell, bf.local);
                    let mean = 0.5 * (trace(&next.p, bf.cell, xa) + trace(&next.p, bf.cell, xb));
                    let consistency = -len * (g[0] * n[0] + g[1] * n[1]);
                    let penalty = len * pen * (mean - pd);
                    residual[bf.cell] += consistency + penalty;
                    magnitude[bf.cell] += consistency.abs() + penalty.abs();
                }
            }
        }
        let scale = magnitude.iter().copied().fold(0.0, f64::max);
        if scale == 0.0 {
            return Ok(residual);
        }
        Ok(residual.iter().map(|r| r.abs() / scale).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::materials::{build_permeability, PermeabilityModel, SolidBulk};
    use crate::mesh::build_unit_square_mesh;

    fn material(nu: f64) -> MaterialConfig {
        MaterialConfig {
            bulk_modulus: 1.0e6,
            solid_bulk: SolidBulk::Infinite,
            poisson: nu,
            porosity: 0.3,
            fluid_compressibility: 1e-9,
            fluid_viscosity: 1e-3,
            biot_override: None,
        }
    }

    fn problem(n: usize, traction: f64) -> BiotProblem {
        let disc = Discretization::new(build_unit_square_mesh(n, true).unwrap());
        let perm = build_permeability(PermeabilityModel::Isotropic, 1e-12, &disc.mesh, None).unwrap();
        BiotProblem::new(
            disc,
            material(0.25),
            perm,
            BoundaryConditions::consolidation([0.0, traction]),
            SolverSettings::default(),
        )
        .unwrap()
    }

    #[test]
    fn weights_and_harmonic_mean() {
        assert_eq!(weighted_average_weight(1.0, 1.0).unwrap(), 0.5);
        assert!((weighted_average_weight(1e-12, 3e-12).unwrap() - 0.75).abs() < 1e-15);
        assert!(weighted_average_weight(0.0, 0.0).is_err());
        assert!((harmonic_permeability(2.0, 2.0) - 2.0).abs() < 1e-15);
        let h = harmonic_permeability(1e-12, 1e-16);
        assert!((h - 2e-28 / (1e-12 + 1e-16)).abs() < 1e-30);
        assert!((h / 1.9998e-16 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn unloaded_body_stays_at_rest() {
        let pb = problem(4, 0.0);
        let s0 = pb.undrained_initialize().unwrap();
        assert!(s0.u.iter().chain(&s0.p).all(|&v| v == 0.0));
        let (s1, rep) = pb.fixed_stress_step(&s0, 10.0).unwrap();
        assert_eq!(rep.iterations, 1);
        assert!(s1.p.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn steady_input_converges_immediately() {
        let pb = problem(4, -1000.0);
        // Drained equilibrium: zero pressure, displacement from the load alone.
        let p = vec![0.0; pb.discretization().p_dofs.n_dofs()];
        let u = pb.solve_momentum(&p).unwrap();
        let sigma_v = pb.volumetric_stress(&u, &p);
        let steady = FomState { t: 0.0, u, p, sigma_v };
        let (next, rep) = pb.fixed_stress_step(&steady, 20.0).unwrap();
        assert_eq!(rep.iterations, 1);
        let (d, n) = increment(&next.u, &steady.u);
        assert!(d <= 1e-12 * n);
        assert!(next.p.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn drained_limit_approaches_equilibrium() {
        let pb = problem(4, -1000.0);
        let s0 = pb.undrained_initialize().unwrap();
        let (s1, _) = pb.fixed_stress_step(&s0, 1e9).unwrap();
        let pmax = s0.p.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(s1.p.iter().all(|v| v.abs() < 1e-6 * pmax));
    }

    #[test]
    fn undrained_pressure_is_linear_in_load() {
        let a = problem(4, -1000.0).undrained_initialize().unwrap();
        let b = problem(4, -2000.0).undrained_initialize().unwrap();
        for (x, y) in a.p.iter().zip(&b.p) {
            assert!((2.0 * x - y).abs() <= 1e-6 * y.abs().max(1.0));
        }
    }

    #[test]
    fn missing_constraints_are_reported() {
        let disc = Discretization::new(build_unit_square_mesh(4, true).unwrap());
        let perm = build_permeability(PermeabilityModel::Isotropic, 1e-12, &disc.mesh, None).unwrap();
        let mut bcs = BoundaryConditions::consolidation([0.0, -1000.0]);
        bcs.set_displacement(crate::mesh::BoundaryLabel::Left, DisplacementBc::Traction([0.0, 0.0]));
        bcs.set_displacement(crate::mesh::BoundaryLabel::Right, DisplacementBc::Traction([0.0, 0.0]));
        let err = BiotProblem::new(disc, material(0.25), perm, bcs, SolverSettings::default()).unwrap_err();
        assert!(matches!(err, Error::RigidBodyMode));
    }

    #[test]
    fn penalty_must_be_positive_and_large_enough() {
        let mesh = build_unit_square_mesh(4, true).unwrap();
        let perm = build_permeability(PermeabilityModel::Isotropic, 1e-12, &mesh, None).unwrap();
        assert!(check_coercivity(&mesh, &perm, 1e-3, 0.0).is_err());
        assert!(check_coercivity(&mesh, &perm, 1e-3, -1.0).is_err());
        assert!(check_coercivity(&mesh, &perm, 1e-3, 10.0).is_ok());
        assert!(check_coercivity(&mesh, &perm, 1e-3, 0.05).is_err());
    }
}
