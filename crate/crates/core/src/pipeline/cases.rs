//! The four consolidation benchmarks and how a parameter vector becomes a
//! solvable problem.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fom::{BiotProblem, BoundaryConditions, Discretization, SolverSettings};
use crate::materials::{
    build_permeability, generate_lognormal_field, read_permeability_file, LogNormalFieldSpec, MaterialConfig,
    PermeabilityModel, SolidBulk,
};
use crate::projection::Scale;

/// Surface load on the top boundary (Pa).
pub const LOAD: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum CaseId {
    /// Homogeneous isotropic, μ = (ν, k_xx).
    Isotropic = 1,
    /// Homogeneous anisotropic, μ = (ν, k_xx).
    Anisotropic = 2,
    /// Two layers, μ = (ν, k_xx of the lower layer).
    TwoLayer = 3,
    /// Fixed heterogeneous field, μ = (ν, α).
    Heterogeneous = 4,
}

impl CaseId {
    pub const ALL: [CaseId; 4] = [CaseId::Isotropic, CaseId::Anisotropic, CaseId::TwoLayer, CaseId::Heterogeneous];

    pub fn number(self) -> u8 {
        self as u8
    }
}

impl TryFrom<u8> for CaseId {
    type Error = Error;

    fn try_from(v: u8) -> Result<CaseId> {
        match v {
            1 => Ok(CaseId::Isotropic),
            2 => Ok(CaseId::Anisotropic),
            3 => Ok(CaseId::TwoLayer),
            4 => Ok(CaseId::Heterogeneous),
            _ => Err(Error::InvalidParameter(format!("unknown case {v}; expected 1 to 4"))),
        }
    }
}

impl From<CaseId> for u8 {
    fn from(c: CaseId) -> u8 {
        c as u8
    }
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// One component of the parameter box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamAxis {
    pub name: &'static str,
    pub lo: f64,
    pub hi: f64,
    pub scale: Scale,
}

impl ParamAxis {
    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

/// Example-1 material with `ν` and, optionally, a prescribed α.
pub fn base_material(nu: f64, alpha: Option<f64>) -> MaterialConfig {
    MaterialConfig {
        bulk_modulus: 1.0e6,
        solid_bulk: SolidBulk::Infinite,
        poisson: nu,
        porosity: 0.3,
        fluid_compressibility: 1.0e-9,
        fluid_viscosity: 1.0e-3,
        biot_override: alpha,
    }
}

/// A benchmark bound to a discretisation: builds the FOM for any μ.
#[derive(Debug, Clone)]
pub struct BenchmarkCase {
    pub id: CaseId,
    pub axes: Vec<ParamAxis>,
    pub disc: Arc<Discretization>,
    pub bcs: BoundaryConditions,
    pub settings: SolverSettings,
    /// Cellwise k_xx of the heterogeneous case.
    pub field: Option<Arc<Vec<f64>>>,
}

/// Where the heterogeneous field comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldSource {
    Generated(LogNormalFieldSpec),
    File(std::path::PathBuf),
}

impl Default for FieldSource {
    fn default() -> Self {
        FieldSource::Generated(LogNormalFieldSpec::default())
    }
}

pub fn case_axes(id: CaseId) -> Vec<ParamAxis> {
    let nu = ParamAxis { name: "nu", lo: 0.1, hi: 0.4, scale: Scale::Linear };
    let k = |lo, hi, scale| ParamAxis { name: "k_xx", lo, hi, scale };
    match id {
        CaseId::Isotropic | CaseId::Anisotropic => vec![nu, k(1e-15, 1e-11, Scale::Log10)],
        // One decade only: linear spacing.
        CaseId::TwoLayer => vec![nu, k(1e-16, 1e-15, Scale::Linear)],
        CaseId::Heterogeneous => vec![nu, ParamAxis { name: "alpha", lo: 0.4, hi: 1.0, scale: Scale::Linear }],
    }
}

impl BenchmarkCase {
    pub fn new(
        id: CaseId,
        disc: Arc<Discretization>,
        settings: SolverSettings,
        field: &FieldSource,
    ) -> Result<BenchmarkCase> {
        let field = if id == CaseId::Heterogeneous {
            let n = disc.mesh.num_cells();
            let values = match field {
                FieldSource::Generated(spec) => generate_lognormal_field(&disc.mesh, spec)?,
                FieldSource::File(p) => read_permeability_file(Path::new(p), n)?,
            };
            Some(Arc::new(values))
        } else {
            None
        };
        Ok(BenchmarkCase {
            id,
            axes: case_axes(id),
            disc,
            bcs: BoundaryConditions::consolidation([0.0, -LOAD]),
            settings,
            field,
        })
    }

    pub fn n_params(&self) -> usize {
        self.axes.len()
    }

    pub fn scales(&self) -> Vec<Scale> {
        self.axes.iter().map(|a| a.scale).collect()
    }

    pub fn contains(&self, mu: &[f64]) -> bool {
        mu.len() == self.axes.len() && self.axes.iter().zip(mu).all(|(a, &x)| a.contains(x))
    }

    pub fn material(&self, mu: &[f64]) -> Result<MaterialConfig> {
        self.check_len(mu)?;
        Ok(match self.id {
            CaseId::Heterogeneous => base_material(mu[0], Some(mu[1])),
            _ => base_material(mu[0], None),
        })
    }

    fn check_len(&self, mu: &[f64]) -> Result<()> {
        if mu.len() != self.axes.len() {
            return Err(Error::DimensionMismatch { expected: self.axes.len(), found: mu.len() });
        }
        Ok(())
    }

    pub fn problem(&self, mu: &[f64]) -> Result<BiotProblem> {
        let material = self.material(mu)?;
        let mesh = &self.disc.mesh;
        let perm = match self.id {
            CaseId::Isotropic => build_permeability(PermeabilityModel::Isotropic, mu[1], mesh, None)?,
            CaseId::Anisotropic => build_permeability(PermeabilityModel::Anisotropic, mu[1], mesh, None)?,
            CaseId::TwoLayer => build_permeability(PermeabilityModel::TwoLayer, mu[1], mesh, None)?,
            CaseId::Heterogeneous => build_permeability(
                PermeabilityModel::Cellwise,
                0.0,
                mesh,
                self.field.as_deref().map(|v| v.as_slice()),
            )?,
        };
        BiotProblem::new(self.disc.clone(), material, perm, self.bcs.clone(), self.settings)
    }
}
