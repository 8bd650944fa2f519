//! Constitutive relations and permeability fields.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use libm::erf;

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Subdomain};

/// Symmetric 2×2 tensor stored as `[[xx, xy], [yx, yy]]`.
pub type Tensor2 = [[f64; 2]; 2];

/// Bulk modulus of the solid grains; `Infinite` models incompressible grains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SolidBulk {
    Finite(f64),
    Infinite,
}

/// Lamé constants `(λ, μ)` from bulk modulus and Poisson ratio.
pub fn lame_from_bulk_poisson(bulk: f64, poisson: f64) -> Result<(f64, f64)> {
    if !(bulk > 0.0) {
        return Err(Error::InvalidMaterial(format!("bulk modulus must be positive, got {bulk}")));
    }
    if !(poisson > 0.0 && poisson < 0.5) {
        return Err(Error::InvalidMaterial(format!(
            "Poisson ratio must lie in (0, 0.5), got {poisson}"
        )));
    }
    let lambda = 3.0 * bulk * poisson / (1.0 + poisson);
    let mu = 3.0 * bulk * (1.0 - 2.0 * poisson) / (2.0 * (1.0 + poisson));
    Ok((lambda, mu))
}

/// `α = 1 - K / K_s`.
pub fn biot_coefficient(bulk: f64, solid: SolidBulk) -> Result<f64> {
    match solid {
        SolidBulk::Infinite => Ok(1.0),
        SolidBulk::Finite(ks) => {
            if !(bulk > 0.0) || bulk > ks {
                return Err(Error::InvalidMaterial(format!(
                    "need 0 < K <= K_s, got K = {bulk}, K_s = {ks}"
                )));
            }
            Ok(1.0 - bulk / ks)
        }
    }
}

/// `1/M = φ c_f + (α - φ) / K_s`.
pub fn biot_modulus_inverse(porosity: f64, compressibility: f64, alpha: f64, solid: SolidBulk) -> f64 {
    let grains = match solid {
        SolidBulk::Infinite => 0.0,
        SolidBulk::Finite(ks) => (alpha - porosity) / ks,
    };
    porosity * compressibility + grains
}

/// `κ = k / μ_f`.
pub fn conductivity(k: &Tensor2, viscosity: f64) -> Tensor2 {
    [[k[0][0] / viscosity, k[0][1] / viscosity], [k[1][0] / viscosity, k[1][1] / viscosity]]
}

pub(crate) fn is_spd(k: &Tensor2) -> bool {
    let sym = (k[0][1] - k[1][0]).abs() <= 1e-12 * (k[0][0].abs() + k[1][1].abs());
    let det = k[0][0] * k[1][1] - k[0][1] * k[1][0];
    sym && k[0][0] > 0.0 && det > 0.0 && k.iter().flatten().all(|v| v.is_finite())
}

/// How the permeability tensor depends on the parameter `k_xx`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PermeabilityModel {
    /// `k_xx I`.
    Isotropic,
    /// `[[k_xx, 0.1 k_xx], [0.1 k_xx, 0.1 k_xx]]`.
    Anisotropic,
    /// `1e-12 I` above y = 0.5, `k_xx I` below.
    TwoLayer,
    /// A fixed isotropic field read per cell.
    Cellwise,
}

/// Upper-layer permeability of the two-layer setup (m²).
pub const TWO_LAYER_UPPER_K: f64 = 1.0e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PermeabilityField {
    pub model: PermeabilityModel,
    tensors: Vec<Tensor2>,
}

impl PermeabilityField {
    pub fn from_tensors(model: PermeabilityModel, tensors: Vec<Tensor2>) -> Result<Self> {
        if let Some(c) = tensors.iter().position(|k| !is_spd(k)) {
            return Err(Error::InvalidMaterial(format!(
                "permeability tensor of cell {c} is not symmetric positive definite"
            )));
        }
        Ok(PermeabilityField { model, tensors })
    }

    pub fn uniform(model: PermeabilityModel, k: Tensor2, n_cells: usize) -> Result<Self> {
        Self::from_tensors(model, vec![k; n_cells])
    }

    pub fn tensor(&self, cell: usize) -> &Tensor2 {
        &self.tensors[cell]
    }

    pub fn tensors(&self) -> &[Tensor2] {
        &self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }
}

/// Builds the per-cell permeability for a benchmark model.
///
/// `cell_field` supplies per-cell `k_xx` values for [`PermeabilityModel::Cellwise`]
/// and is ignored otherwise.
pub fn build_permeability(
    model: PermeabilityModel,
    k_xx: f64,
    mesh: &Mesh,
    cell_field: Option<&[f64]>,
) -> Result<PermeabilityField> {
    let n = mesh.num_cells();
    let iso = |k: f64| [[k, 0.0], [0.0, k]];
    if model != PermeabilityModel::Cellwise && !(k_xx > 0.0 && k_xx.is_finite()) {
        return Err(Error::InvalidMaterial(format!("k_xx must be positive, got {k_xx}")));
    }
    let tensors = match model {
        PermeabilityModel::Isotropic => vec![iso(k_xx); n],
        PermeabilityModel::Anisotropic => {
            let off = 0.1 * k_xx;
            vec![[[k_xx, off], [off, off]]; n]
        }
        PermeabilityModel::TwoLayer => (0..n)
            .map(|c| match mesh.subdomain(c) {
                Subdomain::Upper => iso(TWO_LAYER_UPPER_K),
                Subdomain::Lower => iso(k_xx),
            })
            .collect(),
        PermeabilityModel::Cellwise => {
            let field = cell_field.ok_or_else(|| {
                Error::InvalidMaterial("cellwise permeability needs a field file".into())
            })?;
            if field.len() != n {
                return Err(Error::DimensionMismatch { expected: n, found: field.len() });
            }
            field.iter().map(|&k| iso(k)).collect()
        }
    };
    PermeabilityField::from_tensors(model, tensors)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialConfig {
    /// Drained bulk modulus K (Pa).
    pub bulk_modulus: f64,
    pub solid_bulk: SolidBulk,
    pub poisson: f64,
    pub porosity: f64,
    /// c_f (1/Pa).
    pub fluid_compressibility: f64,
    /// μ_f (Pa·s).
    pub fluid_viscosity: f64,
    /// Replaces `1 - K/K_s` when set.
    pub biot_override: Option<f64>,
}

impl MaterialConfig {
    pub fn validate(&self) -> Result<()> {
        self.lame()?;
        if !(self.porosity > 0.0 && self.porosity < 1.0) {
            return Err(Error::InvalidMaterial(format!("porosity {} not in (0, 1)", self.porosity)));
        }
        if !(self.fluid_compressibility >= 0.0) {
            return Err(Error::InvalidMaterial("fluid compressibility must be >= 0".into()));
        }
        if !(self.fluid_viscosity > 0.0) {
            return Err(Error::InvalidMaterial("fluid viscosity must be positive".into()));
        }
        let alpha = self.biot()?;
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidMaterial(format!("Biot coefficient {alpha} not in (0, 1]")));
        }
        Ok(())
    }

    pub fn lame(&self) -> Result<(f64, f64)> {
        lame_from_bulk_poisson(self.bulk_modulus, self.poisson)
    }

    pub fn biot(&self) -> Result<f64> {
        match self.biot_override {
            Some(a) => Ok(a),
            None => biot_coefficient(self.bulk_modulus, self.solid_bulk),
        }
    }

    pub fn biot_modulus_inverse(&self) -> Result<f64> {
        Ok(biot_modulus_inverse(
            self.porosity,
            self.fluid_compressibility,
            self.biot()?,
            self.solid_bulk,
        ))
    }

    /// Storage coefficient of the fixed-stress pressure equation, `1/M + α²/K`.
    pub fn fixed_stress_storage(&self) -> Result<f64> {
        let a = self.biot()?;
        Ok(self.biot_modulus_inverse()? + a * a / self.bulk_modulus)
    }
}

/// Reads a `cell_index k_xx` file (blank lines and `#` comments allowed).
pub fn read_permeability_file(path: &Path, n_cells: usize) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    parse_permeability(&text, n_cells)
}

pub fn parse_permeability(text: &str, n_cells: usize) -> Result<Vec<f64>> {
    let mut values = vec![f64::NAN; n_cells];
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || Error::Format(format!("permeability file line {}: '{line}'", lineno + 1));
        let mut it = line.split_whitespace();
        let cell: usize = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let k: f64 = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        if cell >= n_cells {
            return Err(Error::Format(format!("cell index {cell} out of range ({n_cells} cells)")));
        }
        values[cell] = k;
    }
    if let Some(c) = values.iter().position(|v| v.is_nan()) {
        return Err(Error::Format(format!("permeability missing for cell {c}")));
    }
    Ok(values)
}

pub fn format_permeability(values: &[f64]) -> String {
    let mut out = String::new();
    for (c, k) in values.iter().enumerate() {
        let _ = writeln!(out, "{c} {k:.17e}");
    }
    out
}

/// Which extreme of a Zinn–Harvey transformed field is connected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    High,
    Low,
}

/// Settings for [`generate_lognormal_field`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalFieldSpec {
    pub mean: f64,
    pub variance: f64,
    pub correlation_length: f64,
    pub zinn_harvey: Option<Connectivity>,
    pub seed: u64,
}

impl Default for LogNormalFieldSpec {
    fn default() -> Self {
        LogNormalFieldSpec {
            mean: 1.77e-12,
            variance: 5.53e-24,
            correlation_length: 0.1,
            zinn_harvey: Some(Connectivity::High),
            seed: 20,
        }
    }
}

/// Cellwise log-normal permeability: Gaussian-smoothed white noise at the
/// cell centroids, standardised, optionally Zinn–Harvey transformed, then
/// mapped to a log-normal with the requested mean and variance.
pub fn generate_lognormal_field(mesh: &Mesh, spec: &LogNormalFieldSpec) -> Result<Vec<f64>> {
    if !(spec.mean > 0.0 && spec.variance >= 0.0 && spec.correlation_length > 0.0) {
        return Err(Error::InvalidParameter("log-normal field needs mean > 0, var >= 0, len > 0".into()));
    }
    let n = mesh.num_cells();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let centroids: Vec<[f64; 2]> = (0..n).map(|c| mesh.centroid(c)).collect();
    let two_l2 = 2.0 * spec.correlation_length * spec.correlation_length;
    let mut field: Vec<f64> = centroids
        .iter()
        .map(|x| {
            centroids
                .iter()
                .zip(&noise)
                .map(|(y, w)| {
                    let d2 = (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2);
                    w * (-d2 / two_l2).exp()
                })
                .sum()
        })
        .collect();
    standardise(&mut field);
    if let Some(conn) = spec.zinn_harvey {
        for v in field.iter_mut() {
            let t = std::f64::consts::SQRT_2 * erf_inv(2.0 * erf(v.abs() / std::f64::consts::SQRT_2) - 1.0);
            *v = if conn == Connectivity::High { -t } else { t };
        }
        standardise(&mut field);
    }
    let s2 = (1.0 + spec.variance / (spec.mean * spec.mean)).ln();
    let m = spec.mean.ln() - 0.5 * s2;
    Ok(field.iter().map(|y| (m + s2.sqrt() * y).exp()).collect())
}

/// Inverse error function on (-1, 1) by Newton iteration on `erf`.
fn erf_inv(y: f64) -> f64 {
    if y <= -1.0 {
        return f64::NEG_INFINITY;
    }
    if y >= 1.0 {
        return f64::INFINITY;
    }
    // Winitzki's approximation as a starting point.
    let a = 0.147;
    let l = (1.0 - y * y).ln();
    let t = 2.0 / (std::f64::consts::PI * a) + 0.5 * l;
    let mut x = y.signum() * ((t * t - l / a).sqrt() - t).sqrt();
    for _ in 0..50 {
        let step = (erf(x) - y) / (2.0 / std::f64::consts::PI.sqrt() * (-x * x).exp());
        x -= step;
        if step.abs() <= 1e-15 * x.abs().max(1e-300) {
            break;
        }
    }
    x
}

fn standardise(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
    for x in v.iter_mut() {
        *x = (*x - mean) / sd;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_unit_square_mesh;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn lame_constants() {
        let (l, m) = lame_from_bulk_poisson(1.0e6, 0.25).unwrap();
        assert!(rel(l, 6.0e5) < 1e-14 && rel(m, 6.0e5) < 1e-14);
        let (l, m) = lame_from_bulk_poisson(2.0e6, 1e-12).unwrap();
        assert!(l < 1e-3 && rel(m, 3.0e6) < 1e-9);
        let (l, m) = lame_from_bulk_poisson(3.3e6, 0.4).unwrap();
        assert!(rel(l / m, 4.0) < 1e-13);
        assert!(lame_from_bulk_poisson(1.0e6, 0.5).is_err());
        assert!(lame_from_bulk_poisson(-1.0, 0.2).is_err());
    }

    #[test]
    fn bulk_modulus_round_trip() {
        for nu in [0.05, 0.1, 0.25, 0.33, 0.49] {
            let k = 1.7e6;
            let (l, m) = lame_from_bulk_poisson(k, nu).unwrap();
            assert!(rel(l + 2.0 * m / 3.0, k) < 1e-12);
        }
    }

    #[test]
    fn biot_coefficients() {
        assert_eq!(biot_coefficient(1.0e6, SolidBulk::Infinite).unwrap(), 1.0);
        assert_eq!(biot_coefficient(1.0e6, SolidBulk::Finite(1.0e6)).unwrap(), 0.0);
        assert!(rel(biot_coefficient(1.0e6, SolidBulk::Finite(2.0e6)).unwrap(), 0.5) < 1e-15);
        assert!(biot_coefficient(2.0e6, SolidBulk::Finite(1.0e6)).is_err());
    }

    #[test]
    fn biot_modulus() {
        assert!(rel(biot_modulus_inverse(0.3, 1e-9, 1.0, SolidBulk::Infinite), 3e-10) < 1e-14);
        assert_eq!(biot_modulus_inverse(0.3, 0.0, 1.0, SolidBulk::Infinite), 0.0);
        assert!(rel(biot_modulus_inverse(0.3, 1e-9, 0.8, SolidBulk::Finite(1e9)), 8e-10) < 1e-14);
    }

    #[test]
    fn biot_modulus_is_monotone() {
        let ks = SolidBulk::Finite(5e9);
        let mut last = f64::NEG_INFINITY;
        for i in 0..20 {
            let v = biot_modulus_inverse(0.3, i as f64 * 1e-10, 0.7, ks);
            assert!(v >= last);
            last = v;
        }
        let mut last = f64::NEG_INFINITY;
        for i in 0..20 {
            let v = biot_modulus_inverse(0.3, 1e-9, 0.3 + i as f64 * 0.035, ks);
            assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn conductivity_scales() {
        let k = [[1e-12, 0.0], [0.0, 1e-12]];
        let c = conductivity(&k, 1e-3);
        assert!(rel(c[0][0], 1e-9) < 1e-14 && rel(c[1][1], 1e-9) < 1e-14 && c[0][1] == 0.0);
        assert_eq!(conductivity(&k, 1.0), k);
        let a = [[1e-12, 1e-13], [1e-13, 1e-13]];
        assert!(rel(conductivity(&a, 1e-3)[0][1], 1e-10) < 1e-14);
    }

    #[test]
    fn permeability_models() {
        let mesh = build_unit_square_mesh(4, true).unwrap();
        let iso = build_permeability(PermeabilityModel::Isotropic, 1e-12, &mesh, None).unwrap();
        assert!(iso.tensors().iter().all(|k| *k == [[1e-12, 0.0], [0.0, 1e-12]]));

        let ani = build_permeability(PermeabilityModel::Anisotropic, 1e-12, &mesh, None).unwrap();
        let k = ani.tensor(0);
        assert!(rel(k[0][0], 1e-12) < 1e-15);
        assert!(rel(k[0][1], 1e-13) < 1e-15 && rel(k[1][0], 1e-13) < 1e-15);
        assert!(rel(k[1][1], 1e-13) < 1e-15);

        let two = build_permeability(PermeabilityModel::TwoLayer, 5e-15, &mesh, None).unwrap();
        let up = mesh.locate([0.5, 0.75]).unwrap();
        let low = mesh.locate([0.5, 0.25]).unwrap();
        assert_eq!(two.tensor(up)[0][0], 1e-12);
        assert_eq!(two.tensor(low)[0][0], 5e-15);

        assert!(build_permeability(PermeabilityModel::Cellwise, 0.0, &mesh, None).is_err());
        assert!(build_permeability(PermeabilityModel::Isotropic, -1.0, &mesh, None).is_err());
    }

    #[test]
    fn anisotropic_tensor_is_positive_definite() {
        // eigenvalues of [[1, .1], [.1, .1]]
        let (a, b, c) = (1.0f64, 0.1f64, 0.1f64);
        let tr = a + c;
        let disc = ((a - c).powi(2) + 4.0 * b * b).sqrt();
        assert!((tr - disc) / 2.0 > 0.0);
        assert!(is_spd(&[[1e-12, 1e-13], [1e-13, 1e-13]]));
        assert!(!is_spd(&[[1e-12, 2e-12], [2e-12, 1e-12]]));
    }

    #[test]
    fn erf_inv_inverts_erf() {
        for i in -99..=99 {
            let y = i as f64 / 100.0;
            assert!((erf(erf_inv(y)) - y).abs() < 1e-14, "{y}");
        }
        assert_eq!(erf_inv(0.0), 0.0);
    }

    #[test]
    fn permeability_file_round_trip() {
        let values = vec![1e-12, 2.5e-13, 3e-15];
        let parsed = parse_permeability(&format_permeability(&values), 3).unwrap();
        assert_eq!(parsed, values);
        assert!(parse_permeability("0 1e-12\n1 1e-12\n", 3).is_err());
        assert!(parse_permeability("0 1e-12\n7 1e-12\n", 3).is_err());
        assert!(parse_permeability("zero one\n", 1).is_err());
    }

    #[test]
    fn lognormal_field_is_positive_with_roughly_the_right_mean() {
        let mesh = build_unit_square_mesh(12, true).unwrap();
        let spec = LogNormalFieldSpec::default();
        let f = generate_lognormal_field(&mesh, &spec).unwrap();
        assert_eq!(f.len(), mesh.num_cells());
        assert!(f.iter().all(|&k| k > 0.0));
        let mean = f.iter().sum::<f64>() / f.len() as f64;
        assert!(mean > 0.3 * spec.mean && mean < 3.0 * spec.mean, "mean {mean}");
        assert_eq!(f, generate_lognormal_field(&mesh, &spec).unwrap());
    }
}
