//! Proper orthogonal decomposition of snapshot sets: standard (one SVD of all
//! snapshots) and nested (temporal compression per trajectory first).

use std::fmt;

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::InnerProduct;

/// Which primary variable a snapshot set or basis belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldId {
    #[serde(rename = "u")]
    Displacement,
    #[serde(rename = "p")]
    Pressure,
}

impl FieldId {
    pub const BOTH: [FieldId; 2] = [FieldId::Displacement, FieldId::Pressure];

    pub fn code(self) -> u8 {
        match self {
            FieldId::Displacement => 0,
            FieldId::Pressure => 1,
        }
    }

    pub fn from_code(c: u8) -> Result<FieldId> {
        match c {
            0 => Ok(FieldId::Displacement),
            1 => Ok(FieldId::Pressure),
            _ => Err(Error::Format(format!("unknown field code {c}"))),
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            FieldId::Displacement => "u",
            FieldId::Pressure => "p",
        }
    }
}

impl fmt::Display for FieldId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

impl std::str::FromStr for FieldId {
    type Err = Error;

    fn from_str(s: &str) -> Result<FieldId> {
        match s {
            "u" | "displacement" => Ok(FieldId::Displacement),
            "p" | "pressure" => Ok(FieldId::Pressure),
            _ => Err(Error::InvalidParameter(format!("unknown field '{s}' (expected u or p)"))),
        }
    }
}

/// Snapshot trajectories of one field: `trajectories[i]` is `N_h × (N^t + 1)`
/// for parameter `params[i]`.
#[derive(Debug, Clone)]
pub struct SnapshotSet {
    pub field: FieldId,
    pub trajectories: Vec<DMatrix<f64>>,
    pub params: Vec<Vec<f64>>,
    pub times: Vec<f64>,
    pub inner: InnerProduct,
}

impl SnapshotSet {
    pub fn new(
        field: FieldId,
        trajectories: Vec<DMatrix<f64>>,
        params: Vec<Vec<f64>>,
        times: Vec<f64>,
        inner: InnerProduct,
    ) -> Result<SnapshotSet> {
        let first = trajectories
            .first()
            .ok_or_else(|| Error::InvalidParameter("snapshot set needs at least one trajectory".into()))?;
        let (nh, nt) = first.shape();
        if params.len() != trajectories.len() {
            return Err(Error::DimensionMismatch { expected: trajectories.len(), found: params.len() });
        }
        if times.len() != nt {
            return Err(Error::DimensionMismatch { expected: nt, found: times.len() });
        }
        for s in &trajectories {
            if s.shape() != (nh, nt) {
                return Err(Error::InvalidParameter(format!(
                    "trajectory shape {:?} differs from {:?}",
                    s.shape(),
                    (nh, nt)
                )));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("snapshot"));
            }
        }
        if let InnerProduct::Mass(m) = &inner {
            if m.nrows() != nh {
                return Err(Error::DimensionMismatch { expected: nh, found: m.nrows() });
            }
        }
        Ok(SnapshotSet { field, trajectories, params, times, inner })
    }

    pub fn n_dofs(&self) -> usize {
        self.trajectories[0].nrows()
    }

    /// `N^t + 1`.
    pub fn n_times(&self) -> usize {
        self.trajectories[0].ncols()
    }

    /// `M`.
    pub fn n_params(&self) -> usize {
        self.trajectories.len()
    }

    /// All trajectories side by side, `N_h × M(N^t + 1)`.
    pub fn stacked(&self) -> DMatrix<f64> {
        hstack(&self.trajectories)
    }
}

pub(crate) fn hstack(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut j = 0;
    for b in blocks {
        out.columns_mut(j, b.ncols()).copy_from(b);
        j += b.ncols();
    }
    out
}

/// Standard POD, or nested with `N_int` temporal modes per trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PodVariant {
    Standard,
    Nested { n_int: usize },
}

impl fmt::Display for PodVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PodVariant::Standard => f.write_str("standard"),
            PodVariant::Nested { n_int } => write!(f, "nested(N_int={n_int})"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReducedBasis {
    pub field: FieldId,
    /// `N_h × N`, orthonormal in `inner`.
    pub modes: DMatrix<f64>,
    /// All singular values of the compressed matrix, nonincreasing.
    pub singular_values: Vec<f64>,
    pub variant: PodVariant,
    pub inner: InnerProduct,
}

impl ReducedBasis {
    /// `N`.
    pub fn n_modes(&self) -> usize {
        self.modes.ncols()
    }

    pub fn n_dofs(&self) -> usize {
        self.modes.nrows()
    }

    /// Keeps the leading `n` modes.
    pub fn truncated(&self, n: usize) -> Result<ReducedBasis> {
        if n == 0 || n > self.n_modes() {
            return Err(Error::InvalidParameter(format!(
                "cannot truncate a {}-mode basis to {n} modes",
                self.n_modes()
            )));
        }
        Ok(ReducedBasis { modes: self.modes.columns(0, n).into_owned(), ..self.clone() })
    }

    /// `‖S - W Wᵀ M S‖` in the basis inner product (Frobenius over columns).
    pub fn projection_error(&self, snapshots: &DMatrix<f64>) -> f64 {
        let ms = self.inner.apply_matrix(snapshots);
        let coeffs = self.modes.tr_mul(&ms);
        let residual = snapshots - &self.modes * coeffs;
        let mr = self.inner.apply_matrix(&residual);
        residual.dot(&mr).max(0.0).sqrt()
    }
}

/// Relative singular-value floor for a `rows × cols` matrix: below
/// `max(rows, cols) · ε · σ₁` a singular value is round-off.
pub fn rank_floor(rows: usize, cols: usize) -> f64 {
    rows.max(cols).max(1) as f64 * f64::EPSILON
}

/// Right singular vectors and singular values of `y`, sorted nonincreasing.
/// Tall matrices go through a Householder QR first, so only the small
/// triangular factor is decomposed.
fn right_svd(y: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let svd = if y.nrows() > y.ncols() {
        y.clone().qr().r().svd_unordered(false, true)
    } else {
        y.clone().svd_unordered(false, true)
    };
    let vt = svd.v_t.expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let sigmas = order.iter().map(|&i| svd.singular_values[i]).collect();
    let mut v = DMatrix::zeros(y.ncols(), order.len());
    for (k, &i) in order.iter().enumerate() {
        v.set_column(k, &vt.row(i).transpose());
    }
    (v, sigmas)
}

/// Leading `n` left singular vectors (Euclidean) and all singular values of
/// `y`. `n` is reduced to the numerical rank with a warning.
fn left_svd(y: &DMatrix<f64>, n: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let (v, mut sigmas) = right_svd(y);
    // Only min(rows, cols) singular values exist; pad so that every column
    // has one.
    sigmas.resize(y.ncols(), 0.0);
    let s1 = sigmas.first().copied().unwrap_or(0.0);
    let floor = rank_floor(y.nrows(), y.ncols()) * s1;
    let rank = sigmas.iter().take_while(|&&s| s > floor && s > 0.0).count();
    let keep = if n > rank {
        warn!("requested {n} modes but the numerical rank is {rank}; keeping {rank}");
        rank
    } else {
        n
    };
    if keep == 0 {
        return Err(Error::InvalidParameter("snapshot matrix is numerically zero".into()));
    }
    let mut u = y * v.columns(0, keep);
    for k in 0..keep {
        u.column_mut(k).scale_mut(1.0 / sigmas[k]);
    }
    orthonormalize(&mut u, &InnerProduct::Euclidean);
    Ok((u, sigmas))
}

/// Modified Gram–Schmidt in the inner product, two passes.
pub fn orthonormalize(w: &mut DMatrix<f64>, inner: &InnerProduct) {
    for _ in 0..2 {
        for k in 0..w.ncols() {
            for j in 0..k {
                let wj = w.column(j).into_owned();
                let mwj = inner.apply(wj.as_slice());
                let c: f64 = w.column(k).iter().zip(&mwj).map(|(a, b)| a * b).sum();
                let mut col = w.column_mut(k);
                col.axpy(-c, &wj, 1.0);
            }
            let col = w.column(k).into_owned();
            let mc = inner.apply(col.as_slice());
            let nrm: f64 = col.iter().zip(&mc).map(|(a, b)| a * b).sum::<f64>().sqrt();
            if nrm > 0.0 {
                w.column_mut(k).scale_mut(1.0 / nrm);
            }
        }
    }
}

/// First `n` POD modes of all snapshots compressed together.
pub fn standard_pod(set: &SnapshotSet, n: usize) -> Result<ReducedBasis> {
    if n == 0 {
        return Err(Error::InvalidParameter("N must be at least 1".into()));
    }
    let factor = set.inner.factor()?;
    let y = factor.weigh(&set.stacked());
    let (u, singular_values) = left_svd(&y, n)?;
    Ok(ReducedBasis {
        field: set.field,
        modes: factor.unweigh(&u),
        singular_values,
        variant: PodVariant::Standard,
        inner: set.inner.clone(),
    })
}

/// Per trajectory, keeps the leading `n_int` left singular vectors scaled by
/// their singular values; the stacked result is compressed to `n` modes.
pub fn nested_pod(set: &SnapshotSet, n_int: usize, n: usize) -> Result<ReducedBasis> {
    if n_int == 0 || n_int > set.n_times() {
        return Err(Error::InvalidParameter(format!(
            "N_int must lie in 1..={}, got {n_int}",
            set.n_times()
        )));
    }
    if n == 0 || n > n_int * set.n_params() {
        return Err(Error::InvalidParameter(format!(
            "N must lie in 1..={} (N_int·M), got {n}",
            n_int * set.n_params()
        )));
    }
    let factor = set.inner.factor()?;
    let compressed: Vec<DMatrix<f64>> = set
        .trajectories
        .par_iter()
        .map(|s| {
            let y = factor.weigh(s);
            let (v, _) = right_svd(&y);
            let k = n_int.min(v.ncols());
            &y * v.columns(0, k)
        })
        .collect();
    let (u, singular_values) = left_svd(&hstack(&compressed), n)?;
    Ok(ReducedBasis {
        field: set.field,
        modes: factor.unweigh(&u),
        singular_values,
        variant: PodVariant::Nested { n_int },
        inner: set.inner.clone(),
    })
}

/// `σ_k² / σ₁²`.
pub fn normalized_eigenvalues(basis: &ReducedBasis) -> Vec<f64> {
    let s1 = basis.singular_values.first().copied().unwrap_or(0.0);
    if s1 == 0.0 {
        return vec![0.0; basis.singular_values.len()];
    }
    basis.singular_values.iter().map(|s| (s / s1).powi(2)).collect()
}

/// `√(Σ_{k>n} σ_k²)`.
pub fn tail_energy(singular_values: &[f64], n: usize) -> f64 {
    singular_values.iter().skip(n).map(|s| s * s).sum::<f64>().sqrt()
}

/// Largest principal angle (radians) between the column spaces of two bases
/// orthonormal in `inner`.
pub fn max_subspace_angle(a: &DMatrix<f64>, b: &DMatrix<f64>, inner: &InnerProduct) -> f64 {
    let c = inner.gram(a, b);
    let sv = c.singular_values();
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min).clamp(0.0, 1.0);
    // acos loses accuracy near 1; use the sine of the complement instead.
    let proj = b - a * c.clone();
    let mp = inner.apply_matrix(&proj);
    let sine = proj.tr_mul(&mp).symmetric_eigen().eigenvalues.max().max(0.0).sqrt();
    if sine < 0.5 {
        sine.min(1.0).asin()
    } else {
        smin.acos()
    }
}
