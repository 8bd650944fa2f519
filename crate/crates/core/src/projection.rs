//! Optimal reduced coefficients of snapshots (L² projection onto a basis) and
//! the normalised training table for the regressor.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::pod::{FieldId, ReducedBasis, SnapshotSet};

/// `G_jk = (w_j, w_k)` in the basis inner product.
pub fn gram_matrix(basis: &ReducedBasis) -> Result<DMatrix<f64>> {
    let g = basis.inner.gram(&basis.modes, &basis.modes);
    g.clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("basis Gram matrix (degenerate basis)".into()))?;
    Ok(g)
}

/// Solves `G θ = Wᵀ M φ` for every column of `fields`, given the Gram factor.
fn project_columns(fields: &DMatrix<f64>, basis: &ReducedBasis, gram: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ensure_len(basis.n_dofs(), fields.nrows())?;
    let chol = gram
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("basis Gram matrix (degenerate basis)".into()))?;
    let rhs = basis.modes.tr_mul(&basis.inner.apply_matrix(fields));
    Ok(chol.solve(&rhs))
}

/// Coefficients of the best approximation of `field` in the span of the basis.
pub fn project(field: &[f64], basis: &ReducedBasis) -> Result<Vec<f64>> {
    let gram = gram_matrix(basis)?;
    let col = DMatrix::from_column_slice(field.len(), 1, field);
    Ok(project_columns(&col, basis, &gram)?.column(0).iter().copied().collect())
}

/// `Σ θ_k w_k`.
pub fn expand(theta: &[f64], basis: &ReducedBasis) -> Result<Vec<f64>> {
    ensure_len(basis.n_modes(), theta.len())?;
    Ok((&basis.modes * DVector::from_column_slice(theta)).iter().copied().collect())
}

/// Per-component map onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Linear,
    /// Affine in `log₁₀ x`; for positive quantities spanning decades.
    Log10,
}

impl Scale {
    fn forward(self, x: f64) -> f64 {
        match self {
            Scale::Linear => x,
            Scale::Log10 => x.log10(),
        }
    }

    fn inverse(self, y: f64) -> f64 {
        match self {
            Scale::Linear => y,
            Scale::Log10 => 10f64.powf(y),
        }
    }
}

/// Min/max normalisation of one column, fitted on training data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub scale: Scale,
    /// Bounds in the scaled variable.
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub fn fit(values: impl IntoIterator<Item = f64>, scale: Scale) -> Result<Range> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in values {
            if scale == Scale::Log10 && !(v > 0.0) {
                return Err(Error::InvalidParameter(format!("log scaling needs positive values, got {v}")));
            }
            let s = scale.forward(v);
            if !s.is_finite() {
                return Err(Error::NonFinite("normalisation data"));
            }
            lo = lo.min(s);
            hi = hi.max(s);
        }
        if lo > hi {
            return Err(Error::InvalidParameter("cannot normalise an empty column".into()));
        }
        Ok(Range { scale, lo, hi })
    }

    pub fn is_constant(&self) -> bool {
        self.hi == self.lo
    }

    pub fn normalize(&self, x: f64) -> f64 {
        if self.is_constant() {
            0.5
        } else {
            (self.scale.forward(x) - self.lo) / (self.hi - self.lo)
        }
    }

    pub fn denormalize(&self, y: f64) -> f64 {
        if self.is_constant() {
            self.scale.inverse(self.lo)
        } else {
            self.scale.inverse(self.lo + y * (self.hi - self.lo))
        }
    }
}

/// Normalisation of a whole row vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub ranges: Vec<Range>,
}

impl Normalizer {
    /// Fits one range per column of `rows`; constant columns map to 0.5 and
    /// are reported.
    pub fn fit(rows: &[Vec<f64>], scales: &[Scale], what: &str) -> Result<Normalizer> {
        let width = scales.len();
        for r in rows {
            ensure_len(width, r.len())?;
        }
        let ranges = (0..width)
            .map(|j| Range::fit(rows.iter().map(|r| r[j]), scales[j]))
            .collect::<Result<Vec<_>>>()?;
        for (j, r) in ranges.iter().enumerate() {
            if r.is_constant() {
                warn!("{what} column {j} is constant; it normalises to 0.5");
            }
        }
        Ok(Normalizer { ranges })
    }

    pub fn width(&self) -> usize {
        self.ranges.len()
    }

    pub fn normalize(&self, x: &[f64]) -> Result<Vec<f64>> {
        ensure_len(self.width(), x.len())?;
        Ok(x.iter().zip(&self.ranges).map(|(&v, r)| r.normalize(v)).collect())
    }

    /// Like [`normalize`](Self::normalize) but clamps to `[0, 1]`, warning
    /// when an input lies outside the training range.
    pub fn normalize_clamped(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.normalize(x)?;
        for (j, v) in y.iter_mut().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite("network input"));
            }
            if *v < 0.0 || *v > 1.0 {
                warn!("input component {j} = {} lies outside the training range; clamped", x[j]);
                *v = v.clamp(0.0, 1.0);
            }
        }
        Ok(y)
    }

    pub fn denormalize(&self, y: &[f64]) -> Result<Vec<f64>> {
        ensure_len(self.width(), y.len())?;
        Ok(y.iter().zip(&self.ranges).map(|(&v, r)| r.denormalize(v)).collect())
    }
}

/// Training rows `(t, μ) → θ` of one field, `i`-major then `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientTable {
    pub field: FieldId,
    /// `[t, μ₁, …, μ_P]` per row.
    pub inputs: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
    pub n_params: usize,
    pub n_times: usize,
    pub input_norm: Normalizer,
    pub output_norm: Normalizer,
}

impl CoefficientTable {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn n_modes(&self) -> usize {
        self.output_norm.width()
    }

    /// Row index of trajectory `i`, time level `n`.
    pub fn row(&self, i: usize, n: usize) -> usize {
        i * self.n_times + n
    }

    /// Normalised `(x, y)` pairs for training.
    pub fn normalized(&self) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let x = self.inputs.iter().map(|r| self.input_norm.normalize(r)).collect::<Result<_>>()?;
        let y = self.theta.iter().map(|r| self.output_norm.normalize(r)).collect::<Result<_>>()?;
        Ok((x, y))
    }
}

/// Projection coefficients of one trajectory, `N × (N^t + 1)`.
pub fn project_trajectory(snapshots: &DMatrix<f64>, basis: &ReducedBasis) -> Result<DMatrix<f64>> {
    let gram = gram_matrix(basis)?;
    project_columns(snapshots, basis, &gram)
}

/// Projects every snapshot and fits the normalisations. `param_scales` has
/// one entry per parameter component; time is always linear.
pub fn build_table(set: &SnapshotSet, basis: &ReducedBasis, param_scales: &[Scale]) -> Result<CoefficientTable> {
    if set.field != basis.field {
        return Err(Error::InvalidParameter(format!(
            "snapshots of {} cannot be projected on a {} basis",
            set.field, basis.field
        )));
    }
    ensure_len(basis.n_dofs(), set.n_dofs())?;
    let n_p = param_scales.len();
    for mu in &set.params {
        ensure_len(n_p, mu.len())?;
    }
    let gram = gram_matrix(basis)?;
    let coeffs: Vec<DMatrix<f64>> = set
        .trajectories
        .par_iter()
        .map(|s| project_columns(s, basis, &gram))
        .collect::<Result<_>>()?;
    let mut inputs = Vec::with_capacity(set.n_params() * set.n_times());
    let mut theta = Vec::with_capacity(inputs.capacity());
    for (c, mu) in coeffs.iter().zip(&set.params) {
        for (n, &t) in set.times.iter().enumerate() {
            let mut row = Vec::with_capacity(1 + n_p);
            row.push(t);
            row.extend_from_slice(mu);
            inputs.push(row);
            theta.push(c.column(n).iter().copied().collect());
        }
    }
    let mut in_scales = vec![Scale::Linear];
    in_scales.extend_from_slice(param_scales);
    let input_norm = Normalizer::fit(&inputs, &in_scales, "input")?;
    let output_norm = Normalizer::fit(&theta, &vec![Scale::Linear; basis.n_modes()], "coefficient")?;
    Ok(CoefficientTable {
        field: set.field,
        inputs,
        theta,
        n_params: set.n_params(),
        n_times: set.n_times(),
        input_norm,
        output_norm,
    })
}
