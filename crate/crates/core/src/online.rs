//! Online phase: coefficients from the network, field reconstruction, and the
//! error metrics used to judge a reduced model.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::linalg::InnerProduct;
use crate::mlp::Mlp;
use crate::pipeline::cases::CaseId;
use crate::pod::{FieldId, ReducedBasis};
use crate::projection::{project_trajectory, Normalizer};

/// Everything needed to evaluate one field online.
#[derive(Debug, Clone)]
pub struct FieldModel {
    pub basis: ReducedBasis,
    pub net: Mlp,
    pub input_norm: Normalizer,
    pub output_norm: Normalizer,
}

impl FieldModel {
    pub fn new(basis: ReducedBasis, net: Mlp, input_norm: Normalizer, output_norm: Normalizer) -> Result<FieldModel> {
        if net.out_dim() != basis.n_modes() || output_norm.width() != basis.n_modes() {
            return Err(Error::InvalidParameter(format!(
                "{} basis has {} modes but the network predicts {} coefficients",
                basis.field,
                basis.n_modes(),
                net.out_dim()
            )));
        }
        ensure_len(net.in_dim(), input_norm.width())?;
        Ok(FieldModel { basis, net, input_norm, output_norm })
    }

    /// `θ̂(t, μ)` in physical units; inputs outside the training range are
    /// clamped.
    pub fn predict_coefficients(&self, t: f64, mu: &[f64]) -> Result<Vec<f64>> {
        let mut x = Vec::with_capacity(1 + mu.len());
        x.push(t);
        x.extend_from_slice(mu);
        let xn = self.input_norm.normalize_clamped(&x)?;
        let y = self.net.forward(&xn)?;
        self.output_norm.denormalize(&y)
    }

    /// `Σ θ_k w_k`.
    pub fn expand(&self, theta: &[f64]) -> Result<Vec<f64>> {
        ensure_len(self.basis.n_modes(), theta.len())?;
        Ok((&self.basis.modes * DVector::from_column_slice(theta)).as_slice().to_vec())
    }

    /// Reconstructions for a batch of coefficient columns.
    pub fn expand_columns(&self, theta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        ensure_len(self.basis.n_modes(), theta.nrows())?;
        Ok(&self.basis.modes * theta)
    }
}

/// Trained reduced model of one benchmark.
#[derive(Debug, Clone)]
pub struct RomArtifact {
    pub case: CaseId,
    /// Offline time grid `t⁰ … t^{N^t}`.
    pub times: Vec<f64>,
    /// Training box, one `(lo, hi)` per parameter.
    pub param_box: Vec<(f64, f64)>,
    pub config_hash: String,
    pub displacement: FieldModel,
    pub pressure: FieldModel,
}

impl RomArtifact {
    pub fn field(&self, f: FieldId) -> &FieldModel {
        match f {
            FieldId::Displacement => &self.displacement,
            FieldId::Pressure => &self.pressure,
        }
    }

    pub fn n_params(&self) -> usize {
        self.param_box.len()
    }

    pub fn reconstruct(&self, t: f64, mu: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        ensure_len(self.n_params(), mu.len())?;
        let u = self.displacement.expand(&self.displacement.predict_coefficients(t, mu)?)?;
        let p = self.pressure.expand(&self.pressure.predict_coefficients(t, mu)?)?;
        Ok((u, p))
    }

    /// Network coefficients over the whole time grid, `N × (N^t + 1)`.
    pub fn predict_trajectory(&self, field: FieldId, mu: &[f64]) -> Result<DMatrix<f64>> {
        ensure_len(self.n_params(), mu.len())?;
        let model = self.field(field);
        let mut theta = DMatrix::zeros(model.basis.n_modes(), self.times.len());
        for (n, &t) in self.times.iter().enumerate() {
            let c = model.predict_coefficients(t, mu)?;
            theta.column_mut(n).copy_from_slice(&c);
        }
        Ok(theta)
    }

    /// `(u, p)` snapshot matrices reconstructed from the network.
    pub fn reconstruct_trajectory(&self, mu: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let u = self.displacement.expand_columns(&self.predict_trajectory(FieldId::Displacement, mu)?)?;
        let p = self.pressure.expand_columns(&self.predict_trajectory(FieldId::Pressure, mu)?)?;
        Ok((u, p))
    }
}

/// `‖fom - rom‖²` in `inner`.
pub fn mse_metric(fom: &[f64], rom: &[f64], inner: &InnerProduct) -> Result<f64> {
    ensure_len(fom.len(), rom.len())?;
    let d: Vec<f64> = fom.iter().zip(rom).map(|(a, b)| a - b).collect();
    Ok(inner.norm_squared(&d)?.max(0.0))
}

/// `max |fom - rom|` over dofs.
pub fn me_metric(fom: &[f64], rom: &[f64]) -> Result<f64> {
    ensure_len(fom.len(), rom.len())?;
    Ok(fom.iter().zip(rom).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

/// Per-time-step MSE and ME of both fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSeries {
    pub times: Vec<f64>,
    pub mse_u: Vec<f64>,
    pub me_u: Vec<f64>,
    pub mse_p: Vec<f64>,
    pub me_p: Vec<f64>,
    /// `max |fom|` over the whole trajectory, per field.
    pub magnitude_u: f64,
    pub magnitude_p: f64,
}

/// Reference and reduced trajectories of both fields, `N_h × (N^t + 1)`.
#[derive(Debug, Clone)]
pub struct FieldPair {
    pub u: DMatrix<f64>,
    pub p: DMatrix<f64>,
}

impl ErrorSeries {
    pub fn compute(
        times: &[f64],
        reference: &FieldPair,
        reduced: &FieldPair,
        inner_u: &InnerProduct,
        inner_p: &InnerProduct,
    ) -> Result<ErrorSeries> {
        for (a, b) in [(&reference.u, &reduced.u), (&reference.p, &reduced.p)] {
            if a.shape() != b.shape() {
                return Err(Error::InvalidParameter(format!(
                    "trajectory shapes differ: {:?} vs {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            ensure_len(times.len(), a.ncols())?;
        }
        let series = |a: &DMatrix<f64>, b: &DMatrix<f64>, inner: &InnerProduct| -> Result<(Vec<f64>, Vec<f64>)> {
            let mut mse = Vec::with_capacity(a.ncols());
            let mut me = Vec::with_capacity(a.ncols());
            for n in 0..a.ncols() {
                let (x, y) = (a.column(n), b.column(n));
                mse.push(mse_metric(x.as_slice(), y.as_slice(), inner)?);
                me.push(me_metric(x.as_slice(), y.as_slice())?);
            }
            Ok((mse, me))
        };
        let (mse_u, me_u) = series(&reference.u, &reduced.u, inner_u)?;
        let (mse_p, me_p) = series(&reference.p, &reduced.p, inner_p)?;
        Ok(ErrorSeries {
            times: times.to_vec(),
            mse_u,
            me_u,
            mse_p,
            me_p,
            magnitude_u: reference.u.amax(),
            magnitude_p: reference.p.amax(),
        })
    }

    pub fn mse(&self, f: FieldId) -> &[f64] {
        match f {
            FieldId::Displacement => &self.mse_u,
            FieldId::Pressure => &self.mse_p,
        }
    }

    pub fn me(&self, f: FieldId) -> &[f64] {
        match f {
            FieldId::Displacement => &self.me_u,
            FieldId::Pressure => &self.me_p,
        }
    }

    /// Time-averaged MSE.
    pub fn mean_mse(&self, f: FieldId) -> f64 {
        let v = self.mse(f);
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }

    /// Largest ME over time divided by the largest reference magnitude.
    pub fn relative_me(&self, f: FieldId) -> f64 {
        let (me, mag) = match f {
            FieldId::Displacement => (&self.me_u, self.magnitude_u),
            FieldId::Pressure => (&self.me_p, self.magnitude_p),
        };
        let worst = me.iter().copied().fold(0.0, f64::max);
        if mag > 0.0 {
            worst / mag
        } else {
            worst
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,mse_u,me_u,mse_p,me_p\n");
        for n in 0..self.times.len() {
            s.push_str(&format!(
                "{},{:e},{:e},{:e},{:e}\n",
                self.times[n], self.mse_u[n], self.me_u[n], self.mse_p[n], self.me_p[n]
            ));
        }
        s
    }
}

/// Best approximation of every snapshot in the span of the basis.
pub fn projection_reconstruction(basis: &ReducedBasis, snapshots: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(&basis.modes * project_trajectory(snapshots, basis)?)
}

/// The three error regimes: projection coefficients on a training parameter,
/// network coefficients on the same parameter, network on an unseen one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regimes {
    pub projection_train: ErrorSeries,
    pub network_train: ErrorSeries,
    pub network_test: ErrorSeries,
}

/// `train` must be a stored training trajectory; `test` any reference run.
pub fn error_decomposition_study(
    artifact: &RomArtifact,
    mu_train: &[f64],
    train: &FieldPair,
    mu_test: &[f64],
    test: &FieldPair,
) -> Result<Regimes> {
    let iu = &artifact.displacement.basis.inner;
    let ip = &artifact.pressure.basis.inner;
    let proj = FieldPair {
        u: projection_reconstruction(&artifact.displacement.basis, &train.u)?,
        p: projection_reconstruction(&artifact.pressure.basis, &train.p)?,
    };
    let (u, p) = artifact.reconstruct_trajectory(mu_train)?;
    let net_train = FieldPair { u, p };
    let (u, p) = artifact.reconstruct_trajectory(mu_test)?;
    let net_test = FieldPair { u, p };
    Ok(Regimes {
        projection_train: ErrorSeries::compute(&artifact.times, train, &proj, iu, ip)?,
        network_train: ErrorSeries::compute(&artifact.times, train, &net_train, iu, ip)?,
        network_test: ErrorSeries::compute(&artifact.times, test, &net_test, iu, ip)?,
    })
}

/// Box-plot summary: quartiles (linear interpolation between order
/// statistics), whiskers at the last points within 1.5·IQR, and the points
/// beyond them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
    pub outliers: Vec<f64>,
}

pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn box_stats(values: &[f64]) -> Result<BoxStats> {
    if values.is_empty() {
        return Err(Error::InvalidParameter("box statistics of an empty sample".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("error sample"));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let (q1, median, q3) = (quantile(&s, 0.25), quantile(&s, 0.5), quantile(&s, 0.75));
    let iqr = q3 - q1;
    let (fence_lo, fence_hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = s.iter().copied().filter(|v| *v >= fence_lo && *v <= fence_hi).collect();
    Ok(BoxStats {
        q1,
        median,
        q3,
        whisker_lo: inside.first().copied().unwrap_or(q1),
        whisker_hi: inside.last().copied().unwrap_or(q3),
        outliers: s.into_iter().filter(|v| *v < fence_lo || *v > fence_hi).collect(),
    })
}

/// Box statistics of one metric across many error series, per time step.
pub fn per_step_stats(series: &[ErrorSeries], metric: impl Fn(&ErrorSeries) -> &[f64]) -> Result<Vec<BoxStats>> {
    let first = series
        .first()
        .ok_or_else(|| Error::InvalidParameter("sensitivity sweep needs at least one test case".into()))?;
    let steps = first.times.len();
    (0..steps)
        .map(|n| {
            let sample: Vec<f64> = series.iter().map(|s| metric(s)[n]).collect();
            box_stats(&sample)
        })
        .collect()
}
