//! Online queries against a packaged artifact.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::online::{error_decomposition_study, per_step_stats, BoxStats, ErrorSeries, FieldPair, Regimes, RomArtifact};
use crate::pipeline::cases::CaseId;
use crate::pipeline::io;
use crate::pipeline::offline::snapshot_path;
use crate::pipeline::sampling::random_parameters;
use crate::fom::Discretization;
use crate::pipeline::{build_mesh, inner_for, Setup};
use crate::pod::FieldId;

/// Loads an artifact and rebuilds the setup it was trained with. `out`
/// becomes the directory holding the artifact.
pub fn load_artifact(path: &Path) -> Result<(RomArtifact, Setup)> {
    // The mass matrices depend only on the mesh; build it once and share it
    // between the reader and the setup.
    let mut disc: Option<Arc<Discretization>> = None;
    let (artifact, mut config) = io::read_artifact(path, |cfg, field| {
        if disc.is_none() {
            disc = Some(Discretization::new(build_mesh(cfg)?));
        }
        Ok(inner_for(cfg, disc.as_ref().expect("built above"), field))
    })?;
    config.out = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let disc = match disc {
        Some(d) => d,
        None => Discretization::new(build_mesh(&config)?),
    };
    let setup = Setup::with_discretization(config, disc)?;
    if setup.hash != artifact.config_hash {
        return Err(Error::Provenance("artifact config does not reproduce its hash".into()));
    }
    Ok((artifact, setup))
}

/// A parameter query for a given benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub case: CaseId,
    pub mu: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct OnlineResult {
    pub mu: Vec<f64>,
    pub u: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub rom_seconds: f64,
    /// Errors against an on-demand full-order solve, with its wall time.
    pub reference: Option<(ErrorSeries, f64)>,
}

/// Reconstructs both fields over the time grid; with `reference`, also runs
/// the full-order model and measures the error.
pub fn evaluate_query(artifact: &RomArtifact, setup: &Setup, query: &Query, reference: bool) -> Result<OnlineResult> {
    if query.case != artifact.case {
        return Err(Error::InvalidParameter(format!(
            "query targets case {} but the artifact was trained on case {}",
            query.case, artifact.case
        )));
    }
    if !setup.case.contains(&query.mu) {
        warn!("mu = {:?} lies outside the training box; inputs are clamped", query.mu);
    }
    let start = Instant::now();
    let (u, p) = artifact.reconstruct_trajectory(&query.mu)?;
    let rom_seconds = start.elapsed().as_secs_f64();
    let reference = if reference {
        let (fu, fp, fom_seconds) = setup.solve(&query.mu)?;
        let series = ErrorSeries::compute(
            &artifact.times,
            &FieldPair { u: fu, p: fp },
            &FieldPair { u: u.clone(), p: p.clone() },
            &artifact.displacement.basis.inner,
            &artifact.pressure.basis.inner,
        )?;
        Some((series, fom_seconds))
    } else {
        None
    };
    Ok(OnlineResult { mu: query.mu.clone(), u, p, rom_seconds, reference })
}

pub fn run_online(artifact: &RomArtifact, setup: &Setup, queries: &[Query], reference: bool) -> Result<Vec<OnlineResult>> {
    queries.iter().map(|q| evaluate_query(artifact, setup, q, reference)).collect()
}

/// Error regimes for a stored training parameter and an unseen one; the
/// latter gets a fresh full-order solve.
pub fn decomposition(artifact: &RomArtifact, setup: &Setup, mu_train: &[f64], mu_test: &[f64]) -> Result<Regimes> {
    let train = stored_trajectory(setup, mu_train)?;
    let (u, p, _) = setup.solve(mu_test)?;
    error_decomposition_study(artifact, mu_train, &FieldPair { u: train.u, p: train.p }, mu_test, &FieldPair { u, p })
}

/// The stored training trajectory whose parameter equals `mu`.
fn stored_trajectory(setup: &Setup, mu: &[f64]) -> Result<io::StoredTrajectory> {
    for i in 0..setup.config.sampling.m {
        let path = snapshot_path(setup, i);
        if !path.exists() {
            continue;
        }
        let (hash, s) = io::read_snapshot(&path)?;
        if hash != setup.hash {
            return Err(Error::Provenance(format!("{} belongs to another configuration", path.display())));
        }
        let close = s.mu.len() == mu.len() && s.mu.iter().zip(mu).all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()));
        if close {
            return Ok(s);
        }
    }
    Err(Error::InvalidParameter(format!("mu = {mu:?} is not among the stored training snapshots")))
}

/// Per-time-step error distributions over random test parameters, plus the
/// per-query wall time of both models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub times: Vec<f64>,
    pub mse_u: Vec<BoxStats>,
    pub mse_p: Vec<BoxStats>,
    pub rom_seconds_per_query: f64,
    pub fom_seconds_per_query: f64,
    pub n_queries: usize,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "t,field,q1,median,q3,whisker_lo,whisker_hi,n_outliers\n",
        );
        for (f, stats) in [(FieldId::Displacement, &self.mse_u), (FieldId::Pressure, &self.mse_p)] {
            for (t, b) in self.times.iter().zip(stats.iter()) {
                s.push_str(&format!(
                    "{t},{f},{:e},{:e},{:e},{:e},{:e},{}\n",
                    b.q1,
                    b.median,
                    b.q3,
                    b.whisker_lo,
                    b.whisker_hi,
                    b.outliers.len()
                ));
            }
        }
        s
    }

    pub fn timing_csv(&self) -> String {
        format!(
            "n_queries,rom_seconds_per_query,fom_seconds_per_query,speedup\n{},{},{},{}\n",
            self.n_queries,
            self.rom_seconds_per_query,
            self.fom_seconds_per_query,
            self.fom_seconds_per_query / self.rom_seconds_per_query
        )
    }
}

/// `count` random parameters drawn with `seed`; every one is solved by both
/// models.
pub fn sensitivity_sweep(artifact: &RomArtifact, setup: &Setup, count: usize, seed: u64) -> Result<SweepReport> {
    if count == 0 {
        return Err(Error::InvalidParameter("sensitivity sweep needs at least one test case".into()));
    }
    let params = random_parameters(&setup.case.axes, count, seed);
    let results: Vec<OnlineResult> = setup.install(|| {
        params
            .par_iter()
            .map(|mu| evaluate_query(artifact, setup, &Query { case: artifact.case, mu: mu.clone() }, true))
            .collect::<Result<Vec<_>>>()
    })??;
    let series: Vec<ErrorSeries> = results.iter().map(|r| r.reference.as_ref().expect("reference run").0.clone()).collect();
    let rom = results.iter().map(|r| r.rom_seconds).sum::<f64>() / count as f64;
    let fom = results.iter().map(|r| r.reference.as_ref().expect("reference run").1).sum::<f64>() / count as f64;
    Ok(SweepReport {
        times: artifact.times.clone(),
        mse_u: per_step_stats(&series, |s| &s.mse_u)?,
        mse_p: per_step_stats(&series, |s| &s.mse_p)?,
        rom_seconds_per_query: rom,
        fom_seconds_per_query: fom,
        n_queries: count,
    })
}
