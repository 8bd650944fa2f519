//! Offline/online orchestration: sampling, the snapshot batch, compression,
//! projection, training, packaging, and the online queries built on them.

pub mod cases;
pub mod config;
pub mod io;
mod offline;
mod online;
pub mod sampling;

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;

pub use cases::{BenchmarkCase, CaseId, FieldSource, ParamAxis};
pub use config::{PipelineConfig, Profile};
pub use offline::{
    compress, fom_batch, hash_line, package, run_offline, sample, snapshot_sets, tabulate, text_hash, train_networks, BreakEven,
    OfflineOutcome, PhaseTimings,
};
pub use online::{decomposition, evaluate_query, load_artifact, run_online, sensitivity_sweep, OnlineResult, Query, SweepReport};

use crate::error::{Error, Result};
use crate::fom::{Discretization, TimeSchedule};
use crate::linalg::InnerProduct;
use crate::mesh::{Mesh, MeshPattern};
use crate::pipeline::config::NormKind;
use crate::pod::FieldId;

/// A resolved configuration with its discretisation and benchmark built.
#[derive(Debug, Clone)]
pub struct Setup {
    pub config: PipelineConfig,
    pub hash: String,
    pub disc: Arc<Discretization>,
    pub case: BenchmarkCase,
    pub schedule: TimeSchedule,
}

pub fn build_mesh(cfg: &PipelineConfig) -> Result<Mesh> {
    if cfg.mesh.reference {
        Mesh::reference()
    } else {
        Mesh::unit_square(cfg.mesh.n, MeshPattern::Right, true)
    }
}

impl Setup {
    pub fn new(config: PipelineConfig) -> Result<Setup> {
        let disc = Discretization::new(build_mesh(&config)?);
        Setup::with_discretization(config, disc)
    }

    /// Reuses a discretisation already built for `config.mesh`.
    pub fn with_discretization(config: PipelineConfig, disc: Arc<Discretization>) -> Result<Setup> {
        config.validate()?;
        let source = match &config.field_file {
            Some(p) => FieldSource::File(p.clone()),
            None => FieldSource::Generated(config.field),
        };
        let case = BenchmarkCase::new(config.case, disc.clone(), config.solver, &source)?;
        let schedule = config.schedule()?;
        Ok(Setup { hash: config.hash(), config, disc, case, schedule })
    }

    pub fn inner(&self, field: FieldId) -> InnerProduct {
        inner_for(&self.config, &self.disc, field)
    }

    /// Full-order trajectory for `mu`: `(u, p, seconds)`.
    pub fn solve(&self, mu: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>, f64)> {
        let start = Instant::now();
        let problem = self.case.problem(mu)?;
        let traj = problem.run(&self.schedule)?;
        Ok((traj.displacement_matrix(), traj.pressure_matrix(), start.elapsed().as_secs_f64()))
    }

    pub fn out(&self, name: &str) -> std::path::PathBuf {
        self.config.out.join(name)
    }

    /// Runs `f` on a pool sized by the config: one thread when serial.
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> Result<R> {
        let threads = if self.config.serial { Some(1) } else { self.config.workers };
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = threads {
            builder = builder.num_threads(n);
        }
        let pool = builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        Ok(pool.install(f))
    }
}

fn inner_for(cfg: &PipelineConfig, disc: &Discretization, field: FieldId) -> InnerProduct {
    match cfg.pod.norm {
        NormKind::Euclidean => InnerProduct::Euclidean,
        NormKind::Mass => InnerProduct::Mass(match field {
            FieldId::Displacement => disc.mass_u.clone(),
            FieldId::Pressure => disc.mass_p.clone(),
        }),
    }
}
