//! The offline chain with per-phase outputs and resumable snapshots.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::{train, Mlp, TrainReport};
use crate::online::{FieldModel, RomArtifact};
use crate::pipeline::io::{self, StoredTrajectory};
use crate::pipeline::sampling::sample_training_set;
use crate::pipeline::Setup;
use crate::pod::{nested_pod, normalized_eigenvalues, standard_pod, FieldId, PodVariant, ReducedBasis, SnapshotSet};
use crate::projection::{build_table, CoefficientTable};

/// Offline wall time per phase (s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub fom: f64,
    pub pod: f64,
    pub ann_projection: f64,
    pub total: f64,
}

impl PhaseTimings {
    pub fn to_csv(&self) -> String {
        format!(
            "phase,seconds\nfom,{}\npod,{}\nann_projection,{}\ntotal,{}\n",
            self.fom, self.pod, self.ann_projection, self.total
        )
    }
}

/// Queries needed before the offline cost pays for itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BreakEven {
    pub fom_seconds_per_query: f64,
    pub rom_seconds_per_query: f64,
    /// `None` when the reduced model is not faster.
    pub queries: Option<u64>,
}

impl BreakEven {
    pub fn new(offline_seconds: f64, fom: f64, rom: f64) -> BreakEven {
        let saving = fom - rom;
        let queries = (saving > 0.0).then(|| (offline_seconds / saving).ceil() as u64);
        BreakEven { fom_seconds_per_query: fom, rom_seconds_per_query: rom, queries }
    }
}

#[derive(Debug, Clone)]
pub struct OfflineOutcome {
    pub artifact: RomArtifact,
    pub artifact_path: PathBuf,
    /// SHA-256 of the artifact file.
    pub artifact_hash: String,
    pub timings: PhaseTimings,
    pub reports: [TrainReport; 2],
    pub break_even: BreakEven,
}

/// Training parameters, also written to `samples.csv`.
pub fn sample(setup: &Setup) -> Result<Vec<Vec<f64>>> {
    let params = sample_training_set(&setup.case.axes, setup.config.sampling.m)?;
    let mut csv = String::from("index");
    for a in &setup.case.axes {
        csv.push(',');
        csv.push_str(a.name);
    }
    csv.push('\n');
    for (i, mu) in params.iter().enumerate() {
        let _ = write!(csv, "{i}");
        for v in mu {
            let _ = write!(csv, ",{v:e}");
        }
        csv.push('\n');
    }
    write_text(setup, "samples.csv", &csv)?;
    Ok(params)
}

/// Text outputs start with a `# config_hash = …` comment line.
pub(crate) fn write_text(setup: &Setup, name: &str, text: &str) -> Result<()> {
    std::fs::create_dir_all(&setup.config.out)?;
    std::fs::write(setup.out(name), format!("{}{text}", hash_line(&setup.hash)))?;
    Ok(())
}

pub fn hash_line(hash: &str) -> String {
    format!("# config_hash = {hash}\n")
}

/// The hash recorded by [`hash_line`] at the top of a text output.
pub fn text_hash(text: &str) -> Option<&str> {
    text.lines().next()?.strip_prefix("# config_hash = ").map(str::trim)
}

pub(crate) fn snapshot_path(setup: &Setup, i: usize) -> PathBuf {
    setup.out(&format!("snapshots/traj_{i:04}.bin"))
}

/// A stored trajectory is reused when its hash and parameter match.
fn reuse(setup: &Setup, i: usize, mu: &[f64]) -> Option<StoredTrajectory> {
    let path = snapshot_path(setup, i);
    if !path.exists() {
        return None;
    }
    match io::read_snapshot(&path) {
        Ok((hash, s)) if hash == setup.hash && s.mu == mu && s.times == setup.schedule.times() => Some(s),
        Ok(_) => {
            warn!("{} belongs to another configuration; recomputing", path.display());
            None
        }
        Err(e) => {
            warn!("cannot reuse {}: {e}; recomputing", path.display());
            None
        }
    }
}

/// Solves (or reloads) every training trajectory. Each finished trajectory
/// is written at once, so an interrupted batch resumes where it stopped.
pub fn fom_batch(setup: &Setup, params: &[Vec<f64>]) -> Result<Vec<StoredTrajectory>> {
    params
        .par_iter()
        .enumerate()
        .map(|(i, mu)| {
            if let Some(s) = reuse(setup, i, mu) {
                return Ok(s);
            }
            let (u, p, seconds) = setup.solve(mu).map_err(|e| {
                Error::InvalidParameter(format!("snapshot {i} (mu = {mu:?}) failed: {e}"))
            })?;
            let s = StoredTrajectory { index: i, mu: mu.clone(), times: setup.schedule.times().to_vec(), u, p, seconds };
            io::write_snapshot(&snapshot_path(setup, i), &setup.hash, &s)?;
            info!("snapshot {i} done in {seconds:.2} s");
            Ok(s)
        })
        .collect()
}

/// Displacement and pressure snapshot sets of a batch.
pub fn snapshot_sets(setup: &Setup, trajs: &[StoredTrajectory]) -> Result<[SnapshotSet; 2]> {
    let params: Vec<Vec<f64>> = trajs.iter().map(|t| t.mu.clone()).collect();
    let times = setup.schedule.times().to_vec();
    let u = SnapshotSet::new(
        FieldId::Displacement,
        trajs.iter().map(|t| t.u.clone()).collect(),
        params.clone(),
        times.clone(),
        setup.inner(FieldId::Displacement),
    )?;
    let p = SnapshotSet::new(
        FieldId::Pressure,
        trajs.iter().map(|t| t.p.clone()).collect(),
        params,
        times,
        setup.inner(FieldId::Pressure),
    )?;
    Ok([u, p])
}

fn pod_of(set: &SnapshotSet, variant: PodVariant, n: usize) -> Result<ReducedBasis> {
    match variant {
        PodVariant::Standard => standard_pod(set, n),
        PodVariant::Nested { n_int } => {
            let k = n_int.min(set.n_times());
            let cap = k * set.n_params();
            if k < n_int || cap < n {
                warn!("nested POD limited to N_int = {k}, N = {} by the snapshot count", n.min(cap));
            }
            nested_pod(set, k, n.min(cap))
        }
    }
}

/// POD of both fields; bases and eigenvalue curves are written out.
pub fn compress(setup: &Setup, sets: &[SnapshotSet; 2]) -> Result<[ReducedBasis; 2]> {
    let variant = setup.config.pod.variant();
    let n = setup.config.pod.n;
    let mut out = Vec::with_capacity(2);
    for set in sets {
        let b = pod_of(set, variant, n)?;
        if b.n_modes() < n {
            warn!("{} basis has only {} modes (requested {n})", set.field, b.n_modes());
        }
        io::write_basis(&setup.out(&format!("basis_{}.bin", set.field)), &setup.hash, &b)?;
        let mut csv = String::from("k,singular_value,normalized_eigenvalue\n");
        for (k, (s, e)) in b.singular_values.iter().zip(normalized_eigenvalues(&b)).enumerate() {
            let _ = writeln!(csv, "{},{s:e},{e:e}", k + 1);
        }
        write_text(setup, &format!("eigenvalues_{}.csv", set.field), &csv)?;
        out.push(b);
    }
    let p = out.pop().expect("two bases");
    let u = out.pop().expect("two bases");
    Ok([u, p])
}

/// Projection tables of both fields, written out.
pub fn tabulate(setup: &Setup, sets: &[SnapshotSet; 2], bases: &[ReducedBasis; 2]) -> Result<[CoefficientTable; 2]> {
    let scales = setup.case.scales();
    let u = build_table(&sets[0], &bases[0], &scales)?;
    let p = build_table(&sets[1], &bases[1], &scales)?;
    for t in [&u, &p] {
        io::write_table(&setup.out(&format!("table_{}.bin", t.field)), &setup.hash, t)?;
    }
    Ok([u, p])
}

fn train_one(setup: &Setup, table: &CoefficientTable) -> Result<(Mlp, TrainReport)> {
    let ann = &setup.config.ann;
    let init = Mlp::with_activation(
        ann.n_hl,
        ann.n_nn,
        table.input_norm.width(),
        table.n_modes(),
        setup.config.seed,
        ann.activation,
    )?;
    let (x, y) = table.normalized()?;
    let (net, report) = train(&init, &x, &y, &setup.config.train_settings())?;
    io::write_network(&setup.out(&format!("net_{}.bin", table.field)), &setup.hash, table.field, &net)?;
    let mut csv = String::from("epoch,train_loss,validation_loss\n");
    for (e, (a, b)) in report.train_loss.iter().zip(&report.validation_loss).enumerate() {
        let _ = writeln!(csv, "{e},{a:e},{b:e}");
    }
    write_text(setup, &format!("loss_{}.csv", table.field), &csv)?;
    Ok((net, report))
}

/// One network per field; the two train concurrently unless serial.
pub fn train_networks(setup: &Setup, tables: &[CoefficientTable; 2]) -> Result<[(Mlp, TrainReport); 2]> {
    let (u, p) = rayon::join(|| train_one(setup, &tables[0]), || train_one(setup, &tables[1]));
    Ok([u?, p?])
}

pub fn package(
    setup: &Setup,
    bases: [ReducedBasis; 2],
    tables: &[CoefficientTable; 2],
    nets: [Mlp; 2],
) -> Result<RomArtifact> {
    let [bu, bp] = bases;
    let [nu, np] = nets;
    Ok(RomArtifact {
        case: setup.case.id,
        times: setup.schedule.times().to_vec(),
        param_box: setup.case.axes.iter().map(|a| (a.lo, a.hi)).collect(),
        config_hash: setup.hash.clone(),
        displacement: FieldModel::new(bu, nu, tables[0].input_norm.clone(), tables[0].output_norm.clone())?,
        pressure: FieldModel::new(bp, np, tables[1].input_norm.clone(), tables[1].output_norm.clone())?,
    })
}

/// Sample, snapshot batch, POD, projection, training and packaging. Every
/// intermediate lands in the output directory; finished snapshots are reused.
pub fn run_offline(setup: &Setup) -> Result<OfflineOutcome> {
    setup.install(|| run_offline_inner(setup))?
}

fn run_offline_inner(setup: &Setup) -> Result<OfflineOutcome> {
    let start = Instant::now();
    write_text(setup, "config.toml", &setup.config.to_toml())?;
    let params = sample(setup)?;
    let t0 = Instant::now();
    let trajs = fom_batch(setup, &params)?;
    let fom = t0.elapsed().as_secs_f64();
    let sets = snapshot_sets(setup, &trajs)?;
    let t1 = Instant::now();
    let bases = compress(setup, &sets)?;
    let pod = t1.elapsed().as_secs_f64();
    let t2 = Instant::now();
    let tables = tabulate(setup, &sets, &bases)?;
    let [(nu, ru), (np, rp)] = train_networks(setup, &tables)?;
    let ann_projection = t2.elapsed().as_secs_f64();
    let artifact = package(setup, bases, &tables, [nu, np])?;
    let artifact_path = setup.out("artifact.bin");
    io::write_artifact(&artifact_path, &artifact, &setup.config)?;
    let artifact_hash = io::file_hash(&artifact_path)?;
    let timings = PhaseTimings { fom, pod, ann_projection, total: start.elapsed().as_secs_f64() };
    write_text(setup, "timings.csv", &timings.to_csv())?;

    let fom_per_query = trajs.iter().map(|t| t.seconds).sum::<f64>() / trajs.len() as f64;
    let probes = &params[..params.len().min(5)];
    let t3 = Instant::now();
    for mu in probes {
        artifact.reconstruct_trajectory(mu)?;
    }
    let rom_per_query = t3.elapsed().as_secs_f64() / probes.len() as f64;
    let break_even = BreakEven::new(timings.total, fom_per_query, rom_per_query);
    write_text(
        setup,
        "break_even.csv",
        &format!(
            "offline_seconds,fom_seconds_per_query,rom_seconds_per_query,break_even_queries\n{},{},{},{}\n",
            timings.total,
            fom_per_query,
            rom_per_query,
            break_even.queries.map_or("never".to_string(), |q| q.to_string())
        ),
    )?;
    Ok(OfflineOutcome { artifact, artifact_path, artifact_hash, timings, reports: [ru, rp], break_even })
}
