//! `biotrom`: offline training and online queries of the Biot reduced-order
//! model. Stage subcommands share one output directory and reuse what an
//! earlier stage left there.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use biotrom::pipeline::io::{self, read_snapshot};
use biotrom::pipeline::{
    compress, evaluate_query, fom_batch, hash_line, load_artifact, package, run_offline, sample, sensitivity_sweep,
    snapshot_sets, tabulate, train_networks, Query,
};
use biotrom::{CaseId, ErrorSeries, FieldId, PipelineConfig, Profile, RomArtifact, Setup};
use biotrom::online::FieldPair;
use clap::{Args, Parser, Subcommand};
use log::info;

#[derive(Parser, Debug)]
#[command(name = "biotrom", version, about = "POD + neural-network reduced-order model for Biot poroelasticity")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Benchmark case, 1 to 4.
    #[arg(long, global = true)]
    case: Option<u8>,
    /// Default set: desk (laptop scale) or paper (reference scale).
    #[arg(long, global = true)]
    profile: Option<Profile>,
    /// Config file with `section.key` entries (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run every phase on a single thread.
    #[arg(long, global = true)]
    serial: bool,
    /// Worker threads for the snapshot batch and the sweep.
    #[arg(long, global = true, env = "BIOTROM_WORKERS")]
    workers: Option<usize>,
    /// Override one config key, e.g. `--set pod.n=10`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE", value_parser = parse_key_value)]
    overrides: Vec<(String, String)>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the training parameters.
    Sample,
    /// Solve (or resume) the full-order snapshot batch.
    Fom,
    /// Compress the snapshots of both fields.
    Pod,
    /// Tabulate the projection coefficients of the snapshots.
    Project,
    /// Train both networks and package the artifact.
    Train,
    /// The whole offline chain with phase timings and break-even count.
    Offline,
    /// Reconstruct both fields for one parameter.
    Predict {
        #[command(flatten)]
        query: QueryArgs,
        /// Single time level (s); clamped to the trained interval.
        #[arg(long, conflicts_with = "all_steps")]
        t: Option<f64>,
        #[arg(long)]
        all_steps: bool,
    },
    /// Error series of the model against a full-order reference.
    Evaluate {
        #[command(flatten)]
        query: QueryArgs,
        /// Stored snapshot to compare against instead of a fresh solve. Its
        /// config hash must match the artifact.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Error quartiles per time step over random test parameters.
    Sweep {
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: usize,
    },
}

#[derive(Args, Debug)]
struct QueryArgs {
    #[arg(long)]
    artifact: PathBuf,
    /// Parameter values, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    mu: Vec<f64>,
}

fn parse_key_value(s: &str) -> std::result::Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got '{s}'"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Sample => {
            let setup = setup(g)?;
            let params = sample(&setup)?;
            write_config(&setup)?;
            println!("{} training parameters -> {}", params.len(), setup.out("samples.csv").display());
        }
        Command::Fom => {
            let setup = setup(g)?;
            write_config(&setup)?;
            let trajs = setup.install(|| -> Result<_> { Ok(fom_batch(&setup, &sample(&setup)?)?) })??;
            let seconds: f64 = trajs.iter().map(|t| t.seconds).sum();
            println!("{} trajectories in {} ({seconds:.2} s of solves)", trajs.len(), setup.out("snapshots").display());
        }
        Command::Pod => {
            let setup = setup(g)?;
            let sets = stored_sets(&setup)?;
            let bases = setup.install(|| compress(&setup, &sets))??;
            for b in &bases {
                println!("{}: {} modes", b.field, b.n_modes());
            }
        }
        Command::Project => {
            let setup = setup(g)?;
            let sets = stored_sets(&setup)?;
            let bases = stored_bases(&setup)?;
            let tables = tabulate(&setup, &sets, &bases)?;
            for t in &tables {
                println!("{}: {} rows x {} coefficients", t.field, t.len(), t.n_modes());
            }
        }
        Command::Train => {
            let setup = setup(g)?;
            let bases = stored_bases(&setup)?;
            let tables = [FieldId::Displacement, FieldId::Pressure].map(|f| -> Result<_> {
                let path = setup.out(&format!("table_{f}.bin"));
                let (hash, table) = io::read_table(&path).with_context(|| format!("run `project` first ({})", path.display()))?;
                check_hash(&path, &hash, &setup.hash)?;
                Ok(table)
            });
            let [tu, tp] = tables;
            let tables = [tu?, tp?];
            let [(nu, ru), (np, rp)] = setup.install(|| train_networks(&setup, &tables))??;
            let artifact = package(&setup, bases, &tables, [nu, np])?;
            let path = setup.out("artifact.bin");
            io::write_artifact(&path, &artifact, &setup.config)?;
            println!(
                "best validation loss u {:.3e}, p {:.3e}; artifact {} ({})",
                ru.best_validation_loss,
                rp.best_validation_loss,
                path.display(),
                io::file_hash(&path)?
            );
        }
        Command::Offline => {
            let setup = setup(g)?;
            let outcome = run_offline(&setup)?;
            let t = &outcome.timings;
            println!("fom {:.2} s, pod {:.2} s, ann+projection {:.2} s, total {:.2} s", t.fom, t.pod, t.ann_projection, t.total);
            let be = &outcome.break_even;
            match be.queries {
                Some(q) => println!(
                    "break-even after {q} queries (fom {:.3} s, rom {:.2e} s per query)",
                    be.fom_seconds_per_query, be.rom_seconds_per_query
                ),
                None => println!("the reduced model never pays off at these timings"),
            }
            println!("artifact {} ({})", outcome.artifact_path.display(), outcome.artifact_hash);
        }
        Command::Predict { query, t, all_steps } => {
            let (artifact, setup) = open(g, &query.artifact)?;
            let q = make_query(g, &artifact, &query.mu)?;
            let out = out_dir(g, &query.artifact);
            let times: Vec<f64> = match (t, all_steps) {
                (Some(t), _) => vec![*t],
                (None, true) => artifact.times.clone(),
                (None, false) => vec![*artifact.times.last().expect("non-empty time grid")],
            };
            let result = evaluate_query(&artifact, &setup, &q, false)?;
            let (u, p) = if times.len() == artifact.times.len() {
                (columns(&result.u), columns(&result.p))
            } else {
                let (u, p) = artifact.reconstruct(times[0], &q.mu)?;
                (vec![u], vec![p])
            };
            std::fs::create_dir_all(&out)?;
            for (field, cols) in [(FieldId::Displacement, u), (FieldId::Pressure, p)] {
                let path = out.join(format!("prediction_{field}.csv"));
                std::fs::write(&path, field_csv(&artifact.config_hash, &times, &cols))?;
                println!("{field} -> {}", path.display());
            }
        }
        Command::Evaluate { query, reference } => {
            let (artifact, setup) = open(g, &query.artifact)?;
            let out = out_dir(g, &query.artifact);
            let series = match reference {
                Some(path) => {
                    let (hash, snap) = read_snapshot(path)?;
                    check_hash(path, &hash, &artifact.config_hash)?;
                    if !query.mu.is_empty() && query.mu != snap.mu {
                        bail!("--mu {:?} differs from the parameter {:?} of {}", query.mu, snap.mu, path.display());
                    }
                    let q = make_query(g, &artifact, &snap.mu)?;
                    let r = evaluate_query(&artifact, &setup, &q, false)?;
                    ErrorSeries::compute(
                        &artifact.times,
                        &FieldPair { u: snap.u, p: snap.p },
                        &FieldPair { u: r.u, p: r.p },
                        &artifact.displacement.basis.inner,
                        &artifact.pressure.basis.inner,
                    )?
                }
                None => {
                    let q = make_query(g, &artifact, &query.mu)?;
                    let r = evaluate_query(&artifact, &setup, &q, true)?;
                    let (series, fom) = r.reference.expect("reference requested");
                    println!("rom {:.3e} s, fom {fom:.3} s", r.rom_seconds);
                    series
                }
            };
            std::fs::create_dir_all(&out)?;
            let path = out.join("errors.csv");
            std::fs::write(&path, format!("{}{}", hash_line(&artifact.config_hash), series.to_csv()))?;
            println!(
                "relative ME u {:.3e}, p {:.3e}; series -> {}",
                series.relative_me(FieldId::Displacement),
                series.relative_me(FieldId::Pressure),
                path.display()
            );
        }
        Command::Sweep { artifact: path, count } => {
            let (artifact, setup) = open(g, path)?;
            let out = out_dir(g, path);
            let report = sensitivity_sweep(&artifact, &setup, *count, g.seed.unwrap_or(setup.config.seed))?;
            std::fs::create_dir_all(&out)?;
            let hash = hash_line(&artifact.config_hash);
            std::fs::write(out.join("sweep_quartiles.csv"), format!("{hash}{}", report.to_csv()))?;
            std::fs::write(out.join("sweep_timing.csv"), format!("{hash}{}", report.timing_csv()))?;
            println!(
                "{count} queries: rom {:.3e} s, fom {:.3} s per query -> {}",
                report.rom_seconds_per_query,
                report.fom_seconds_per_query,
                out.display()
            );
        }
    }
    Ok(())
}

fn setup(g: &Global) -> Result<Setup> {
    let case = g.case.map(CaseId::try_from).transpose()?;
    let mut cfg = PipelineConfig::load(g.profile, case, g.config.as_deref(), &g.overrides)?;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &g.out {
        cfg.out = out.clone();
    }
    cfg.serial = g.serial;
    cfg.workers = g.workers;
    cfg.validate()?;
    let setup = Setup::new(cfg)?;
    info!("config hash {}", setup.hash);
    Ok(setup)
}

fn write_config(setup: &Setup) -> Result<()> {
    std::fs::create_dir_all(&setup.config.out)?;
    std::fs::write(setup.out("config.toml"), format!("{}{}", hash_line(&setup.hash), setup.config.to_toml()))?;
    Ok(())
}

/// Snapshot sets of the stored batch; missing trajectories are solved.
fn stored_sets(setup: &Setup) -> Result<[biotrom::SnapshotSet; 2]> {
    let params = sample(setup)?;
    let trajs = setup.install(|| fom_batch(setup, &params))??;
    Ok(snapshot_sets(setup, &trajs)?)
}

fn stored_bases(setup: &Setup) -> Result<[biotrom::ReducedBasis; 2]> {
    let read = |f: FieldId| -> Result<biotrom::ReducedBasis> {
        let path = setup.out(&format!("basis_{f}.bin"));
        let (hash, b) = io::read_basis(&path, &setup.inner(f)).with_context(|| format!("run `pod` first ({})", path.display()))?;
        check_hash(&path, &hash, &setup.hash)?;
        Ok(b)
    };
    Ok([read(FieldId::Displacement)?, read(FieldId::Pressure)?])
}

fn check_hash(path: &Path, found: &str, expected: &str) -> Result<()> {
    if found != expected {
        bail!("{} was written by config {found}, not {expected}; refusing to mix them", path.display());
    }
    Ok(())
}

fn open(g: &Global, path: &Path) -> Result<(RomArtifact, Setup)> {
    let (artifact, mut setup) = load_artifact(path).with_context(|| format!("loading {}", path.display()))?;
    setup.config.serial = g.serial;
    setup.config.workers = g.workers;
    Ok((artifact, setup))
}

fn make_query(g: &Global, artifact: &RomArtifact, mu: &[f64]) -> Result<Query> {
    if mu.len() != artifact.n_params() {
        bail!("--mu needs {} comma-separated values", artifact.n_params());
    }
    let case = match g.case {
        Some(c) => CaseId::try_from(c)?,
        None => artifact.case,
    };
    Ok(Query { case, mu: mu.to_vec() })
}

fn out_dir(g: &Global, artifact: &Path) -> PathBuf {
    g.out.clone().unwrap_or_else(|| artifact.parent().map(Path::to_path_buf).unwrap_or_default())
}

fn columns(m: &biotrom::nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    m.column_iter().map(|c| c.iter().copied().collect()).collect()
}

/// One row per degree of freedom, one column per time level.
fn field_csv(hash: &str, times: &[f64], cols: &[Vec<f64>]) -> String {
    let mut s = hash_line(hash);
    s.push_str("dof");
    for t in times {
        let _ = write!(s, ",t={t}");
    }
    s.push('\n');
    for i in 0..cols.first().map_or(0, Vec::len) {
        let _ = write!(s, "{i}");
        for c in cols {
            let _ = write!(s, ",{:e}", c[i]);
        }
        s.push('\n');
    }
    s
}
