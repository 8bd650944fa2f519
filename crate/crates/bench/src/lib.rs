//! Fixtures shared by the criterion benches.

use biotrom::pipeline::{fom_batch, sample, snapshot_sets};
use biotrom::{CaseId, PipelineConfig, Profile, Result, Setup, SnapshotSet};

/// Desk case-1 setup on an `n`×`n` mesh with `m` training parameters,
/// writing into a scratch directory.
pub fn setup(n: usize, m: usize) -> Result<Setup> {
    let mut cfg = PipelineConfig::profile(Profile::Desk, CaseId::Isotropic);
    cfg.mesh.n = n;
    cfg.sampling.m = m;
    cfg.serial = true;
    cfg.out = std::env::temp_dir().join(format!("biotrom-bench-{n}-{m}"));
    Setup::new(cfg)
}

/// Snapshot sets of a small batch (reused from disk when present).
pub fn snapshots(n: usize, m: usize) -> Result<[SnapshotSet; 2]> {
    let s = setup(n, m)?;
    let params = sample(&s)?;
    let trajs = fom_batch(&s, &params)?;
    snapshot_sets(&s, &trajs)
}
