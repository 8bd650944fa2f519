use std::sync::Arc;

use biotrom::fom::Discretization;
use biotrom::linalg::InnerProduct;
use biotrom::mesh::build_unit_square_mesh;
use biotrom::mlp::{train, Mlp, TrainSettings};
use biotrom::online::{
    box_stats, error_decomposition_study, me_metric, mse_metric, per_step_stats, projection_reconstruction,
    ErrorSeries, FieldModel, FieldPair, RomArtifact,
};
use biotrom::pipeline::CaseId;
use biotrom::pod::{standard_pod, tail_energy, FieldId, SnapshotSet};
use biotrom::projection::{build_table, Scale};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::{dg_l2_error, synthetic_snapshots};

struct Fixture {
    disc: Arc<Discretization>,
    sets: [SnapshotSet; 2],
    artifact: RomArtifact,
}

fn fixture(n_modes: usize, epochs: usize) -> Fixture {
    let disc = Discretization::new(build_unit_square_mesh(4, true).unwrap());
    let iu = InnerProduct::Mass(Arc::clone(&disc.mass_u));
    let ip = InnerProduct::Mass(Arc::clone(&disc.mass_p));
    let su = synthetic_snapshots(FieldId::Displacement, &iu, 4, 6, 1);
    let sp = synthetic_snapshots(FieldId::Pressure, &ip, 4, 6, 2);
    let scales = [Scale::Linear, Scale::Linear];
    let model = |set: &SnapshotSet| {
        let basis = standard_pod(set, n_modes).unwrap();
        let table = build_table(set, &basis, &scales).unwrap();
        let (x, y) = table.normalized().unwrap();
        let init = Mlp::new(2, 6, 3, n_modes, 3).unwrap();
        let (net, _) = train(&init, &x, &y, &TrainSettings { epochs, batch_size: 8, ..Default::default() }).unwrap();
        FieldModel::new(basis, net, table.input_norm, table.output_norm).unwrap()
    };
    let artifact = RomArtifact {
        case: CaseId::Isotropic,
        times: su.times.clone(),
        param_box: vec![(0.0, 0.75), (1.0, 1.75)],
        config_hash: "test".into(),
        displacement: model(&su),
        pressure: model(&sp),
    };
    Fixture { disc, sets: [su, sp], artifact }
}

#[test]
fn reconstruction_is_linear_in_the_coefficients() {
    let f = fixture(4, 5);
    let m = &f.artifact.pressure;
    let (a, b) = (1.7, -0.4);
    let t1 = [0.3, -1.2, 2.0, 0.5];
    let t2 = [-0.9, 0.1, 0.4, 3.0];
    let mix: Vec<f64> = t1.iter().zip(&t2).map(|(x, y)| a * x + b * y).collect();
    let lhs = m.expand(&mix).unwrap();
    let (r1, r2) = (m.expand(&t1).unwrap(), m.expand(&t2).unwrap());
    for i in 0..lhs.len() {
        assert!((lhs[i] - (a * r1[i] + b * r2[i])).abs() <= 1e-12 * lhs[i].abs().max(1.0));
    }
    let e1 = m.expand(&[1.0, 0.0, 0.0, 0.0]).unwrap();
    assert_eq!(e1.as_slice(), m.basis.modes.column(0).as_slice());
}

#[test]
fn mass_weighted_mse_equals_the_quadrature_norm() {
    let disc = Discretization::new(build_unit_square_mesh(4, true).unwrap());
    let inner = InnerProduct::Mass(Arc::clone(&disc.mass_p));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a: Vec<f64> = (0..disc.mass_p.nrows()).map(|_| rng.random::<f64>()).collect();
    let b: Vec<f64> = (0..a.len()).map(|_| rng.random::<f64>()).collect();
    let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let (norm, _) = dg_l2_error(&disc.mesh, &diff, |_| 0.0);
    let mse = mse_metric(&a, &b, &inner).unwrap();
    assert!((mse - norm * norm).abs() <= 1e-12 * mse, "{mse:e} vs {:e}", norm * norm);
}

#[test]
fn training_projection_error_is_the_tail_energy() {
    let f = fixture(3, 5);
    for set in &f.sets {
        let basis = &f.artifact.field(set.field).basis;
        let mut total = 0.0;
        for traj in &set.trajectories {
            let proj = projection_reconstruction(basis, traj).unwrap();
            for n in 0..traj.ncols() {
                let x = traj.column(n);
                let y = proj.column(n);
                total += mse_metric(x.as_slice(), y.as_slice(), &set.inner).unwrap();
            }
        }
        let tail = tail_energy(&basis.singular_values, basis.n_modes()).powi(2);
        assert!((total - tail).abs() <= 1e-8 * tail, "{total:e} vs {tail:e}");
    }
}

#[test]
fn network_path_never_beats_the_projection_path() {
    let f = fixture(4, 50);
    let [su, sp] = &f.sets;
    for i in 0..su.n_params() {
        let train = FieldPair { u: su.trajectories[i].clone(), p: sp.trajectories[i].clone() };
        let mu = &su.params[i];
        let regimes = error_decomposition_study(&f.artifact, mu, &train, mu, &train).unwrap();
        for field in FieldId::BOTH {
            let a = regimes.projection_train.mse(field);
            let b = regimes.network_train.mse(field);
            for n in 0..a.len() {
                assert!(b[n] >= a[n] - 1e-12, "{field} step {n}: {:e} < {:e}", b[n], a[n]);
            }
        }
        assert_eq!(regimes.network_train, regimes.network_test);
    }
}

#[test]
fn error_series_matches_direct_metrics_and_csv() {
    let f = fixture(3, 20);
    let [su, sp] = &f.sets;
    let mu = su.params[1].clone();
    let reference = FieldPair { u: su.trajectories[1].clone(), p: sp.trajectories[1].clone() };
    let (u, p) = f.artifact.reconstruct_trajectory(&mu).unwrap();
    let s = ErrorSeries::compute(&f.artifact.times, &reference, &FieldPair { u: u.clone(), p: p.clone() }, &su.inner, &sp.inner)
        .unwrap();
    let n = 2;
    assert_eq!(s.me_p[n], me_metric(reference.p.column(n).as_slice(), p.column(n).as_slice()).unwrap());
    assert_eq!(s.mse_u[n], mse_metric(reference.u.column(n).as_slice(), u.column(n).as_slice(), &su.inner).unwrap());
    let worst = s.me_u.iter().copied().fold(0.0, f64::max);
    assert_eq!(s.relative_me(FieldId::Displacement), worst / reference.u.amax());
    let csv = s.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,mse_u,me_u,mse_p,me_p"));
    assert_eq!(lines.count(), f.artifact.times.len());
    // Mismatched shapes are refused.
    let short = FieldPair { u: u.columns(0, 2).into_owned(), p: p.columns(0, 2).into_owned() };
    assert!(ErrorSeries::compute(&f.artifact.times, &reference, &short, &su.inner, &sp.inner).is_err());
}

#[test]
fn queries_outside_the_box_are_clamped() {
    let f = fixture(3, 20);
    let m = &f.artifact.pressure;
    let inside = m.predict_coefficients(20.0, &[0.75, 1.0]).unwrap();
    let outside = m.predict_coefficients(20.0, &[5.0, -3.0]).unwrap();
    assert_eq!(inside, outside);
    let late = m.predict_coefficients(1e6, &[0.3, 1.2]).unwrap();
    let end = m.predict_coefficients(*f.artifact.times.last().unwrap(), &[0.3, 1.2]).unwrap();
    assert_eq!(late, end);
    assert!(m.predict_coefficients(f64::NAN, &[0.3, 1.2]).is_err());
    assert!(f.artifact.reconstruct(0.0, &[0.3]).is_err());
}

#[test]
fn repeated_queries_are_deterministic() {
    let f = fixture(3, 20);
    let a = f.artifact.reconstruct_trajectory(&[0.2, 1.3]).unwrap();
    let b = f.artifact.reconstruct_trajectory(&[0.2, 1.3]).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.0.shape(), (f.disc.mass_u.nrows(), f.artifact.times.len()));
}

#[test]
fn box_statistics_of_a_known_sample() {
    let v: Vec<f64> = (1..=9).map(f64::from).chain([100.0]).collect();
    let b = box_stats(&v).unwrap();
    assert_eq!(b.median, 5.5);
    assert_eq!(b.q1, 3.25);
    assert_eq!(b.q3, 7.75);
    assert_eq!(b.whisker_lo, 1.0);
    assert_eq!(b.whisker_hi, 9.0);
    assert_eq!(b.outliers, vec![100.0]);
    assert!(box_stats(&[]).is_err());
}

#[test]
fn per_step_statistics_follow_the_time_grid() {
    let mk = |scale: f64| ErrorSeries {
        times: vec![0.0, 1.0],
        mse_u: vec![scale, 2.0 * scale],
        me_u: vec![0.0; 2],
        mse_p: vec![0.0; 2],
        me_p: vec![0.0; 2],
        magnitude_u: 1.0,
        magnitude_p: 1.0,
    };
    let series: Vec<ErrorSeries> = [1.0, 2.0, 3.0].into_iter().map(mk).collect();
    let stats = per_step_stats(&series, |s| &s.mse_u).unwrap();
    assert_eq!(stats.len(), 2);
    assert_eq!(stats[0].median, 2.0);
    assert_eq!(stats[1].median, 4.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mse_is_symmetric_and_vanishes_on_the_diagonal(
        a in prop::collection::vec(-1e3f64..1e3, 12),
        b in prop::collection::vec(-1e3f64..1e3, 12),
    ) {
        let inner = InnerProduct::Euclidean;
        prop_assert_eq!(mse_metric(&a, &a, &inner).unwrap(), 0.0);
        let ab = mse_metric(&a, &b, &inner).unwrap();
        let ba = mse_metric(&b, &a, &inner).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1e-300));
        prop_assert_eq!(me_metric(&a, &b).unwrap(), me_metric(&b, &a).unwrap());
    }

    #[test]
    fn expansion_of_projected_coefficients_is_the_projection(seed in 0u64..200) {
        let disc = Discretization::new(build_unit_square_mesh(2, true).unwrap());
        let inner = InnerProduct::Mass(Arc::clone(&disc.mass_p));
        let set = synthetic_snapshots(FieldId::Pressure, &inner, 2, 4, seed);
        let basis = standard_pod(&set, 3).unwrap();
        let proj = projection_reconstruction(&basis, &set.trajectories[0]).unwrap();
        let again = projection_reconstruction(&basis, &proj).unwrap();
        prop_assert!((proj - again).amax() < 1e-10 * set.trajectories[0].amax());
    }
}
