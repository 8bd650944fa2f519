use std::sync::Arc;

use biotrom::fom::Discretization;
use biotrom::linalg::InnerProduct;
use biotrom::mesh::build_unit_square_mesh;
use biotrom::pod::{standard_pod, FieldId, ReducedBasis, SnapshotSet};
use biotrom::projection::{build_table, expand, gram_matrix, project, project_trajectory, Scale};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::synthetic_snapshots;

fn mass() -> InnerProduct {
    let disc = Discretization::new(build_unit_square_mesh(4, true).unwrap());
    InnerProduct::Mass(Arc::clone(&disc.mass_p))
}

fn basis(inner: &InnerProduct, n: usize) -> (SnapshotSet, ReducedBasis) {
    let set = synthetic_snapshots(FieldId::Pressure, inner, 4, 8, 1);
    let b = standard_pod(&set, n).unwrap();
    (set, b)
}

#[test]
fn residual_is_orthogonal_to_every_mode() {
    for inner in [InnerProduct::Euclidean, mass()] {
        let (_, b) = basis(&inner, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let field: Vec<f64> = (0..b.n_dofs()).map(|_| rng.random::<f64>() - 0.5).collect();
        let theta = project(&field, &b).unwrap();
        let approx = expand(&theta, &b).unwrap();
        let r: Vec<f64> = field.iter().zip(&approx).map(|(a, b)| a - b).collect();
        let fnorm = inner.norm_squared(&field).unwrap().sqrt();
        for k in 0..b.n_modes() {
            let w = b.modes.column(k).iter().copied().collect::<Vec<_>>();
            let c = inner.dot(&r, &w).unwrap();
            assert!(c.abs() <= 1e-9 * fnorm, "mode {k}: {c:e}");
        }
    }
}

#[test]
fn training_projection_error_falls_with_more_modes() {
    let inner = mass();
    let (set, b) = basis(&inner, 12);
    let stacked = set.stacked();
    let errors: Vec<f64> = (1..=12).map(|n| b.truncated(n).unwrap().projection_error(&stacked)).collect();
    for w in errors.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-12), "{errors:?}");
    }
    assert!(errors[11] < 1e-2 * errors[0]);
}

#[test]
fn pod_modes_have_identity_gram() {
    let (_, b) = basis(&mass(), 6);
    let g = gram_matrix(&b).unwrap();
    assert!((g - DMatrix::identity(6, 6)).amax() < 1e-10);
}

#[test]
fn table_of_a_single_mode_trajectory() {
    let inner = mass();
    let (_, b) = basis(&inner, 3);
    let w1 = b.modes.column(0).into_owned();
    let nt = 6;
    let traj = DMatrix::from_fn(w1.len(), nt, |i, _| w1[i]);
    let set = SnapshotSet::new(
        FieldId::Pressure,
        vec![traj],
        vec![vec![0.2, 3.0]],
        (0..nt).map(|n| n as f64).collect(),
        inner,
    )
    .unwrap();
    let table = build_table(&set, &b, &[Scale::Linear, Scale::Linear]).unwrap();
    assert_eq!(table.len(), nt);
    for row in &table.theta {
        assert!((row[0] - 1.0).abs() < 1e-10 && row[1].abs() < 1e-10 && row[2].abs() < 1e-10, "{row:?}");
    }
    let (_, y) = table.normalized().unwrap();
    assert!(y.iter().all(|r| r.iter().all(|&v| v == 0.5)));
}

#[test]
fn table_rows_cover_every_parameter_and_time() {
    let inner = mass();
    let set = synthetic_snapshots(FieldId::Pressure, &inner, 3, 5, 2);
    let b = standard_pod(&set, 4).unwrap();
    let table = build_table(&set, &b, &[Scale::Linear, Scale::Log10]).unwrap();
    assert_eq!(table.len(), 3 * 5);
    let (x, y) = table.normalized().unwrap();
    assert!(x.iter().chain(&y).all(|r| r.iter().all(|&v| (0.0..=1.0).contains(&v))));
    // Row layout: parameter-major, time-minor.
    for i in 0..3 {
        let coeffs = project_trajectory(&set.trajectories[i], &b).unwrap();
        for n in 0..5 {
            let row = table.row(i, n);
            assert_eq!(table.inputs[row][0], set.times[n]);
            assert_eq!(&table.inputs[row][1..], set.params[i].as_slice());
            for k in 0..4 {
                assert_eq!(table.theta[row][k], coeffs[(k, n)]);
            }
        }
    }
    for (r, row) in table.theta.iter().enumerate() {
        let back = table.output_norm.denormalize(&y[r]).unwrap();
        for (a, b) in row.iter().zip(&back) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn combinations_of_modes_are_recovered(coeffs in prop::collection::vec(-5.0f64..5.0, 4)) {
        let (_, b) = basis(&InnerProduct::Euclidean, 4);
        let field = expand(&coeffs, &b).unwrap();
        let theta = project(&field, &b).unwrap();
        for (a, t) in coeffs.iter().zip(&theta) {
            prop_assert!((a - t).abs() < 1e-10);
        }
    }

    #[test]
    fn projection_never_increases_the_norm(seed in 0u64..500) {
        let inner = mass();
        let (_, b) = basis(&inner, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let field: Vec<f64> = (0..b.n_dofs()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let approx = expand(&project(&field, &b).unwrap(), &b).unwrap();
        let nf = inner.norm_squared(&field).unwrap();
        let na = inner.norm_squared(&approx).unwrap();
        prop_assert!(na <= nf * (1.0 + 1e-12));
    }
}
