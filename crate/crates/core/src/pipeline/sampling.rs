//! Training grids and random test draws over a parameter box.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pipeline::cases::ParamAxis;
use crate::projection::Scale;

/// `count` equispaced points on `[lo, hi]`, in `log₁₀` for [`Scale::Log10`].
pub fn axis_points(axis: &ParamAxis, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![match axis.scale {
            Scale::Linear => 0.5 * (axis.lo + axis.hi),
            Scale::Log10 => pow10(0.5 * (axis.lo.log10() + axis.hi.log10())),
        }];
    }
    (0..count)
        .map(|j| {
            let s = j as f64 / (count - 1) as f64;
            match axis.scale {
                Scale::Linear => axis.lo + s * (axis.hi - axis.lo),
                Scale::Log10 => {
                    let (a, b) = (axis.lo.log10(), axis.hi.log10());
                    pow10(a + s * (b - a))
                }
            }
        })
        .collect()
}

/// `10^e`, snapped to the exact decimal literal at integer exponents.
fn pow10(e: f64) -> f64 {
    let r = e.round();
    if (e - r).abs() < 1e-12 {
        format!("1e{}", r as i64).parse().expect("valid float literal")
    } else {
        10f64.powf(e)
    }
}

/// Tensor-product grid with `√M` points per axis, first axis slowest.
pub fn sample_training_set(axes: &[ParamAxis], m: usize) -> Result<Vec<Vec<f64>>> {
    if axes.is_empty() || m == 0 {
        return Err(Error::InvalidParameter("need at least one axis and one sample".into()));
    }
    let d = axes.len() as u32;
    let per = (m as f64).powf(1.0 / d as f64).round() as usize;
    if per.pow(d) != m {
        let lo = (m as f64).powf(1.0 / d as f64).floor().max(1.0) as usize;
        return Err(Error::InvalidParameter(format!(
            "M = {m} is not a perfect {}; try M = {} or M = {}",
            if d == 2 { "square".to_string() } else { format!("power {d}") },
            lo.pow(d),
            (lo + 1).pow(d)
        )));
    }
    let points: Vec<Vec<f64>> = axes.iter().map(|a| axis_points(a, per)).collect();
    let mut out = Vec::with_capacity(m);
    for flat in 0..m {
        let mut rem = flat;
        let mut mu = vec![0.0; axes.len()];
        for k in (0..axes.len()).rev() {
            mu[k] = points[k][rem % per];
            rem /= per;
        }
        out.push(mu);
    }
    Ok(out)
}

/// Uniform draws in the box (uniform in `log₁₀` on log axes).
pub fn random_parameters(axes: &[ParamAxis], count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            axes.iter()
                .map(|a| match a.scale {
                    Scale::Linear => rng.random_range(a.lo..=a.hi),
                    Scale::Log10 => 10f64.powf(rng.random_range(a.lo.log10()..=a.hi.log10())),
                })
                .collect()
        })
        .collect()
}
