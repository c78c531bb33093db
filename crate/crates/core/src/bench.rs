//! Empirical approximation error of the compact bilinear sketch.
//!
//! A trial draws four non-negative vectors `x, y, u, v ∈ [0, 1]^C` (the range
//! of rectified features) and a fresh plan, then compares
//! `⟨CB(x, y), CB(u, v)⟩` against the exact `⟨x, u⟩⟨y, v⟩`.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_for, streams};
use crate::sketch::{compact_bilinear, SketchPlan};
use crate::tensor::Tensor;

/// Relative errors of `trials` independent sketched inner products.
pub fn relative_errors(c: usize, d: usize, trials: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = rng_for(seed, streams::DATA);
    let mut out = Vec::with_capacity(trials);
    for i in 0..trials {
        let plan = SketchPlan::new(c, d, derive_seed(seed, i as u64))?;
        let mut draw = || Tensor::<f64>::from_fn(&[c], |_| rng.random_range(0.0..1.0));
        let (x, y, u, v) = (draw(), draw(), draw(), draw());
        let exact = x.dot(&u)? * y.dot(&v)?;
        if exact == 0.0 {
            return Err(Error::Numeric {
                op: "sketchbench".into(),
                msg: "exact product vanished".into(),
            });
        }
        let approx = compact_bilinear(&x, &y, &plan)?.dot(&compact_bilinear(&u, &v, &plan)?)?;
        out.push((approx - exact).abs() / exact.abs());
    }
    Ok(out)
}

/// Linear-interpolated quantile of unsorted data, `q ∈ [0, 1]`.
pub fn quantile(data: &[f64], q: f64) -> f64 {
    if data.is_empty() {
        return f64::NAN;
    }
    let mut s = data.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

/// Summary row of one sketch dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct FidelityRow {
    pub c: usize,
    pub d: usize,
    pub trials: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub q90: f64,
    pub mean: f64,
}

pub fn fidelity(c: usize, d: usize, trials: usize, seed: u64) -> Result<(FidelityRow, Vec<f64>)> {
    let errs = relative_errors(c, d, trials, seed)?;
    let row = FidelityRow {
        c,
        d,
        trials,
        median: quantile(&errs, 0.5),
        q25: quantile(&errs, 0.25),
        q75: quantile(&errs, 0.75),
        q90: quantile(&errs, 0.9),
        mean: errs.iter().sum::<f64>() / errs.len().max(1) as f64,
    };
    Ok((row, errs))
}

/// Normal-approximation z statistic of the Mann–Whitney U test that values in
/// `a` tend to be larger than values in `b` (ties count one half).
pub fn mann_whitney_z(a: &[f64], b: &[f64]) -> f64 {
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let mut u = 0.0;
    for &x in a {
        for &y in b {
            u += if x > y {
                1.0
            } else if x == y {
                0.5
            } else {
                0.0
            };
        }
    }
    let mean = n1 * n2 / 2.0;
    let sd = (n1 * n2 * (n1 + n2 + 1.0) / 12.0).sqrt();
    (u - mean) / sd
}
