//! Reference self-joins.
//!
//! `brute_force_fp64` is the accuracy ground truth: direct
//! subtract-and-square in FP64 on the original FP32 data, thresholded on the
//! actual distance. `reference_mixed_scalar` is the bit-exact target for the
//! tiled engine: one scalar accumulation per pair following the MMA
//! rounding contract, with no tiling at all.

use rayon::prelude::*;

use crate::dataset::{Dataset, HalfDataset};
use crate::error::{Error, Result};
use crate::mma::{combine_distance, rz_add};
use crate::result::{Pair, ResultSet};

pub fn brute_force_fp64(ds: &Dataset, epsilon: f64) -> Result<ResultSet<f64>> {
    if !(epsilon >= 0.0) {
        return Err(Error::Argument(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let n = ds.n();
    let pairs: Vec<Pair<f64>> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let pi = ds.row(i);
            (0..n).filter_map(move |j| {
                let dist_sq: f64 = pi
                    .iter()
                    .zip(ds.row(j))
                    .map(|(&a, &b)| {
                        let diff = a as f64 - b as f64;
                        diff * diff
                    })
                    .sum();
                (dist_sq.sqrt() <= epsilon).then_some(Pair {
                    i: i as u32,
                    j: j as u32,
                    dist_sq,
                })
            })
        })
        .collect();
    Ok(ResultSet::new(pairs, n, epsilon))
}

/// Same squared distances the tiled engine must produce. Accumulation runs
/// straight through all `d_padded` dimensions; since MMA chaining continues
/// one sequential RZ sum, k-slice boundaries need no special handling here.
pub fn reference_mixed_scalar(hd: &HalfDataset, epsilon: f32) -> Result<ResultSet> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::Argument(format!(
            "epsilon must be finite and >= 0, got {epsilon}"
        )));
    }
    let eps_sq = epsilon * epsilon;
    let n = hd.n_logical();
    let norms = hd.norms();
    let rows: Vec<Vec<f32>> = (0..n)
        .map(|i| hd.row(i).iter().map(|h| h.to_f32()).collect())
        .collect();

    let per_point: Vec<Result<Vec<Pair>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut out = Vec::new();
            for j in 0..n {
                let mut acc = 0.0f32;
                for (&a, &b) in rows[i].iter().zip(&rows[j]) {
                    acc = rz_add(acc, a * b);
                }
                if !acc.is_finite() {
                    return Err(Error::Overflow { row: i, col: j });
                }
                let dist_sq = combine_distance(acc, norms[i], norms[j]);
                if dist_sq <= eps_sq {
                    out.push(Pair {
                        i: i as u32,
                        j: j as u32,
                        dist_sq,
                    });
                }
            }
            Ok(out)
        })
        .collect();
    let mut pairs = Vec::new();
    for chunk in per_point {
        pairs.extend(chunk?);
    }
    Ok(ResultSet::new(pairs, n, epsilon as f64))
}
