//! Evaluation functionals shared by the classical and learned pipelines.

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// SNR knobs an evaluation ran at. All are transmit SNRs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrSettings {
    pub pilot_snr_db: f64,
    pub echo_snr_db: f64,
    pub data_snr_db: f64,
}

/// One evaluation outcome. Fields a pipeline does not produce stay `None`
/// (a comm-only pipeline has no angle error, for example).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub ase_bps_hz: Option<f64>,
    pub cosine_sim: Option<f64>,
    pub nmse_db: Option<f64>,
    pub angle_rmse_deg: Option<f64>,
    pub snr: SnrSettings,
}

impl MetricsRecord {
    pub fn empty(snr: SnrSettings) -> Self {
        Self {
            ase_bps_hz: None,
            cosine_sim: None,
            nmse_db: None,
            angle_rmse_deg: None,
            snr,
        }
    }
}

/// Cosine similarity of a channel estimate, averaged per subcarrier:
/// `(1/N_c) Σ_k |truth[k]ᴴ est[k]| / (‖truth[k]‖·‖est[k]‖)`.
///
/// A zero estimate row contributes 0; a zero truth row is excluded from the
/// average and reported through `excluded_rows`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSimilarity {
    pub value: f64,
    pub excluded_rows: usize,
}

pub fn cosine_similarity(
    truth: &Array2<Complex64>,
    est: &Array2<Complex64>,
) -> Result<CosineSimilarity> {
    if truth.shape() != est.shape() {
        return Err(Error::Shape(format!(
            "truth {:?} vs est {:?}",
            truth.shape(),
            est.shape()
        )));
    }
    let n_c = truth.shape()[0];
    let mut acc = 0.0;
    let mut used = 0usize;
    for k in 0..n_c {
        let t = truth.row(k);
        let e = est.row(k);
        let tn: f64 = t.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if tn == 0.0 {
            continue;
        }
        used += 1;
        let en: f64 = e.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if en == 0.0 {
            continue; // contributes 0
        }
        let dot: Complex64 = t.iter().zip(e.iter()).map(|(a, b)| a.conj() * b).sum();
        acc += dot.norm() / (tn * en);
    }
    if used == 0 {
        return Err(Error::Domain("all truth rows are zero".into()));
    }
    Ok(CosineSimilarity {
        value: acc / used as f64,
        excluded_rows: n_c - used,
    })
}

/// Normalized mean square error over all subcarriers jointly (linear scale):
/// `Σ_k ‖truth[k]-est[k]‖² / Σ_k ‖truth[k]‖²`.
pub fn nmse(truth: &Array2<Complex64>, est: &Array2<Complex64>) -> Result<f64> {
    if truth.shape() != est.shape() {
        return Err(Error::Shape(format!(
            "truth {:?} vs est {:?}",
            truth.shape(),
            est.shape()
        )));
    }
    let denom: f64 = truth.iter().map(|z| z.norm_sqr()).sum();
    if denom == 0.0 {
        return Err(Error::Domain("zero truth in NMSE".into()));
    }
    let num: f64 = truth
        .iter()
        .zip(est.iter())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    Ok(num / denom)
}

pub fn to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// Worst-case cost assigned to an unmatched angle when list sizes differ.
const UNMATCHED_COST_DEG: f64 = 180.0;

/// RMSE under the minimum-cost one-to-one assignment between estimated and
/// true angles; the shorter list is padded with a 180° worst-case cost.
pub fn angle_rmse(est_deg: &[f64], truth_deg: &[f64]) -> Result<f64> {
    if est_deg.is_empty() || truth_deg.is_empty() {
        return Err(Error::Domain("angle lists must be non-empty".into()));
    }
    let n = est_deg.len().max(truth_deg.len());
    if n > 20 {
        return Err(Error::Domain(format!(
            "assignment over {n} angles unsupported (max 20)"
        )));
    }
    // squared-error cost matrix padded to n x n
    let sq = |i: usize, j: usize| -> f64 {
        match (est_deg.get(i), truth_deg.get(j)) {
            (Some(&e), Some(&t)) => (e - t) * (e - t),
            _ => UNMATCHED_COST_DEG * UNMATCHED_COST_DEG,
        }
    };
    // bitmask DP over assigned truth entries
    let full = (1usize << n) - 1;
    let mut dp = vec![f64::INFINITY; full + 1];
    dp[0] = 0.0;
    for mask in 0..full {
        let i = mask.count_ones() as usize; // next estimate row to assign
        if dp[mask].is_infinite() {
            continue;
        }
        for j in 0..n {
            if mask & (1 << j) == 0 {
                let next = mask | (1 << j);
                let cand = dp[mask] + sq(i, j);
                if cand < dp[next] {
                    dp[next] = cand;
                }
            }
        }
    }
    Ok((dp[full] / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_channel(n_c: usize, m: usize, seed: u64) -> Array2<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n_c, m), |_| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    #[test]
    fn cosine_self_similarity_is_one() {
        let t = random_channel(8, 4, 0);
        let c = cosine_similarity(&t, &t).unwrap();
        assert_abs_diff_eq!(c.value, 1.0, epsilon = 1e-12);
        assert_eq!(c.excluded_rows, 0);
    }

    #[test]
    fn cosine_invariant_to_per_subcarrier_phase() {
        let t = random_channel(8, 4, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut e = t.clone();
        for k in 0..8 {
            let rot = Complex64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU));
            for v in e.row_mut(k) {
                *v *= rot;
            }
        }
        let c = cosine_similarity(&t, &e).unwrap();
        assert_abs_diff_eq!(c.value, 1.0, epsilon = 1e-12);
        // NMSE is NOT invariant to the same rotations
        let n = nmse(&t, &e).unwrap();
        assert!(n > 1e-3, "nmse {n} should be disturbed by phase rotations");
    }

    #[test]
    fn cosine_orthogonal_rows_give_zero() {
        let n_c = 4;
        let mut t = Array2::<Complex64>::zeros((n_c, 2));
        let mut e = Array2::<Complex64>::zeros((n_c, 2));
        for k in 0..n_c {
            t[(k, 0)] = Complex64::new(1.0, 0.0);
            e[(k, 1)] = Complex64::new(1.0, 0.0);
        }
        let c = cosine_similarity(&t, &e).unwrap();
        assert_abs_diff_eq!(c.value, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn cosine_zero_truth_row_excluded_and_flagged() {
        let mut t = random_channel(4, 3, 3);
        let e = random_channel(4, 3, 4);
        for v in t.row_mut(2) {
            *v = Complex64::new(0.0, 0.0);
        }
        let c = cosine_similarity(&t, &e).unwrap();
        assert_eq!(c.excluded_rows, 1);
        // fully zero truth is a domain error
        let z = Array2::<Complex64>::zeros((4, 3));
        assert!(cosine_similarity(&z, &e).is_err());
    }

    #[test]
    fn nmse_basic_values() {
        let t = random_channel(6, 5, 5);
        assert_abs_diff_eq!(nmse(&t, &t).unwrap(), 0.0, epsilon = 1e-15);
        let zero = Array2::<Complex64>::zeros((6, 5));
        assert_abs_diff_eq!(nmse(&t, &zero).unwrap(), 1.0, epsilon = 1e-15);
        let double = t.mapv(|z| z * 2.0);
        assert_abs_diff_eq!(nmse(&t, &double).unwrap(), 1.0, epsilon = 1e-12);
        assert!(nmse(&zero, &t).is_err());
    }

    #[test]
    fn metrics_permutation_invariant_in_subcarriers() {
        let t = random_channel(8, 4, 6);
        let e = random_channel(8, 4, 7);
        let perm: Vec<usize> = vec![3, 1, 7, 0, 5, 2, 6, 4];
        let tp = Array2::from_shape_fn(t.raw_dim(), |(k, i)| t[(perm[k], i)]);
        let ep = Array2::from_shape_fn(e.raw_dim(), |(k, i)| e[(perm[k], i)]);
        assert_abs_diff_eq!(
            cosine_similarity(&t, &e).unwrap().value,
            cosine_similarity(&tp, &ep).unwrap().value,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            nmse(&t, &e).unwrap(),
            nmse(&tp, &ep).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn angle_rmse_assignment() {
        // any ordering of a perfect match gives zero
        assert_abs_diff_eq!(
            angle_rmse(&[20.0, -5.0, 3.0], &[3.0, 20.0, -5.0]).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(angle_rmse(&[10.0], &[11.0]).unwrap(), 1.0, epsilon = 1e-12);
        // cross assignment beats identity
        assert_abs_diff_eq!(
            angle_rmse(&[0.0, 20.0], &[19.0, 1.0]).unwrap(),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn angle_rmse_matches_exhaustive_permutation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let n = rng.random_range(1..=5usize);
            let est: Vec<f64> = (0..n).map(|_| rng.random_range(-90.0..90.0)).collect();
            let truth: Vec<f64> = (0..n).map(|_| rng.random_range(-90.0..90.0)).collect();
            // brute-force over all permutations of truth
            let mut idx: Vec<usize> = (0..n).collect();
            let mut best = f64::INFINITY;
            permute(&mut idx, 0, &mut |p| {
                let sse: f64 = p
                    .iter()
                    .enumerate()
                    .map(|(i, &j)| (est[i] - truth[j]).powi(2))
                    .sum();
                best = best.min((sse / n as f64).sqrt());
            });
            let got = angle_rmse(&est, &truth).unwrap();
            assert_abs_diff_eq!(got, best, epsilon = 1e-10);
        }
    }

    fn permute(idx: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
        if k == idx.len() {
            f(idx);
            return;
        }
        for i in k..idx.len() {
            idx.swap(k, i);
            permute(idx, k + 1, f);
            idx.swap(k, i);
        }
    }

    #[test]
    fn angle_rmse_pads_size_mismatch() {
        // optimal assignment pairs 0↔0 and leaves 50° unmatched at 180° cost
        let r = angle_rmse(&[0.0, 50.0], &[0.0]).unwrap();
        assert_abs_diff_eq!(r, 180.0 / 2f64.sqrt(), epsilon = 1e-9);
        assert!(angle_rmse(&[], &[0.0]).is_err());
    }

    #[test]
    fn angle_rmse_symmetric_when_sizes_match() {
        let a = [1.0, -40.0, 72.0];
        let b = [0.5, -38.0, 70.0];
        assert_abs_diff_eq!(
            angle_rmse(&a, &b).unwrap(),
            angle_rmse(&b, &a).unwrap(),
            epsilon = 1e-12
        );
    }
}
