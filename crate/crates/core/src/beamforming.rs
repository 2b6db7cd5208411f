//! Hybrid beamforming: phase-only analog matrix plus per-subcarrier digital
//! precoders under a total power constraint, the classical EGT + RZF
//! construction, and the average-spectral-efficiency objective shared by the
//! benchmarks and the learned pipeline.

use ndarray::{Array2, Array3};
use num_complex::Complex64;

use crate::channel::CommChannel;
use crate::error::{Error, Result};

/// Analog phase-shifter matrix plus per-subcarrier digital precoders.
///
/// Invariants: every analog entry has modulus 1/√M; for every subcarrier
/// `Σ_u ‖analog·digital[k][:,u]‖² ≤ total_power` (with equality after
/// [`power_normalize`]).
#[derive(Debug, Clone)]
pub struct HybridBeamformer {
    /// Shape (n_antennas, n_rf).
    pub analog: Array2<Complex64>,
    /// One (n_rf, n_ues) matrix per subcarrier.
    pub digital: Vec<Array2<Complex64>>,
    pub total_power: f64,
}

impl HybridBeamformer {
    /// Transmit power spent on subcarrier `k`: `Σ_u ‖F w_u‖²`.
    pub fn subcarrier_power(&self, k: usize) -> f64 {
        let f = &self.analog;
        let w = &self.digital[k];
        let (m, n_rf) = (f.shape()[0], f.shape()[1]);
        let n_ues = w.shape()[1];
        let mut total = 0.0;
        for u in 0..n_ues {
            for i in 0..m {
                let mut acc = Complex64::new(0.0, 0.0);
                for r in 0..n_rf {
                    acc += f[(i, r)] * w[(r, u)];
                }
                total += acc.norm_sqr();
            }
        }
        total
    }

    pub fn max_analog_modulus_error(&self) -> f64 {
        let m = self.analog.shape()[0] as f64;
        let target = 1.0 / m.sqrt();
        self.analog
            .iter()
            .map(|z| (z.norm() - target).abs())
            .fold(0.0, f64::max)
    }
}

/// Equal gain transmission: column `u` carries the per-antenna phases of the
/// subcarrier-summed channel estimate, `(1/√M)·exp(j·angle(Σ_k ĥ_u[k]))`.
/// RF columns beyond the UE count repeat the first UE's column. An all-zero
/// estimate falls back to broadside steering and raises the returned flag.
pub fn egt_analog(ch_est: &Array3<Complex64>, n_rf: usize) -> Result<(Array2<Complex64>, bool)> {
    let (n_ues, n_c, m) = {
        let s = ch_est.shape();
        (s[0], s[1], s[2])
    };
    if n_ues > n_rf {
        return Err(Error::Shape(format!(
            "{n_ues} UEs need {n_ues} RF columns, only {n_rf} available"
        )));
    }
    let scale = 1.0 / (m as f64).sqrt();
    let mut analog = Array2::<Complex64>::zeros((m, n_rf));
    let mut flagged = false;
    for u in 0..n_ues {
        // subcarrier-summed channel
        let mut summed = vec![Complex64::new(0.0, 0.0); m];
        for k in 0..n_c {
            for i in 0..m {
                summed[i] += ch_est[(u, k, i)];
            }
        }
        let zero = summed.iter().all(|z| z.norm() == 0.0);
        if zero {
            flagged = true;
        }
        for i in 0..m {
            // angle(0) = 0 makes the broadside fallback implicit per entry
            analog[(i, u)] = Complex64::from_polar(scale, if zero { 0.0 } else { summed[i].arg() });
        }
    }
    for r in n_ues..n_rf {
        for i in 0..m {
            analog[(i, r)] = analog[(i, 0)];
        }
    }
    Ok((analog, flagged))
}

/// Regularized zero forcing on the effective channels, unnormalized:
/// `W[k] = H_effᴴ (H_eff H_effᴴ + λI)⁻¹` with `λ = n_ues·noise_var/P`.
/// Feed the result through [`power_normalize`] to meet the power budget.
pub fn rzf_digital(
    h_eff: &[Array2<Complex64>],
    noise_var: f64,
    total_power: f64,
) -> Result<Vec<Array2<Complex64>>> {
    if h_eff.is_empty() {
        return Err(Error::Shape("no effective channels".into()));
    }
    let (n_ues, n_rf) = (h_eff[0].shape()[0], h_eff[0].shape()[1]);
    let lambda = n_ues as f64 * noise_var / total_power;
    let mut out = Vec::with_capacity(h_eff.len());
    for (k, h) in h_eff.iter().enumerate() {
        if h.shape() != [n_ues, n_rf] {
            return Err(Error::Shape(format!("h_eff[{k}] shape {:?}", h.shape())));
        }
        let hm = nalgebra::DMatrix::<Complex64>::from_fn(n_ues, n_rf, |i, j| h[(i, j)]);
        let mut gram = &hm * hm.adjoint();
        for i in 0..n_ues {
            gram[(i, i)] += Complex64::new(lambda, 0.0);
        }
        let inv = gram.try_inverse().ok_or_else(|| {
            Error::Domain(format!(
                "singular RZF system at subcarrier {k} (λ = {lambda})"
            ))
        })?;
        let w = hm.adjoint() * inv;
        out.push(Array2::from_shape_fn((n_rf, n_ues), |(i, j)| w[(i, j)]));
    }
    Ok(out)
}

/// Scale each subcarrier's digital matrix so the spent power equals the
/// budget exactly. Idempotent; an all-zero subcarrier is left untouched and
/// raises the returned flag.
pub fn power_normalize(mut bf: HybridBeamformer) -> (HybridBeamformer, bool) {
    let mut flagged = false;
    for k in 0..bf.digital.len() {
        let p = bf.subcarrier_power(k);
        if p == 0.0 {
            flagged = true;
            continue;
        }
        let s = (bf.total_power / p).sqrt();
        bf.digital[k].mapv_inplace(|z| z * s);
    }
    (bf, flagged)
}

/// Effective channels `H_eff[k][u,r] = ĥ_u[k]ᴴ F[:,r]` seen through an
/// analog matrix.
pub fn effective_channel(
    ch_est: &Array3<Complex64>,
    analog: &Array2<Complex64>,
) -> Vec<Array2<Complex64>> {
    let (n_ues, n_c, m) = {
        let s = ch_est.shape();
        (s[0], s[1], s[2])
    };
    let n_rf = analog.shape()[1];
    (0..n_c)
        .map(|k| {
            Array2::from_shape_fn((n_ues, n_rf), |(u, r)| {
                let mut acc = Complex64::new(0.0, 0.0);
                for i in 0..m {
                    acc += ch_est[(u, k, i)].conj() * analog[(i, r)];
                }
                acc
            })
        })
        .collect()
}

/// The full classical construction: EGT analog from the estimates, RZF
/// digital on the induced effective channels, power-normalized.
pub fn hybrid_egt_rzf(
    ch_est: &Array3<Complex64>,
    n_rf: usize,
    noise_var: f64,
    total_power: f64,
) -> Result<HybridBeamformer> {
    let (analog, _) = egt_analog(ch_est, n_rf)?;
    let h_eff = effective_channel(ch_est, &analog);
    let digital = rzf_digital(&h_eff, noise_var, total_power)?;
    let (bf, _) = power_normalize(HybridBeamformer {
        analog,
        digital,
        total_power,
    });
    Ok(bf)
}

/// Average spectral efficiency per UE in bps/Hz:
/// `(1/(n_ues·N_c)) Σ_{u,k} log₂(1 + |h_u[k]ᴴ F w_u[k]|² /
/// (Σ_{v≠u} |h_u[k]ᴴ F w_v[k]|² + noise_var))`.
pub fn ase(ch: &CommChannel, bf: &HybridBeamformer, noise_var: f64) -> Result<f64> {
    let (n_ues, n_c, m) = {
        let s = ch.h.shape();
        (s[0], s[1], s[2])
    };
    if bf.digital.len() != n_c || bf.analog.shape()[0] != m {
        return Err(Error::Shape(format!(
            "beamformer ({} subcarriers, {} antennas) vs channel ({n_c}, {m})",
            bf.digital.len(),
            bf.analog.shape()[0]
        )));
    }
    let n_rf = bf.analog.shape()[1];
    let mut total = 0.0;
    for k in 0..n_c {
        let w = &bf.digital[k];
        for u in 0..n_ues {
            // e[r] = h_u[k]^H F[:, r]
            let mut e = vec![Complex64::new(0.0, 0.0); n_rf];
            for r in 0..n_rf {
                for i in 0..m {
                    e[r] += ch.h[(u, k, i)].conj() * bf.analog[(i, r)];
                }
            }
            let mut signal = 0.0;
            let mut interference = 0.0;
            for v in 0..w.shape()[1] {
                let mut s = Complex64::new(0.0, 0.0);
                for r in 0..n_rf {
                    s += e[r] * w[(r, v)];
                }
                if v == u {
                    signal = s.norm_sqr();
                } else {
                    interference += s.norm_sqr();
                }
            }
            total += (1.0 + signal / (interference + noise_var)).log2();
        }
    }
    Ok(total / (n_ues as f64 * n_c as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::steering_vector;
    use approx::assert_abs_diff_eq;
    use ndarray::Array3;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_bf(
        m: usize,
        n_rf: usize,
        n_ues: usize,
        n_c: usize,
        power: f64,
        seed: u64,
    ) -> HybridBeamformer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (m as f64).sqrt();
        let analog = Array2::from_shape_fn((m, n_rf), |_| {
            Complex64::from_polar(scale, rng.random_range(0.0..std::f64::consts::TAU))
        });
        let digital = (0..n_c)
            .map(|_| {
                Array2::from_shape_fn((n_rf, n_ues), |_| {
                    Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                })
            })
            .collect();
        let (bf, _) = power_normalize(HybridBeamformer {
            analog,
            digital,
            total_power: power,
        });
        bf
    }

    fn random_channel(n_ues: usize, n_c: usize, m: usize, seed: u64) -> CommChannel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CommChannel {
            h: Array3::from_shape_fn((n_ues, n_c, m), |_| {
                Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            }),
            freq_offsets_hz: vec![0.0; n_c],
        }
    }

    #[test]
    fn egt_gain_matches_closed_form() {
        // flat single-path channel h = α a(θ): EGT achieves |h^H f| = Σ|h_i|/√M
        let (m, n_c) = (32, 8);
        let alpha = Complex64::new(1.3, -0.6);
        let a = steering_vector(24.0, m).unwrap();
        let ch_est = Array3::from_shape_fn((1, n_c, m), |(_, _, i)| alpha * a[i]);
        let (analog, flagged) = egt_analog(&ch_est, 1).unwrap();
        assert!(!flagged);

        let gain: Complex64 = (0..m).map(|i| ch_est[(0, 0, i)].conj() * analog[(i, 0)]).sum();
        let oracle: f64 = (0..m)
            .map(|i| ch_est[(0, 0, i)].norm())
            .sum::<f64>()
            / (m as f64).sqrt();
        assert_abs_diff_eq!(gain.norm(), oracle, epsilon = 1e-12);
        // with unit-norm steering, that is exactly |α|
        assert_abs_diff_eq!(gain.norm(), alpha.norm(), epsilon = 1e-12);
    }

    #[test]
    fn egt_gain_invariant_to_global_phase() {
        let ch_est = {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            Array3::from_shape_fn((1, 4, 16), |_| {
                Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            })
        };
        let rotated = ch_est.mapv(|z| z * Complex64::from_polar(1.0, 1.234));
        let (f0, _) = egt_analog(&ch_est, 1).unwrap();
        let (f1, _) = egt_analog(&rotated, 1).unwrap();
        let g0: Complex64 = (0..16).map(|i| ch_est[(0, 0, i)].conj() * f0[(i, 0)]).sum();
        let g1: Complex64 = (0..16)
            .map(|i| rotated[(0, 0, i)].conj() * f1[(i, 0)])
            .sum();
        assert_abs_diff_eq!(g0.norm(), g1.norm(), epsilon = 1e-12);
    }

    #[test]
    fn egt_unit_modulus_and_zero_fallback() {
        let ch_est = Array3::<Complex64>::zeros((2, 4, 8));
        let (analog, flagged) = egt_analog(&ch_est, 3).unwrap();
        assert!(flagged);
        let target = 1.0 / 8f64.sqrt();
        for z in analog.iter() {
            assert_abs_diff_eq!(z.norm(), target, epsilon = 1e-15);
            // broadside: all entries real positive
            assert_abs_diff_eq!(z.im, 0.0, epsilon = 1e-15);
        }
        // spare RF column equals the first UE column
        for i in 0..8 {
            assert_eq!(analog[(i, 2)], analog[(i, 0)]);
        }
    }

    #[test]
    fn rzf_zero_forcing_limit_diagonalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h: Vec<Array2<Complex64>> = (0..4)
            .map(|_| {
                Array2::from_shape_fn((2, 2), |_| {
                    Complex64::new(rng.random_range(0.5..1.5), rng.random_range(-1.0..1.0))
                })
            })
            .collect();
        let w = rzf_digital(&h, 1e-12, 1.0).unwrap();
        for k in 0..4 {
            let prod = {
                let mut p = Array2::<Complex64>::zeros((2, 2));
                for i in 0..2 {
                    for j in 0..2 {
                        for r in 0..2 {
                            p[(i, j)] += h[k][(i, r)] * w[k][(r, j)];
                        }
                    }
                }
                p
            };
            let off = prod[(0, 1)].norm_sqr() + prod[(1, 0)].norm_sqr();
            let on = prod[(0, 0)].norm_sqr() + prod[(1, 1)].norm_sqr();
            assert!(off / on < 1e-8, "off-diagonal mass {off} vs {on}");
        }
    }

    #[test]
    fn rzf_single_ue_is_matched_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = vec![Array2::from_shape_fn((1, 3), |_| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })];
        // any λ: W ∝ h^H for a single UE
        for noise_var in [1e-9, 1.0, 1e6] {
            let w = rzf_digital(&h, noise_var, 1.0).unwrap();
            // co-linearity: w ∝ h^H
            let ratio0 = w[0][(0, 0)] / h[0][(0, 0)].conj();
            for r in 1..3 {
                let ratio = w[0][(r, 0)] / h[0][(0, r)].conj();
                assert!((ratio - ratio0).norm() < 1e-10 * ratio0.norm());
            }
        }
    }

    #[test]
    fn rzf_large_lambda_tends_to_matched_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = vec![Array2::from_shape_fn((2, 4), |_| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })];
        let w = rzf_digital(&h, 1e9, 1.0).unwrap();
        // column u direction ≈ h_u^H direction
        for u in 0..2 {
            let ratio0 = w[0][(0, u)] / h[0][(u, 0)].conj();
            for r in 1..4 {
                let ratio = w[0][(r, u)] / h[0][(u, r)].conj();
                assert!((ratio - ratio0).norm() < 1e-3 * ratio0.norm());
            }
        }
    }

    #[test]
    fn rzf_continuous_in_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = vec![Array2::from_shape_fn((2, 2), |_| {
            Complex64::new(rng.random_range(0.5..1.5), rng.random_range(-1.0..1.0))
        })];
        let w0 = rzf_digital(&h, 0.1, 1.0).unwrap();
        let mut hp = h.clone();
        hp[0][(0, 0)] += Complex64::new(1e-6, 0.0);
        let w1 = rzf_digital(&hp, 0.1, 1.0).unwrap();
        let diff: f64 = w0[0]
            .iter()
            .zip(w1[0].iter())
            .map(|(a, b)| (a - b).norm())
            .sum();
        assert!(diff < 1e-3, "perturbation blew up: {diff}");
        assert!(diff > 0.0);
    }

    #[test]
    fn power_normalize_exact_and_idempotent() {
        let bf = random_bf(16, 2, 2, 8, 2.5, 9);
        for k in 0..8 {
            assert_abs_diff_eq!(bf.subcarrier_power(k), 2.5, epsilon = 1e-12);
        }
        let (bf2, flag) = power_normalize(bf.clone());
        assert!(!flag);
        for k in 0..8 {
            assert_abs_diff_eq!(bf2.subcarrier_power(k), 2.5, epsilon = 1e-12);
            for (a, b) in bf.digital[k].iter().zip(bf2.digital[k].iter()) {
                assert!((a - b).norm() < 1e-12);
            }
        }
        // zero digital: unchanged, flagged
        let zero = HybridBeamformer {
            analog: bf.analog.clone(),
            digital: vec![Array2::zeros((2, 2)); 8],
            total_power: 1.0,
        };
        let (z2, flag) = power_normalize(zero);
        assert!(flag);
        assert!(z2.digital.iter().all(|w| w.iter().all(|z| z.norm() == 0.0)));
    }

    #[test]
    fn ase_single_ue_closed_form() {
        // h with all-ones entries (‖h‖² = M), perfectly matched beam, P = 1
        let (m, n_c) = (32, 4);
        let ch = CommChannel {
            h: Array3::from_elem((1, n_c, m), Complex64::new(1.0, 0.0)),
            freq_offsets_hz: vec![0.0; n_c],
        };
        let scale = 1.0 / (m as f64).sqrt();
        let analog = Array2::from_elem((m, 1), Complex64::new(scale, 0.0));
        let digital = vec![Array2::from_elem((1, 1), Complex64::new(1.0, 0.0)); n_c];
        let bf = HybridBeamformer {
            analog,
            digital,
            total_power: 1.0,
        };
        for noise_var in [0.1, 1.0, 4.0] {
            let got = ase(&ch, &bf, noise_var).unwrap();
            let expect = (1.0 + m as f64 / noise_var).log2();
            assert_abs_diff_eq!(got, expect, epsilon = 1e-9);
        }
    }

    #[test]
    fn ase_zero_power_is_zero() {
        let ch = random_channel(2, 4, 8, 10);
        let bf = HybridBeamformer {
            analog: Array2::from_elem((8, 2), Complex64::new(1.0 / 8f64.sqrt(), 0.0)),
            digital: vec![Array2::zeros((2, 2)); 4],
            total_power: 1.0,
        };
        assert_abs_diff_eq!(ase(&ch, &bf, 0.5).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn ase_invariant_to_simultaneous_permutation() {
        let ch = random_channel(2, 6, 16, 11);
        let bf = random_bf(16, 2, 2, 6, 1.0, 12);
        let base = ase(&ch, &bf, 0.3).unwrap();
        // swap the two analog columns and the two digital rows
        let mut analog = bf.analog.clone();
        for i in 0..16 {
            let tmp = analog[(i, 0)];
            analog[(i, 0)] = analog[(i, 1)];
            analog[(i, 1)] = tmp;
        }
        let digital = bf
            .digital
            .iter()
            .map(|w| {
                let mut p = w.clone();
                for u in 0..2 {
                    let tmp = p[(0, u)];
                    p[(0, u)] = p[(1, u)];
                    p[(1, u)] = tmp;
                }
                p
            })
            .collect();
        let permuted = HybridBeamformer {
            analog,
            digital,
            total_power: 1.0,
        };
        let perm = ase(&ch, &permuted, 0.3).unwrap();
        assert!(
            (base - perm).abs() <= 1e-9 * base.abs(),
            "{base} vs {perm}"
        );
    }

    #[test]
    fn ase_monotone_in_noise() {
        let ch = random_channel(2, 4, 8, 13);
        let bf = random_bf(8, 2, 2, 4, 1.0, 14);
        let mut prev = f64::INFINITY;
        for noise_var in [0.01, 0.1, 1.0, 10.0] {
            let v = ase(&ch, &bf, noise_var).unwrap();
            assert!(v <= prev + 1e-12);
            prev = v;
        }
    }

    #[test]
    fn hybrid_egt_rzf_meets_power_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let ch_est = Array3::from_shape_fn((2, 6, 16), |_| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let bf = hybrid_egt_rzf(&ch_est, 2, 0.1, 1.0).unwrap();
        for k in 0..6 {
            assert_abs_diff_eq!(bf.subcarrier_power(k), 1.0, epsilon = 1e-12);
        }
        assert!(bf.max_analog_modulus_error() < 1e-12);
    }
}
