//! Classical reconstruction benchmarks: on-grid sparse recovery with
//! GMMV-SOMP (greedy atom selection under a support shared across all
//! subcarriers, with per-subcarrier sensing matrices) and MUSIC angle
//! estimation on the reconstructed channel.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use num_complex::Complex64;

use crate::channel::steering_vector;
use crate::error::{Error, Result};
use crate::frame::PilotTensor;

/// Diagonal loading applied to the MUSIC sample covariance.
const COV_LOADING: f64 = 1e-10;

/// Steering-vector dictionary over an angle grid.
#[derive(Debug, Clone)]
pub struct AngleDictionary {
    pub grid_deg: Vec<f64>,
    /// Shape (n_antennas, grid size); column g is `steering_vector(grid_deg[g])`.
    pub atoms: Array2<Complex64>,
}

impl AngleDictionary {
    fn from_grid(grid_deg: Vec<f64>, m: usize) -> Result<Self> {
        let mut atoms = Array2::<Complex64>::zeros((m, grid_deg.len()));
        for (g, &theta) in grid_deg.iter().enumerate() {
            let v = steering_vector(theta, m)?;
            for i in 0..m {
                atoms[(i, g)] = v[i];
            }
        }
        Ok(AngleDictionary { grid_deg, atoms })
    }

    /// Grid uniform in the sine domain: `θ_g = arcsin(-1 + 2g/G)`.
    /// With `G = m` the atoms form an orthonormal (DFT-like) basis.
    pub fn sine_uniform(grid_size: usize, m: usize) -> Result<Self> {
        if grid_size == 0 {
            return Err(Error::Domain("grid size must be >= 1".into()));
        }
        let grid: Vec<f64> = (0..grid_size)
            .map(|g| (-1.0 + 2.0 * g as f64 / grid_size as f64).asin().to_degrees())
            .collect();
        Self::from_grid(grid, m)
    }

    /// Grid uniform in degrees over [min, max) — the MUSIC evaluation grid.
    pub fn degree_uniform(min_deg: f64, max_deg: f64, step_deg: f64, m: usize) -> Result<Self> {
        if step_deg <= 0.0 || min_deg >= max_deg {
            return Err(Error::Domain("need min < max and positive step".into()));
        }
        let n = ((max_deg - min_deg) / step_deg).floor() as usize;
        let grid: Vec<f64> = (0..n).map(|i| min_deg + i as f64 * step_deg).collect();
        Self::from_grid(grid, m)
    }

    pub fn size(&self) -> usize {
        self.grid_deg.len()
    }

    pub fn n_antennas(&self) -> usize {
        self.atoms.shape()[0]
    }
}

/// Result of a GMMV-SOMP run.
#[derive(Debug, Clone)]
pub struct SparseEstimate {
    /// Selected grid indices in selection order.
    pub support: Vec<usize>,
    /// Shape (|support|, n_subcarriers).
    pub coeffs: Array2<Complex64>,
    /// Shape (n_subcarriers, n_antennas): `Σ_g coeffs[g,k]·atom_g` per row.
    pub reconstructed: Array2<Complex64>,
    /// Set when any per-subcarrier least squares was rank deficient and a
    /// truncated pseudo-inverse was used instead.
    pub rank_deficient: bool,
    /// Final relative residual energy `Σ_k‖r_k‖² / Σ_k‖y_k‖²`.
    pub rel_residual: f64,
}

/// Greedy sparse recovery with a common support across subcarriers.
///
/// Per subcarrier the sensing matrix is `Φ_k = X_k·A`, where `X_k` stacks
/// the pilot vectors and `A` holds the dictionary atoms. Each iteration
/// selects the grid index maximizing `Σ_k |Φ_k[:,g]ᴴ r_k|² / ‖Φ_k[:,g]‖²`,
/// re-solves least squares on the support per subcarrier, and updates the
/// residuals; it stops at `n_iter` atoms or when the relative residual
/// energy drops below `res_tol`.
pub fn gmmv_somp(
    obs: &Array2<Complex64>,
    pilots: &PilotTensor,
    dict: &AngleDictionary,
    n_iter: usize,
    res_tol: f64,
) -> Result<SparseEstimate> {
    let (n_sym, n_c) = (obs.shape()[0], obs.shape()[1]);
    let (p_sym, p_nc, p_m) = {
        let s = pilots.x.shape();
        (s[0], s[1], s[2])
    };
    if (n_sym, n_c) != (p_sym, p_nc) {
        return Err(Error::Shape(format!(
            "observations ({n_sym}, {n_c}) vs pilots ({p_sym}, {p_nc})"
        )));
    }
    if dict.n_antennas() != p_m {
        return Err(Error::Shape(format!(
            "dictionary antennas {} vs pilots {}",
            dict.n_antennas(),
            p_m
        )));
    }
    if n_iter > n_sym * n_c {
        return Err(Error::Domain(format!(
            "n_iter {n_iter} exceeds measurement count {}",
            n_sym * n_c
        )));
    }
    let g_cnt = dict.size();

    // per-subcarrier sensing matrices Φ_k (n_sym x G)
    let mut phi: Vec<DMatrix<Complex64>> = Vec::with_capacity(n_c);
    for k in 0..n_c {
        let mut p = DMatrix::<Complex64>::zeros(n_sym, g_cnt);
        for s in 0..n_sym {
            for g in 0..g_cnt {
                let mut acc = Complex64::new(0.0, 0.0);
                for i in 0..p_m {
                    acc += pilots.x[(s, k, i)] * dict.atoms[(i, g)];
                }
                p[(s, g)] = acc;
            }
        }
        phi.push(p);
    }
    let col_energy: Vec<Vec<f64>> = phi
        .iter()
        .map(|p| (0..g_cnt).map(|g| p.column(g).norm_squared()).collect())
        .collect();

    let y: Vec<DVector<Complex64>> = (0..n_c)
        .map(|k| DVector::from_iterator(n_sym, (0..n_sym).map(|s| obs[(s, k)])))
        .collect();
    let total_energy: f64 = y.iter().map(|v| v.norm_squared()).sum();

    let mut residual: Vec<DVector<Complex64>> = y.clone();
    let mut support: Vec<usize> = Vec::new();
    let mut coeffs = Array2::<Complex64>::zeros((0, n_c));
    let mut rank_deficient = false;
    let mut rel_res = 1.0;

    if total_energy == 0.0 {
        // all-zero observations: tolerance stop before the first selection
        return Ok(SparseEstimate {
            support,
            coeffs,
            reconstructed: Array2::zeros((n_c, p_m)),
            rank_deficient,
            rel_residual: 0.0,
        });
    }

    for _ in 0..n_iter {
        if rel_res < res_tol {
            break;
        }
        // atom scoring
        let mut best = (0usize, f64::NEG_INFINITY);
        for g in 0..g_cnt {
            if support.contains(&g) {
                continue;
            }
            let mut score = 0.0;
            for k in 0..n_c {
                let e = col_energy[k][g];
                if e <= f64::MIN_POSITIVE {
                    continue;
                }
                let corr = phi[k].column(g).dotc(&residual[k]);
                score += corr.norm_sqr() / e;
            }
            if score > best.1 {
                best = (g, score);
            }
        }
        support.push(best.0);
        let s_len = support.len();

        // per-subcarrier least squares on the support
        coeffs = Array2::<Complex64>::zeros((s_len, n_c));
        let mut res_energy = 0.0;
        for k in 0..n_c {
            let mut sub = DMatrix::<Complex64>::zeros(n_sym, s_len);
            for (j, &g) in support.iter().enumerate() {
                sub.set_column(j, &phi[k].column(g).into_owned());
            }
            let svd = sub.clone().svd(true, true);
            let smax = svd.singular_values.max();
            let eps = 1e-10 * smax.max(f64::MIN_POSITIVE);
            if svd.singular_values.iter().any(|&s| s < eps) {
                rank_deficient = true;
            }
            let c = svd
                .solve(&y[k], eps)
                .map_err(|e| Error::Domain(format!("SVD solve failed: {e}")))?;
            for j in 0..s_len {
                coeffs[(j, k)] = c[j];
            }
            let r = &y[k] - &sub * &c;
            res_energy += r.norm_squared();
            residual[k] = r;
        }
        rel_res = res_energy / total_energy;
    }

    // reconstruction h[k] = Σ_g coeffs[g,k] · atom_g
    let mut reconstructed = Array2::<Complex64>::zeros((n_c, p_m));
    for k in 0..n_c {
        for (j, &g) in support.iter().enumerate() {
            let c = coeffs[(j, k)];
            for i in 0..p_m {
                reconstructed[(k, i)] += c * dict.atoms[(i, g)];
            }
        }
    }
    Ok(SparseEstimate {
        support,
        coeffs,
        reconstructed,
        rank_deficient,
        rel_residual: rel_res,
    })
}

/// MUSIC pseudospectrum over the dictionary grid.
#[derive(Debug, Clone)]
pub struct MusicSpectrum {
    pub grid_deg: Vec<f64>,
    pub values: Vec<f64>,
}

impl MusicSpectrum {
    pub fn values_db(&self) -> Vec<f64> {
        self.values.iter().map(|&v| 10.0 * v.log10()).collect()
    }
}

/// MUSIC: sample covariance over subcarriers, eigendecomposition, and the
/// pseudospectrum `P(θ) = 1 / (a(θ)ᴴ E_n E_nᴴ a(θ))` from the noise
/// subspace spanned by the `M - n_sources` weakest eigenvectors.
pub fn music_spectrum(
    recon: &Array2<Complex64>,
    grid: &AngleDictionary,
    n_sources: usize,
) -> Result<MusicSpectrum> {
    let (n_c, m) = (recon.shape()[0], recon.shape()[1]);
    if n_sources >= m {
        return Err(Error::Domain(format!(
            "n_sources {n_sources} must be < array size {m}"
        )));
    }
    if grid.n_antennas() != m {
        return Err(Error::Shape(format!(
            "grid antennas {} vs channel {}",
            grid.n_antennas(),
            m
        )));
    }
    // R = (1/N_c) Σ_k h[k] h[k]^H + loading·I
    let mut r = DMatrix::<Complex64>::zeros(m, m);
    for k in 0..n_c {
        for i in 0..m {
            for j in 0..m {
                r[(i, j)] += recon[(k, i)] * recon[(k, j)].conj();
            }
        }
    }
    r /= Complex64::new(n_c as f64, 0.0);
    for i in 0..m {
        r[(i, i)] += Complex64::new(COV_LOADING, 0.0);
    }

    let eig = r.symmetric_eigen();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    // noise subspace E_n: the m - n_sources weakest eigenvectors
    let n_noise = m - n_sources;
    let mut e_n = DMatrix::<Complex64>::zeros(m, n_noise);
    for (col, &idx) in order.iter().take(n_noise).enumerate() {
        e_n.set_column(col, &eig.eigenvectors.column(idx).into_owned());
    }

    let values: Vec<f64> = (0..grid.size())
        .map(|g| {
            // ||E_n^H a||^2
            let mut denom = 0.0;
            for c in 0..n_noise {
                let mut acc = Complex64::new(0.0, 0.0);
                for i in 0..m {
                    acc += e_n[(i, c)].conj() * grid.atoms[(i, g)];
                }
                denom += acc.norm_sqr();
            }
            1.0 / denom.max(f64::MIN_POSITIVE)
        })
        .collect();

    Ok(MusicSpectrum {
        grid_deg: grid.grid_deg.clone(),
        values,
    })
}

/// Peak-picking result; `shortfall` is set when fewer local maxima exist
/// than were requested.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakPicks {
    /// Picked peak angles, sorted ascending.
    pub angles_deg: Vec<f64>,
    pub shortfall: bool,
}

/// The `n_peaks` largest strict local maxima of the spectrum; endpoints
/// count when they dominate their single neighbor.
pub fn pick_peaks(spectrum: &[f64], grid_deg: &[f64], n_peaks: usize) -> Result<PeakPicks> {
    if n_peaks == 0 {
        return Err(Error::Domain("n_peaks must be >= 1".into()));
    }
    if spectrum.len() != grid_deg.len() {
        return Err(Error::Shape("spectrum/grid length mismatch".into()));
    }
    let n = spectrum.len();
    let mut maxima: Vec<(f64, f64)> = Vec::new(); // (value, angle)
    for i in 0..n {
        let left_ok = i == 0 || spectrum[i] > spectrum[i - 1];
        let right_ok = i + 1 == n || spectrum[i] > spectrum[i + 1];
        if left_ok && right_ok {
            maxima.push((spectrum[i], grid_deg[i]));
        }
    }
    maxima.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    let shortfall = maxima.len() < n_peaks;
    let mut angles: Vec<f64> = maxima.into_iter().take(n_peaks).map(|(_, a)| a).collect();
    angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(PeakPicks {
        angles_deg: angles,
        shortfall,
    })
}
