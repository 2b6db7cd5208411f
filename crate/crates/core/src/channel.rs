//! Geometric scenes and the induced frequency-selective channels.
//!
//! One scene drives both links: every communication scatterer is also a
//! sensing target, while each UE additionally has a line-of-sight path the
//! sensing channel never sees. The BS transmit array responds through
//! half-wavelength ULA steering vectors; the single sensing antenna makes the
//! echo path a scalar per subcarrier.

use ndarray::{Array1, Array2, Array3};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Half-wavelength ULA steering vector: entry `i` is `(1/√m)·exp(jπ·i·sinθ)`.
///
/// The angle must lie in the half-open interval [-90°, 90°).
pub fn steering_vector(theta_deg: f64, m: usize) -> Result<Array1<Complex64>> {
    if !(-90.0..90.0).contains(&theta_deg) {
        return Err(Error::Domain(format!(
            "steering angle {theta_deg}° outside [-90, 90)"
        )));
    }
    if m == 0 {
        return Err(Error::Domain("array size must be >= 1".into()));
    }
    let s = theta_deg.to_radians().sin();
    let scale = 1.0 / (m as f64).sqrt();
    Ok(Array1::from_iter((0..m).map(|i| {
        let phase = std::f64::consts::PI * i as f64 * s;
        Complex64::from_polar(scale, phase)
    })))
}

/// Baseband subcarrier frequency offsets, symmetric around DC:
/// `f_k = (k - N_c/2) · (bandwidth / N_c)`.
pub fn subcarrier_offsets_hz(cfg: &ScenarioConfig) -> Vec<f64> {
    let n = cfg.n_subcarriers;
    let spacing = cfg.bandwidth_hz / n as f64;
    (0..n)
        .map(|k| (k as f64 - n as f64 / 2.0) * spacing)
        .collect()
}

/// A point scatterer acting as sensing target and comm-channel reflector.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub angle_deg: f64,
    pub range_m: f64,
    pub sensing_gain: Complex64,
}

/// Line-of-sight path from the BS to one UE.
#[derive(Debug, Clone, PartialEq)]
pub struct LosPath {
    pub angle_deg: f64,
    pub range_m: f64,
    pub gain: Complex64,
}

/// One reflected comm path: BS → target → UE.
#[derive(Debug, Clone, PartialEq)]
pub struct ScattererPath {
    /// Index into `Scene::targets`.
    pub target_index: usize,
    /// Total BS→scatterer→UE propagation delay in seconds.
    pub comm_delay_s: f64,
    pub comm_gain: Complex64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UeGeometry {
    pub los: LosPath,
    pub scatterer_paths: Vec<ScattererPath>,
}

/// Ground-truth geometry shared by the communication and sensing channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub targets: Vec<Target>,
    pub ue_geometries: Vec<UeGeometry>,
}

impl Scene {
    /// Target angles sorted ascending (the sensing ground truth).
    pub fn target_angles_sorted(&self) -> Vec<f64> {
        let mut a: Vec<f64> = self.targets.iter().map(|t| t.angle_deg).collect();
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        a
    }
}

/// Downlink communication channel: per UE, per subcarrier, a length-M vector.
#[derive(Debug, Clone)]
pub struct CommChannel {
    /// Shape (n_ues, n_subcarriers, n_antennas).
    pub h: Array3<Complex64>,
    /// Baseband subcarrier offsets in Hz.
    pub freq_offsets_hz: Vec<f64>,
}

/// Transmit-side sensing channel seen by the single sensing antenna.
#[derive(Debug, Clone)]
pub struct SensChannel {
    /// Shape (n_subcarriers, n_antennas).
    pub h_s: Array2<Complex64>,
    /// Evaluation-only ground truth, sorted ascending.
    pub true_angles_deg: Vec<f64>,
}

fn complex_gaussian(rng: &mut ChaCha8Rng, variance: f64) -> Complex64 {
    let n = Normal::new(0.0, (variance / 2.0).sqrt()).expect("valid std");
    Complex64::new(n.sample(rng), n.sample(rng))
}

fn sample_angle(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    rng.random_range(range.0..range.1)
}

/// Draw a scene: target angles uniform over the configured range with a
/// minimum pairwise separation (resampled), ranges uniform on (0, radius],
/// UEs uniform over the coverage disk, and targets dealt round-robin to UEs
/// as their scatterers. Identical (cfg, seed) yields an identical scene.
pub fn sample_scene(cfg: &ScenarioConfig, seed: u64) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = cfg.n_antennas as f64;

    // Targets with minimum angular separation.
    let mut angles: Vec<f64> = Vec::with_capacity(cfg.n_targets);
    for _ in 0..cfg.n_targets {
        let mut attempts = 0;
        let a = loop {
            let cand = sample_angle(&mut rng, cfg.angle_range_deg);
            if angles
                .iter()
                .all(|&b| (cand - b).abs() >= cfg.min_target_sep_deg)
            {
                break cand;
            }
            attempts += 1;
            if attempts > 100_000 {
                return Err(Error::Config(format!(
                    "cannot place {} targets with {}° separation in [{}, {})",
                    cfg.n_targets,
                    cfg.min_target_sep_deg,
                    cfg.angle_range_deg.0,
                    cfg.angle_range_deg.1
                )));
            }
        };
        angles.push(a);
    }

    let sens_var = if cfg.n_targets > 0 {
        m / cfg.n_targets as f64
    } else {
        0.0
    };
    let targets: Vec<Target> = angles
        .iter()
        .map(|&angle_deg| {
            let range_m = cfg.coverage_radius_m * (1.0 - rng.random::<f64>());
            let sensing_gain = complex_gaussian(&mut rng, sens_var);
            Target {
                angle_deg,
                range_m,
                sensing_gain,
            }
        })
        .collect();

    // Round-robin target assignment: as even as possible.
    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); cfg.n_ues];
    for t in 0..cfg.n_targets {
        assigned[t % cfg.n_ues].push(t);
    }

    let mut ue_geometries = Vec::with_capacity(cfg.n_ues);
    for ue_targets in assigned.into_iter() {
        // UE position uniform on the coverage disk.
        let ue_angle = loop {
            let cand = sample_angle(&mut rng, cfg.angle_range_deg);
            if targets.iter().all(|t| (t.angle_deg - cand).abs() > 1e-6) {
                break cand;
            }
        };
        let ue_range = cfg.coverage_radius_m * rng.random::<f64>().sqrt().max(1e-9);
        let (ue_x, ue_y) = polar_to_xy(ue_angle, ue_range);

        let n_paths = (1 + ue_targets.len()) as f64;
        let path_var = m / n_paths;

        let los = LosPath {
            angle_deg: ue_angle,
            range_m: ue_range,
            gain: complex_gaussian(&mut rng, path_var),
        };
        let scatterer_paths = ue_targets
            .into_iter()
            .map(|ti| {
                let t = &targets[ti];
                let (sx, sy) = polar_to_xy(t.angle_deg, t.range_m);
                let bounce = ((sx - ue_x).powi(2) + (sy - ue_y).powi(2)).sqrt();
                ScattererPath {
                    target_index: ti,
                    comm_delay_s: (t.range_m + bounce) / SPEED_OF_LIGHT,
                    comm_gain: complex_gaussian(&mut rng, path_var),
                }
            })
            .collect();
        ue_geometries.push(UeGeometry {
            los,
            scatterer_paths,
        });
    }

    Ok(Scene {
        targets,
        ue_geometries,
    })
}

fn polar_to_xy(angle_deg: f64, range_m: f64) -> (f64, f64) {
    let a = angle_deg.to_radians();
    // broadside along +x; angle measured toward +y
    (range_m * a.cos(), range_m * a.sin())
}

/// Multipath downlink channel:
/// `h_u[k] = Σ_p gain_p · exp(-j2π f_k τ_p) · a(θ_p)` over the UE's LoS path
/// and its scatterer paths.
pub fn comm_channel(scene: &Scene, cfg: &ScenarioConfig) -> Result<CommChannel> {
    if scene.ue_geometries.len() != cfg.n_ues {
        return Err(Error::Shape(format!(
            "scene has {} UEs, config says {}",
            scene.ue_geometries.len(),
            cfg.n_ues
        )));
    }
    let freqs = subcarrier_offsets_hz(cfg);
    let (n_c, m) = (cfg.n_subcarriers, cfg.n_antennas);
    let mut h = Array3::<Complex64>::zeros((cfg.n_ues, n_c, m));

    for (u, geo) in scene.ue_geometries.iter().enumerate() {
        let mut paths: Vec<(f64, f64, Complex64)> =
            Vec::with_capacity(1 + geo.scatterer_paths.len());
        paths.push((
            geo.los.angle_deg,
            geo.los.range_m / SPEED_OF_LIGHT,
            geo.los.gain,
        ));
        for sp in &geo.scatterer_paths {
            let t = scene.targets.get(sp.target_index).ok_or_else(|| {
                Error::Shape(format!(
                    "scatterer path references target {}",
                    sp.target_index
                ))
            })?;
            paths.push((t.angle_deg, sp.comm_delay_s, sp.comm_gain));
        }
        for (angle_deg, delay_s, gain) in paths {
            let steer = steering_vector(angle_deg, m)?;
            for (k, &f_k) in freqs.iter().enumerate() {
                let ramp =
                    Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * f_k * delay_s);
                let w = gain * ramp;
                for i in 0..m {
                    h[(u, k, i)] += w * steer[i];
                }
            }
        }
    }
    Ok(CommChannel {
        h,
        freq_offsets_hz: freqs,
    })
}

/// Monostatic sensing channel (AoD = AoA):
/// `h_s[k] = Σ_t gain_t · exp(-j2π f_k · 2r_t/c) · a(θ_t)`.
/// UE line-of-sight paths contribute nothing.
pub fn sens_channel(scene: &Scene, cfg: &ScenarioConfig) -> Result<SensChannel> {
    let freqs = subcarrier_offsets_hz(cfg);
    let (n_c, m) = (cfg.n_subcarriers, cfg.n_antennas);
    let mut h_s = Array2::<Complex64>::zeros((n_c, m));
    for t in &scene.targets {
        let steer = steering_vector(t.angle_deg, m)?;
        let delay_s = 2.0 * t.range_m / SPEED_OF_LIGHT;
        for (k, &f_k) in freqs.iter().enumerate() {
            let w = t.sensing_gain
                * Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * f_k * delay_s);
            for i in 0..m {
                h_s[(k, i)] += w * steer[i];
            }
        }
    }
    Ok(SensChannel {
        h_s,
        true_angles_deg: scene.target_angles_sorted(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Axis;

    fn table1() -> ScenarioConfig {
        ScenarioConfig::table1()
    }

    #[test]
    fn steering_broadside_is_uniform() {
        let v = steering_vector(0.0, 4).unwrap();
        for e in v.iter() {
            assert_abs_diff_eq!(e.re, 0.5, epsilon = 1e-15);
            assert_abs_diff_eq!(e.im, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn steering_endfire_limit() {
        // sin θ → 1 as θ → 90°, so the m=2 vector tends to (1, -1)/√2.
        let v = steering_vector(90.0 - 1e-9, 2).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert_abs_diff_eq!(v[0].re, s, epsilon = 1e-12);
        assert_abs_diff_eq!(v[1].re, -s, epsilon = 1e-6);
        assert_abs_diff_eq!(v[1].im, 0.0, epsilon = 1e-6);
    }

    #[test]
    fn steering_inner_product_matches_elementwise_sum_oracle() {
        let m = 32;
        let a = steering_vector(30.0, m).unwrap();
        let b = steering_vector(-30.0, m).unwrap();
        assert_abs_diff_eq!(
            a.iter().map(|z| z.norm_sqr()).sum::<f64>(),
            1.0,
            epsilon = 1e-12
        );

        // independent oracle: <a(30), a(-30)> = (1/m) Σ_i exp(jπ i Δ) with
        // Δ = sin(-30°) - sin(30°), evaluated as an explicit partial sum.
        let delta = (-30f64).to_radians().sin() - 30f64.to_radians().sin();
        let mut oracle = Complex64::new(0.0, 0.0);
        for i in 0..m {
            oracle +=
                Complex64::from_polar(1.0 / m as f64, std::f64::consts::PI * i as f64 * delta);
        }
        let ip: Complex64 = a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum();
        assert_abs_diff_eq!(ip.re, oracle.re, epsilon = 1e-12);
        assert_abs_diff_eq!(ip.im, oracle.im, epsilon = 1e-12);
    }

    #[test]
    fn steering_rejects_out_of_range() {
        assert!(steering_vector(90.0, 4).is_err());
        assert!(steering_vector(-90.1, 4).is_err());
        assert!(steering_vector(45.0, 4).is_ok());
    }

    #[test]
    fn scene_counts_match_table1() {
        let cfg = table1();
        let scene = sample_scene(&cfg, 1).unwrap();
        assert_eq!(scene.targets.len(), 6);
        assert_eq!(scene.ue_geometries.len(), 2);
        for geo in &scene.ue_geometries {
            assert_eq!(geo.scatterer_paths.len(), 3);
        }
    }

    #[test]
    fn scene_zero_targets() {
        let mut cfg = table1();
        cfg.n_targets = 0;
        let scene = sample_scene(&cfg, 3).unwrap();
        assert!(scene.targets.is_empty());
        for geo in &scene.ue_geometries {
            assert!(geo.scatterer_paths.is_empty());
        }
        let sch = sens_channel(&scene, &cfg).unwrap();
        assert!(sch.h_s.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn scene_deterministic() {
        let cfg = table1();
        let a = sample_scene(&cfg, 7).unwrap();
        let b = sample_scene(&cfg, 7).unwrap();
        assert_eq!(a, b);
        let c = sample_scene(&cfg, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn scene_respects_geometry_invariants() {
        let cfg = table1();
        for seed in 0..20 {
            let scene = sample_scene(&cfg, seed).unwrap();
            for t in &scene.targets {
                assert!((-90.0..90.0).contains(&t.angle_deg));
                assert!(t.range_m > 0.0 && t.range_m <= cfg.coverage_radius_m);
            }
            for (i, a) in scene.targets.iter().enumerate() {
                for b in scene.targets.iter().skip(i + 1) {
                    assert!((a.angle_deg - b.angle_deg).abs() >= cfg.min_target_sep_deg);
                }
            }
            // sensing directions = union of scatterer angles, excluding LoS
            let mut scatterer_angles: Vec<f64> = Vec::new();
            for geo in &scene.ue_geometries {
                assert!(
                    scene
                        .targets
                        .iter()
                        .all(|t| t.angle_deg != geo.los.angle_deg),
                    "LoS angle must not be a target angle"
                );
                for sp in &geo.scatterer_paths {
                    assert!(sp.target_index < scene.targets.len());
                    scatterer_angles.push(scene.targets[sp.target_index].angle_deg);
                }
            }
            scatterer_angles.sort_by(|x, y| x.partial_cmp(y).unwrap());
            assert_eq!(scatterer_angles, scene.target_angles_sorted());
        }
    }

    /// Build a one-UE scene by hand for closed-form channel checks.
    fn manual_scene(targets: Vec<Target>, los: LosPath, paths: Vec<ScattererPath>) -> Scene {
        Scene {
            targets,
            ue_geometries: vec![UeGeometry {
                los,
                scatterer_paths: paths,
            }],
        }
    }

    fn one_ue_cfg() -> ScenarioConfig {
        let mut cfg = table1();
        cfg.n_ues = 1;
        cfg.n_rf_chains = 1;
        cfg
    }

    #[test]
    fn comm_single_los_zero_delay_is_steering() {
        let cfg = one_ue_cfg();
        let scene = manual_scene(
            vec![],
            LosPath {
                angle_deg: 12.0,
                range_m: 0.0,
                gain: Complex64::new(1.0, 0.0),
            },
            vec![],
        );
        let ch = comm_channel(&scene, &cfg).unwrap();
        let steer = steering_vector(12.0, cfg.n_antennas).unwrap();
        for k in 0..cfg.n_subcarriers {
            for i in 0..cfg.n_antennas {
                let z = ch.h[(0, k, i)] - steer[i];
                assert!(z.norm() < 1e-14);
            }
        }
    }

    #[test]
    fn comm_single_path_phase_ramp_matches_direct_evaluation() {
        let cfg = one_ue_cfg();
        let tau = 120e-9;
        let scene = manual_scene(
            vec![],
            LosPath {
                angle_deg: -35.0,
                range_m: tau * SPEED_OF_LIGHT,
                gain: Complex64::new(0.4, -0.8),
            },
            vec![],
        );
        let ch = comm_channel(&scene, &cfg).unwrap();
        let freqs = subcarrier_offsets_hz(&cfg);
        for k in 0..cfg.n_subcarriers {
            let expected = Complex64::from_polar(
                1.0,
                -2.0 * std::f64::consts::PI * (freqs[k] - freqs[0]) * tau,
            );
            for i in 0..cfg.n_antennas {
                let ratio = ch.h[(0, k, i)] / ch.h[(0, 0, i)];
                assert!((ratio - expected).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn comm_two_paths_superpose() {
        let cfg = one_ue_cfg();
        let target = Target {
            angle_deg: 41.0,
            range_m: 60.0,
            sensing_gain: Complex64::new(0.0, 0.0),
        };
        let los = LosPath {
            angle_deg: -10.0,
            range_m: 30.0,
            gain: Complex64::new(0.7, 0.2),
        };
        let sp = ScattererPath {
            target_index: 0,
            comm_delay_s: 300e-9,
            comm_gain: Complex64::new(-0.3, 0.5),
        };

        let combined = comm_channel(
            &manual_scene(vec![target.clone()], los.clone(), vec![sp.clone()]),
            &cfg,
        )
        .unwrap();
        let los_only = comm_channel(&manual_scene(vec![], los.clone(), vec![]), &cfg).unwrap();
        let mut silent_los = los;
        silent_los.gain = Complex64::new(0.0, 0.0);
        let scat_only =
            comm_channel(&manual_scene(vec![target], silent_los, vec![sp]), &cfg).unwrap();

        for ((a, b), c) in combined
            .h
            .iter()
            .zip(los_only.h.iter())
            .zip(scat_only.h.iter())
        {
            assert!((a - (b + c)).norm() < 1e-12);
        }
    }

    #[test]
    fn sens_single_target_closed_form() {
        let cfg = table1();
        let t = Target {
            angle_deg: 25.0,
            range_m: 80.0,
            sensing_gain: Complex64::new(0.6, -1.1),
        };
        let scene = Scene {
            targets: vec![t.clone()],
            ue_geometries: (0..cfg.n_ues)
                .map(|_| UeGeometry {
                    los: LosPath {
                        angle_deg: 0.0,
                        range_m: 10.0,
                        gain: Complex64::new(1.0, 0.0),
                    },
                    scatterer_paths: vec![],
                })
                .collect(),
        };
        let sch = sens_channel(&scene, &cfg).unwrap();
        let freqs = subcarrier_offsets_hz(&cfg);
        let steer = steering_vector(25.0, cfg.n_antennas).unwrap();
        let tau = 2.0 * 80.0 / SPEED_OF_LIGHT;
        for k in 0..cfg.n_subcarriers {
            let w = t.sensing_gain
                * Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * freqs[k] * tau);
            for i in 0..cfg.n_antennas {
                assert!((sch.h_s[(k, i)] - w * steer[i]).norm() < 1e-12);
            }
        }
        assert_eq!(sch.true_angles_deg, vec![25.0]);
    }

    #[test]
    fn sens_rank_equals_target_count() {
        let cfg = table1();
        let scene = sample_scene(&cfg, 42).unwrap();
        let sch = sens_channel(&scene, &cfg).unwrap();
        // stack h_s[k] as columns of an M x N_c matrix and count singular values
        let m = cfg.n_antennas;
        let n_c = cfg.n_subcarriers;
        let mut mat = nalgebra::DMatrix::<Complex64>::zeros(m, n_c);
        for k in 0..n_c {
            for i in 0..m {
                mat[(i, k)] = sch.h_s[(k, i)];
            }
        }
        let svd = mat.svd(false, false);
        let smax = svd.singular_values.max();
        let rank = svd
            .singular_values
            .iter()
            .filter(|&&s| s > 1e-8 * smax)
            .count();
        assert_eq!(rank, 6);
    }

    #[test]
    fn sens_columns_lie_in_target_steering_span() {
        let cfg = table1();
        let scene = sample_scene(&cfg, 5).unwrap();
        let sch = sens_channel(&scene, &cfg).unwrap();
        let m = cfg.n_antennas;
        // basis matrix A (m x T)
        let t_cnt = scene.targets.len();
        let mut a = nalgebra::DMatrix::<Complex64>::zeros(m, t_cnt);
        for (j, t) in scene.targets.iter().enumerate() {
            let s = steering_vector(t.angle_deg, m).unwrap();
            for i in 0..m {
                a[(i, j)] = s[i];
            }
        }
        // least-squares projection residual per subcarrier
        let svd = a.clone().svd(true, true);
        for row in sch.h_s.axis_iter(Axis(0)) {
            let y = nalgebra::DVector::<Complex64>::from_iterator(m, row.iter().cloned());
            let coeff = svd.solve(&y, 1e-12).unwrap();
            let resid = (&y - &a * coeff).norm();
            assert!(resid < 1e-8 * y.norm().max(1e-12), "residual {resid}");
        }
    }

    #[test]
    fn channels_linear_in_gains() {
        let cfg = table1();
        let scene = sample_scene(&cfg, 11).unwrap();
        let mut scaled = scene.clone();
        let alpha = Complex64::new(0.3, -1.7);
        for t in &mut scaled.targets {
            t.sensing_gain *= alpha;
        }
        for geo in &mut scaled.ue_geometries {
            geo.los.gain *= alpha;
            for sp in &mut geo.scatterer_paths {
                sp.comm_gain *= alpha;
            }
        }
        let (c0, c1) = (
            comm_channel(&scene, &cfg).unwrap(),
            comm_channel(&scaled, &cfg).unwrap(),
        );
        for (a, b) in c0.h.iter().zip(c1.h.iter()) {
            assert!((a * alpha - b).norm() < 1e-10);
        }
        let (s0, s1) = (
            sens_channel(&scene, &cfg).unwrap(),
            sens_channel(&scaled, &cfg).unwrap(),
        );
        for (a, b) in s0.h_s.iter().zip(s1.h_s.iter()) {
            assert!((a * alpha - b).norm() < 1e-10);
        }
    }

    #[test]
    fn comm_power_normalization_statistics() {
        // E ||h_u[k]||^2 = M with equal per-path power
        let cfg = table1();
        let mut acc = 0.0;
        let trials = 400;
        for seed in 0..trials {
            let scene = sample_scene(&cfg, 10_000 + seed).unwrap();
            let ch = comm_channel(&scene, &cfg).unwrap();
            let k = 0;
            for u in 0..cfg.n_ues {
                let p: f64 = (0..cfg.n_antennas)
                    .map(|i| ch.h[(u, k, i)].norm_sqr())
                    .sum();
                acc += p;
            }
        }
        let mean = acc / (trials as f64 * cfg.n_ues as f64);
        let m = cfg.n_antennas as f64;
        assert!(
            (mean - m).abs() < 0.12 * m,
            "mean channel power {mean}, expected {m}"
        );
    }
}
