//! Two-stage frame simulation: pilot tensors, slot layout, and the noisy
//! observations collected at the UEs and at the sensing antenna.
//!
//! Pilots are phase-only beams: every entry has modulus exactly 1/√M so a
//! unit total transmit power per symbol per subcarrier is realizable through
//! the analog phase-shifter network alone. All SNRs are transmit SNRs: the
//! noise variance is σ² = 10^(-snr/10) regardless of the channel draw.

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::channel::{CommChannel, SensChannel};
use crate::config::{DuplexMode, ScenarioConfig};
use crate::error::{Error, Result};

/// Which stage (or baseline) produced a pilot tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PilotKind {
    Basic,
    Enhanced,
    Random,
}

/// Per-symbol, per-subcarrier transmit vectors across the array.
#[derive(Debug, Clone)]
pub struct PilotTensor {
    /// Shape (n_symbols, n_subcarriers, n_antennas); entries have modulus 1/√M.
    pub x: Array3<Complex64>,
    pub kind: PilotKind,
}

impl PilotTensor {
    /// Build a unit-modulus tensor from a phase field of the same shape.
    pub fn from_phases(phases: &Array3<f64>, kind: PilotKind) -> Self {
        let m = phases.shape()[2] as f64;
        let scale = 1.0 / m.sqrt();
        let x = phases.mapv(|p| Complex64::from_polar(scale, p));
        PilotTensor { x, kind }
    }

    /// Seeded random-phase pilots (the classical / ablation baseline).
    pub fn random(n_symbols: usize, n_subcarriers: usize, m: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phases = Array3::from_shape_fn((n_symbols, n_subcarriers, m), |_| {
            rng.random_range(0.0..std::f64::consts::TAU)
        });
        Self::from_phases(&phases, PilotKind::Random)
    }

    pub fn n_symbols(&self) -> usize {
        self.x.shape()[0]
    }

    /// Concatenate along the symbol axis (stage 1 followed by stage 2).
    pub fn concat(&self, other: &PilotTensor) -> Result<PilotTensor> {
        if self.x.shape()[1..] != other.x.shape()[1..] {
            return Err(Error::Shape("pilot tensors differ beyond symbol axis".into()));
        }
        let x = ndarray::concatenate(
            ndarray::Axis(0),
            &[self.x.view(), other.x.view()],
        )
        .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(PilotTensor {
            x,
            kind: self.kind,
        })
    }

    /// Largest deviation of any entry modulus from 1/√M.
    pub fn max_modulus_error(&self) -> f64 {
        let m = self.x.shape()[2] as f64;
        let target = 1.0 / m.sqrt();
        self.x
            .iter()
            .map(|z| (z.norm() - target).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKind {
    BasicPilot,
    EnhancedPilot,
    Feedback,
    Guard,
    Data,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSlot {
    pub slot_kind: SlotKind,
    pub symbol_index: usize,
}

/// Ordered slot layout of one sounding frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameLayout {
    pub slots: Vec<FrameSlot>,
}

impl FrameLayout {
    pub fn has_guard(&self) -> bool {
        self.slots.iter().any(|s| s.slot_kind == SlotKind::Guard)
    }

    pub fn count(&self, kind: SlotKind) -> usize {
        self.slots.iter().filter(|s| s.slot_kind == kind).count()
    }
}

/// Assemble the frame: basic pilots, enhanced pilots, a guard slot in TDD
/// (echoes and uplink feedback would otherwise collide), then feedback.
pub fn build_frame(cfg: &ScenarioConfig) -> Result<FrameLayout> {
    cfg.validate()?;
    let mut slots = Vec::new();
    let mut idx = 0;
    for _ in 0..cfg.n_basic_pilots {
        slots.push(FrameSlot {
            slot_kind: SlotKind::BasicPilot,
            symbol_index: idx,
        });
        idx += 1;
    }
    for _ in 0..cfg.n_enhanced_pilots {
        slots.push(FrameSlot {
            slot_kind: SlotKind::EnhancedPilot,
            symbol_index: idx,
        });
        idx += 1;
    }
    if cfg.duplex_mode == DuplexMode::Tdd {
        slots.push(FrameSlot {
            slot_kind: SlotKind::Guard,
            symbol_index: idx,
        });
        idx += 1;
    }
    slots.push(FrameSlot {
        slot_kind: SlotKind::Feedback,
        symbol_index: idx,
    });
    Ok(FrameLayout { slots })
}

/// Observations gathered over one frame.
#[derive(Debug, Clone)]
pub struct MeasurementSet {
    /// Shape (n_ues, n_symbols, n_subcarriers).
    pub ue_obs: Array3<Complex64>,
    /// Shape (n_symbols, n_subcarriers).
    pub echo_obs: Array2<Complex64>,
    pub pilot_snr_db: f64,
    pub echo_snr_db: f64,
    /// Noise variances actually applied (pilot path, echo path).
    pub noise_var: (f64, f64),
}

/// σ² = 10^(-snr/10); an infinite SNR flag yields exactly zero noise.
pub fn noise_variance(snr_db: f64) -> f64 {
    if snr_db.is_infinite() && snr_db > 0.0 {
        0.0
    } else {
        10f64.powf(-snr_db / 10.0)
    }
}

fn awgn(shape: (usize, usize), variance: f64, rng: &mut ChaCha8Rng) -> Array2<Complex64> {
    if variance == 0.0 {
        return Array2::zeros(shape);
    }
    let n = Normal::new(0.0, (variance / 2.0).sqrt()).expect("valid std");
    Array2::from_shape_fn(shape, |_| Complex64::new(n.sample(rng), n.sample(rng)))
}

/// UE-side sounding: `y_u[p,k] = h_u[k]ᵀ x[p,k] + n` with
/// `n ~ CN(0, 10^(-snr/10))`, deterministic given the seed.
pub fn ue_observe(
    pilots: &PilotTensor,
    ch: &CommChannel,
    pilot_snr_db: f64,
    seed: u64,
) -> Result<Array3<Complex64>> {
    let (n_sym, n_c, m) = dims3(&pilots.x);
    let (n_ues, ch_nc, ch_m) = dims3(&ch.h);
    if (n_c, m) != (ch_nc, ch_m) {
        return Err(Error::Shape(format!(
            "pilots ({n_c} subcarriers, {m} antennas) vs channel ({ch_nc}, {ch_m})"
        )));
    }
    let var = noise_variance(pilot_snr_db);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut obs = Array3::<Complex64>::zeros((n_ues, n_sym, n_c));
    for u in 0..n_ues {
        let noise = awgn((n_sym, n_c), var, &mut rng);
        for p in 0..n_sym {
            for k in 0..n_c {
                let mut acc = Complex64::new(0.0, 0.0);
                for i in 0..m {
                    acc += ch.h[(u, k, i)] * pilots.x[(p, k, i)];
                }
                obs[(u, p, k)] = acc + noise[(p, k)];
            }
        }
    }
    Ok(obs)
}

/// Echo at the single sensing antenna: identical model with `h_s` in place
/// of the UE channel.
pub fn echo_observe(
    pilots: &PilotTensor,
    sch: &SensChannel,
    echo_snr_db: f64,
    seed: u64,
) -> Result<Array2<Complex64>> {
    let (n_sym, n_c, m) = dims3(&pilots.x);
    let sh = sch.h_s.shape();
    if (n_c, m) != (sh[0], sh[1]) {
        return Err(Error::Shape(format!(
            "pilots ({n_c} subcarriers, {m} antennas) vs sensing channel ({}, {})",
            sh[0], sh[1]
        )));
    }
    let var = noise_variance(echo_snr_db);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = awgn((n_sym, n_c), var, &mut rng);
    let mut obs = Array2::<Complex64>::zeros((n_sym, n_c));
    for p in 0..n_sym {
        for k in 0..n_c {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..m {
                acc += sch.h_s[(k, i)] * pilots.x[(p, k, i)];
            }
            obs[(p, k)] = acc + noise[(p, k)];
        }
    }
    Ok(obs)
}

fn dims3<T>(a: &Array3<T>) -> (usize, usize, usize) {
    let s = a.shape();
    (s[0], s[1], s[2])
}
