//! End-to-end training: stochastic first-order optimization over episodes
//! with per-episode scenes, noise, and SNR draws.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::SnrRangeDb;
use crate::error::{Error, Result};
use crate::nn::{lr_at, Adam};

use super::episode::{episode_inputs_from_seed, forward_episode, mix64, QuantizerMode};
use super::ModelState;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub loss: f64,
    pub ase: Option<f64>,
    pub cosine: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub curve: Vec<CurvePoint>,
}

impl TrainReport {
    /// Mean loss over a window of steps, for coarse progress checks.
    pub fn smoothed_loss(&self, around_step: u64, window: u64) -> Option<f64> {
        let pts: Vec<f64> = self
            .curve
            .iter()
            .filter(|p| p.step >= around_step.saturating_sub(window) && p.step <= around_step + window)
            .map(|p| p.loss)
            .collect();
        if pts.is_empty() {
            None
        } else {
            Some(pts.iter().sum::<f64>() / pts.len() as f64)
        }
    }
}

fn sample_snr(rng: &mut ChaCha8Rng, range: SnrRangeDb) -> f64 {
    if range.lo == range.hi {
        range.lo
    } else {
        rng.random_range(range.lo..range.hi)
    }
}

/// Train in place, resuming from `state.step`. Episodes, noise, and SNR
/// draws are all functions of (net seed, step, batch index), so a given
/// seed reproduces the run bitwise.
pub fn train(state: &mut ModelState) -> Result<TrainReport> {
    train_with_progress(state, &mut |_| {})
}

/// [`train`] with a per-step callback (progress reporting).
pub fn train_with_progress(
    state: &mut ModelState,
    progress: &mut dyn FnMut(&CurvePoint),
) -> Result<TrainReport> {
    let arch = state.architecture()?;
    let net = state.net.clone();
    let scenario = state.scenario.clone();
    let mut adam = Adam::new();
    let mut curve = Vec::with_capacity(net.steps as usize);

    for step in state.step..net.steps {
        let lr = lr_at(net.lr_schedule, net.lr, step, net.steps);
        let mut batch_grads: std::collections::BTreeMap<String, ndarray::ArrayD<f64>> =
            std::collections::BTreeMap::new();
        let mut loss_acc = 0.0;
        let mut ase_acc: Option<f64> = None;
        let mut cos_acc: Option<f64> = None;

        for b in 0..net.batch {
            let episode_id = mix64(net.seed, step * 0x10_0000 + b as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(mix64(episode_id, 0x51a9));
            let pilot_snr = sample_snr(&mut rng, net.train_pilot_snr_db);
            let echo_snr = sample_snr(&mut rng, net.train_echo_snr_db);
            let data_snr = sample_snr(&mut rng, net.train_data_snr_db);
            let inputs =
                episode_inputs_from_seed(&scenario, episode_id, pilot_snr, echo_snr, data_snr)?;
            let out = forward_episode(&arch, &state.params, &inputs, QuantizerMode::Hard, true)?;
            if !out.loss.is_finite() {
                return Err(Error::Diverged {
                    step,
                    detail: format!(
                        "non-finite loss in batch element {b} (pilot {pilot_snr:.1} dB, echo {echo_snr:.1} dB, data {data_snr:.1} dB)"
                    ),
                });
            }
            loss_acc += out.loss;
            if let Some(a) = out.ase {
                *ase_acc.get_or_insert(0.0) += a;
            }
            if let Some(c) = out.cosine {
                *cos_acc.get_or_insert(0.0) += c;
            }
            for (name, g) in out.grads.expect("gradients requested") {
                batch_grads
                    .entry(name)
                    .and_modify(|acc| *acc += &g)
                    .or_insert(g);
            }
        }

        let inv = 1.0 / net.batch as f64;
        for g in batch_grads.values_mut() {
            g.mapv_inplace(|x| x * inv);
        }
        adam.step(&mut state.params, &batch_grads, lr);

        let point = CurvePoint {
            step,
            loss: loss_acc * inv,
            ase: ase_acc.map(|a| a * inv),
            cosine: cos_acc.map(|c| c * inv),
        };
        curve.push(point);
        state.history.push((step, point.loss));
        state.step = step + 1;
        progress(&point);
    }

    Ok(TrainReport { curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{NetConfig, ScenarioConfig, Variant};

    fn tiny_state(variant: Variant, steps: u64) -> ModelState {
        let scenario = ScenarioConfig {
            n_antennas: 4,
            n_rf_chains: 1,
            n_ues: 1,
            n_subcarriers: 4,
            n_targets: 2,
            n_basic_pilots: 1,
            n_enhanced_pilots: 1,
            min_target_sep_deg: 5.0,
            ..ScenarioConfig::table1()
        };
        let net = NetConfig {
            variant,
            embed_dim: 8,
            n_layers: 1,
            n_heads: 2,
            batch: 2,
            steps,
            lr: 3e-3,
            seed: 1,
            ..NetConfig::default()
        };
        ModelState::new(&scenario, &net).unwrap()
    }

    #[test]
    fn training_reduces_loss_on_tiny_instance() {
        let mut state = tiny_state(Variant::SensOnly, 60);
        let report = train(&mut state).unwrap();
        let early = report.smoothed_loss(3, 3).unwrap();
        let late = report.smoothed_loss(57, 3).unwrap();
        assert!(
            late < early,
            "loss did not improve: {early:.4} -> {late:.4}"
        );
        assert_eq!(state.step, 60);
        assert_eq!(report.curve.len(), 60);
    }

    #[test]
    fn training_deterministic_given_seed() {
        let mut a = tiny_state(Variant::Jcas, 5);
        let mut b = tiny_state(Variant::Jcas, 5);
        train(&mut a).unwrap();
        train(&mut b).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn random_pilot_keeps_pilot_parameters_bitwise() {
        let mut state = tiny_state(Variant::RandomPilot, 5);
        let basic_before = state.params.get("pilot.basic_phases").clone();
        let enh_before = state.params.get("pilot.enh_phases").clone();
        train(&mut state).unwrap();
        assert_eq!(state.params.get("pilot.basic_phases"), &basic_before);
        assert_eq!(state.params.get("pilot.enh_phases"), &enh_before);
        // while the decoders did move
        let ue_w = state.params.get("ue.out.w");
        let fresh = tiny_state(Variant::RandomPilot, 0);
        assert_ne!(ue_w, fresh.params.get("ue.out.w"));
    }
}
