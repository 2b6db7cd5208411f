//! Compressive CSI-feedback baseline: a fully connected autoencoder that
//! squeezes one UE's (N_c, M) channel into B sign bits and reconstructs it,
//! trained with NMSE. The benchmark pipeline feeds it the true channel
//! ("perfect CE") and beamforms from the reconstruction.

use ndarray::{Array2, ArrayD, IxDyn};
use num_complex::Complex64;
use crate::autodiff::{Tape, Var};
use crate::channel::{comm_channel, sample_scene};
use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::nn::{init_rng, lr_at, Adam, Binder, Linear, ParamSet};

use super::episode::mix64;
use super::train::{CurvePoint, TrainReport};
use super::QuantizerMode;

const HIDDEN: usize = 256;

/// Autoencoder state for the CSI-feedback baseline.
#[derive(Debug, Clone)]
pub struct CsiModel {
    pub scenario: ScenarioConfig,
    pub bits: usize,
    pub params: ParamSet,
    pub step: u64,
    pub history: Vec<(u64, f64)>,
    pub seed: u64,
}

struct CsiLayers {
    enc1: Linear,
    enc2: Linear,
    dec1: Linear,
    dec2: Linear,
}

fn layers(scenario: &ScenarioConfig, bits: usize) -> CsiLayers {
    let io = 2 * scenario.n_subcarriers * scenario.n_antennas;
    CsiLayers {
        enc1: Linear::new("csi.enc1", io, HIDDEN),
        enc2: Linear::new("csi.enc2", HIDDEN, bits),
        dec1: Linear::new("csi.dec1", bits, HIDDEN),
        dec2: Linear::new("csi.dec2", HIDDEN, io),
    }
}

impl CsiModel {
    pub fn new(scenario: &ScenarioConfig, bits: usize, seed: u64) -> Result<Self> {
        scenario.validate()?;
        if bits == 0 {
            return Err(Error::Config("csi baseline needs at least 1 bit".into()));
        }
        let l = layers(scenario, bits);
        let mut params = ParamSet::new();
        let mut rng = init_rng(seed ^ 0xc51);
        l.enc1.init(&mut params, &mut rng);
        l.enc2.init(&mut params, &mut rng);
        l.dec1.init(&mut params, &mut rng);
        l.dec2.init(&mut params, &mut rng);
        Ok(Self {
            scenario: scenario.clone(),
            bits,
            params,
            step: 0,
            history: Vec::new(),
            seed,
        })
    }
}

fn flatten_channel(tape: &Tape, h: &Array2<Complex64>) -> Var {
    let (n_c, m) = (h.shape()[0], h.shape()[1]);
    let mut flat = ArrayD::zeros(IxDyn(&[1, 2 * n_c * m]));
    for k in 0..n_c {
        for i in 0..m {
            flat[[0, k * m + i]] = h[(k, i)].re;
            flat[[0, n_c * m + k * m + i]] = h[(k, i)].im;
        }
    }
    tape.leaf(flat)
}

fn unflatten_channel(values: &ArrayD<f64>, n_c: usize, m: usize) -> Array2<Complex64> {
    Array2::from_shape_fn((n_c, m), |(k, i)| {
        Complex64::new(values[[0, k * m + i]], values[[0, n_c * m + k * m + i]])
    })
}

/// Encoder + quantizer + decoder on one tape; returns NMSE node, bit node,
/// and reconstruction node.
fn autoencode(
    model: &CsiModel,
    binder: &Binder,
    h: &Array2<Complex64>,
    quantizer: QuantizerMode,
) -> (Var, Var, Var) {
    let t = binder.tape;
    let l = layers(&model.scenario, model.bits);
    let x = flatten_channel(t, h);
    let e = t.gelu(l.enc1.forward(binder, x));
    let emb = l.enc2.forward(binder, e);
    let bits = match quantizer {
        QuantizerMode::Hard => t.ste_sign(emb),
        QuantizerMode::PassThrough => emb,
    };
    let d = t.gelu(l.dec1.forward(binder, bits));
    let recon = l.dec2.forward(binder, d);
    // NMSE against the input
    let diff = t.sub(recon, x);
    let num = t.sum_all(t.mul(diff, diff));
    let den: f64 = h.iter().map(|z| z.norm_sqr()).sum();
    let nmse = t.mul_scalar(num, 1.0 / den.max(1e-300));
    (nmse, bits, recon)
}

/// Quantized feedback bits for one channel (inference).
pub fn csi_encode(model: &CsiModel, h: &Array2<Complex64>) -> Vec<i8> {
    let tape = Tape::new();
    let binder = Binder::new(&tape, &model.params);
    let (_, bits, _) = autoencode(model, &binder, h, QuantizerMode::Hard);
    tape.value(bits)
        .iter()
        .map(|&v| if v >= 0.0 { 1 } else { -1 })
        .collect()
}

/// Reconstruct a channel from feedback bits (inference).
pub fn csi_decode(model: &CsiModel, bits: &[i8]) -> Result<Array2<Complex64>> {
    if bits.len() != model.bits {
        return Err(Error::Shape(format!(
            "expected {} bits, got {}",
            model.bits,
            bits.len()
        )));
    }
    let tape = Tape::new();
    let binder = Binder::new(&tape, &model.params);
    let l = layers(&model.scenario, model.bits);
    let b = tape.leaf(ArrayD::from_shape_fn(IxDyn(&[1, model.bits]), |idx| {
        bits[idx[1]] as f64
    }));
    let d = tape.gelu(l.dec1.forward(&binder, b));
    let recon = l.dec2.forward(&binder, d);
    let v = tape.value(recon);
    Ok(unflatten_channel(
        &v,
        model.scenario.n_subcarriers,
        model.scenario.n_antennas,
    ))
}

/// Evaluation NMSE (linear) of the full encode→quantize→decode path.
pub fn csi_eval_nmse(model: &CsiModel, h: &Array2<Complex64>) -> f64 {
    let tape = Tape::new();
    let binder = Binder::new(&tape, &model.params);
    let (nmse, _, _) = autoencode(model, &binder, h, QuantizerMode::Hard);
    tape.scalar(nmse)
}

/// Train with NMSE loss over per-UE channels drawn from fresh scenes.
pub fn train_csi_baseline(model: &mut CsiModel, steps: u64, batch: usize, lr: f64) -> Result<TrainReport> {
    let scenario = model.scenario.clone();
    let mut adam = Adam::new();
    let mut curve = Vec::new();
    let schedule = crate::config::LrSchedule::Cosine {
        warmup_steps: (steps / 20).max(1),
        floor: 0.1,
    };
    for step in model.step..(model.step + steps) {
        let mut grads: std::collections::BTreeMap<String, ArrayD<f64>> =
            std::collections::BTreeMap::new();
        let mut loss_acc = 0.0;
        let mut count = 0usize;
        for b in 0..batch {
            let seed = mix64(model.seed, step * 0x20_0000 + b as u64);
            let scene = sample_scene(&scenario, seed)?;
            let ch = comm_channel(&scene, &scenario)?;
            // pick one UE channel per episode, round-robin
            let u = (b + step as usize) % scenario.n_ues;
            let h = Array2::from_shape_fn(
                (scenario.n_subcarriers, scenario.n_antennas),
                |(k, i)| ch.h[(u, k, i)],
            );
            let tape = Tape::new();
            let binder = Binder::new(&tape, &model.params);
            let (nmse, _, _) = autoencode(model, &binder, &h, QuantizerMode::Hard);
            let loss = tape.scalar(nmse);
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    step,
                    detail: "non-finite csi NMSE".into(),
                });
            }
            loss_acc += loss;
            count += 1;
            let gr = tape.backward(nmse);
            for (name, g) in binder.bound_gradients(&gr) {
                grads
                    .entry(name)
                    .and_modify(|acc| *acc += &g)
                    .or_insert(g);
            }
        }
        let inv = 1.0 / count as f64;
        for g in grads.values_mut() {
            g.mapv_inplace(|x| x * inv);
        }
        adam.step(&mut model.params, &grads, lr_at(schedule, lr, step, steps));
        let point = CurvePoint {
            step,
            loss: loss_acc * inv,
            ase: None,
            cosine: None,
        };
        curve.push(point);
        model.history.push((step, point.loss));
        model.step = step + 1;
    }
    Ok(TrainReport { curve })
}
