//! One differentiable sounding-and-reconstruction episode.
//!
//! Stage 1 transmits the basic pilots; their echoes drive the enhanced-pilot
//! designer; stage 2 transmits the designed pilots. UEs encode both stages
//! into sign-quantized feedback (straight-through backward); the BS decodes
//! the analog matrix (one column per UE from its own feedback plus the
//! pooled echo context), the per-subcarrier digital matrices (feedback
//! tokens plus an analog-matrix token), and the sensing channel estimate
//! (echo tokens plus feedback tokens). Everything from pilot phases to both
//! loss terms sits on one tape.

use std::collections::BTreeMap;

use ndarray::{Array2, Array3, ArrayD, IxDyn};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{CVar, Tape, Var};
use crate::beamforming::HybridBeamformer;
use crate::channel::{comm_channel, sample_scene, sens_channel, CommChannel, SensChannel};
use crate::config::{ScenarioConfig, SensLoss, Variant};
use crate::error::{Error, Result};
use crate::frame::noise_variance;
use crate::nn::{Binder, ParamSet};

use super::Architecture;

const LN2: f64 = std::f64::consts::LN_2;
/// Guards sqrt at zero in norms; far below any signal scale.
const NORM_EPS: f64 = 1e-30;

/// How the feedback quantizer behaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantizerMode {
    /// Sign bits forward, straight-through (identity) backward.
    Hard,
    /// Identity forward: the continuous relaxation used by the
    /// finite-difference gradient checks (sign() is piecewise constant, so
    /// its true finite difference is zero almost everywhere).
    PassThrough,
}

/// Everything one episode consumes.
#[derive(Debug, Clone)]
pub struct EpisodeInputs {
    pub comm: CommChannel,
    pub sens: SensChannel,
    pub pilot_snr_db: f64,
    pub echo_snr_db: f64,
    pub data_snr_db: f64,
    pub noise_seed: u64,
}

/// Scene + channels + noise stream for a given seed at fixed SNRs.
pub fn episode_inputs_from_seed(
    cfg: &ScenarioConfig,
    seed: u64,
    pilot_snr_db: f64,
    echo_snr_db: f64,
    data_snr_db: f64,
) -> Result<EpisodeInputs> {
    let scene = sample_scene(cfg, seed)?;
    Ok(EpisodeInputs {
        comm: comm_channel(&scene, cfg)?,
        sens: sens_channel(&scene, cfg)?,
        pilot_snr_db,
        echo_snr_db,
        data_snr_db,
        noise_seed: mix64(seed, 0x6e01_5e5e),
    })
}

/// Episode results: losses, metrics, and the decoded artifacts.
#[derive(Debug)]
pub struct EpisodeOutput {
    pub loss: f64,
    pub ase: Option<f64>,
    pub cosine: Option<f64>,
    pub nmse: Option<f64>,
    /// Decoded sensing channel (n_subcarriers, n_antennas).
    pub sens_estimate: Option<Array2<Complex64>>,
    /// Decoded hybrid beamformer.
    pub beamformer: Option<HybridBeamformer>,
    /// Per-UE feedback bits (±1); empty Vec when the variant has no UE path.
    pub feedback_bits: Vec<Vec<i8>>,
    /// Pilot symbols actually transmitted across both stages.
    pub pilot_symbols_used: usize,
    /// Gradients for every bound parameter (when requested).
    pub grads: Option<BTreeMap<String, ArrayD<f64>>>,
}

/// The weighted training objective: `L = -w_c·ase + w_s·(1 - cosine)`.
pub fn loss_total(ase: f64, cosine: f64, w_c: f64, w_s: f64) -> f64 {
    -w_c * ase + w_s * (1.0 - cosine)
}

pub(crate) fn mix64(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.rotate_left(31) ^ 0x9e37_79b9_7f4a_7c15;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn complex_noise(shape: &[usize], variance: f64, seed: u64) -> (ArrayD<f64>, ArrayD<f64>) {
    if variance == 0.0 {
        return (
            ArrayD::zeros(IxDyn(shape)),
            ArrayD::zeros(IxDyn(shape)),
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, (variance / 2.0).sqrt()).expect("valid std");
    // interleave draws so re/im pairs match frame::awgn ordering
    let mut re = ArrayD::zeros(IxDyn(shape));
    let mut im = ArrayD::zeros(IxDyn(shape));
    for (r, i) in re.iter_mut().zip(im.iter_mut()) {
        *r = n.sample(&mut rng);
        *i = n.sample(&mut rng);
    }
    (re, im)
}

fn const_complex2(tape: &Tape, a: &Array2<Complex64>, conj: bool) -> CVar {
    let re = a.mapv(|z| z.re).into_dyn();
    let im = a.mapv(|z| if conj { -z.im } else { z.im }).into_dyn();
    tape.cleaf(re, im)
}

fn zeros_leaf(tape: &Tape, shape: &[usize]) -> Var {
    tape.leaf(ArrayD::zeros(IxDyn(shape)))
}

/// (n_sym, N_c) complex observations → (N_c, 2·n_sym) real token features.
fn obs_tokens(tape: &Tape, obs: CVar) -> Var {
    let re_t = tape.transpose2(obs.re);
    let im_t = tape.transpose2(obs.im);
    tape.concat(1, &[re_t, im_t])
}

/// `y[p,k] = Σ_m h[k,m]·x[p,k,m] + noise` for a constant single-receiver
/// channel. `channel` is (1, N_c, M); pilots (n_sym, N_c, M).
fn transmit(tape: &Tape, channel: CVar, pilots: CVar, noise: CVar, n_sym: usize, n_c: usize) -> CVar {
    let prod = tape.cmul(channel, pilots);
    let summed = tape.csum_axis_keep(prod, 2); // (n_sym, N_c, 1)
    let re = tape.reshape(summed.re, &[n_sym, n_c]);
    let im = tape.reshape(summed.im, &[n_sym, n_c]);
    tape.cadd(CVar { re, im }, noise)
}

struct EpisodeGraph<'a> {
    tape: &'a Tape,
    binder: Binder<'a>,
    arch: &'a Architecture,
}

impl<'a> EpisodeGraph<'a> {
    fn pilot_phases(&self, name: &str, params: &ParamSet) -> Var {
        if self.arch.pilots_trainable() {
            self.binder.p(name)
        } else {
            self.tape.leaf(params.get(name).clone())
        }
    }

    /// Shared echo trunk on token features (N_c, D).
    fn echo_trunk(&self, tokens: Var) -> Var {
        let enc = self.arch.echo_encoder.as_ref().expect("echo encoder");
        let pe = self.binder.p("pos.echo");
        let x = self.tape.add(tokens, pe);
        enc.forward(&self.binder, x)
    }

    /// Per-UE feedback embedding (1, B) before quantization.
    fn ue_embed(&self, obs_feat: Var) -> Var {
        let t = self.tape;
        let arch = self.arch;
        let x = arch.ue_in.as_ref().unwrap().forward(&self.binder, obs_feat);
        let x = t.add(x, self.binder.p("pos.ue"));
        let x = arch.ue_encoder.as_ref().unwrap().forward(&self.binder, x);
        let pooled = t.mul_scalar(
            t.sum_axis_keep(x, 0),
            1.0 / arch.scenario.n_subcarriers as f64,
        );
        arch.ue_out.as_ref().unwrap().forward(&self.binder, pooled)
    }

    /// One analog column (M,) of phases from a UE's feedback and the pooled
    /// echo context. Shared weights across UEs.
    fn analog_column_phases(&self, bits: Var, ctx_pooled: Var) -> Var {
        let t = self.tape;
        let arch = self.arch;
        let fb_tok = arch.an_fb.as_ref().unwrap().forward(&self.binder, bits);
        let ctx_tok = arch.an_ctx.as_ref().unwrap().forward(&self.binder, ctx_pooled);
        let queries = self.binder.p("an.queries");
        let tokens = t.concat(0, &[queries, fb_tok, ctx_tok]);
        let enc = arch.an_encoder.as_ref().unwrap().forward(&self.binder, tokens);
        let patch_out = t.slice_axis(enc, 0, 0, arch.n_patches);
        let phases = arch.an_head.as_ref().unwrap().forward(&self.binder, patch_out);
        t.reshape(phases, &[arch.scenario.n_antennas, 1])
    }
}

/// Stage-1 pilot tensor held by a model (constant at inference).
pub fn stage1_pilots(arch: &Architecture, params: &ParamSet) -> crate::frame::PilotTensor {
    let s = &arch.scenario;
    let phases = params.get("pilot.basic_phases");
    let p = Array3::from_shape_fn(
        (s.n_basic_pilots, s.n_subcarriers, s.n_antennas),
        |(a, b, c)| phases[[a, b, c]],
    );
    let kind = if arch.pilots_trainable() {
        crate::frame::PilotKind::Basic
    } else {
        crate::frame::PilotKind::Random
    };
    crate::frame::PilotTensor::from_phases(&p, kind)
}

/// Stage-2 pilot tensor: the designer applied to stage-1 echoes for
/// designing variants, otherwise the stored (trainable or frozen) phases.
pub fn stage2_pilots(
    arch: &Architecture,
    params: &ParamSet,
    echo1: &Array2<Complex64>,
) -> Result<crate::frame::PilotTensor> {
    let s = &arch.scenario;
    let (n_e, n_c, m) = (s.n_enhanced_pilots, s.n_subcarriers, s.n_antennas);
    if n_e == 0 {
        return Err(Error::Domain("no enhanced pilot symbols configured".into()));
    }
    if !arch.designs_enhanced() {
        let phases = params.get("pilot.enh_phases");
        let p = Array3::from_shape_fn((n_e, n_c, m), |(a, b, c)| phases[[a, b, c]]);
        let kind = if arch.pilots_trainable() {
            crate::frame::PilotKind::Enhanced
        } else {
            crate::frame::PilotKind::Random
        };
        return Ok(crate::frame::PilotTensor::from_phases(&p, kind));
    }
    let tape = Tape::new();
    let g = EpisodeGraph {
        tape: &tape,
        binder: Binder::new(&tape, params),
        arch,
    };
    let echo = const_complex2(&tape, echo1, false);
    let tokens = obs_tokens(&tape, echo);
    let proj = arch
        .echo_in_stage1
        .as_ref()
        .unwrap()
        .forward(&g.binder, tokens);
    let ctx1 = g.echo_trunk(proj);
    let head = arch.enh_head.as_ref().unwrap().forward(&g.binder, ctx1);
    let phases = tape.swap01(tape.reshape(head, &[n_c, n_e, m]));
    let v = tape.value(phases);
    let p = Array3::from_shape_fn((n_e, n_c, m), |(a, b, c)| v[[a, b, c]]);
    Ok(crate::frame::PilotTensor::from_phases(
        &p,
        crate::frame::PilotKind::Enhanced,
    ))
}

/// The echo-noise stream roles used inside [`forward_episode`], exposed so
/// eval pipelines that re-run the sounding outside the tape see the same
/// noise realizations.
pub fn echo_noise_stream(noise_seed: u64, stage: usize) -> u64 {
    mix64(noise_seed, if stage == 0 { 100 } else { 300 })
}

/// Run one episode. `want_grads` adds a backward pass and returns gradients
/// for every parameter the variant actually bound.
pub fn forward_episode(
    arch: &Architecture,
    params: &ParamSet,
    inputs: &EpisodeInputs,
    quantizer: QuantizerMode,
    want_grads: bool,
) -> Result<EpisodeOutput> {
    let s = &arch.scenario;
    let (n_b, n_e) = (s.n_basic_pilots, s.n_enhanced_pilots);
    let (n_c, m, n_ues, n_rf) = (s.n_subcarriers, s.n_antennas, s.n_ues, s.n_rf_chains);
    let d = arch.net.embed_dim;
    let scale = 1.0 / (m as f64).sqrt();
    let variant = arch.net.variant;

    {
        let hs = inputs.comm.h.shape();
        if hs != [n_ues, n_c, m] {
            return Err(Error::Shape(format!(
                "comm channel {:?} vs scenario ({n_ues}, {n_c}, {m})",
                hs
            )));
        }
    }

    let tape = Tape::new();
    let g = EpisodeGraph {
        tape: &tape,
        binder: Binder::new(&tape, params),
        arch,
    };
    let t = &tape;

    let sigma_p = noise_variance(inputs.pilot_snr_db);
    let sigma_e = noise_variance(inputs.echo_snr_db);
    let sigma_d = noise_variance(inputs.data_snr_db);

    // per-UE channels as (1, N_c, M) constants
    let ue_channels: Vec<CVar> = (0..n_ues)
        .map(|u| {
            let re = Array3::from_shape_fn((1, n_c, m), |(_, k, i)| inputs.comm.h[(u, k, i)].re);
            let im = Array3::from_shape_fn((1, n_c, m), |(_, k, i)| inputs.comm.h[(u, k, i)].im);
            t.cleaf(re.into_dyn(), im.into_dyn())
        })
        .collect();
    let sens_const = {
        let re = Array3::from_shape_fn((1, n_c, m), |(_, k, i)| inputs.sens.h_s[(k, i)].re);
        let im = Array3::from_shape_fn((1, n_c, m), |(_, k, i)| inputs.sens.h_s[(k, i)].im);
        t.cleaf(re.into_dyn(), im.into_dyn())
    };

    let noise_leaf = |role: u64, shape: &[usize], var: f64| -> CVar {
        let (re, im) = complex_noise(shape, var, mix64(inputs.noise_seed, role));
        t.cleaf(re, im)
    };

    // ── stage 1: basic pilots ────────────────────────────────────────────
    let basic_phases = g.pilot_phases("pilot.basic_phases", params);
    let x1 = t.phases_to_complex(basic_phases, scale);

    let mut ue_obs: Vec<CVar> = Vec::with_capacity(n_ues); // (n_b[, +n_e], N_c)
    for (u, h_u) in ue_channels.iter().enumerate() {
        let noise = noise_leaf(1 + u as u64, &[n_b, n_c], sigma_p);
        ue_obs.push(transmit(t, *h_u, x1, noise, n_b, n_c));
    }
    let echo1 = {
        let noise = noise_leaf(100, &[n_b, n_c], sigma_e);
        transmit(t, sens_const, x1, noise, n_b, n_c)
    };

    // ── enhanced pilot design ────────────────────────────────────────────
    let x2 = if n_e == 0 {
        None
    } else if arch.designs_enhanced() {
        let tokens = obs_tokens(t, echo1);
        let proj = arch
            .echo_in_stage1
            .as_ref()
            .unwrap()
            .forward(&g.binder, tokens);
        let ctx1 = g.echo_trunk(proj);
        let head = arch.enh_head.as_ref().unwrap().forward(&g.binder, ctx1); // (N_c, n_e·M)
        let phases = t.reshape(head, &[n_c, n_e, m]);
        let phases = t.swap01(phases); // (n_e, N_c, M)
        Some(t.phases_to_complex(phases, scale))
    } else {
        let phases = g.pilot_phases("pilot.enh_phases", params);
        Some(t.phases_to_complex(phases, scale))
    };

    // ── stage 2: enhanced pilots ─────────────────────────────────────────
    let mut echoes_all = echo1;
    if let Some(x2) = x2 {
        for (u, h_u) in ue_channels.iter().enumerate() {
            let noise = noise_leaf(200 + u as u64, &[n_e, n_c], sigma_p);
            let y2 = transmit(t, *h_u, x2, noise, n_e, n_c);
            ue_obs[u] = CVar {
                re: t.concat(0, &[ue_obs[u].re, y2.re]),
                im: t.concat(0, &[ue_obs[u].im, y2.im]),
            };
        }
        let noise = noise_leaf(300, &[n_e, n_c], sigma_e);
        let e2 = transmit(t, sens_const, x2, noise, n_e, n_c);
        echoes_all = CVar {
            re: t.concat(0, &[echoes_all.re, e2.re]),
            im: t.concat(0, &[echoes_all.im, e2.im]),
        };
    }

    // ── UE feedback ──────────────────────────────────────────────────────
    let has_ue_path = variant != Variant::SensOnly;
    let mut bit_vars: Vec<Var> = Vec::new();
    let mut feedback_bits: Vec<Vec<i8>> = Vec::new();
    if has_ue_path {
        for obs in &ue_obs {
            let feat = obs_tokens(t, *obs);
            let emb = g.ue_embed(feat);
            let bits = match quantizer {
                QuantizerMode::Hard => t.ste_sign(emb),
                QuantizerMode::PassThrough => emb,
            };
            feedback_bits.push(
                t.value(bits)
                    .iter()
                    .map(|&v| if v >= 0.0 { 1i8 } else { -1i8 })
                    .collect(),
            );
            bit_vars.push(bits);
        }
    }

    // ── shared echo context over both stages ─────────────────────────────
    let uses_echo = variant != Variant::CommOnly;
    let (ctx_full, ctx_pooled) = if uses_echo {
        let tokens = obs_tokens(t, echoes_all);
        let proj = arch
            .echo_in_full
            .as_ref()
            .unwrap()
            .forward(&g.binder, tokens);
        let ctx = g.echo_trunk(proj);
        let pooled = t.mul_scalar(t.sum_axis_keep(ctx, 0), 1.0 / n_c as f64);
        (Some(ctx), Some(pooled))
    } else {
        (None, None)
    };

    // ── beamforming decoders ─────────────────────────────────────────────
    let mut ase_var: Option<Var> = None;
    let mut beamformer: Option<HybridBeamformer> = None;
    if has_ue_path {
        let ctx_in = ctx_pooled.unwrap_or_else(|| zeros_leaf(t, &[1, d]));
        let mut columns: Vec<CVar> = Vec::with_capacity(n_rf);
        for bits in &bit_vars {
            let phases = g.analog_column_phases(*bits, ctx_in);
            columns.push(t.phases_to_complex(phases, scale));
        }
        for _ in n_ues..n_rf {
            columns.push(columns[0]);
        }
        let analog = CVar {
            re: t.concat(1, &columns.iter().map(|c| c.re).collect::<Vec<_>>()),
            im: t.concat(1, &columns.iter().map(|c| c.im).collect::<Vec<_>>()),
        }; // (M, n_rf)

        // digital decoder: feedback tokens + analog token + subcarrier queries
        let mut tokens: Vec<Var> = Vec::new();
        for bits in &bit_vars {
            tokens.push(arch.dg_fb.as_ref().unwrap().forward(&g.binder, *bits));
        }
        let an_flat = t.concat(
            1,
            &[
                t.reshape(analog.re, &[1, m * n_rf]),
                t.reshape(analog.im, &[1, m * n_rf]),
            ],
        );
        tokens.push(arch.dg_an.as_ref().unwrap().forward(&g.binder, an_flat));
        tokens.push(g.binder.p("dg.queries"));
        let stack = t.concat(0, &tokens);
        let enc = arch.dg_encoder.as_ref().unwrap().forward(&g.binder, stack);
        let sc_out = t.slice_axis(enc, 0, n_ues + 1, n_c);
        let head = arch.dg_head.as_ref().unwrap().forward(&g.binder, sc_out); // (N_c, 2·n_rf·n_ues)
        let head = t.reshape(head, &[n_c, 2, n_rf * n_ues]);
        let w_re = t.reshape(t.slice_axis(head, 1, 0, 1), &[n_c, n_rf, n_ues]);
        let w_im = t.reshape(t.slice_axis(head, 1, 1, 1), &[n_c, n_rf, n_ues]);
        let w_raw = CVar { re: w_re, im: w_im };

        // power normalization to P = 1 per subcarrier
        let f_batch = CVar {
            re: t.repeat0(analog.re, n_c),
            im: t.repeat0(analog.im, n_c),
        };
        let fw = t.cbmm(f_batch, w_raw); // (N_c, M, n_ues)
        let p_equiv = t.sum_axis_keep(t.sum_axis_keep(t.cabs2(fw), 2), 1); // (N_c,1,1)
        let inv = t.sqrt(t.div(
            t.leaf(ArrayD::from_elem(IxDyn(&[1, 1, 1]), 1.0)),
            t.add_scalar(p_equiv, NORM_EPS),
        ));
        let w_norm = CVar {
            re: t.mul(w_raw.re, inv),
            im: t.mul(w_raw.im, inv),
        };

        // ASE on the tape
        let conj_h2 = {
            let re =
                Array2::from_shape_fn((n_ues * n_c, m), |(row, i)| {
                    inputs.comm.h[(row / n_c, row % n_c, i)].re
                });
            let im = Array2::from_shape_fn((n_ues * n_c, m), |(row, i)| {
                -inputs.comm.h[(row / n_c, row % n_c, i)].im
            });
            t.cleaf(re.into_dyn(), im.into_dyn())
        };
        let e2d = t.cmatmul(conj_h2, analog); // (n_ues·N_c, n_rf)
        let e3 = CVar {
            re: t.swap01(t.reshape(e2d.re, &[n_ues, n_c, n_rf])),
            im: t.swap01(t.reshape(e2d.im, &[n_ues, n_c, n_rf])),
        }; // (N_c, n_ues, n_rf)
        let links = t.cbmm(e3, w_norm); // (N_c, n_ues, n_ues)
        let powers = t.cabs2(links);
        let eye = {
            let mut e = ArrayD::zeros(IxDyn(&[1, n_ues, n_ues]));
            for u in 0..n_ues {
                e[[0, u, u]] = 1.0;
            }
            t.leaf(e)
        };
        let sig = t.sum_axis_keep(t.mul(powers, eye), 2);
        let tot = t.sum_axis_keep(powers, 2);
        let interference = t.sub(tot, sig);
        let sinr = t.div(sig, t.add_scalar(interference, sigma_d));
        let ase_v = t.mul_scalar(t.mean_all(t.ln(t.add_scalar(sinr, 1.0))), 1.0 / LN2);
        ase_var = Some(ase_v);

        // concrete beamformer for the caller
        let an_re = t.value(analog.re);
        let an_im = t.value(analog.im);
        let w_re_v = t.value(w_norm.re);
        let w_im_v = t.value(w_norm.im);
        beamformer = Some(HybridBeamformer {
            analog: Array2::from_shape_fn((m, n_rf), |(i, r)| {
                Complex64::new(an_re[[i, r]], an_im[[i, r]])
            }),
            digital: (0..n_c)
                .map(|k| {
                    Array2::from_shape_fn((n_rf, n_ues), |(r, u)| {
                        Complex64::new(w_re_v[[k, r, u]], w_im_v[[k, r, u]])
                    })
                })
                .collect(),
            total_power: 1.0,
        });
    }

    // ── sensing decoder ──────────────────────────────────────────────────
    let mut cos_var: Option<Var> = None;
    let mut nmse_var: Option<Var> = None;
    let mut sens_estimate: Option<Array2<Complex64>> = None;
    if variant != Variant::CommOnly {
        let ctx = ctx_full.expect("sensing variants encode echoes");
        let mut tokens: Vec<Var> = vec![ctx];
        let sn_fb = arch.sn_fb.as_ref().unwrap();
        for u in 0..n_ues {
            let bits_in = if variant == Variant::SensOnly {
                zeros_leaf(t, &[1, arch.bits_per_ue])
            } else {
                bit_vars[u]
            };
            tokens.push(sn_fb.forward(&g.binder, bits_in));
        }
        let stack = t.concat(0, &tokens);
        let enc = arch.sn_encoder.as_ref().unwrap().forward(&g.binder, stack);
        let sc_out = t.slice_axis(enc, 0, 0, n_c);
        let head = arch.sn_head.as_ref().unwrap().forward(&g.binder, sc_out); // (N_c, 2M)
        let est = CVar {
            re: t.slice_axis(head, 1, 0, m),
            im: t.slice_axis(head, 1, m, m),
        };

        let est_re = t.value(est.re);
        let est_im = t.value(est.im);
        sens_estimate = Some(Array2::from_shape_fn((n_c, m), |(k, i)| {
            Complex64::new(est_re[[k, i]], est_im[[k, i]])
        }));

        let truth = const_complex2(t, &inputs.sens.h_s, false);
        let truth_norms = {
            let n = Array2::from_shape_fn((n_c, 1), |(k, _)| {
                inputs
                    .sens
                    .h_s
                    .row(k)
                    .iter()
                    .map(|z| z.norm_sqr())
                    .sum::<f64>()
                    .sqrt()
                    .max(1e-150)
            });
            t.leaf(n.into_dyn())
        };
        // cosine similarity: mean_k |<truth_k, est_k>| / (||truth_k||·||est_k||)
        let dot = t.csum_axis_keep(t.cmul_conj(truth, est), 1); // (N_c, 1)
        let dot_mag = t.sqrt(t.add_scalar(t.cabs2(dot), NORM_EPS));
        let est_norm = t.sqrt(t.add_scalar(t.sum_axis_keep(t.cabs2(est), 1), NORM_EPS));
        let denom = t.mul(truth_norms, est_norm);
        cos_var = Some(t.mean_all(t.div(dot_mag, denom)));

        // NMSE
        let diff = CVar {
            re: t.sub(est.re, truth.re),
            im: t.sub(est.im, truth.im),
        };
        let num = t.sum_all(t.cabs2(diff));
        let den: f64 = inputs.sens.h_s.iter().map(|z| z.norm_sqr()).sum();
        nmse_var = Some(t.mul_scalar(num, 1.0 / den.max(1e-300)));
    }

    // ── weighted loss ────────────────────────────────────────────────────
    let (w_c, w_s) = match variant {
        Variant::CommOnly => (arch.net.loss_weight_comm, 0.0),
        Variant::SensOnly => (0.0, arch.net.loss_weight_sens),
        _ => (arch.net.loss_weight_comm, arch.net.loss_weight_sens),
    };
    let mut loss = zeros_leaf(t, &[]);
    if let Some(a) = ase_var {
        if w_c != 0.0 {
            loss = t.sub(loss, t.mul_scalar(a, w_c));
        }
    }
    if w_s != 0.0 {
        match arch.net.sens_loss {
            SensLoss::Cosine => {
                if let Some(c) = cos_var {
                    let one = t.leaf(ArrayD::from_elem(IxDyn(&[]), 1.0));
                    loss = t.add(loss, t.mul_scalar(t.sub(one, c), w_s));
                }
            }
            SensLoss::Nmse => {
                if let Some(nm) = nmse_var {
                    loss = t.add(loss, t.mul_scalar(nm, w_s));
                }
            }
        }
    }

    let grads = if want_grads {
        let gr = tape.backward(loss);
        Some(g.binder.bound_gradients(&gr))
    } else {
        None
    };

    Ok(EpisodeOutput {
        loss: t.scalar(loss),
        ase: ase_var.map(|v| t.scalar(v)),
        cosine: cos_var.map(|v| t.scalar(v)),
        nmse: nmse_var.map(|v| t.scalar(v)),
        sens_estimate,
        beamformer,
        feedback_bits,
        pilot_symbols_used: n_b + n_e,
        grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check::{finite_difference, rel_error};
    use crate::config::NetConfig;

    fn small_scenario() -> ScenarioConfig {
        ScenarioConfig {
            n_antennas: 4,
            n_rf_chains: 1,
            n_ues: 1,
            n_subcarriers: 4,
            n_targets: 2,
            n_basic_pilots: 1,
            n_enhanced_pilots: 1,
            min_target_sep_deg: 5.0,
            ..ScenarioConfig::table1()
        }
    }

    fn small_net(variant: Variant) -> NetConfig {
        NetConfig {
            variant,
            embed_dim: 8,
            n_layers: 1,
            n_heads: 2,
            ..NetConfig::default()
        }
    }

    fn run(
        variant: Variant,
        quantizer: QuantizerMode,
        seed: u64,
        want_grads: bool,
    ) -> (Architecture, ParamSet, EpisodeOutput) {
        let s = small_scenario();
        let net = small_net(variant);
        let arch = Architecture::new(&s, &net).unwrap();
        let params = arch.init_params(0);
        let inputs = episode_inputs_from_seed(&s, seed, 10.0, 10.0, 10.0).unwrap();
        let out = forward_episode(&arch, &params, &inputs, quantizer, want_grads).unwrap();
        (arch, params, out)
    }

    #[test]
    fn episode_shapes_and_budget() {
        let (_, _, out) = run(Variant::Jcas, QuantizerMode::Hard, 3, false);
        assert_eq!(out.pilot_symbols_used, 2);
        assert_eq!(out.feedback_bits.len(), 1);
        assert_eq!(out.feedback_bits[0].len(), 16);
        assert!(out.feedback_bits[0].iter().all(|&b| b == 1 || b == -1));
        let est = out.sens_estimate.as_ref().unwrap();
        assert_eq!(est.shape(), &[4, 4]);
        let bf = out.beamformer.as_ref().unwrap();
        assert_eq!(bf.analog.shape(), &[4, 1]);
        assert!(bf.max_analog_modulus_error() < 1e-12);
        for k in 0..4 {
            assert!((bf.subcarrier_power(k) - 1.0).abs() < 1e-9);
        }
        assert!(out.ase.unwrap().is_finite());
        let c = out.cosine.unwrap();
        assert!((0.0..=1.0 + 1e-12).contains(&c));
    }

    #[test]
    fn episode_deterministic() {
        let (_, _, a) = run(Variant::Jcas, QuantizerMode::Hard, 7, false);
        let (_, _, b) = run(Variant::Jcas, QuantizerMode::Hard, 7, false);
        assert_eq!(a.loss, b.loss);
        assert_eq!(a.ase, b.ase);
        assert_eq!(a.cosine, b.cosine);
        assert_eq!(a.feedback_bits, b.feedback_bits);
    }

    #[test]
    fn variant_loss_terms() {
        let (_, _, comm) = run(Variant::CommOnly, QuantizerMode::Hard, 3, false);
        assert!(comm.cosine.is_none());
        assert!(comm.sens_estimate.is_none());
        assert!((comm.loss - -comm.ase.unwrap()).abs() < 1e-12);

        let (_, _, sens) = run(Variant::SensOnly, QuantizerMode::Hard, 3, false);
        assert!(sens.ase.is_none());
        assert!(sens.beamformer.is_none());
        assert!(sens.feedback_bits.is_empty());
        assert!((sens.loss - (1.0 - sens.cosine.unwrap())).abs() < 1e-12);

        let (_, _, jcas) = run(Variant::Jcas, QuantizerMode::Hard, 3, false);
        let expect = loss_total(jcas.ase.unwrap(), jcas.cosine.unwrap(), 1.0, 1.0);
        assert!((jcas.loss - expect).abs() < 1e-12);
    }

    #[test]
    fn loss_total_arithmetic() {
        assert_eq!(loss_total(3.0, 0.0, 1.0, 0.0), -3.0);
        assert_eq!(loss_total(0.0, 1.0, 0.0, 1.0), 0.0);
        assert_eq!(loss_total(2.0, 0.5, 1.0, 1.0), -1.5);
    }

    #[test]
    fn random_pilot_ignores_echoes_in_pilot_design() {
        // same params and seed, two different sensing-gain draws: the
        // transmitted pilots must be identical (the pilots are frozen)
        let s = small_scenario();
        let net = small_net(Variant::RandomPilot);
        let arch = Architecture::new(&s, &net).unwrap();
        let params = arch.init_params(0);
        let mk = |gain_scale: f64| {
            let mut inputs = episode_inputs_from_seed(&s, 11, 10.0, 10.0, 10.0).unwrap();
            inputs.sens.h_s.mapv_inplace(|z| z * gain_scale);
            forward_episode(&arch, &params, &inputs, QuantizerMode::Hard, true).unwrap()
        };
        let a = mk(1.0);
        let b = mk(3.0);
        // pilot params receive no gradient in either run
        assert!(!a.grads.as_ref().unwrap().contains_key("pilot.basic_phases"));
        assert!(!b.grads.as_ref().unwrap().contains_key("pilot.enh_phases"));
        // echo change reaches the sensing estimate but not the feedback
        assert_eq!(a.feedback_bits, b.feedback_bits);
        assert_ne!(
            a.sens_estimate.as_ref().unwrap(),
            b.sens_estimate.as_ref().unwrap()
        );
    }

    #[test]
    fn comm_only_never_reads_echoes() {
        let s = small_scenario();
        let net = small_net(Variant::CommOnly);
        let arch = Architecture::new(&s, &net).unwrap();
        let params = arch.init_params(0);
        let mut inputs = episode_inputs_from_seed(&s, 13, 10.0, 10.0, 10.0).unwrap();
        let a = forward_episode(&arch, &params, &inputs, QuantizerMode::Hard, false).unwrap();
        // change ONLY the sensing channel: comm observations are unchanged
        inputs.sens.h_s.mapv_inplace(|z| z * Complex64::new(0.0, 2.0));
        let b = forward_episode(&arch, &params, &inputs, QuantizerMode::Hard, false).unwrap();
        assert_eq!(a.loss, b.loss);
        assert_eq!(a.ase, b.ase);
        assert_eq!(
            a.beamformer.as_ref().unwrap().analog,
            b.beamformer.as_ref().unwrap().analog
        );
    }

    #[test]
    fn sens_only_ignores_feedback_variant_contract() {
        // SensOnly binds no UE-path parameters
        let (_, _, out) = run(Variant::SensOnly, QuantizerMode::Hard, 5, true);
        let grads = out.grads.unwrap();
        assert!(grads.keys().all(|k| {
            !k.starts_with("ue.") && !k.starts_with("an.") && !k.starts_with("dg.")
        }));
        // but the sensing head and pilot designer do train
        assert!(grads.contains_key("sn.head.w"));
        assert!(grads.contains_key("pilot.basic_phases"));
    }

    #[test]
    fn straight_through_gives_nonzero_encoder_gradients() {
        let (_, _, out) = run(Variant::Jcas, QuantizerMode::Hard, 9, true);
        let grads = out.grads.unwrap();
        let g = grads.get("ue.out.w").expect("encoder gradient present");
        let norm: f64 = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm > 1e-12, "encoder gradient vanished through quantizer");
    }

    #[test]
    fn episode_gradient_matches_finite_differences_passthrough() {
        // end-to-end check on the reduced instance, quantizer in the
        // continuous relaxation (sign() has zero finite difference a.e.)
        let s = small_scenario();
        let net = small_net(Variant::Jcas);
        let arch = Architecture::new(&s, &net).unwrap();
        let params = arch.init_params(0);
        let inputs = episode_inputs_from_seed(&s, 21, 10.0, 10.0, 10.0).unwrap();

        let out =
            forward_episode(&arch, &params, &inputs, QuantizerMode::PassThrough, true).unwrap();
        let grads = out.grads.unwrap();

        for name in ["pilot.basic_phases", "ue.out.w", "sn.head.w", "an.head.w"] {
            let analytic = grads.get(name).unwrap().clone();
            let base = params.get(name).clone();
            let mut f = |theta: &ArrayD<f64>| -> f64 {
                let mut p = params.clone();
                p.insert(name, theta.clone());
                forward_episode(&arch, &p, &inputs, QuantizerMode::PassThrough, false)
                    .unwrap()
                    .loss
            };
            let numeric = finite_difference(&mut f, &base, 1e-5);
            let err = rel_error(&analytic, &numeric);
            assert!(err < 1e-3, "{name}: episode-level rel err {err:.2e}");
        }
    }

    #[test]
    fn pilots_always_unit_modulus() {
        for variant in [
            Variant::Jcas,
            Variant::CommOnly,
            Variant::SensOnly,
            Variant::RandomPilot,
        ] {
            let s = small_scenario();
            let net = small_net(variant);
            let arch = Architecture::new(&s, &net).unwrap();
            let params = arch.init_params(2);
            // basic phases param always exists; reconstruct the tensor
            let phases = params.get("pilot.basic_phases");
            let target = 1.0 / (s.n_antennas as f64).sqrt();
            for &p in phases.iter() {
                let z = Complex64::from_polar(target, p);
                assert!((z.norm() - target).abs() < 1e-15);
            }
            let _ = arch;
        }
    }
}
