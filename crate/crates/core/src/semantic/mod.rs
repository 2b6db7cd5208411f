//! The learned channel-semantic pipeline: trainable basic pilots, an
//! echo-driven enhanced-pilot designer, UE-side quantized feedback encoders,
//! BS-side analog/digital beamforming decoders, a sensing-subspace decoder,
//! end-to-end training with weighted communication-and-sensing losses, and a
//! compressive CSI-feedback autoencoder baseline.
//!
//! One shared echo encoder trunk conditions the enhanced-pilot designer, the
//! beamforming decoders, and the sensing decoder. Ablation variants gate
//! which submodules exist: `CommOnly` drops all echo processing (enhanced
//! pilots become plain trainable phases), `SensOnly` drops the UE path, and
//! `RandomPilot` freezes both pilot stages at seeded random phases.

mod checkpoint;
mod csi;
mod episode;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointKind};
pub use csi::{csi_decode, csi_encode, csi_eval_nmse, train_csi_baseline, CsiModel};
pub use episode::{
    echo_noise_stream, episode_inputs_from_seed, forward_episode, loss_total, stage1_pilots,
    stage2_pilots, EpisodeInputs, EpisodeOutput, QuantizerMode,
};
pub use train::{train, train_with_progress, CurvePoint, TrainReport};

/// Deterministic seed mixer shared by the harness and training loops.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    episode::mix64(a, b)
}

use ndarray::{ArrayD, IxDyn};
use rand::Rng;

use crate::config::{NetConfig, ScenarioConfig, Variant};
use crate::error::{Error, Result};
use crate::nn::{init_rng, Linear, ParamSet, TransformerEncoder};

/// Antenna-dimension patch size for the analog decoder tokens.
const ANALOG_PATCH: usize = 8;

/// Static description of every learned submodule for one variant.
///
/// Submodules a variant does not use are simply absent, so their parameters
/// are never created, bound, or updated.
#[derive(Debug, Clone)]
pub struct Architecture {
    pub scenario: ScenarioConfig,
    pub net: NetConfig,
    pub bits_per_ue: usize,
    pub patch_size: usize,
    pub n_patches: usize,

    /// Stage-1 echo token projection (2·n_basic → D).
    pub echo_in_stage1: Option<Linear>,
    /// Both-stage echo token projection (2·(n_basic+n_enhanced) → D).
    pub echo_in_full: Option<Linear>,
    /// Shared echo trunk.
    pub echo_encoder: Option<TransformerEncoder>,
    /// Per-subcarrier enhanced-pilot phase head (D → n_enhanced·M).
    pub enh_head: Option<Linear>,

    /// UE observation token projection (2·(n_basic+n_enhanced) → D).
    pub ue_in: Option<Linear>,
    pub ue_encoder: Option<TransformerEncoder>,
    /// Pooled features → B-dimensional feedback embedding.
    pub ue_out: Option<Linear>,

    pub an_fb: Option<Linear>,
    pub an_ctx: Option<Linear>,
    pub an_encoder: Option<TransformerEncoder>,
    /// Per-patch phase head (D → patch_size).
    pub an_head: Option<Linear>,

    pub dg_fb: Option<Linear>,
    /// Analog-matrix token embed (2·M·n_rf → D).
    pub dg_an: Option<Linear>,
    pub dg_encoder: Option<TransformerEncoder>,
    /// Per-subcarrier digital head (D → 2·n_rf·n_ues).
    pub dg_head: Option<Linear>,

    pub sn_fb: Option<Linear>,
    pub sn_encoder: Option<TransformerEncoder>,
    /// Per-subcarrier sensing head (D → 2·M).
    pub sn_head: Option<Linear>,
}

impl Architecture {
    pub fn new(scenario: &ScenarioConfig, net: &NetConfig) -> Result<Self> {
        scenario.validate()?;
        net.validate()?;
        let d = net.embed_dim;
        let heads = net.n_heads;
        let layers = net.n_layers;
        let m = scenario.n_antennas;
        let (n_b, n_e) = (scenario.n_basic_pilots, scenario.n_enhanced_pilots);
        let bits = net.bits_per_ue(scenario);
        let patch_size = if m % ANALOG_PATCH == 0 { ANALOG_PATCH } else { m };
        let n_patches = m / patch_size;
        let v = net.variant;

        let uses_echo = v != Variant::CommOnly;
        let designs_pilot =
            matches!(v, Variant::Jcas | Variant::SensOnly) && n_e > 0;
        let has_ue_path = v != Variant::SensOnly;
        let has_sensing = v != Variant::CommOnly;

        Ok(Self {
            scenario: scenario.clone(),
            net: net.clone(),
            bits_per_ue: bits,
            patch_size,
            n_patches,
            echo_in_stage1: designs_pilot.then(|| Linear::new("echo.in1", 2 * n_b, d)),
            echo_in_full: uses_echo.then(|| Linear::new("echo.in", 2 * (n_b + n_e), d)),
            echo_encoder: uses_echo.then(|| TransformerEncoder::new("echo.enc", d, heads, layers)),
            enh_head: designs_pilot.then(|| Linear::new("enh.head", d, n_e * m)),
            ue_in: has_ue_path.then(|| Linear::new("ue.in", 2 * (n_b + n_e), d)),
            ue_encoder: has_ue_path.then(|| TransformerEncoder::new("ue.enc", d, heads, layers)),
            ue_out: has_ue_path.then(|| Linear::new("ue.out", d, bits)),
            an_fb: has_ue_path.then(|| Linear::new("an.fb", bits, d)),
            an_ctx: has_ue_path.then(|| Linear::new("an.ctx", d, d)),
            an_encoder: has_ue_path.then(|| TransformerEncoder::new("an.enc", d, heads, layers)),
            an_head: has_ue_path.then(|| Linear::new("an.head", d, patch_size)),
            dg_fb: has_ue_path.then(|| Linear::new("dg.fb", bits, d)),
            dg_an: has_ue_path.then(|| Linear::new("dg.an", 2 * m * scenario.n_rf_chains, d)),
            dg_encoder: has_ue_path.then(|| TransformerEncoder::new("dg.enc", d, heads, layers)),
            dg_head: has_ue_path
                .then(|| Linear::new("dg.head", d, 2 * scenario.n_rf_chains * scenario.n_ues)),
            sn_fb: has_sensing.then(|| Linear::new("sn.fb", bits, d)),
            sn_encoder: has_sensing.then(|| TransformerEncoder::new("sn.enc", d, heads, layers)),
            sn_head: has_sensing.then(|| Linear::new("sn.head", d, 2 * m)),
        })
    }

    /// Whether the pilot phase parameters receive gradients.
    pub fn pilots_trainable(&self) -> bool {
        self.net.variant != Variant::RandomPilot
    }

    /// Whether stage-2 pilots come from the echo-driven designer.
    pub fn designs_enhanced(&self) -> bool {
        self.enh_head.is_some()
    }

    /// Initialize every parameter this architecture uses. Deterministic in
    /// the seed; pilot phases start uniform on [0, 2π).
    pub fn init_params(&self, seed: u64) -> ParamSet {
        let mut params = ParamSet::new();
        let mut rng = init_rng(seed);
        let s = &self.scenario;
        let d = self.net.embed_dim;

        let phases = |shape: &[usize], rng: &mut rand_chacha::ChaCha8Rng| {
            ArrayD::from_shape_fn(IxDyn(shape), |_| {
                rng.random_range(0.0..std::f64::consts::TAU)
            })
        };
        params.insert(
            "pilot.basic_phases",
            phases(&[s.n_basic_pilots, s.n_subcarriers, s.n_antennas], &mut rng),
        );
        if !self.designs_enhanced() && s.n_enhanced_pilots > 0 {
            // CommOnly trains these directly; RandomPilot keeps them frozen
            params.insert(
                "pilot.enh_phases",
                phases(&[s.n_enhanced_pilots, s.n_subcarriers, s.n_antennas], &mut rng),
            );
        }

        let small = |rng: &mut rand_chacha::ChaCha8Rng, shape: &[usize]| {
            ArrayD::from_shape_fn(IxDyn(shape), |_| rng.random_range(-0.02..0.02))
        };
        if self.echo_encoder.is_some() {
            params.insert("pos.echo", small(&mut rng, &[s.n_subcarriers, d]));
        }
        if self.ue_encoder.is_some() {
            params.insert("pos.ue", small(&mut rng, &[s.n_subcarriers, d]));
            params.insert("an.queries", small(&mut rng, &[self.n_patches, d]));
            params.insert("dg.queries", small(&mut rng, &[s.n_subcarriers, d]));
        }

        macro_rules! init_all {
            ($($f:ident),*) => {
                $(if let Some(module) = &self.$f { module.init(&mut params, &mut rng); })*
            };
        }
        init_all!(
            echo_in_stage1,
            echo_in_full,
            echo_encoder,
            enh_head,
            ue_in,
            ue_encoder,
            ue_out,
            an_fb,
            an_ctx,
            an_encoder,
            an_head,
            dg_fb,
            dg_an,
            dg_encoder,
            dg_head,
            sn_fb,
            sn_encoder,
            sn_head
        );
        params
    }
}

/// A trainable (or trained) pipeline: configuration echo, parameters, and
/// training progress.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub scenario: ScenarioConfig,
    pub net: NetConfig,
    pub params: ParamSet,
    pub step: u64,
    /// (step, smoothed batch loss) history recorded during training.
    pub history: Vec<(u64, f64)>,
}

impl ModelState {
    pub fn new(scenario: &ScenarioConfig, net: &NetConfig) -> Result<Self> {
        let arch = Architecture::new(scenario, net)?;
        Ok(Self {
            scenario: scenario.clone(),
            net: net.clone(),
            params: arch.init_params(net.seed),
            step: 0,
            history: Vec::new(),
        })
    }

    pub fn architecture(&self) -> Result<Architecture> {
        Architecture::new(&self.scenario, &self.net)
    }

    pub fn validate_against(&self, scenario: &ScenarioConfig) -> Result<()> {
        if &self.scenario != scenario {
            return Err(Error::Checkpoint(
                "checkpoint was trained under a different scenario configuration".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{NetConfig, ScenarioConfig, Variant};

    fn net(variant: Variant) -> NetConfig {
        NetConfig {
            variant,
            embed_dim: 16,
            n_heads: 2,
            n_layers: 1,
            ..NetConfig::default()
        }
    }

    #[test]
    fn variant_gating_controls_parameter_sets() {
        let s = ScenarioConfig::table1();
        let jcas = Architecture::new(&s, &net(Variant::Jcas)).unwrap();
        let comm = Architecture::new(&s, &net(Variant::CommOnly)).unwrap();
        let sens = Architecture::new(&s, &net(Variant::SensOnly)).unwrap();
        let rand = Architecture::new(&s, &net(Variant::RandomPilot)).unwrap();

        let pj = jcas.init_params(0);
        let pc = comm.init_params(0);
        let ps = sens.init_params(0);
        let pr = rand.init_params(0);

        // JCAS: echo designer present, no raw enhanced phases
        assert!(pj.map.contains_key("enh.head.w"));
        assert!(!pj.map.contains_key("pilot.enh_phases"));
        assert!(pj.map.contains_key("sn.head.w"));
        assert!(pj.map.contains_key("ue.out.w"));

        // CommOnly: no echo processing at all, raw enhanced phases instead
        assert!(pc.map.contains_key("pilot.enh_phases"));
        assert!(!pc.map.keys().any(|k| k.starts_with("echo.")));
        assert!(!pc.map.keys().any(|k| k.starts_with("sn.")));
        assert!(pc.map.contains_key("ue.out.w"));

        // SensOnly: no UE path
        assert!(!ps.map.keys().any(|k| {
            k.starts_with("ue.") || k.starts_with("an.") || k.starts_with("dg.")
        }));
        assert!(ps.map.contains_key("sn.head.w"));
        assert!(ps.map.contains_key("enh.head.w"));

        // RandomPilot: frozen raw phases for both stages, full decoders
        assert!(pr.map.contains_key("pilot.enh_phases"));
        assert!(!pr.map.contains_key("enh.head.w"));
        assert!(pr.map.contains_key("sn.head.w"));
        assert!(!rand.pilots_trainable());
    }

    #[test]
    fn init_deterministic_in_seed() {
        let s = ScenarioConfig::table1();
        let arch = Architecture::new(&s, &net(Variant::Jcas)).unwrap();
        assert_eq!(arch.init_params(5), arch.init_params(5));
        assert_ne!(arch.init_params(5), arch.init_params(6));
    }

    #[test]
    fn patching_divides_antennas() {
        let s = ScenarioConfig::table1();
        let arch = Architecture::new(&s, &net(Variant::Jcas)).unwrap();
        assert_eq!(arch.patch_size * arch.n_patches, s.n_antennas);
    }
}
