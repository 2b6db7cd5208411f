//! Scenario and network configuration, loadable from one TOML file.
//!
//! The `[scenario]` table mirrors the case-study parameter names
//! (`carrier_ghz`, `bandwidth_mhz`, `n_subcarriers`, ...); the `[net]` table
//! configures the learned pipeline. Both tables are optional: missing keys
//! fall back to the defaults below.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};

/// Duplexing mode. Decides whether the frame needs a guard slot between the
/// downlink pilot/echo window and the uplink feedback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DuplexMode {
    #[serde(rename = "TDD", alias = "tdd")]
    Tdd,
    #[serde(rename = "FDD", alias = "fdd")]
    Fdd,
}

/// Physical scenario: array geometry, OFDM numerology, scene statistics, and
/// the pilot/feedback signaling budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Number of BS array antennas (M).
    pub n_antennas: usize,
    /// Number of RF chains behind the analog network.
    pub n_rf_chains: usize,
    /// Number of served single-antenna UEs.
    pub n_ues: usize,
    /// Number of OFDM subcarriers (N_c).
    pub n_subcarriers: usize,
    /// Carrier frequency in Hz.
    pub carrier_hz: f64,
    /// Signal bandwidth in Hz.
    pub bandwidth_hz: f64,
    /// Number of sensing targets (shared with the comm channel as scatterers).
    pub n_targets: usize,
    /// Coverage radius in meters; all ranges fall in (0, radius].
    pub coverage_radius_m: f64,
    /// Half-open azimuth interval [min, max) in degrees.
    pub angle_range_deg: (f64, f64),
    /// Minimum pairwise target separation, enforced by resampling.
    pub min_target_sep_deg: f64,
    /// Pilot symbols in the first (basic) sounding stage.
    pub n_basic_pilots: usize,
    /// Pilot symbols in the second (enhanced) sounding stage.
    pub n_enhanced_pilots: usize,
    /// Feedback budget B in bits (per UE unless `split_feedback_budget`).
    pub feedback_bits: usize,
    pub duplex_mode: DuplexMode,
}

impl ScenarioConfig {
    /// The case-study parameter set: 10 GHz carrier, 30.72 MHz bandwidth,
    /// 32 subcarriers, 32-antenna / 2-RF-chain array, 2 UEs, 6 targets,
    /// 2+2 pilot symbols, and 16 feedback bits.
    pub fn table1() -> Self {
        Self {
            n_antennas: 32,
            n_rf_chains: 2,
            n_ues: 2,
            n_subcarriers: 32,
            carrier_hz: 10.0e9,
            bandwidth_hz: 30.72e6,
            n_targets: 6,
            coverage_radius_m: 100.0,
            angle_range_deg: (-90.0, 90.0),
            min_target_sep_deg: 2.0,
            n_basic_pilots: 2,
            n_enhanced_pilots: 2,
            feedback_bits: 16,
            duplex_mode: DuplexMode::Fdd,
        }
    }

    /// Total pilot symbols across both stages.
    pub fn n_pilot_symbols(&self) -> usize {
        self.n_basic_pilots + self.n_enhanced_pilots
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_antennas == 0 {
            return Err(Error::Config("n_antennas must be >= 1".into()));
        }
        if self.n_rf_chains == 0 || self.n_rf_chains > self.n_antennas {
            return Err(Error::Config(format!(
                "n_rf_chains must be in 1..={}, got {}",
                self.n_antennas, self.n_rf_chains
            )));
        }
        if self.n_ues == 0 || self.n_ues > self.n_rf_chains {
            return Err(Error::Config(format!(
                "n_ues must be in 1..={} (one RF column per UE), got {}",
                self.n_rf_chains, self.n_ues
            )));
        }
        if self.n_subcarriers == 0 {
            return Err(Error::Config("n_subcarriers must be >= 1".into()));
        }
        if self.n_basic_pilots + self.n_enhanced_pilots == 0 {
            return Err(Error::Config(
                "need at least one pilot symbol across both stages".into(),
            ));
        }
        let (lo, hi) = self.angle_range_deg;
        if !(lo < hi && lo >= -90.0 && hi <= 90.0) {
            return Err(Error::Config(format!(
                "angle range must satisfy -90 <= lo < hi <= 90, got [{lo}, {hi})"
            )));
        }
        if self.coverage_radius_m <= 0.0 {
            return Err(Error::Config("coverage_radius_m must be positive".into()));
        }
        if self.feedback_bits == 0 {
            return Err(Error::Config("feedback_bits must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::table1()
    }
}

/// Which learned pipeline to instantiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Full joint pipeline: echo-driven pilots, UE feedback, comm and sensing heads.
    Jcas,
    /// Communication-only ablation: no echo processing anywhere, no sensing head.
    CommOnly,
    /// Sensing-only ablation: no UE path; sensing decoder sees zeroed feedback.
    SensOnly,
    /// Fixed seeded random-phase pilots; encoders/decoders still train.
    RandomPilot,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Jcas => "jcas",
            Variant::CommOnly => "comm_only",
            Variant::SensOnly => "sens_only",
            Variant::RandomPilot => "random_pilot",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "jcas" => Ok(Variant::Jcas),
            "comm_only" => Ok(Variant::CommOnly),
            "sens_only" => Ok(Variant::SensOnly),
            "random_pilot" => Ok(Variant::RandomPilot),
            other => Err(Error::Config(format!(
                "unknown variant '{other}'; valid: jcas, comm_only, sens_only, random_pilot"
            ))),
        }
    }
}

/// Loss used for the sensing head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensLoss {
    /// Per-subcarrier cosine similarity (subspace-focused, phase-invariant).
    Cosine,
    /// Normalized mean square error on the full response.
    Nmse,
}

/// Closed dB interval SNRs are sampled from during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrRangeDb {
    pub lo: f64,
    pub hi: f64,
}

impl SnrRangeDb {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }
}

/// Learning-rate schedule descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LrSchedule {
    Constant,
    /// Linear warmup followed by cosine decay to `floor * lr`.
    Cosine { warmup_steps: u64, floor: f64 },
}

/// Architecture and training hyperparameters for the learned pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub embed_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Weight w_c on the (negated) spectral-efficiency loss term.
    pub loss_weight_comm: f64,
    /// Weight w_s on the sensing loss term.
    pub loss_weight_sens: f64,
    pub variant: Variant,
    pub sens_loss: SensLoss,
    pub train_pilot_snr_db: SnrRangeDb,
    pub train_echo_snr_db: SnrRangeDb,
    pub train_data_snr_db: SnrRangeDb,
    pub batch: usize,
    pub steps: u64,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    /// If true, the B-bit budget is split across UEs instead of per UE.
    pub split_feedback_budget: bool,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            n_layers: 2,
            n_heads: 4,
            loss_weight_comm: 1.0,
            loss_weight_sens: 1.0,
            variant: Variant::Jcas,
            sens_loss: SensLoss::Cosine,
            train_pilot_snr_db: SnrRangeDb::new(-10.0, 10.0),
            train_echo_snr_db: SnrRangeDb::new(-10.0, 10.0),
            train_data_snr_db: SnrRangeDb::new(-10.0, 20.0),
            batch: 8,
            steps: 2000,
            lr: 1e-3,
            lr_schedule: LrSchedule::Cosine {
                warmup_steps: 100,
                floor: 0.1,
            },
            split_feedback_budget: false,
            seed: 0,
        }
    }
}

impl NetConfig {
    /// Feedback bits each UE actually sends under this config.
    pub fn bits_per_ue(&self, scenario: &ScenarioConfig) -> usize {
        if self.split_feedback_budget {
            (scenario.feedback_bits / scenario.n_ues).max(1)
        } else {
            scenario.feedback_bits
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.n_layers == 0 || self.n_heads == 0 {
            return Err(Error::Config("embed_dim, n_layers, n_heads must be >= 1".into()));
        }
        if self.embed_dim % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} must be divisible by n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        if self.loss_weight_comm < 0.0 || self.loss_weight_sens < 0.0 {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        Ok(())
    }
}

/// Raw `[scenario]` table as it appears on disk. Frequencies use the
/// case-study units (GHz / MHz); all keys are optional.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct ScenarioFile {
    carrier_ghz: f64,
    bandwidth_mhz: f64,
    n_subcarriers: usize,
    n_antennas: usize,
    n_rf_chains: usize,
    n_ues: usize,
    n_targets: usize,
    coverage_radius_m: f64,
    angle_min_deg: f64,
    angle_max_deg: f64,
    min_target_sep_deg: f64,
    n_basic_pilots: usize,
    n_enhanced_pilots: usize,
    feedback_bits: usize,
    duplex_mode: DuplexMode,
}

impl Default for ScenarioFile {
    fn default() -> Self {
        let t = ScenarioConfig::table1();
        Self {
            carrier_ghz: t.carrier_hz / 1e9,
            bandwidth_mhz: t.bandwidth_hz / 1e6,
            n_subcarriers: t.n_subcarriers,
            n_antennas: t.n_antennas,
            n_rf_chains: t.n_rf_chains,
            n_ues: t.n_ues,
            n_targets: t.n_targets,
            coverage_radius_m: t.coverage_radius_m,
            angle_min_deg: t.angle_range_deg.0,
            angle_max_deg: t.angle_range_deg.1,
            min_target_sep_deg: t.min_target_sep_deg,
            n_basic_pilots: t.n_basic_pilots,
            n_enhanced_pilots: t.n_enhanced_pilots,
            feedback_bits: t.feedback_bits,
            duplex_mode: t.duplex_mode,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct ConfigFile {
    scenario: ScenarioFile,
    net: NetConfig,
}

/// Scenario plus network configuration parsed from one file.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub scenario: ScenarioConfig,
    pub net: NetConfig,
}

/// Parse a TOML configuration string. Unknown keys are rejected so typos
/// surface instead of silently falling back to defaults.
pub fn parse_config(text: &str) -> Result<LoadedConfig> {
    let file: ConfigFile =
        toml::from_str(text).map_err(|e| Error::Config(format!("bad config file: {e}")))?;
    let s = file.scenario;
    let scenario = ScenarioConfig {
        n_antennas: s.n_antennas,
        n_rf_chains: s.n_rf_chains,
        n_ues: s.n_ues,
        n_subcarriers: s.n_subcarriers,
        carrier_hz: s.carrier_ghz * 1e9,
        bandwidth_hz: s.bandwidth_mhz * 1e6,
        n_targets: s.n_targets,
        coverage_radius_m: s.coverage_radius_m,
        angle_range_deg: (s.angle_min_deg, s.angle_max_deg),
        min_target_sep_deg: s.min_target_sep_deg,
        n_basic_pilots: s.n_basic_pilots,
        n_enhanced_pilots: s.n_enhanced_pilots,
        feedback_bits: s.feedback_bits,
        duplex_mode: s.duplex_mode,
    };
    scenario.validate()?;
    file.net.validate()?;
    Ok(LoadedConfig {
        scenario,
        net: file.net,
    })
}

/// Load a configuration file from disk; `None` yields the defaults.
pub fn load_config(path: Option<&Path>) -> Result<LoadedConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            parse_config(&text)
        }
        None => Ok(LoadedConfig {
            scenario: ScenarioConfig::table1(),
            net: NetConfig::default(),
        }),
    }
}
