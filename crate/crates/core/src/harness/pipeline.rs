//! Runnable evaluation pipelines: the learned variants plus the classical
//! benchmark chains, each mapping (scene seed, SNR settings) to a metrics
//! record under the same pilot and feedback budget accounting.

use std::cell::RefCell;
use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use ndarray::{Array2, Array3};
use num_complex::Complex64;

use crate::beamforming::{ase, hybrid_egt_rzf};
use crate::channel::{comm_channel, sample_scene, sens_channel, Scene};
use crate::config::{ScenarioConfig, SensLoss, Variant};
use crate::error::{Error, Result};
use crate::frame::{echo_observe, noise_variance, ue_observe, PilotTensor};
use crate::metrics::{angle_rmse, cosine_similarity, nmse, to_db, MetricsRecord, SnrSettings};
use crate::semantic::{
    csi_decode, csi_encode, echo_noise_stream, episode_inputs_from_seed, forward_episode,
    stage1_pilots, stage2_pilots, CheckpointKind, CsiModel, ModelState, QuantizerMode,
};
use crate::sparse::{gmmv_somp, music_spectrum, pick_peaks, AngleDictionary, MusicSpectrum};

/// Default dictionary oversampling for the sparse-recovery benchmarks.
const GRID_OVERSAMPLE: usize = 4;
/// Residual stopping tolerance for the CS benchmarks.
const SOMP_RES_TOL: f64 = 1e-3;

/// Everything `build_pipeline` can name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PipelineKind {
    Jcas,
    CommOnly,
    SensOnly,
    RandomPilot,
    /// The sensing head trained with NMSE instead of cosine similarity.
    JcasNmse,
    PerfectCeCsinetEgtRzf,
    GmmvSompPerfectFbEgtRzf,
    GmmvSompMusic,
    SensCasterPilotGmmv,
}

pub const ALL_PIPELINES: [PipelineKind; 9] = [
    PipelineKind::Jcas,
    PipelineKind::CommOnly,
    PipelineKind::SensOnly,
    PipelineKind::RandomPilot,
    PipelineKind::JcasNmse,
    PipelineKind::PerfectCeCsinetEgtRzf,
    PipelineKind::GmmvSompPerfectFbEgtRzf,
    PipelineKind::GmmvSompMusic,
    PipelineKind::SensCasterPilotGmmv,
];

impl PipelineKind {
    pub fn name(self) -> &'static str {
        match self {
            PipelineKind::Jcas => "jcas",
            PipelineKind::CommOnly => "comm_only",
            PipelineKind::SensOnly => "sens_only",
            PipelineKind::RandomPilot => "random_pilot",
            PipelineKind::JcasNmse => "jcas_nmse",
            PipelineKind::PerfectCeCsinetEgtRzf => "perfectCE_csinet_egtrzf",
            PipelineKind::GmmvSompPerfectFbEgtRzf => "gmmvsomp_perfectFB_egtrzf",
            PipelineKind::GmmvSompMusic => "gmmvsomp_music",
            PipelineKind::SensCasterPilotGmmv => "senscaster_pilot_gmmv",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        ALL_PIPELINES
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = ALL_PIPELINES.iter().map(|p| p.name()).collect();
                Error::Config(format!(
                    "unknown pipeline '{s}'; valid names: {}",
                    valid.join(", ")
                ))
            })
    }

    /// Pipelines backed by a trained model checkpoint.
    pub fn checkpoint_stem(self) -> Option<&'static str> {
        match self {
            PipelineKind::Jcas => Some("jcas"),
            PipelineKind::CommOnly => Some("comm_only"),
            PipelineKind::SensOnly => Some("sens_only"),
            PipelineKind::RandomPilot => Some("random_pilot"),
            PipelineKind::JcasNmse => Some("jcas_nmse"),
            PipelineKind::PerfectCeCsinetEgtRzf => Some("csi_baseline"),
            PipelineKind::SensCasterPilotGmmv => Some("sens_only"),
            _ => None,
        }
    }

    pub fn is_learned(self) -> bool {
        self.checkpoint_stem().is_some()
    }

    /// Whether the pipeline produces a sensing-channel estimate.
    pub fn senses(self) -> bool {
        !matches!(
            self,
            PipelineKind::CommOnly
                | PipelineKind::PerfectCeCsinetEgtRzf
                | PipelineKind::GmmvSompPerfectFbEgtRzf
        )
    }
}

/// Lazily loaded checkpoint directory shared by all pipelines in a run.
pub struct CheckpointSet {
    dir: PathBuf,
    models: RefCell<HashMap<String, Arc<ModelState>>>,
    csi: RefCell<Option<Arc<CsiModel>>>,
}

impl CheckpointSet {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            models: RefCell::new(HashMap::new()),
            csi: RefCell::new(None),
        }
    }

    pub fn path_for(&self, stem: &str) -> PathBuf {
        self.dir.join(format!("{stem}.ckpt"))
    }

    fn training_hint(&self, stem: &str) -> String {
        let (flag, extra) = match stem {
            "csi_baseline" => ("csi_baseline", String::new()),
            "jcas_nmse" => ("jcas", " --sens-loss nmse".to_string()),
            other => (other, String::new()),
        };
        format!(
            "missing checkpoint {}; train it with: semcast train --variant {flag}{extra} --out {}",
            self.path_for(stem).display(),
            self.dir.display()
        )
    }

    pub fn model(&self, stem: &str) -> Result<Arc<ModelState>> {
        if let Some(m) = self.models.borrow().get(stem) {
            return Ok(Arc::clone(m));
        }
        let path = self.path_for(stem);
        let ckpt = crate::semantic::load_checkpoint(&path)
            .map_err(|_| Error::Checkpoint(self.training_hint(stem)))?;
        let CheckpointKind::Variant(state) = ckpt.kind else {
            return Err(Error::Checkpoint(format!(
                "{} does not hold a pipeline model",
                path.display()
            )));
        };
        let state = Arc::new(state);
        self.models
            .borrow_mut()
            .insert(stem.to_string(), Arc::clone(&state));
        Ok(state)
    }

    pub fn csi(&self) -> Result<Arc<CsiModel>> {
        if let Some(m) = self.csi.borrow().as_ref() {
            return Ok(Arc::clone(m));
        }
        let path = self.path_for("csi_baseline");
        let ckpt = crate::semantic::load_checkpoint(&path)
            .map_err(|_| Error::Checkpoint(self.training_hint("csi_baseline")))?;
        let CheckpointKind::Csi(model) = ckpt.kind else {
            return Err(Error::Checkpoint(format!(
                "{} does not hold the CSI baseline",
                path.display()
            )));
        };
        let model = Arc::new(model);
        *self.csi.borrow_mut() = Some(Arc::clone(&model));
        Ok(model)
    }
}

/// Per-run evaluation options.
#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    /// Run MUSIC on sensing estimates and report matched angle RMSE.
    pub music: bool,
    pub music_step_deg: f64,
    /// Keep the full pseudospectrum (for spectra plots).
    pub keep_spectrum: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            music: false,
            music_step_deg: 0.1,
            keep_spectrum: false,
        }
    }
}

/// One pipeline evaluation on one scene.
#[derive(Debug)]
pub struct PipelineOutcome {
    pub metrics: MetricsRecord,
    /// All true angles matched within 1° (only when MUSIC ran).
    pub all_angles_within_1deg: Option<bool>,
    pub spectrum: Option<MusicSpectrum>,
    /// (pilot symbols transmitted, feedback bits per UE) actually consumed.
    pub overhead: (usize, usize),
}

fn check_model(
    state: &ModelState,
    scenario: &ScenarioConfig,
    expect_variant: Variant,
    expect_sens_loss: Option<SensLoss>,
) -> Result<()> {
    if !compatible(&state.scenario, scenario) {
        return Err(Error::Checkpoint(format!(
            "checkpoint for '{}' was trained under incompatible dimensions",
            expect_variant.name()
        )));
    }
    if state.net.variant != expect_variant {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds variant '{}', expected '{}'",
            state.net.variant.name(),
            expect_variant.name()
        )));
    }
    if let Some(sl) = expect_sens_loss {
        if state.net.sens_loss != sl {
            return Err(Error::Checkpoint(format!(
                "checkpoint sensing loss {:?} does not match requested {:?}",
                state.net.sens_loss, sl
            )));
        }
    }
    Ok(())
}

/// Architecture-relevant scenario fields must match the training scenario;
/// scene-statistics fields (target separation, coverage) may differ at
/// evaluation time.
fn compatible(a: &ScenarioConfig, b: &ScenarioConfig) -> bool {
    a.n_antennas == b.n_antennas
        && a.n_rf_chains == b.n_rf_chains
        && a.n_ues == b.n_ues
        && a.n_subcarriers == b.n_subcarriers
        && a.n_basic_pilots == b.n_basic_pilots
        && a.n_enhanced_pilots == b.n_enhanced_pilots
        && a.feedback_bits == b.feedback_bits
}

fn music_evaluation(
    estimate: &Array2<Complex64>,
    true_angles: &[f64],
    scenario: &ScenarioConfig,
    opts: &EvalOptions,
) -> Result<(Option<f64>, Option<bool>, Option<MusicSpectrum>)> {
    if !opts.music || true_angles.is_empty() {
        return Ok((None, None, None));
    }
    let grid = AngleDictionary::degree_uniform(
        scenario.angle_range_deg.0,
        scenario.angle_range_deg.1,
        opts.music_step_deg,
        scenario.n_antennas,
    )?;
    let spec = music_spectrum(estimate, &grid, true_angles.len())?;
    let picks = pick_peaks(&spec.values, &spec.grid_deg, true_angles.len())?;
    let rmse = angle_rmse(&picks.angles_deg, true_angles).ok();
    let hit = !picks.shortfall
        && picks.angles_deg.len() == true_angles.len()
        && true_angles.iter().all(|&t| {
            picks
                .angles_deg
                .iter()
                .any(|&p| (p - t).abs() <= 1.0)
        });
    Ok((
        rmse,
        Some(hit),
        if opts.keep_spectrum { Some(spec) } else { None },
    ))
}

fn sensing_metrics(
    truth: &Array2<Complex64>,
    estimate: &Array2<Complex64>,
) -> Result<(f64, f64)> {
    let cos = cosine_similarity(truth, estimate)?.value;
    let n = nmse(truth, estimate)?;
    Ok((cos, to_db(n)))
}

/// Evaluate one pipeline on the scene drawn from `scene_seed`.
pub fn run_pipeline(
    kind: PipelineKind,
    scenario: &ScenarioConfig,
    snr: SnrSettings,
    scene_seed: u64,
    ckpts: &CheckpointSet,
    opts: &EvalOptions,
) -> Result<PipelineOutcome> {
    let scene = sample_scene(scenario, scene_seed)?;
    match kind {
        PipelineKind::Jcas
        | PipelineKind::CommOnly
        | PipelineKind::SensOnly
        | PipelineKind::RandomPilot
        | PipelineKind::JcasNmse => learned_pipeline(kind, scenario, &scene, snr, scene_seed, ckpts, opts),
        PipelineKind::PerfectCeCsinetEgtRzf => csinet_pipeline(scenario, &scene, snr, ckpts),
        PipelineKind::GmmvSompPerfectFbEgtRzf => somp_comm_pipeline(scenario, &scene, snr, scene_seed),
        PipelineKind::GmmvSompMusic => somp_sensing_pipeline(scenario, &scene, snr, scene_seed, opts),
        PipelineKind::SensCasterPilotGmmv => {
            designed_pilot_somp_pipeline(scenario, &scene, snr, scene_seed, ckpts, opts)
        }
    }
}

fn learned_pipeline(
    kind: PipelineKind,
    scenario: &ScenarioConfig,
    scene: &Scene,
    snr: SnrSettings,
    scene_seed: u64,
    ckpts: &CheckpointSet,
    opts: &EvalOptions,
) -> Result<PipelineOutcome> {
    let (variant, sens_loss) = match kind {
        PipelineKind::Jcas => (Variant::Jcas, Some(SensLoss::Cosine)),
        PipelineKind::CommOnly => (Variant::CommOnly, None),
        PipelineKind::SensOnly => (Variant::SensOnly, Some(SensLoss::Cosine)),
        PipelineKind::RandomPilot => (Variant::RandomPilot, Some(SensLoss::Cosine)),
        PipelineKind::JcasNmse => (Variant::Jcas, Some(SensLoss::Nmse)),
        _ => unreachable!(),
    };
    let state = ckpts.model(kind.checkpoint_stem().unwrap())?;
    check_model(&state, scenario, variant, sens_loss)?;
    let arch = state.architecture()?;

    let mut inputs =
        episode_inputs_from_seed(scenario, scene_seed, snr.pilot_snr_db, snr.echo_snr_db, snr.data_snr_db)?;
    // keep the scene consistent with the caller's draw
    inputs.comm = comm_channel(scene, scenario)?;
    inputs.sens = sens_channel(scene, scenario)?;
    let out = forward_episode(&arch, &state.params, &inputs, QuantizerMode::Hard, false)?;

    // budget accounting: exactly the configured pilot symbols and bits
    let bits_per_ue = out.feedback_bits.first().map_or(0, |b| b.len());
    if out.pilot_symbols_used != scenario.n_pilot_symbols() {
        return Err(Error::Shape(format!(
            "pipeline consumed {} pilot symbols, budget is {}",
            out.pilot_symbols_used,
            scenario.n_pilot_symbols()
        )));
    }

    let mut metrics = MetricsRecord::empty(snr);
    if let Some(bf) = &out.beamformer {
        metrics.ase_bps_hz = Some(ase(&inputs.comm, bf, noise_variance(snr.data_snr_db))?);
    }
    let mut hit = None;
    let mut spectrum = None;
    if let Some(est) = &out.sens_estimate {
        let (cos, nmse_db) = sensing_metrics(&inputs.sens.h_s, est)?;
        metrics.cosine_sim = Some(cos);
        metrics.nmse_db = Some(nmse_db);
        let (rmse, h, sp) = music_evaluation(est, &inputs.sens.true_angles_deg, scenario, opts)?;
        metrics.angle_rmse_deg = rmse;
        hit = h;
        spectrum = sp;
    }
    Ok(PipelineOutcome {
        metrics,
        all_angles_within_1deg: hit,
        spectrum,
        overhead: (out.pilot_symbols_used, bits_per_ue),
    })
}

fn csinet_pipeline(
    scenario: &ScenarioConfig,
    scene: &Scene,
    snr: SnrSettings,
    ckpts: &CheckpointSet,
) -> Result<PipelineOutcome> {
    let model = ckpts.csi()?;
    if !compatible(&model.scenario, scenario) {
        return Err(Error::Checkpoint(
            "csi baseline checkpoint has incompatible dimensions".into(),
        ));
    }
    let comm = comm_channel(scene, scenario)?;
    let (n_ues, n_c, m) = (scenario.n_ues, scenario.n_subcarriers, scenario.n_antennas);
    let mut est = Array3::<Complex64>::zeros((n_ues, n_c, m));
    let mut bits_per_ue = 0;
    for u in 0..n_ues {
        let h_u = Array2::from_shape_fn((n_c, m), |(k, i)| comm.h[(u, k, i)]);
        let bits = csi_encode(&model, &h_u);
        bits_per_ue = bits.len();
        let recon = csi_decode(&model, &bits)?;
        for k in 0..n_c {
            for i in 0..m {
                est[(u, k, i)] = recon[(k, i)];
            }
        }
    }
    let noise_var = noise_variance(snr.data_snr_db);
    let bf = hybrid_egt_rzf(&est, scenario.n_rf_chains, noise_var, 1.0)?;
    let mut metrics = MetricsRecord::empty(snr);
    metrics.ase_bps_hz = Some(ase(&comm, &bf, noise_var)?);
    Ok(PipelineOutcome {
        metrics,
        all_angles_within_1deg: None,
        spectrum: None,
        overhead: (0, bits_per_ue),
    })
}

fn benchmark_pilots(scenario: &ScenarioConfig, scene_seed: u64) -> PilotTensor {
    PilotTensor::random(
        scenario.n_pilot_symbols(),
        scenario.n_subcarriers,
        scenario.n_antennas,
        crate::semantic::mix_seed(scene_seed, 0xb1_107),
    )
}

fn somp_comm_pipeline(
    scenario: &ScenarioConfig,
    scene: &Scene,
    snr: SnrSettings,
    scene_seed: u64,
) -> Result<PipelineOutcome> {
    let comm = comm_channel(scene, scenario)?;
    let pilots = benchmark_pilots(scenario, scene_seed);
    let obs = ue_observe(
        &pilots,
        &comm,
        snr.pilot_snr_db,
        crate::semantic::mix_seed(scene_seed, 0x0b5),
    )?;
    let dict = AngleDictionary::sine_uniform(
        GRID_OVERSAMPLE * scenario.n_antennas,
        scenario.n_antennas,
    )?;
    let (n_ues, n_c, m) = (scenario.n_ues, scenario.n_subcarriers, scenario.n_antennas);
    let mut est = Array3::<Complex64>::zeros((n_ues, n_c, m));
    for u in 0..n_ues {
        let obs_u = Array2::from_shape_fn((pilots.n_symbols(), n_c), |(p, k)| obs[(u, p, k)]);
        // benchmark setting: path count known per UE
        let n_paths = 1 + scene.ue_geometries[u].scatterer_paths.len();
        let sparse = gmmv_somp(&obs_u, &pilots, &dict, n_paths, SOMP_RES_TOL)?;
        for k in 0..n_c {
            for i in 0..m {
                est[(u, k, i)] = sparse.reconstructed[(k, i)];
            }
        }
    }
    let noise_var = noise_variance(snr.data_snr_db);
    let bf = hybrid_egt_rzf(&est, scenario.n_rf_chains, noise_var, 1.0)?;
    let mut metrics = MetricsRecord::empty(snr);
    metrics.ase_bps_hz = Some(ase(&comm, &bf, noise_var)?);
    Ok(PipelineOutcome {
        metrics,
        all_angles_within_1deg: None,
        spectrum: None,
        overhead: (pilots.n_symbols(), 0),
    })
}

fn somp_sensing_common(
    scenario: &ScenarioConfig,
    scene: &Scene,
    snr: SnrSettings,
    pilots: &PilotTensor,
    obs: &Array2<Complex64>,
    opts: &EvalOptions,
    bits_per_ue: usize,
) -> Result<PipelineOutcome> {
    let sens = sens_channel(scene, scenario)?;
    let dict = AngleDictionary::sine_uniform(
        GRID_OVERSAMPLE * scenario.n_antennas,
        scenario.n_antennas,
    )?;
    let n_targets = scene.targets.len().max(1);
    let sparse = gmmv_somp(obs, pilots, &dict, n_targets.min(obs.len()), SOMP_RES_TOL)?;
    let mut metrics = MetricsRecord::empty(snr);
    let (cos, nmse_db) = sensing_metrics(&sens.h_s, &sparse.reconstructed)?;
    metrics.cosine_sim = Some(cos);
    metrics.nmse_db = Some(nmse_db);
    let (rmse, hit, spectrum) =
        music_evaluation(&sparse.reconstructed, &sens.true_angles_deg, scenario, opts)?;
    metrics.angle_rmse_deg = rmse;
    Ok(PipelineOutcome {
        metrics,
        all_angles_within_1deg: hit,
        spectrum,
        overhead: (pilots.n_symbols(), bits_per_ue),
    })
}

fn somp_sensing_pipeline(
    scenario: &ScenarioConfig,
    scene: &Scene,
    snr: SnrSettings,
    scene_seed: u64,
    opts: &EvalOptions,
) -> Result<PipelineOutcome> {
    let sens = sens_channel(scene, scenario)?;
    let pilots = benchmark_pilots(scenario, scene_seed);
    let obs = echo_observe(
        &pilots,
        &sens,
        snr.echo_snr_db,
        crate::semantic::mix_seed(scene_seed, 0x0e5),
    )?;
    somp_sensing_common(scenario, scene, snr, &pilots, &obs, opts, 0)
}

fn designed_pilot_somp_pipeline(
    scenario: &ScenarioConfig,
    scene: &Scene,
    snr: SnrSettings,
    scene_seed: u64,
    ckpts: &CheckpointSet,
    opts: &EvalOptions,
) -> Result<PipelineOutcome> {
    let state = ckpts.model("sens_only")?;
    check_model(&state, scenario, Variant::SensOnly, Some(SensLoss::Cosine))?;
    let arch = state.architecture()?;
    let sens = sens_channel(scene, scenario)?;

    let inputs = episode_inputs_from_seed(
        scenario,
        scene_seed,
        snr.pilot_snr_db,
        snr.echo_snr_db,
        snr.data_snr_db,
    )?;
    let x1 = stage1_pilots(&arch, &state.params);
    let e1 = echo_observe(&x1, &sens, snr.echo_snr_db, echo_noise_stream(inputs.noise_seed, 0))?;
    let x2 = stage2_pilots(&arch, &state.params, &e1)?;
    let e2 = echo_observe(&x2, &sens, snr.echo_snr_db, echo_noise_stream(inputs.noise_seed, 1))?;
    let pilots = x1.concat(&x2)?;
    let obs = ndarray::concatenate(ndarray::Axis(0), &[e1.view(), e2.view()])
        .map_err(|e| Error::Shape(e.to_string()))?;
    somp_sensing_common(scenario, scene, snr, &pilots, &obs, opts, 0)
}
