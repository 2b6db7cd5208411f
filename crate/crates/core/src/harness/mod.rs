//! Configuration-driven experiment runner: assembles pipelines, runs seeded
//! Monte-Carlo sweeps with scenes paired across pipelines, persists results,
//! and emits plot files.

mod pipeline;
mod plot;
mod results;

pub use pipeline::{
    run_pipeline, CheckpointSet, EvalOptions, PipelineKind, PipelineOutcome, ALL_PIPELINES,
};
pub use plot::emit_plots;
pub use results::{
    read_results, summarize, write_results, MeanSe, ResultRecord, ResultsFile, ResultsHeader,
    SpectrumRecord, SummaryRow,
};

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::metrics::SnrSettings;
use crate::semantic::mix_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentId {
    Fig3AseVsDataSnr,
    Fig4SensVsEchoSnr,
    Fig5MusicSpectra,
    InvariantsSuite,
}

impl ExperimentId {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::Fig3AseVsDataSnr => "fig3_ase_vs_data_snr",
            ExperimentId::Fig4SensVsEchoSnr => "fig4_sens_vs_echo_snr",
            ExperimentId::Fig5MusicSpectra => "fig5_music_spectra",
            ExperimentId::InvariantsSuite => "invariants_suite",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fig3" | "fig3_ase_vs_data_snr" => Ok(ExperimentId::Fig3AseVsDataSnr),
            "fig4" | "fig4_sens_vs_echo_snr" => Ok(ExperimentId::Fig4SensVsEchoSnr),
            "fig5" | "fig5_music_spectra" => Ok(ExperimentId::Fig5MusicSpectra),
            "selftest" | "invariants_suite" => Ok(ExperimentId::InvariantsSuite),
            other => Err(Error::Config(format!(
                "unknown experiment '{other}'; valid: fig3, fig4, fig5, invariants_suite"
            ))),
        }
    }
}

/// A full experiment description: sweep values, fixed SNR settings, trial
/// counts, seed, and the pipelines to compare.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub id: ExperimentId,
    pub pipelines: Vec<String>,
    /// Swept dB values (data SNR for fig3, echo SNR for fig4/fig5).
    pub sweep_db: Vec<f64>,
    /// Pilot SNR panels (fig3); single fixed pilot SNR otherwise.
    pub pilot_snrs_db: Vec<f64>,
    pub fixed_echo_snr_db: f64,
    pub fixed_data_snr_db: f64,
    pub n_trials_classical: usize,
    pub n_trials_learned: usize,
    pub seed: u64,
    /// MUSIC grid step for fig5 evaluations.
    pub music_step_deg: f64,
    /// Minimum target separation for evaluation scenes (fig5 widens it so
    /// peak-to-truth matching at 1° stays well posed).
    pub min_target_sep_deg: Option<f64>,
}

impl ExperimentSpec {
    /// The case-study defaults for each experiment.
    pub fn defaults(id: ExperimentId) -> Self {
        match id {
            ExperimentId::Fig3AseVsDataSnr => Self {
                id,
                pipelines: [
                    PipelineKind::Jcas,
                    PipelineKind::CommOnly,
                    PipelineKind::RandomPilot,
                    PipelineKind::PerfectCeCsinetEgtRzf,
                    PipelineKind::GmmvSompPerfectFbEgtRzf,
                ]
                .iter()
                .map(|p| p.name().to_string())
                .collect(),
                sweep_db: vec![-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0],
                pilot_snrs_db: vec![-10.0, 0.0, 10.0],
                fixed_echo_snr_db: 10.0,
                fixed_data_snr_db: 10.0,
                n_trials_classical: 200,
                n_trials_learned: 50,
                seed: 0,
                music_step_deg: 0.1,
                min_target_sep_deg: None,
            },
            ExperimentId::Fig4SensVsEchoSnr => Self {
                id,
                pipelines: [
                    PipelineKind::Jcas,
                    PipelineKind::SensOnly,
                    PipelineKind::RandomPilot,
                    PipelineKind::GmmvSompMusic,
                    PipelineKind::SensCasterPilotGmmv,
                ]
                .iter()
                .map(|p| p.name().to_string())
                .collect(),
                sweep_db: vec![-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0],
                pilot_snrs_db: vec![10.0],
                fixed_echo_snr_db: 10.0,
                fixed_data_snr_db: 10.0,
                n_trials_classical: 200,
                n_trials_learned: 50,
                seed: 0,
                music_step_deg: 0.1,
                min_target_sep_deg: None,
            },
            ExperimentId::Fig5MusicSpectra => Self {
                id,
                pipelines: vec!["jcas".into(), "jcas_nmse".into()],
                sweep_db: vec![0.0],
                pilot_snrs_db: vec![10.0],
                fixed_echo_snr_db: 0.0,
                fixed_data_snr_db: 10.0,
                n_trials_classical: 50,
                n_trials_learned: 50,
                seed: 0,
                music_step_deg: 0.1,
                min_target_sep_deg: Some(10.0),
            },
            ExperimentId::InvariantsSuite => Self {
                id,
                pipelines: vec![],
                sweep_db: vec![0.0],
                pilot_snrs_db: vec![10.0],
                fixed_echo_snr_db: 10.0,
                fixed_data_snr_db: 10.0,
                n_trials_classical: 1,
                n_trials_learned: 1,
                seed: 0,
                music_step_deg: 0.1,
                min_target_sep_deg: None,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sweep_db.is_empty() {
            return Err(Error::Config("sweep list must be non-empty".into()));
        }
        if self.pilot_snrs_db.is_empty() {
            return Err(Error::Config("need at least one pilot SNR".into()));
        }
        for p in &self.pipelines {
            PipelineKind::parse(p)?;
        }
        Ok(())
    }
}

/// Outcome summary handed back to the CLI.
#[derive(Debug)]
pub struct RunSummary {
    pub n_records: usize,
    pub out_path: std::path::PathBuf,
    /// Selftest criteria outcomes when the invariants suite ran.
    pub selftest_failures: usize,
}

/// Run every (pipeline × panel × sweep point × trial), write the results
/// file, and return counts. Scenes are shared across pipelines at the same
/// (panel, sweep point, trial) index.
pub fn run_experiment(
    spec: &ExperimentSpec,
    scenario: &ScenarioConfig,
    ckpts: &CheckpointSet,
    out_path: &Path,
) -> Result<RunSummary> {
    spec.validate()?;
    if spec.id == ExperimentId::InvariantsSuite {
        return run_invariants_suite(spec, scenario, out_path);
    }

    let mut eval_scenario = scenario.clone();
    if let Some(sep) = spec.min_target_sep_deg {
        eval_scenario.min_target_sep_deg = sep;
    }

    let music = spec.id == ExperimentId::Fig5MusicSpectra;
    let mut records = Vec::new();
    let mut spectra = Vec::new();

    for (panel_idx, &pilot_snr) in spec.pilot_snrs_db.iter().enumerate() {
        for (sweep_idx, &sweep) in spec.sweep_db.iter().enumerate() {
            let snr = match spec.id {
                ExperimentId::Fig3AseVsDataSnr => SnrSettings {
                    pilot_snr_db: pilot_snr,
                    echo_snr_db: spec.fixed_echo_snr_db,
                    data_snr_db: sweep,
                },
                _ => SnrSettings {
                    pilot_snr_db: pilot_snr,
                    echo_snr_db: sweep,
                    data_snr_db: spec.fixed_data_snr_db,
                },
            };
            for name in &spec.pipelines {
                let kind = PipelineKind::parse(name)?;
                let trials = if kind.is_learned() {
                    spec.n_trials_learned
                } else {
                    spec.n_trials_classical
                };
                let opts = EvalOptions {
                    music,
                    music_step_deg: spec.music_step_deg,
                    keep_spectrum: false,
                };
                for trial in 0..trials {
                    let scene_seed = mix_seed(
                        spec.seed,
                        ((panel_idx as u64) << 40) ^ ((sweep_idx as u64) << 24) ^ trial as u64,
                    );
                    let keep_spectrum = music && trial == 0;
                    let opts = EvalOptions {
                        keep_spectrum,
                        ..opts
                    };
                    let t0 = Instant::now();
                    let out = run_pipeline(kind, &eval_scenario, snr, scene_seed, ckpts, &opts)?;
                    records.push(ResultRecord {
                        experiment: spec.id.name().to_string(),
                        pipeline: name.clone(),
                        sweep_db: sweep,
                        trial_seed: scene_seed,
                        metrics: out.metrics,
                        all_angles_within_1deg: out.all_angles_within_1deg,
                        wall_ms: t0.elapsed().as_secs_f64() * 1e3,
                    });
                    if let Some(sp) = out.spectrum {
                        let truth = crate::channel::sample_scene(&eval_scenario, scene_seed)?
                            .target_angles_sorted();
                        spectra.push(SpectrumRecord {
                            pipeline: name.clone(),
                            trial_seed: scene_seed,
                            sweep_db: sweep,
                            grid_deg: sp.grid_deg.clone(),
                            power_db: sp.values_db(),
                            true_angles_deg: truth,
                        });
                    }
                }
            }
        }
    }

    let summaries = summarize(&records);
    let header = ResultsHeader {
        schema: "semcast/1".into(),
        experiment: spec.id.name().to_string(),
        scenario: eval_scenario,
        spec: serde_json::to_value(spec).map_err(|e| Error::Results(e.to_string()))?,
    };
    let n = records.len();
    write_results(out_path, &header, &records, &spectra, &summaries)?;
    Ok(RunSummary {
        n_records: n,
        out_path: out_path.to_path_buf(),
        selftest_failures: 0,
    })
}

fn run_invariants_suite(
    spec: &ExperimentSpec,
    scenario: &ScenarioConfig,
    out_path: &Path,
) -> Result<RunSummary> {
    let reports = crate::selftest::run_all(scenario);
    let failures = reports.iter().filter(|r| !r.pass).count();
    let header = ResultsHeader {
        schema: "semcast/1".into(),
        experiment: spec.id.name().to_string(),
        scenario: scenario.clone(),
        spec: serde_json::to_value(spec).map_err(|e| Error::Results(e.to_string()))?,
    };
    let records: Vec<ResultRecord> = reports
        .iter()
        .map(|r| ResultRecord {
            experiment: spec.id.name().to_string(),
            pipeline: format!("criterion_{}_{}", r.criterion, r.name),
            sweep_db: 0.0,
            trial_seed: 0,
            metrics: {
                let mut m = crate::metrics::MetricsRecord::empty(SnrSettings {
                    pilot_snr_db: 0.0,
                    echo_snr_db: 0.0,
                    data_snr_db: 0.0,
                });
                m.ase_bps_hz = Some(if r.pass { 1.0 } else { 0.0 });
                m
            },
            all_angles_within_1deg: None,
            wall_ms: r.wall_ms,
        })
        .collect();
    write_results(out_path, &header, &records, &[], &summarize(&records))?;
    Ok(RunSummary {
        n_records: records.len(),
        out_path: out_path.to_path_buf(),
        selftest_failures: failures,
    })
}
