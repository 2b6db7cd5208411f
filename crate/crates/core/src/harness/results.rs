//! Results file: line-delimited JSON records behind a header line echoing
//! the full configuration, summary lines with per-sweep-point aggregates,
//! and a trailing '#'-commented columnar table for quick reading. Lines
//! starting with '#' are ignored by the parser.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::metrics::MetricsRecord;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultsHeader {
    pub schema: String,
    pub experiment: String,
    pub scenario: ScenarioConfig,
    /// Full experiment spec echo (serialized spec).
    pub spec: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRecord {
    pub experiment: String,
    pub pipeline: String,
    /// The swept value (data SNR for fig3, echo SNR for fig4/fig5).
    pub sweep_db: f64,
    /// Scene / trial seed (shared across pipelines at one sweep point).
    pub trial_seed: u64,
    pub metrics: MetricsRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub all_angles_within_1deg: Option<bool>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumRecord {
    pub pipeline: String,
    pub trial_seed: u64,
    pub sweep_db: f64,
    pub grid_deg: Vec<f64>,
    pub power_db: Vec<f64>,
    pub true_angles_deg: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

/// Aggregates for one (pipeline, pilot panel, sweep point).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRow {
    pub pipeline: String,
    pub pilot_snr_db: f64,
    pub sweep_db: f64,
    pub stats: BTreeMap<String, MeanSe>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Header(ResultsHeader),
    Record(ResultRecord),
    Spectrum(SpectrumRecord),
    Summary(SummaryRow),
}

#[derive(Debug)]
pub struct ResultsFile {
    pub header: ResultsHeader,
    pub records: Vec<ResultRecord>,
    pub spectra: Vec<SpectrumRecord>,
    pub summaries: Vec<SummaryRow>,
}

fn mean_se(values: &[f64]) -> MeanSe {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n.max(1) as f64;
    let var = if n > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    MeanSe {
        mean,
        se: (var / n.max(1) as f64).sqrt(),
        n,
    }
}

/// Per-(pipeline, pilot SNR, sweep point) aggregates over trials.
pub fn summarize(records: &[ResultRecord]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, String, String), Vec<&ResultRecord>> = BTreeMap::new();
    for r in records {
        let key = (
            r.pipeline.clone(),
            format!("{:.6}", r.metrics.snr.pilot_snr_db),
            format!("{:.6}", r.sweep_db),
        );
        groups.entry(key).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((pipeline, _, _), rs)| {
            let mut stats = BTreeMap::new();
            let collect = |f: &dyn Fn(&ResultRecord) -> Option<f64>| -> Vec<f64> {
                rs.iter().filter_map(|r| f(r)).collect()
            };
            let ase = collect(&|r| r.metrics.ase_bps_hz);
            if !ase.is_empty() {
                stats.insert("ase_bps_hz".to_string(), mean_se(&ase));
            }
            let cos = collect(&|r| r.metrics.cosine_sim);
            if !cos.is_empty() {
                stats.insert("cosine_sim".to_string(), mean_se(&cos));
            }
            let nm = collect(&|r| r.metrics.nmse_db);
            if !nm.is_empty() {
                stats.insert("nmse_db".to_string(), mean_se(&nm));
            }
            let ar = collect(&|r| r.metrics.angle_rmse_deg);
            if !ar.is_empty() {
                stats.insert("angle_rmse_deg".to_string(), mean_se(&ar));
            }
            let hits: Vec<f64> = rs
                .iter()
                .filter_map(|r| r.all_angles_within_1deg.map(|h| if h { 1.0 } else { 0.0 }))
                .collect();
            if !hits.is_empty() {
                stats.insert("hit_rate".to_string(), mean_se(&hits));
            }
            SummaryRow {
                pipeline,
                pilot_snr_db: rs[0].metrics.snr.pilot_snr_db,
                sweep_db: rs[0].sweep_db,
                stats,
            }
        })
        .collect()
}

/// Write everything atomically (temp file + rename).
pub fn write_results(
    path: &Path,
    header: &ResultsHeader,
    records: &[ResultRecord],
    spectra: &[SpectrumRecord],
    summaries: &[SummaryRow],
) -> Result<()> {
    let mut out = String::new();
    out.push_str("# semcast results — line-delimited JSON; '#' lines are comments\n");
    let mut push = |line: &Line| -> Result<()> {
        out.push_str(
            &serde_json::to_string(line).map_err(|e| Error::Results(format!("encode: {e}")))?,
        );
        out.push('\n');
        Ok(())
    };
    push(&Line::Header(header.clone()))?;
    for r in records {
        push(&Line::Record(r.clone()))?;
    }
    for s in spectra {
        push(&Line::Spectrum(s.clone()))?;
    }
    for s in summaries {
        push(&Line::Summary(s.clone()))?;
    }

    // trailing columnar table
    out.push_str("#\n# pipeline                     pilot_dB sweep_dB      n  metric               mean        se\n");
    for s in summaries {
        for (metric, ms) in &s.stats {
            out.push_str(&format!(
                "# {:<28} {:>8.1} {:>8.1} {:>6}  {:<16} {:>9.4} {:>9.4}\n",
                s.pipeline, s.pilot_snr_db, s.sweep_db, ms.n, metric, ms.mean, ms.se
            ));
        }
    }

    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(out.as_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<ResultsFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Results(format!("cannot read {}: {e}", path.display())))?;
    let mut header = None;
    let mut records = Vec::new();
    let mut spectra = Vec::new();
    let mut summaries = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed: Line = serde_json::from_str(line)
            .map_err(|e| Error::Results(format!("line {}: {e}", ln + 1)))?;
        match parsed {
            Line::Header(h) => header = Some(h),
            Line::Record(r) => records.push(r),
            Line::Spectrum(s) => spectra.push(s),
            Line::Summary(s) => summaries.push(s),
        }
    }
    Ok(ResultsFile {
        header: header.ok_or_else(|| Error::Results("missing header line".into()))?,
        records,
        spectra,
        summaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::SnrSettings;

    fn record(pipeline: &str, sweep: f64, trial: u64, ase: f64) -> ResultRecord {
        ResultRecord {
            experiment: "fig3_ase_vs_data_snr".into(),
            pipeline: pipeline.into(),
            sweep_db: sweep,
            trial_seed: trial,
            metrics: MetricsRecord {
                ase_bps_hz: Some(ase),
                cosine_sim: None,
                nmse_db: None,
                angle_rmse_deg: None,
                snr: SnrSettings {
                    pilot_snr_db: 10.0,
                    echo_snr_db: 10.0,
                    data_snr_db: sweep,
                },
            },
            all_angles_within_1deg: None,
            wall_ms: 1.0,
        }
    }

    #[test]
    fn roundtrip_and_aggregation_exact() {
        let records: Vec<ResultRecord> = (0..10)
            .map(|t| record("jcas", 10.0, t, 3.0 + t as f64 * 0.1))
            .chain((0..10).map(|t| record("random_pilot", 10.0, t, 2.0)))
            .collect();
        let summaries = summarize(&records);
        let header = ResultsHeader {
            schema: "semcast/1".into(),
            experiment: "fig3_ase_vs_data_snr".into(),
            scenario: ScenarioConfig::table1(),
            spec: serde_json::json!({"n_trials": 10}),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        write_results(&path, &header, &records, &[], &summaries).unwrap();
        let loaded = read_results(&path).unwrap();
        assert_eq!(loaded.records.len(), 20);
        assert_eq!(loaded.summaries.len(), 2);

        // recomputing means from raw records matches stored aggregates
        let recomputed = summarize(&loaded.records);
        for (a, b) in recomputed.iter().zip(loaded.summaries.iter()) {
            assert_eq!(a.pipeline, b.pipeline);
            for (k, v) in &a.stats {
                let w = &b.stats[k];
                assert!((v.mean - w.mean).abs() < 1e-12);
                assert!((v.se - w.se).abs() < 1e-12);
                assert_eq!(v.n, w.n);
            }
        }
        // the jcas mean is the arithmetic mean of its 10 values
        let jcas = loaded
            .summaries
            .iter()
            .find(|s| s.pipeline == "jcas")
            .unwrap();
        let expect = (0..10).map(|t| 3.0 + t as f64 * 0.1).sum::<f64>() / 10.0;
        assert!((jcas.stats["ase_bps_hz"].mean - expect).abs() < 1e-12);
    }

    #[test]
    fn reader_rejects_missing_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "# only comments\n").unwrap();
        assert!(read_results(&path).is_err());
    }
}
