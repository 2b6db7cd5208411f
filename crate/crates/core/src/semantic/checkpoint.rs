//! Self-describing checkpoint container: an 8-byte magic, a JSON header
//! (configuration echo, step counter, loss history, parameter manifest),
//! then the raw little-endian f64 parameter data in manifest order.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::config::{NetConfig, ScenarioConfig};
use crate::error::{Error, Result};
use crate::nn::ParamSet;

use super::{CsiModel, ModelState};

const MAGIC: &[u8; 8] = b"SMCKPT01";

#[derive(Debug)]
pub enum CheckpointKind {
    Variant(ModelState),
    Csi(CsiModel),
}

#[derive(Debug)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    scenario: ScenarioConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    net: Option<NetConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    csi_bits: Option<usize>,
    #[serde(default)]
    seed: u64,
    step: u64,
    history: Vec<(u64, f64)>,
    manifest: Vec<(String, Vec<usize>)>,
}

fn write_params(out: &mut Vec<u8>, params: &ParamSet, manifest: &[(String, Vec<usize>)]) {
    for (name, _) in manifest {
        for &v in params.get(name).iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn read_params(data: &[u8], manifest: &[(String, Vec<usize>)]) -> Result<ParamSet> {
    let mut params = ParamSet::new();
    let mut offset = 0usize;
    for (name, shape) in manifest {
        let count: usize = shape.iter().product();
        let bytes = count * 8;
        if offset + bytes > data.len() {
            return Err(Error::Checkpoint(format!(
                "truncated parameter data at '{name}'"
            )));
        }
        let mut arr = ArrayD::zeros(IxDyn(shape));
        for (i, v) in arr.iter_mut().enumerate() {
            let start = offset + i * 8;
            let mut buf = [0u8; 8];
            buf.copy_from_slice(&data[start..start + 8]);
            *v = f64::from_le_bytes(buf);
        }
        offset += bytes;
        params.insert(name, arr);
    }
    if offset != data.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after parameter data",
            data.len() - offset
        )));
    }
    Ok(params)
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let (header, params) = match &ckpt.kind {
        CheckpointKind::Variant(state) => (
            Header {
                kind: "variant".into(),
                scenario: state.scenario.clone(),
                net: Some(state.net.clone()),
                csi_bits: None,
                seed: state.net.seed,
                step: state.step,
                history: state.history.clone(),
                manifest: state
                    .params
                    .map
                    .iter()
                    .map(|(k, v)| (k.clone(), v.shape().to_vec()))
                    .collect(),
            },
            &state.params,
        ),
        CheckpointKind::Csi(model) => (
            Header {
                kind: "csi".into(),
                scenario: model.scenario.clone(),
                net: None,
                csi_bits: Some(model.bits),
                seed: model.seed,
                step: model.step,
                history: model.history.clone(),
                manifest: model
                    .params
                    .map
                    .iter()
                    .map(|(k, v)| (k.clone(), v.shape().to_vec()))
                    .collect(),
            },
            &model.params,
        ),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::Checkpoint(format!("header encode: {e}")))?;
    let mut out = Vec::with_capacity(header_json.len() + 16 + params.n_scalars() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_json);
    write_params(&mut out, params, &header.manifest);

    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension("ckpt.tmp");
    let mut f = std::fs::File::create(&tmp)?;
    f.write_all(&out)?;
    f.sync_all()?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut data = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::Checkpoint(format!("cannot open {}: {e}", path.display())))?
        .read_to_end(&mut data)?;
    if data.len() < 16 || &data[..8] != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint file",
            path.display()
        )));
    }
    let header_len = u64::from_le_bytes(data[8..16].try_into().unwrap()) as usize;
    if data.len() < 16 + header_len {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&data[16..16 + header_len])
        .map_err(|e| Error::Checkpoint(format!("header decode: {e}")))?;
    let params = read_params(&data[16 + header_len..], &header.manifest)?;

    let kind = match header.kind.as_str() {
        "variant" => {
            let net = header
                .net
                .ok_or_else(|| Error::Checkpoint("variant checkpoint missing net config".into()))?;
            CheckpointKind::Variant(ModelState {
                scenario: header.scenario,
                net,
                params,
                step: header.step,
                history: header.history,
            })
        }
        "csi" => {
            let bits = header
                .csi_bits
                .ok_or_else(|| Error::Checkpoint("csi checkpoint missing bit width".into()))?;
            CheckpointKind::Csi(CsiModel {
                scenario: header.scenario,
                bits,
                params,
                step: header.step,
                history: header.history,
                seed: header.seed,
            })
        }
        other => {
            return Err(Error::Checkpoint(format!("unknown checkpoint kind '{other}'")));
        }
    };
    Ok(Checkpoint { kind })
}
