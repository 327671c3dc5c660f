//! Versioned checkpoint container.
//!
//! Layout: a UTF-8 header line `FASTVGAN-CKPT v1`, then one record per
//! tensor: an ASCII line `name rank d1 ... dk` followed by `numel`
//! little-endian 32-bit floats. Records cover parameter values, their Adam
//! state (`<name>.adam_m`, `<name>.adam_v`, `<name>.step`), per-speaker
//! prosody stats, and the global `train.step`. Save -> load -> save is
//! byte-identical.

use super::{ModelError, SpeakerStats, VcModel};
use crate::tensor::{ParamSet, Tensor};
use std::fs;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

pub const CKPT_HEADER: &str = "FASTVGAN-CKPT v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on '{path}': {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("'{0}' is not a checkpoint (bad header)")]
    BadHeader(String),
    #[error("checkpoint record '{0}' is malformed: {1}")]
    BadRecord(String, String),
    #[error("checkpoint is truncated in record '{0}'")]
    Truncated(String),
    #[error("checkpoint is missing record '{0}'")]
    MissingRecord(String),
    #[error("checkpoint record '{name}' has shape {got:?}, expected {expected:?}")]
    ShapeMismatch { name: String, got: Vec<usize>, expected: Vec<usize> },
    #[error("checkpoint has {0} unmatched record(s), first: '{1}'")]
    UnknownRecords(usize, String),
}

fn write_record(out: &mut Vec<u8>, name: &str, tensor: &Tensor<f32>) {
    let dims: Vec<String> = tensor.shape().iter().map(|d| d.to_string()).collect();
    let mut line = format!("{name} {}", tensor.rank());
    for d in &dims {
        line.push(' ');
        line.push_str(d);
    }
    line.push('\n');
    out.extend_from_slice(line.as_bytes());
    for v in tensor.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes the parameter set (values + Adam state) plus extra records.
pub fn save_checkpoint(
    path: &Path,
    set: &ParamSet<f32>,
    extras: &[(String, Tensor<f32>)],
) -> Result<(), CheckpointError> {
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_HEADER.as_bytes());
    out.push(b'\n');
    for p in set.iter() {
        write_record(&mut out, &p.name, &p.value);
        write_record(&mut out, &format!("{}.adam_m", p.name), &p.m);
        write_record(&mut out, &format!("{}.adam_v", p.name), &p.v);
        write_record(&mut out, &format!("{}.step", p.name), &Tensor::scalar(p.step as f32));
    }
    for (name, tensor) in extras {
        write_record(&mut out, name, tensor);
    }
    let mut f = fs::File::create(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    f.write_all(&out).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

/// Reads every record in file order.
pub fn load_checkpoint_records(path: &Path) -> Result<Vec<(String, Tensor<f32>)>, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let header_end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| CheckpointError::BadHeader(path.display().to_string()))?;
    if &bytes[..header_end] != CKPT_HEADER.as_bytes() {
        return Err(CheckpointError::BadHeader(path.display().to_string()));
    }
    let mut pos = header_end + 1;
    let mut records = Vec::new();
    while pos < bytes.len() {
        let line_end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|i| pos + i)
            .ok_or_else(|| CheckpointError::Truncated("<record header>".into()))?;
        let line = std::str::from_utf8(&bytes[pos..line_end])
            .map_err(|e| CheckpointError::BadRecord("<record header>".into(), e.to_string()))?;
        let mut fields = line.split(' ');
        let name = fields
            .next()
            .filter(|s| !s.is_empty())
            .ok_or_else(|| CheckpointError::BadRecord(line.into(), "empty name".into()))?
            .to_string();
        let rank: usize = fields
            .next()
            .ok_or_else(|| CheckpointError::BadRecord(name.clone(), "missing rank".into()))?
            .parse()
            .map_err(|_| CheckpointError::BadRecord(name.clone(), "bad rank".into()))?;
        let dims: Vec<usize> = fields
            .map(|f| {
                f.parse()
                    .map_err(|_| CheckpointError::BadRecord(name.clone(), format!("bad dim '{f}'")))
            })
            .collect::<Result<_, _>>()?;
        if dims.len() != rank {
            return Err(CheckpointError::BadRecord(
                name,
                format!("rank {rank} with {} dims", dims.len()),
            ));
        }
        let numel: usize = dims.iter().product();
        let data_start = line_end + 1;
        let data_end = data_start + numel * 4;
        if data_end > bytes.len() {
            return Err(CheckpointError::Truncated(name));
        }
        let data: Vec<f32> = bytes[data_start..data_end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        records.push((name, Tensor::new(&dims, data)));
        pos = data_end;
    }
    Ok(records)
}

/// Names of speakers whose embedding records appear in the checkpoint,
/// in file order.
pub(crate) fn speaker_names_in_records(records: &[(String, Tensor<f32>)]) -> Vec<String> {
    records
        .iter()
        .filter_map(|(name, _)| {
            name.strip_prefix("speaker.")
                .and_then(|rest| rest.strip_suffix(".embedding"))
                .map(str::to_string)
        })
        .collect()
}

impl VcModel<f32> {
    /// Writes parameters, optimizer state, speaker stats and the training
    /// step counter.
    pub fn save(&self, path: &Path, train_step: u64) -> Result<(), ModelError> {
        let mut extras: Vec<(String, Tensor<f32>)> = Vec::new();
        for name in self.speakers.names() {
            if let Ok(s) = self.speakers.stats(name) {
                extras.push((
                    format!("speaker.{name}.stats"),
                    Tensor::new(
                        &[3],
                        vec![s.mean_log_f0 as f32, s.std_log_f0 as f32, s.vowel_rate as f32],
                    ),
                ));
            }
        }
        extras.push(("train.step".into(), Tensor::scalar(train_step as f32)));
        save_checkpoint(path, &self.set, &extras)?;
        Ok(())
    }

    /// Rebuilds a model from a checkpoint. The config must describe the same
    /// architecture (symbol count and dims are validated against records).
    /// Returns the model and the stored training step.
    pub fn load(path: &Path, model_cfg: super::ModelConfig) -> Result<(Self, u64), ModelError> {
        let records = load_checkpoint_records(path)?;
        let speaker_names = speaker_names_in_records(&records);
        let mut model = VcModel::new(model_cfg, &speaker_names, 0)?;

        let mut by_name: std::collections::HashMap<String, Tensor<f32>> =
            records.into_iter().collect();
        for id in model.set.ids().collect::<Vec<_>>() {
            let name = model.set.param(id).name.clone();
            let value = by_name
                .remove(&name)
                .ok_or_else(|| CheckpointError::MissingRecord(name.clone()))?;
            if value.shape() != model.set.value(id).shape() {
                return Err(ModelError::Checkpoint(CheckpointError::ShapeMismatch {
                    name,
                    got: value.shape().to_vec(),
                    expected: model.set.value(id).shape().to_vec(),
                }));
            }
            let m = by_name
                .remove(&format!("{name}.adam_m"))
                .ok_or_else(|| CheckpointError::MissingRecord(format!("{name}.adam_m")))?;
            let v = by_name
                .remove(&format!("{name}.adam_v"))
                .ok_or_else(|| CheckpointError::MissingRecord(format!("{name}.adam_v")))?;
            let step = by_name
                .remove(&format!("{name}.step"))
                .ok_or_else(|| CheckpointError::MissingRecord(format!("{name}.step")))?;
            let p = model.set.param_mut(id);
            p.value = value;
            p.m = m;
            p.v = v;
            p.step = step.item() as u64;
        }
        for name in speaker_names {
            if let Some(s) = by_name.remove(&format!("speaker.{name}.stats")) {
                model.speakers.set_stats(
                    &name,
                    SpeakerStats {
                        mean_log_f0: s.data()[0] as f64,
                        std_log_f0: s.data()[1] as f64,
                        vowel_rate: s.data()[2] as f64,
                    },
                )?;
            }
        }
        let step = by_name
            .remove("train.step")
            .ok_or_else(|| CheckpointError::MissingRecord("train.step".into()))?
            .item() as u64;
        if !by_name.is_empty() {
            let first = by_name.keys().next().unwrap().clone();
            return Err(ModelError::Checkpoint(CheckpointError::UnknownRecords(
                by_name.len(),
                first,
            )));
        }
        Ok((model, step))
    }
}
