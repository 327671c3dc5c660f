//! Learnable unit-norm speaker embeddings with per-speaker prosody stats.

use super::ModelError;
use crate::tensor::{Elem, ParamId, ParamSet, Tensor};
use rand::Rng;
use std::collections::HashMap;

/// Pooled prosody statistics used for normalization and target adaptation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeakerStats {
    /// Mean of per-frame log-F0 over voiced frames, corpus-wide.
    pub mean_log_f0: f64,
    /// Standard deviation of per-frame log-F0 over voiced frames.
    pub std_log_f0: f64,
    /// Mean frames per vowel phoneme (speech-rate proxy).
    pub vowel_rate: f64,
}

/// Name -> embedding row lookup. Rows live in the shared [`ParamSet`] and are
/// re-projected to unit norm after every optimizer step.
#[derive(Debug, Clone)]
pub struct SpeakerTable {
    dim: usize,
    names: Vec<String>,
    ids: HashMap<String, usize>,
    rows: Vec<ParamId>,
    stats: Vec<Option<SpeakerStats>>,
}

impl SpeakerTable {
    pub fn new(dim: usize) -> Self {
        Self { dim, names: Vec::new(), ids: HashMap::new(), rows: Vec::new(), stats: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Registers a speaker with a random unit-norm row.
    pub fn register<T: Elem, R: Rng>(
        &mut self,
        set: &mut ParamSet<T>,
        name: &str,
        rng: &mut R,
    ) -> Result<usize, ModelError> {
        if self.ids.contains_key(name) {
            return Err(ModelError::DuplicateSpeaker(name.to_string()));
        }
        let mut row: Vec<f64> = (0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        for v in &mut row {
            *v /= norm;
        }
        let tensor = Tensor::new(&[self.dim], row.iter().map(|&v| T::from_f64(v)).collect());
        let pid = set.add(format!("speaker.{name}.embedding"), tensor);
        let idx = self.names.len();
        self.names.push(name.to_string());
        self.ids.insert(name.to_string(), idx);
        self.rows.push(pid);
        self.stats.push(None);
        Ok(idx)
    }

    pub fn row(&self, name: &str) -> Result<ParamId, ModelError> {
        self.ids
            .get(name)
            .map(|&i| self.rows[i])
            .ok_or_else(|| ModelError::UnknownSpeaker(name.to_string()))
    }

    /// Current embedding values for a speaker.
    pub fn vector<T: Elem>(&self, set: &ParamSet<T>, name: &str) -> Result<Tensor<T>, ModelError> {
        Ok(set.value(self.row(name)?).clone())
    }

    pub fn set_stats(&mut self, name: &str, stats: SpeakerStats) -> Result<(), ModelError> {
        let idx = *self
            .ids
            .get(name)
            .ok_or_else(|| ModelError::UnknownSpeaker(name.to_string()))?;
        self.stats[idx] = Some(stats);
        Ok(())
    }

    pub fn stats(&self, name: &str) -> Result<SpeakerStats, ModelError> {
        let idx = *self
            .ids
            .get(name)
            .ok_or_else(|| ModelError::UnknownSpeaker(name.to_string()))?;
        self.stats[idx].ok_or_else(|| ModelError::MissingStats(name.to_string()))
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.rows.clone()
    }

    /// Divides every row by its Euclidean norm; call after each optimizer
    /// step to maintain the unit-norm constraint.
    pub fn project_unit_norm<T: Elem>(&self, set: &mut ParamSet<T>) {
        for &pid in &self.rows {
            let value = set.value_mut(pid);
            let norm = value
                .data()
                .iter()
                .map(|v| v.to_f64() * v.to_f64())
                .sum::<f64>()
                .sqrt()
                .max(1e-12);
            let inv = T::from_f64(1.0 / norm);
            for v in value.data_mut() {
                *v = *v * inv;
            }
        }
    }
}
