//! Per-utterance feature cache files.
//!
//! Layout: header line `FVGFEAT v1`, a metadata line
//! `utterance_id speaker_id content_hash T n_mels n_entries sample_rate hop`,
//! then little-endian payloads: mel `T x n_mels` f32, F0 Hz f32 `T`, voicing
//! bytes `T`, intensity f32 `T`, and `n_entries` alignment pairs of u32
//! (label index, frame count). Writes are byte-deterministic, and the stored
//! content hash makes re-extraction idempotent.

use super::CliError;
use crate::align::PhonemeAlignment;
use crate::dsp::{DspConfig, F0Contour, MelSpectrogram};
use sha2::{Digest, Sha256};
use std::path::Path;

pub const FEATURE_HEADER: &str = "FVGFEAT v1";

/// Cached analysis results for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub utterance_id: String,
    pub speaker_id: String,
    pub content_hash: String,
    pub mel: MelSpectrogram,
    pub f0: F0Contour,
    pub intensity: Vec<f32>,
    pub alignment: PhonemeAlignment,
}

/// Hash of everything the features depend on: wav bytes, alignment bytes,
/// the external F0 file when present, and the dsp config.
pub fn content_hash(wav: &[u8], alignment: &[u8], f0_file: Option<&[u8]>, cfg: &DspConfig) -> String {
    let mut h = Sha256::new();
    h.update(wav);
    h.update([0u8]);
    h.update(alignment);
    h.update([0u8]);
    if let Some(f0) = f0_file {
        h.update(f0);
    }
    h.update([0u8]);
    h.update(toml::to_string(cfg).expect("dsp config serializes").as_bytes());
    let digest = h.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl FeatureFile {
    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let t = self.mel.n_frames();
        assert_eq!(self.f0.len(), t, "f0/mel frame mismatch");
        assert_eq!(self.intensity.len(), t, "intensity/mel frame mismatch");
        let mut out = Vec::new();
        out.extend_from_slice(FEATURE_HEADER.as_bytes());
        out.push(b'\n');
        let hop_samples =
            (self.mel.hop_seconds() * self.mel.sample_rate() as f64).round() as u32;
        out.extend_from_slice(
            format!(
                "{} {} {} {} {} {} {} {}\n",
                self.utterance_id,
                self.speaker_id,
                self.content_hash,
                t,
                self.mel.n_mels(),
                self.alignment.entries.len(),
                self.mel.sample_rate(),
                hop_samples,
            )
            .as_bytes(),
        );
        for v in self.mel.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.f0.values_hz {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        for &v in &self.f0.voiced {
            out.push(v as u8);
        }
        for v in &self.intensity {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &(label, frames) in &self.alignment.entries {
            out.extend_from_slice(&(label as u32).to_le_bytes());
            out.extend_from_slice(&(frames as u32).to_le_bytes());
        }
        std::fs::write(path, out)
            .map_err(|e| CliError::Runtime(format!("cannot write '{}': {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::Validation(format!("cannot read '{}': {e}", path.display())))?;
        let bad = |what: &str| {
            CliError::Validation(format!("feature file '{}': {what}", path.display()))
        };
        let mut pos = 0usize;
        let line = |pos: &mut usize| -> Result<String, CliError> {
            let end = bytes[*pos..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| bad("truncated header"))?;
            let s = std::str::from_utf8(&bytes[*pos..*pos + end])
                .map_err(|_| bad("non-utf8 header"))?
                .to_string();
            *pos += end + 1;
            Ok(s)
        };
        if line(&mut pos)? != FEATURE_HEADER {
            return Err(bad("bad header"));
        }
        let meta = line(&mut pos)?;
        let fields: Vec<&str> = meta.split(' ').collect();
        if fields.len() != 8 {
            return Err(bad("bad metadata line"));
        }
        let utterance_id = fields[0].to_string();
        let speaker_id = fields[1].to_string();
        let content_hash = fields[2].to_string();
        let t: usize = fields[3].parse().map_err(|_| bad("bad frame count"))?;
        let n_mels: usize = fields[4].parse().map_err(|_| bad("bad mel count"))?;
        let n_entries: usize = fields[5].parse().map_err(|_| bad("bad entry count"))?;
        let sample_rate: u32 = fields[6].parse().map_err(|_| bad("bad sample rate"))?;
        let hop_samples: u32 = fields[7].parse().map_err(|_| bad("bad hop"))?;

        let need = t * n_mels * 4 + t * 4 + t + t * 4 + n_entries * 8;
        if bytes.len() - pos != need {
            return Err(bad("payload size mismatch"));
        }
        let f32s = |pos: &mut usize, n: usize| -> Vec<f32> {
            let out = bytes[*pos..*pos + n * 4]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            *pos += n * 4;
            out
        };
        let mel_data = f32s(&mut pos, t * n_mels);
        let f0_hz = f32s(&mut pos, t);
        let voiced: Vec<bool> = bytes[pos..pos + t].iter().map(|&b| b != 0).collect();
        pos += t;
        let intensity = f32s(&mut pos, t);
        let mut entries = Vec::with_capacity(n_entries);
        for _ in 0..n_entries {
            let label = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
            let frames = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
            entries.push((label, frames));
            pos += 8;
        }
        let alignment = PhonemeAlignment { entries };
        if alignment.total_frames() != t {
            return Err(bad("alignment does not cover the mel frames"));
        }
        let mel = MelSpectrogram::new(
            mel_data,
            n_mels,
            hop_samples as f64 / sample_rate as f64,
            sample_rate,
        );
        let f0 = F0Contour::new(f0_hz.into_iter().map(|v| v as f64).collect(), voiced);
        Ok(Self { utterance_id, speaker_id, content_hash, mel, f0, intensity, alignment })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FeatureFile {
        let t = 12;
        let mel = MelSpectrogram::new(
            (0..t * 80).map(|i| -6.0 + (i % 9) as f32 * 0.3).collect(),
            80,
            0.0125,
            16000,
        );
        let voiced: Vec<bool> = (0..t).map(|i| i % 4 != 0).collect();
        let f0 = F0Contour::new(
            voiced.iter().map(|&v| if v { 150.0 } else { 0.0 }).collect(),
            voiced,
        );
        FeatureFile {
            utterance_id: "utt1".into(),
            speaker_id: "spk1".into(),
            content_hash: "abc123".into(),
            mel,
            f0,
            intensity: (0..t).map(|i| -4.0 + i as f32 * 0.1).collect(),
            alignment: PhonemeAlignment { entries: vec![(0, 4), (1, 8)] },
        }
    }

    #[test]
    fn round_trip_is_exact_and_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.fvgfeat");
        let p2 = dir.path().join("b.fvgfeat");
        let f = sample();
        f.save(&p1).unwrap();
        let loaded = FeatureFile::load(&p1).unwrap();
        assert_eq!(loaded, f);
        loaded.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn hash_depends_on_all_inputs() {
        let cfg = DspConfig::default();
        let base = content_hash(b"wav", b"align", None, &cfg);
        assert_ne!(base, content_hash(b"wav2", b"align", None, &cfg));
        assert_ne!(base, content_hash(b"wav", b"align2", None, &cfg));
        assert_ne!(base, content_hash(b"wav", b"align", Some(b"f0"), &cfg));
        let mut cfg2 = cfg.clone();
        cfg2.hop_size = 160;
        assert_ne!(base, content_hash(b"wav", b"align", None, &cfg2));
        // deterministic
        assert_eq!(base, content_hash(b"wav", b"align", None, &cfg));
    }

    #[test]
    fn corrupted_payload_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.fvgfeat");
        sample().save(&p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&p, bytes).unwrap();
        assert!(FeatureFile::load(&p).is_err());
    }
}
