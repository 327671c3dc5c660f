//! RIFF/WAVE reading and writing, 16-bit PCM mono only.

use super::Waveform;
use std::fs;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("io error reading '{path}': {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("'{0}' is not a RIFF/WAVE file")]
    NotRiff(String),
    #[error("'{path}' is truncated (expected {expected} bytes in {what})")]
    Truncated {
        path: String,
        what: &'static str,
        expected: usize,
    },
    #[error("'{0}' has no fmt chunk")]
    MissingFmt(String),
    #[error("'{0}' has no data chunk")]
    MissingData(String),
    #[error("'{path}' is not 16-bit PCM mono: {detail}")]
    UnsupportedEncoding { path: String, detail: String },
}

fn u32_le(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

fn u16_le(b: &[u8]) -> u16 {
    u16::from_le_bytes([b[0], b[1]])
}

/// Reads a 16-bit PCM mono WAV file; any other encoding is rejected.
pub fn read_wav(path: &Path) -> Result<Waveform, WavError> {
    let name = path.display().to_string();
    let bytes = fs::read(path).map_err(|source| WavError::Io { path: name.clone(), source })?;
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(WavError::NotRiff(name));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // format, channels, rate, bits
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_le(&bytes[pos + 4..pos + 8]) as usize;
        let body_start = pos + 8;
        if body_start + size > bytes.len() {
            return Err(WavError::Truncated {
                path: name,
                what: "chunk body",
                expected: body_start + size,
            });
        }
        let body = &bytes[body_start..body_start + size];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(WavError::Truncated { path: name, what: "fmt chunk", expected: 16 });
                }
                fmt = Some((
                    u16_le(&body[0..2]),
                    u16_le(&body[2..4]),
                    u32_le(&body[4..8]),
                    u16_le(&body[14..16]),
                ));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word-aligned
        pos = body_start + size + (size & 1);
    }

    let (format, channels, rate, bits) = fmt.ok_or_else(|| WavError::MissingFmt(name.clone()))?;
    if format != 1 || channels != 1 || bits != 16 {
        return Err(WavError::UnsupportedEncoding {
            path: name,
            detail: format!("format tag {format}, {channels} channel(s), {bits}-bit"),
        });
    }
    let data = data.ok_or_else(|| WavError::MissingData(name.clone()))?;
    let samples: Vec<f32> = data
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f32 / 32768.0)
        .collect();
    Ok(Waveform::new(samples, rate))
}

/// Writes 16-bit PCM mono; samples are clamped to [-1, 1].
pub fn write_wav(path: &Path, w: &Waveform) -> Result<(), WavError> {
    let name = path.display().to_string();
    let n = w.samples().len();
    let data_size = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_size).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&w.sample_rate().to_le_bytes());
    out.extend_from_slice(&(w.sample_rate() * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_size.to_le_bytes());
    for &s in w.samples() {
        let v = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|source| WavError::Io { path: name.clone(), source })?;
    f.write_all(&out).map_err(|source| WavError::Io { path: name, source })?;
    Ok(())
}
