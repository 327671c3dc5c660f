//! Waveform analysis and resynthesis.
//!
//! Fixed-rate front end: STFT magnitudes through a triangular mel filterbank
//! into log-mel frames, per-frame intensity, autocorrelation F0 with voicing,
//! and Griffin-Lim inversion over a pseudo-inverted filterbank. All analyses
//! share one framing (no centering), so mel, F0 and intensity frame counts
//! always agree.

mod griffin_lim;
mod mel;
mod pitch;
mod wav;

pub use griffin_lim::griffin_lim;
pub use mel::{filterbank_center_frequencies, intensity, mel_filterbank, mel_spectrogram};
pub use pitch::{estimate_f0, interpolate_unvoiced, parse_f0_text};
pub use wav::{read_wav, write_wav, WavError};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Analysis/synthesis parameters shared by the whole pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DspConfig {
    pub sample_rate: u32,
    pub fft_size: usize,
    pub win_size: usize,
    pub hop_size: usize,
    pub mel_bins: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub mel_floor: f64,
    pub f0_min: f64,
    pub f0_max: f64,
    /// Aperiodicity threshold on the cumulative-mean-normalized difference
    /// minimum; frames above it are unvoiced.
    pub f0_threshold: f64,
    pub griffin_lim_iters: usize,
}

impl Default for DspConfig {
    fn default() -> Self {
        // 16 kHz, 80 frames/s front end.
        Self {
            sample_rate: 16_000,
            fft_size: 1024,
            win_size: 800,
            hop_size: 200,
            mel_bins: 80,
            fmin: 0.0,
            fmax: 8000.0,
            mel_floor: 1e-5,
            f0_min: 60.0,
            f0_max: 500.0,
            f0_threshold: 0.15,
            griffin_lim_iters: 60,
        }
    }
}

impl DspConfig {
    pub fn hop_seconds(&self) -> f64 {
        self.hop_size as f64 / self.sample_rate as f64
    }

    pub fn validate(&self) -> Result<(), DspError> {
        if self.sample_rate == 0 {
            return Err(DspError::InvalidConfig("sample_rate must be positive".into()));
        }
        if !(self.fft_size >= self.win_size && self.win_size >= self.hop_size && self.hop_size > 0)
        {
            return Err(DspError::InvalidConfig(format!(
                "need fft_size >= win_size >= hop_size >= 1, got {}/{}/{}",
                self.fft_size, self.win_size, self.hop_size
            )));
        }
        if self.mel_bins == 0 {
            return Err(DspError::InvalidConfig("mel_bins must be positive".into()));
        }
        if !(0.0 <= self.fmin && self.fmin < self.fmax && self.fmax <= self.sample_rate as f64 / 2.0)
        {
            return Err(DspError::InvalidConfig(format!(
                "mel range [{}, {}] invalid for sample rate {}",
                self.fmin, self.fmax, self.sample_rate
            )));
        }
        if !(0.0 < self.f0_min && self.f0_min < self.f0_max
            && self.f0_max < self.sample_rate as f64 / 2.0)
        {
            return Err(DspError::InvalidF0Range {
                min: self.f0_min,
                max: self.f0_max,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum DspError {
    #[error("invalid dsp config: {0}")]
    InvalidConfig(String),
    #[error("waveform is empty")]
    EmptyWaveform,
    #[error("waveform sample rate {waveform} does not match config {config}")]
    SampleRateMismatch { waveform: u32, config: u32 },
    #[error("waveform has {samples} samples, need at least {needed} for one analysis window")]
    WaveformTooShort { samples: usize, needed: usize },
    #[error("F0 search range [{min}, {max}] is invalid")]
    InvalidF0Range { min: f64, max: f64 },
    #[error("contour has no voiced frames")]
    FullyUnvoiced,
    #[error("mel filterbank pseudo-inverse is degenerate (pivot {pivot:.3e})")]
    DegeneratePseudoInverse { pivot: f64 },
    #[error("griffin-lim iteration count must be >= 1")]
    ZeroIterations,
    #[error(transparent)]
    Wav(#[from] WavError),
}

/// Mono audio, samples nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        assert!(sample_rate > 0, "sample rate must be positive");
        assert!(
            samples.iter().all(|s| s.is_finite()),
            "waveform samples must be finite"
        );
        Self { samples, sample_rate }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let sum: f64 = self.samples.iter().map(|&s| (s as f64) * (s as f64)).sum();
        (sum / self.samples.len() as f64).sqrt()
    }
}

/// Log-mel magnitudes, `n_frames x n_mels`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    data: Vec<f32>,
    n_mels: usize,
    hop_seconds: f64,
    sample_rate: u32,
}

impl MelSpectrogram {
    pub fn new(data: Vec<f32>, n_mels: usize, hop_seconds: f64, sample_rate: u32) -> Self {
        assert!(n_mels > 0 && data.len() % n_mels == 0, "ragged mel data");
        assert!(!data.is_empty(), "mel spectrogram needs at least one frame");
        Self { data, n_mels, hop_seconds, sample_rate }
    }

    pub fn n_frames(&self) -> usize {
        self.data.len() / self.n_mels
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn hop_seconds(&self) -> f64 {
        self.hop_seconds
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * self.n_mels..(t + 1) * self.n_mels]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
}

/// Per-frame fundamental frequency with voicing decisions. Unvoiced frames
/// carry 0 Hz until interpolation fills them.
#[derive(Debug, Clone, PartialEq)]
pub struct F0Contour {
    pub values_hz: Vec<f64>,
    pub voiced: Vec<bool>,
}

impl F0Contour {
    pub fn new(values_hz: Vec<f64>, voiced: Vec<bool>) -> Self {
        assert_eq!(values_hz.len(), voiced.len(), "contour length mismatch");
        for (v, &vo) in values_hz.iter().zip(&voiced) {
            assert!(!vo || *v > 0.0, "voiced frame with non-positive F0");
        }
        Self { values_hz, voiced }
    }

    pub fn len(&self) -> usize {
        self.values_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values_hz.is_empty()
    }
}

/// Per-frame mean log-mel energy.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityContour {
    pub values: Vec<f32>,
}

impl IntensityContour {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Frame count of the shared no-centering framing.
pub fn frame_count(samples: usize, cfg: &DspConfig) -> Result<usize, DspError> {
    if samples == 0 {
        return Err(DspError::EmptyWaveform);
    }
    if samples < cfg.win_size {
        return Err(DspError::WaveformTooShort { samples, needed: cfg.win_size });
    }
    Ok((samples - cfg.win_size) / cfg.hop_size + 1)
}
