//! STFT, mel filterbank, log-mel spectrogram and intensity.

use super::{frame_count, DspConfig, DspError, IntensityContour, MelSpectrogram, Waveform};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use std::f64::consts::PI;

/// Periodic Hann window.
pub(crate) fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank, `mel_bins x (fft_size/2 + 1)`, row-major.
/// Triangles peak at 1 and tile [fmin, fmax] with 50% overlap.
pub fn mel_filterbank(cfg: &DspConfig) -> Vec<f64> {
    let n_freq = cfg.fft_size / 2 + 1;
    let mel_lo = hz_to_mel(cfg.fmin);
    let mel_hi = hz_to_mel(cfg.fmax);
    let edges: Vec<f64> = (0..cfg.mel_bins + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.mel_bins + 1) as f64))
        .collect();
    let bin_hz = cfg.sample_rate as f64 / cfg.fft_size as f64;
    let mut fb = vec![0.0; cfg.mel_bins * n_freq];
    for b in 0..cfg.mel_bins {
        let (lo, center, hi) = (edges[b], edges[b + 1], edges[b + 2]);
        for k in 0..n_freq {
            let f = k as f64 * bin_hz;
            let w = if f <= center {
                (f - lo) / (center - lo)
            } else {
                (hi - f) / (hi - center)
            };
            if w > 0.0 {
                fb[b * n_freq + k] = w;
            }
        }
    }
    fb
}

/// Center frequency (Hz) of each mel bin; the analytic oracle for
/// pure-tone placement tests.
pub fn filterbank_center_frequencies(cfg: &DspConfig) -> Vec<f64> {
    let mel_lo = hz_to_mel(cfg.fmin);
    let mel_hi = hz_to_mel(cfg.fmax);
    (1..=cfg.mel_bins)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.mel_bins + 1) as f64))
        .collect()
}

/// Windowed FFT magnitudes for every frame; `T x (fft_size/2 + 1)`.
pub(crate) fn stft_magnitudes(samples: &[f64], cfg: &DspConfig) -> Vec<Vec<f64>> {
    stft_complex(samples, cfg)
        .into_iter()
        .map(|frame| frame.into_iter().map(|c| c.norm()).collect())
        .collect()
}

pub(crate) fn stft_complex(samples: &[f64], cfg: &DspConfig) -> Vec<Vec<Complex<f64>>> {
    let window = hann(cfg.win_size);
    // window-sum normalization keeps magnitudes on the sample amplitude scale
    let scale = 1.0 / window.iter().sum::<f64>();
    let n_frames = (samples.len() - cfg.win_size) / cfg.hop_size + 1;
    let n_freq = cfg.fft_size / 2 + 1;
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(cfg.fft_size);
    let mut out = Vec::with_capacity(n_frames);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
    for t in 0..n_frames {
        let start = t * cfg.hop_size;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = if i < cfg.win_size {
                Complex::new(samples[start + i] * window[i] * scale, 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        out.push(buf[..n_freq].to_vec());
    }
    out
}

/// Inverse STFT by overlap-add with squared-window normalization. Output
/// length is `(T - 1) * hop + win`, matching the no-centering analysis.
pub(crate) fn istft(frames: &[Vec<Complex<f64>>], cfg: &DspConfig) -> Vec<f64> {
    let window = hann(cfg.win_size);
    let n_freq = cfg.fft_size / 2 + 1;
    let out_len = (frames.len() - 1) * cfg.hop_size + cfg.win_size;
    let mut planner = FftPlanner::new();
    let ifft = planner.plan_fft_inverse(cfg.fft_size);
    let mut signal = vec![0.0; out_len];
    let mut norm = vec![0.0; out_len];
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
    // undo the analysis window-sum normalization, plus the FFT length factor
    let scale = window.iter().sum::<f64>() / cfg.fft_size as f64;
    for (t, frame) in frames.iter().enumerate() {
        debug_assert_eq!(frame.len(), n_freq);
        buf[..n_freq].copy_from_slice(frame);
        // rebuild the conjugate-symmetric upper half
        for k in n_freq..cfg.fft_size {
            buf[k] = frame[cfg.fft_size - k].conj();
        }
        ifft.process(&mut buf);
        let start = t * cfg.hop_size;
        for i in 0..cfg.win_size {
            signal[start + i] += buf[i].re * scale * window[i];
            norm[start + i] += window[i] * window[i];
        }
    }
    // Clamp the overlap normalizer: at the edges only one window tail covers
    // a sample and dividing by its square would amplify inconsistent-phase
    // content unboundedly. Interior overlap sums are O(1) and unaffected.
    for (s, n) in signal.iter_mut().zip(&norm) {
        *s /= n.max(1e-2);
    }
    signal
}

/// Log-mel spectrogram: `log(max(mel_floor, filterbank . |STFT|))`.
pub fn mel_spectrogram(w: &Waveform, cfg: &DspConfig) -> Result<MelSpectrogram, DspError> {
    cfg.validate()?;
    if w.is_empty() {
        return Err(DspError::EmptyWaveform);
    }
    if w.sample_rate() != cfg.sample_rate {
        return Err(DspError::SampleRateMismatch {
            waveform: w.sample_rate(),
            config: cfg.sample_rate,
        });
    }
    let n_frames = frame_count(w.len(), cfg)?;
    let samples: Vec<f64> = w.samples().iter().map(|&s| s as f64).collect();
    let mags = stft_magnitudes(&samples, cfg);
    debug_assert_eq!(mags.len(), n_frames);
    let fb = mel_filterbank(cfg);
    let n_freq = cfg.fft_size / 2 + 1;
    let mut data = Vec::with_capacity(n_frames * cfg.mel_bins);
    for mag in &mags {
        for b in 0..cfg.mel_bins {
            let row = &fb[b * n_freq..(b + 1) * n_freq];
            let e: f64 = row.iter().zip(mag).map(|(w, m)| w * m).sum();
            data.push(e.max(cfg.mel_floor).ln() as f32);
        }
    }
    Ok(MelSpectrogram::new(data, cfg.mel_bins, cfg.hop_seconds(), cfg.sample_rate))
}

/// Average energy along the frequency axis of the mel spectrogram.
pub fn intensity(m: &MelSpectrogram) -> IntensityContour {
    let n = m.n_mels() as f32;
    let values = (0..m.n_frames())
        .map(|t| m.frame(t).iter().sum::<f32>() / n)
        .collect();
    IntensityContour { values }
}
