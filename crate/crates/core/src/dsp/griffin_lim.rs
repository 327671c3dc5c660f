//! Griffin-Lim phase reconstruction over a pseudo-inverted mel filterbank.

use super::mel::{istft, mel_filterbank, stft_complex};
use super::{DspConfig, DspError, MelSpectrogram, Waveform};
use rustfft::num_complex::Complex;

/// Inverts a log-mel spectrogram to a waveform.
///
/// The mel filterbank is undone with the right pseudo-inverse
/// `Fb^T (Fb Fb^T)^-1`, negative magnitudes clipped at zero, then Griffin-Lim
/// iterates STFT/ISTFT projections from a zero-phase start, so the result is
/// deterministic.
pub fn griffin_lim(m: &MelSpectrogram, cfg: &DspConfig, iters: usize) -> Result<Waveform, DspError> {
    cfg.validate()?;
    if iters == 0 {
        return Err(DspError::ZeroIterations);
    }
    let n_freq = cfg.fft_size / 2 + 1;
    let n_mels = m.n_mels();
    let fb = mel_filterbank(cfg);
    let pinv = right_pseudo_inverse(&fb, n_mels, n_freq)?;

    // linear magnitudes per frame: pinv . exp(logmel), clipped at 0
    let t_frames = m.n_frames();
    let mut target = vec![vec![0.0f64; n_freq]; t_frames];
    for t in 0..t_frames {
        let frame = m.frame(t);
        let mel_lin: Vec<f64> = frame.iter().map(|&v| (v as f64).exp()).collect();
        for k in 0..n_freq {
            let row = &pinv[k * n_mels..(k + 1) * n_mels];
            let v: f64 = row.iter().zip(&mel_lin).map(|(p, e)| p * e).sum();
            target[t][k] = v.max(0.0);
        }
    }

    // zero-phase initialization
    let mut spec: Vec<Vec<Complex<f64>>> = target
        .iter()
        .map(|frame| frame.iter().map(|&m| Complex::new(m, 0.0)).collect())
        .collect();

    for _ in 0..iters {
        let signal = istft(&spec, cfg);
        let reanalyzed = stft_complex(&signal, cfg);
        debug_assert_eq!(reanalyzed.len(), t_frames);
        for (t, frame) in reanalyzed.iter().enumerate() {
            for (k, &c) in frame.iter().enumerate() {
                let mag = c.norm();
                spec[t][k] = if mag > 1e-12 {
                    c / mag * target[t][k]
                } else {
                    Complex::new(target[t][k], 0.0)
                };
            }
        }
    }
    let signal = istft(&spec, cfg);
    Ok(Waveform::new(signal.iter().map(|&s| s as f32).collect(), cfg.sample_rate))
}

/// `Fb^T (Fb Fb^T)^-1` for a `rows x cols` filterbank, returned as
/// `cols x rows` row-major. Fails when the Gram matrix is singular.
fn right_pseudo_inverse(fb: &[f64], rows: usize, cols: usize) -> Result<Vec<f64>, DspError> {
    // gram = Fb . Fb^T (rows x rows)
    let mut gram = vec![0.0f64; rows * rows];
    for i in 0..rows {
        for j in i..rows {
            let a = &fb[i * cols..(i + 1) * cols];
            let b = &fb[j * cols..(j + 1) * cols];
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            gram[i * rows + j] = dot;
            gram[j * rows + i] = dot;
        }
    }
    let inv = invert(&mut gram, rows)?;
    // pinv = Fb^T . inv, stored cols x rows
    let mut pinv = vec![0.0f64; cols * rows];
    for k in 0..cols {
        for j in 0..rows {
            let mut acc = 0.0;
            for i in 0..rows {
                acc += fb[i * cols + k] * inv[i * rows + j];
            }
            pinv[k * rows + j] = acc;
        }
    }
    Ok(pinv)
}

/// Gauss-Jordan inverse with partial pivoting.
fn invert(a: &mut [f64], n: usize) -> Result<Vec<f64>, DspError> {
    let mut inv = vec![0.0f64; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for col in 0..n {
        let (pivot_row, pivot) = (col..n)
            .map(|r| (r, a[r * n + col].abs()))
            .max_by(|(_, x), (_, y)| x.partial_cmp(y).unwrap())
            .unwrap();
        if pivot < 1e-12 {
            return Err(DspError::DegeneratePseudoInverse { pivot });
        }
        if pivot_row != col {
            for k in 0..n {
                a.swap(pivot_row * n + k, col * n + k);
                inv.swap(pivot_row * n + k, col * n + k);
            }
        }
        let d = a[col * n + col];
        for k in 0..n {
            a[col * n + k] /= d;
            inv[col * n + k] /= d;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[r * n + col];
            if f != 0.0 {
                for k in 0..n {
                    a[r * n + k] -= f * a[col * n + k];
                    inv[r * n + k] -= f * inv[col * n + k];
                }
            }
        }
    }
    Ok(inv)
}
