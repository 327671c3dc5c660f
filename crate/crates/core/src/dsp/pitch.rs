//! Autocorrelation F0 estimation (difference-function variant with
//! cumulative mean normalization and parabolic refinement) plus unvoiced-gap
//! interpolation.

use super::{frame_count, DspConfig, DspError, F0Contour, Waveform};

/// One F0 value per analysis frame, framed exactly like the mel front end.
/// Voicing is decided by the aperiodicity threshold on the normalized
/// difference minimum; unvoiced frames carry 0 Hz.
pub fn estimate_f0(w: &Waveform, cfg: &DspConfig) -> Result<F0Contour, DspError> {
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
    let sr = cfg.sample_rate as f64;
    let tau_min = (sr / cfg.f0_max).floor().max(2.0) as usize;
    let integration = cfg.win_size / 2;
    let tau_max = ((sr / cfg.f0_min).ceil() as usize).min(cfg.win_size - integration);
    if tau_min + 1 >= tau_max {
        return Err(DspError::InvalidF0Range { min: cfg.f0_min, max: cfg.f0_max });
    }

    let samples: Vec<f64> = w.samples().iter().map(|&s| s as f64).collect();
    let mut values = Vec::with_capacity(n_frames);
    let mut voiced = Vec::with_capacity(n_frames);
    let mut diff = vec![0.0; tau_max + 1];
    let mut cmnd = vec![1.0; tau_max + 1];
    for t in 0..n_frames {
        let seg = &samples[t * cfg.hop_size..t * cfg.hop_size + cfg.win_size];

        // difference function d(tau)
        for tau in 1..=tau_max {
            let mut acc = 0.0;
            for j in 0..integration {
                let d = seg[j] - seg[j + tau];
                acc += d * d;
            }
            diff[tau] = acc;
        }
        // cumulative-mean-normalized difference d'(tau)
        let mut running = 0.0;
        for tau in 1..=tau_max {
            running += diff[tau];
            cmnd[tau] = if running > 0.0 {
                diff[tau] * tau as f64 / running
            } else {
                1.0
            };
        }

        // first dip below threshold, descended to its local minimum;
        // fall back to the global minimum when nothing dips
        let mut best = 0usize;
        for tau in tau_min..=tau_max {
            if cmnd[tau] < cfg.f0_threshold {
                let mut m = tau;
                while m + 1 <= tau_max && cmnd[m + 1] < cmnd[m] {
                    m += 1;
                }
                best = m;
                break;
            }
        }
        if best == 0 {
            best = (tau_min..=tau_max)
                .min_by(|&a, &b| cmnd[a].partial_cmp(&cmnd[b]).unwrap())
                .unwrap();
        }

        if cmnd[best] < cfg.f0_threshold {
            // parabolic interpolation around the minimum
            let refined = if best > tau_min && best < tau_max {
                let (a, b, c) = (cmnd[best - 1], cmnd[best], cmnd[best + 1]);
                let denom = a - 2.0 * b + c;
                let delta = if denom.abs() > 1e-12 {
                    (0.5 * (a - c) / denom).clamp(-1.0, 1.0)
                } else {
                    0.0
                };
                best as f64 + delta
            } else {
                best as f64
            };
            values.push((sr / refined).clamp(cfg.f0_min, cfg.f0_max));
            voiced.push(true);
        } else {
            values.push(0.0);
            voiced.push(false);
        }
    }
    Ok(F0Contour::new(values, voiced))
}

/// Parses an external per-frame F0 file: one `hz voiced_flag` pair per line
/// (0 Hz allowed only on unvoiced frames).
pub fn parse_f0_text(text: &str) -> Result<F0Contour, DspError> {
    let mut values = Vec::new();
    let mut voiced = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |reason: String| DspError::InvalidConfig(format!("f0 file line {}: {reason}", i + 1));
        let mut fields = line.split_whitespace();
        let hz: f64 = fields
            .next()
            .ok_or_else(|| bad("missing hz".into()))?
            .parse()
            .map_err(|_| bad("bad hz value".into()))?;
        let flag: u8 = fields
            .next()
            .ok_or_else(|| bad("missing voiced flag".into()))?
            .parse()
            .map_err(|_| bad("bad voiced flag".into()))?;
        if fields.next().is_some() {
            return Err(bad("expected exactly 'hz voiced_flag'".into()));
        }
        let is_voiced = match flag {
            0 => false,
            1 => true,
            other => return Err(bad(format!("voiced flag must be 0 or 1, got {other}"))),
        };
        if is_voiced && !(hz.is_finite() && hz > 0.0) {
            return Err(bad(format!("voiced frame with non-positive F0 {hz}")));
        }
        values.push(if is_voiced { hz } else { 0.0 });
        voiced.push(is_voiced);
    }
    Ok(F0Contour::new(values, voiced))
}

/// Fills unvoiced gaps by linear interpolation in log-Hz between flanking
/// voiced frames; leading/trailing gaps copy the nearest voiced value. The
/// voicing mask is preserved unchanged.
pub fn interpolate_unvoiced(f: &F0Contour) -> Result<F0Contour, DspError> {
    let voiced_idx: Vec<usize> = (0..f.len()).filter(|&i| f.voiced[i]).collect();
    if voiced_idx.is_empty() {
        return Err(DspError::FullyUnvoiced);
    }
    let mut out = f.values_hz.clone();
    let first = voiced_idx[0];
    let last = *voiced_idx.last().unwrap();
    for v in out.iter_mut().take(first) {
        *v = f.values_hz[first];
    }
    for v in out.iter_mut().skip(last + 1) {
        *v = f.values_hz[last];
    }
    for pair in voiced_idx.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b - a > 1 {
            let la = f.values_hz[a].ln();
            let lb = f.values_hz[b].ln();
            for i in a + 1..b {
                let alpha = (i - a) as f64 / (b - a) as f64;
                out[i] = (la + alpha * (lb - la)).exp();
            }
        }
    }
    Ok(F0Contour::new(out, f.voiced.clone()))
}
