//! Objective evaluation: mel-statistics speaker proxy, cosine similarity,
//! and bootstrapped confidence intervals.
//!
//! The proxy embedding is the concatenation of per-mel-bin means and
//! standard deviations over time. Absolute similarity numbers are not
//! comparable to external speaker-verification systems; only orderings and
//! intervals on the same corpus are meaningful.

use crate::dsp::MelSpectrogram;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("proxy embedding needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("cosine of a zero vector is undefined")]
    ZeroVector,
    #[error("bootstrap needs at least 2 scores, got {0}")]
    TooFewScores(usize),
    #[error("no pairs to evaluate")]
    NoPairs,
}

/// Per-bin mean and standard deviation over frames; 2 x mel bins long.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyEmbedding {
    pub vector: Vec<f64>,
}

/// Order-invariant spectral statistics of a mel spectrogram.
pub fn proxy_embedding(m: &MelSpectrogram) -> Result<ProxyEmbedding, EvalError> {
    let t = m.n_frames();
    if t < 2 {
        return Err(EvalError::TooFewFrames(t));
    }
    let bins = m.n_mels();
    let mut mean = vec![0.0f64; bins];
    for frame in 0..t {
        for (acc, &v) in mean.iter_mut().zip(m.frame(frame)) {
            *acc += v as f64;
        }
    }
    for v in &mut mean {
        *v /= t as f64;
    }
    let mut var = vec![0.0f64; bins];
    for frame in 0..t {
        for (b, &v) in m.frame(frame).iter().enumerate() {
            let d = v as f64 - mean[b];
            var[b] += d * d;
        }
    }
    let mut vector = mean;
    vector.extend(var.into_iter().map(|v| (v / t as f64).sqrt()));
    Ok(ProxyEmbedding { vector })
}

/// Standard cosine similarity in [-1, 1].
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    assert_eq!(a.len(), b.len(), "cosine of different-length vectors");
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(EvalError::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Percentile bootstrap CI of the mean: `n` resamples with replacement,
/// deterministic per seed.
pub fn bootstrap_ci(
    scores: &[f64],
    n: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64), EvalError> {
    if scores.len() < 2 {
        return Err(EvalError::TooFewScores(scores.len()));
    }
    assert!(n >= 1 && level > 0.0 && level < 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = Vec::with_capacity(n);
    for _ in 0..n {
        let mut acc = 0.0;
        for _ in 0..scores.len() {
            acc += scores[rng.gen_range(0..scores.len())];
        }
        means.push(acc / scores.len() as f64);
    }
    means.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let alpha = (1.0 - level) / 2.0;
    Ok((percentile(&means, alpha), percentile(&means, 1.0 - alpha)))
}

/// Linear-interpolation percentile of a sorted slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let alpha = pos - lo as f64;
    sorted[lo] * (1.0 - alpha) + sorted[hi] * alpha
}

/// One evaluated conversion pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairScore {
    pub pair_id: String,
    pub source: String,
    pub target: String,
    pub score: f64,
}

/// Scores plus the bootstrapped summary.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub scores: Vec<PairScore>,
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n_bootstrap: usize,
}

impl EvalReport {
    /// `pair_id,source,target,score` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pair_id,source,target,score\n");
        for s in &self.scores {
            out.push_str(&format!("{},{},{},{:.6}\n", s.pair_id, s.source, s.target, s.score));
        }
        out
    }

    /// `mean,ci_lo,ci_hi,n` line.
    pub fn summary_line(&self) -> String {
        format!("{:.6},{:.6},{:.6},{}\n", self.mean, self.ci_lo, self.ci_hi, self.scores.len())
    }
}

/// Evaluates converted/reference mel pairs: cosine between proxy embeddings
/// per pair, aggregated with a bootstrap CI of the mean.
pub fn eval_conversion(
    pairs: &[(String, String, MelSpectrogram, MelSpectrogram)],
    n_bootstrap: usize,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::NoPairs);
    }
    let mut scores = Vec::with_capacity(pairs.len());
    for (pair_id, target, converted, reference) in pairs {
        let a = proxy_embedding(converted)?;
        let b = proxy_embedding(reference)?;
        scores.push(PairScore {
            pair_id: pair_id.clone(),
            source: pair_id.clone(),
            target: target.clone(),
            score: cosine(&a.vector, &b.vector)?,
        });
    }
    let mean = scores.iter().map(|s| s.score).sum::<f64>() / scores.len() as f64;
    let values: Vec<f64> = scores.iter().map(|s| s.score).collect();
    let (ci_lo, ci_hi) = if values.len() >= 2 {
        bootstrap_ci(&values, n_bootstrap, 0.95, seed)?
    } else {
        (mean, mean)
    };
    Ok(EvalReport { scores, mean, ci_lo, ci_hi, n_bootstrap })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mel_from(data: Vec<f32>, bins: usize) -> MelSpectrogram {
        MelSpectrogram::new(data, bins, 0.0125, 16000)
    }

    #[test]
    fn constant_mel_has_zero_stds_and_mean_rows() {
        let m = mel_from(vec![-3.0; 4 * 80], 80);
        let e = proxy_embedding(&m).unwrap();
        assert_eq!(e.vector.len(), 160);
        for b in 0..80 {
            assert!((e.vector[b] + 3.0).abs() < 1e-9);
            assert_eq!(e.vector[80 + b], 0.0);
        }
    }

    #[test]
    fn embedding_is_frame_order_invariant() {
        let mut data = Vec::new();
        for t in 0..5 {
            for b in 0..80 {
                data.push(-(t as f32) - (b as f32) * 0.01);
            }
        }
        let m = mel_from(data.clone(), 80);
        // reverse the frames
        let mut rev = Vec::new();
        for t in (0..5).rev() {
            rev.extend_from_slice(&data[t * 80..(t + 1) * 80]);
        }
        let m_rev = mel_from(rev, 80);
        let a = proxy_embedding(&m).unwrap();
        let b = proxy_embedding(&m_rev).unwrap();
        for (x, y) in a.vector.iter().zip(&b.vector) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn global_offset_shifts_means_only() {
        let mut data = Vec::new();
        for t in 0..6 {
            for b in 0..80 {
                data.push(-4.0 + ((t * 7 + b) % 5) as f32 * 0.1);
            }
        }
        let m = mel_from(data.clone(), 80);
        let shifted = mel_from(data.iter().map(|v| v + 1.5).collect(), 80);
        let e1 = proxy_embedding(&m).unwrap();
        let e2 = proxy_embedding(&shifted).unwrap();
        for b in 0..80 {
            assert!((e2.vector[b] - e1.vector[b] - 1.5).abs() < 1e-6);
            assert!((e2.vector[80 + b] - e1.vector[80 + b]).abs() < 1e-6);
        }
    }

    #[test]
    fn single_frame_is_rejected() {
        let m = mel_from(vec![0.0; 80], 80);
        assert_eq!(proxy_embedding(&m).unwrap_err(), EvalError::TooFewFrames(1));
    }

    #[test]
    fn cosine_basics() {
        let x = vec![1.0, 2.0, -3.0];
        assert!((cosine(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let x2: Vec<f64> = x.iter().map(|v| v * 2.0).collect();
        assert!((cosine(&x, &x2).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap()).abs() < 1e-12);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]).unwrap_err(), EvalError::ZeroVector);
    }

    #[test]
    fn degenerate_scores_give_zero_width_interval() {
        let scores = vec![0.7; 10];
        let (lo, hi) = bootstrap_ci(&scores, 500, 0.95, 1).unwrap();
        assert_eq!(lo, hi); // every resample mean is identical
        assert!((lo - 0.7).abs() < 1e-12);
    }

    #[test]
    fn interval_is_deterministic_per_seed() {
        let scores: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = bootstrap_ci(&scores, 1000, 0.95, 42).unwrap();
        let b = bootstrap_ci(&scores, 1000, 0.95, 42).unwrap();
        assert_eq!(a, b);
        let c = bootstrap_ci(&scores, 1000, 0.95, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn binomial_interval_contains_half_and_is_narrow() {
        // 50 zeros and 50 ones: SE = 0.05, 95% CI width about 0.2
        let mut scores = vec![0.0; 50];
        scores.extend(vec![1.0; 50]);
        let (lo, hi) = bootstrap_ci(&scores, 1000, 0.95, 7).unwrap();
        assert!(lo <= 0.5 && 0.5 <= hi, "({lo}, {hi})");
        assert!(hi - lo < 0.3, "width {}", hi - lo);
    }

    #[test]
    fn interval_narrows_with_sample_size() {
        let small: Vec<f64> = (0..20).map(|i| (i as f64 * 0.7).sin()).collect();
        let large: Vec<f64> = (0..200).map(|i| ((i % 20) as f64 * 0.7).sin()).collect();
        let (lo_s, hi_s) = bootstrap_ci(&small, 1000, 0.95, 5).unwrap();
        let (lo_l, hi_l) = bootstrap_ci(&large, 1000, 0.95, 5).unwrap();
        assert!(hi_l - lo_l < hi_s - lo_s);
    }

    #[test]
    fn too_few_scores_error() {
        assert_eq!(bootstrap_ci(&[1.0], 100, 0.95, 0).unwrap_err(), EvalError::TooFewScores(1));
    }

    #[test]
    fn identical_pairs_score_one() {
        let mel = mel_from(
            (0..6 * 80).map(|i| -5.0 + ((i % 13) as f32) * 0.2).collect(),
            80,
        );
        let pairs: Vec<_> = (0..3)
            .map(|i| (format!("p{i}"), "spk".to_string(), mel.clone(), mel.clone()))
            .collect();
        let report = eval_conversion(&pairs, 200, 3).unwrap();
        assert!((report.mean - 1.0).abs() < 1e-9);
        assert!((report.ci_lo - 1.0).abs() < 1e-9);
        assert!((report.ci_hi - 1.0).abs() < 1e-9);
        let csv = report.to_csv();
        assert!(csv.starts_with("pair_id,source,target,score\n"));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn empty_pairing_errors() {
        assert_eq!(eval_conversion(&[], 100, 0).unwrap_err(), EvalError::NoPairs);
    }
}
