//! Inference-time prosody manipulation of the conditioning features.
//!
//! All transforms operate on the normalized log-F0 contour (speaker mean
//! already subtracted), the intensity contour, and the frame-quantized
//! phoneme alignment, before the conditioning tensor is assembled. Fixed
//! composition order: ambitus scaling (static and/or target-adapted), pitch
//! shift, vowel-duration scaling, then contour resampling to the new length.

use crate::align::{PhonemeAlignment, PhonemeInventory};
use crate::dsp::F0Contour;
use crate::model::SpeakerStats;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ControlError {
    #[error("{name} must be positive and finite, got {value}")]
    NonPositiveFactor { name: &'static str, value: f64 },
    #[error("contour is empty")]
    EmptyContour,
    #[error("no voiced frames in the corpus slice")]
    NoVoicedFrames,
    #[error("f0 and intensity lengths differ: {f0} vs {intensity}")]
    LengthMismatch { f0: usize, intensity: usize },
}

/// Requested transforms; factors of 1 and a shift of 0 are identities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProsodySpec {
    pub pitch_shift_semitones: f64,
    pub ambitus_factor: f64,
    pub vowel_duration_factor: f64,
    /// Mean-F0 adaptation is implicit in the model: the contour stays
    /// normalized to the source speaker's mean while the target embedding
    /// supplies the register. The flag exists for symmetry and reporting.
    pub use_target_mean_f0: bool,
    pub use_target_ambitus: bool,
    pub use_target_rate: bool,
}

impl Default for ProsodySpec {
    fn default() -> Self {
        Self {
            pitch_shift_semitones: 0.0,
            ambitus_factor: 1.0,
            vowel_duration_factor: 1.0,
            use_target_mean_f0: false,
            use_target_ambitus: false,
            use_target_rate: false,
        }
    }
}

impl ProsodySpec {
    pub fn validate(&self) -> Result<(), ControlError> {
        if !(self.ambitus_factor.is_finite() && self.ambitus_factor > 0.0) {
            return Err(ControlError::NonPositiveFactor {
                name: "ambitus factor",
                value: self.ambitus_factor,
            });
        }
        if !(self.vowel_duration_factor.is_finite() && self.vowel_duration_factor > 0.0) {
            return Err(ControlError::NonPositiveFactor {
                name: "vowel duration factor",
                value: self.vowel_duration_factor,
            });
        }
        if !self.pitch_shift_semitones.is_finite() {
            return Err(ControlError::NonPositiveFactor {
                name: "pitch shift",
                value: self.pitch_shift_semitones,
            });
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.pitch_shift_semitones == 0.0
            && self.ambitus_factor == 1.0
            && self.vowel_duration_factor == 1.0
            && !self.use_target_ambitus
            && !self.use_target_rate
    }
}

/// Adds `semitones * ln(2) / 12` to every frame of a normalized log-F0
/// contour.
pub fn pitch_shift(logf0_norm: &[f32], semitones: f64) -> Vec<f32> {
    let delta = (semitones * std::f64::consts::LN_2 / 12.0) as f32;
    logf0_norm.iter().map(|&v| v + delta).collect()
}

/// Scales deviations about the speaker's log-mean (the zero of the
/// normalized contour) by `factor`.
pub fn ambitus_scale(logf0_norm: &[f32], factor: f64) -> Result<Vec<f32>, ControlError> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(ControlError::NonPositiveFactor { name: "ambitus factor", value: factor });
    }
    let f = factor as f32;
    Ok(logf0_norm.iter().map(|&v| v * f).collect())
}

/// Multiplies every vowel's frame count by `factor` (round half away from
/// zero, floor 1 frame); non-vowels are untouched.
pub fn scale_vowel_durations(
    a: &PhonemeAlignment,
    inv: &PhonemeInventory,
    factor: f64,
) -> Result<PhonemeAlignment, ControlError> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(ControlError::NonPositiveFactor {
            name: "vowel duration factor",
            value: factor,
        });
    }
    let entries = a
        .entries
        .iter()
        .map(|&(label, frames)| {
            if inv.is_vowel(label) {
                let scaled = (frames as f64 * factor).round().max(1.0) as usize;
                (label, scaled)
            } else {
                (label, frames)
            }
        })
        .collect();
    Ok(PhonemeAlignment { entries })
}

/// Linear interpolation of one contour from its length to `new_len`.
/// Sample positions are `i * (old - 1) / (new - 1)`; a single output frame
/// takes the midpoint sample. Double precision throughout, so a linear ramp
/// survives stretch-and-shrink round trips exactly up to rounding.
pub fn resample_contour_f64(values: &[f64], new_len: usize) -> Result<Vec<f64>, ControlError> {
    if values.is_empty() {
        return Err(ControlError::EmptyContour);
    }
    let old = values.len();
    if new_len == 0 {
        return Ok(Vec::new());
    }
    if old == 1 {
        return Ok(vec![values[0]; new_len]);
    }
    let out = (0..new_len)
        .map(|i| {
            let pos = if new_len == 1 {
                (old - 1) as f64 / 2.0
            } else {
                i as f64 * (old - 1) as f64 / (new_len - 1) as f64
            };
            let lo = (pos.floor() as usize).min(old - 2);
            let alpha = pos - lo as f64;
            values[lo] * (1.0 - alpha) + values[lo + 1] * alpha
        })
        .collect();
    Ok(out)
}

/// [`resample_contour_f64`] over single-precision contours.
pub fn resample_contour(values: &[f32], new_len: usize) -> Result<Vec<f32>, ControlError> {
    let wide: Vec<f64> = values.iter().map(|&v| v as f64).collect();
    Ok(resample_contour_f64(&wide, new_len)?.into_iter().map(|v| v as f32).collect())
}

/// Resamples F0 and intensity together to match a re-timed alignment.
pub fn resample_contours(
    f0_norm: &[f32],
    intensity: &[f32],
    new_len: usize,
) -> Result<(Vec<f32>, Vec<f32>), ControlError> {
    if f0_norm.len() != intensity.len() {
        return Err(ControlError::LengthMismatch {
            f0: f0_norm.len(),
            intensity: intensity.len(),
        });
    }
    Ok((resample_contour(f0_norm, new_len)?, resample_contour(intensity, new_len)?))
}

/// Pools prosody statistics over a speaker's corpus slice: mean and standard
/// deviation of per-frame log-F0 over voiced frames, and mean frames per
/// vowel phoneme (0 when the slice has no vowels).
pub fn speaker_prosody_stats(
    contours: &[F0Contour],
    alignments: &[PhonemeAlignment],
    inv: &PhonemeInventory,
) -> Result<SpeakerStats, ControlError> {
    let mut logs = Vec::new();
    for c in contours {
        for (v, &voiced) in c.values_hz.iter().zip(&c.voiced) {
            if voiced && *v > 0.0 {
                logs.push(v.ln());
            }
        }
    }
    if logs.is_empty() {
        return Err(ControlError::NoVoicedFrames);
    }
    let n = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / n;
    let var = logs.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / n;

    let mut vowel_frames = 0usize;
    let mut vowel_count = 0usize;
    for a in alignments {
        for &(label, frames) in &a.entries {
            if inv.is_vowel(label) {
                vowel_frames += frames;
                vowel_count += 1;
            }
        }
    }
    let vowel_rate = if vowel_count > 0 { vowel_frames as f64 / vowel_count as f64 } else { 0.0 };
    Ok(SpeakerStats { mean_log_f0: mean, std_log_f0: var.sqrt(), vowel_rate })
}

/// Contours plus alignment, the unit the prosody pipeline transforms.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningSource {
    pub f0_norm: Vec<f32>,
    pub intensity: Vec<f32>,
    pub alignment: PhonemeAlignment,
}

/// Output of [`apply_prosody`]: transformed source plus any warnings about
/// skipped adaptations.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedConditioning {
    pub source: ConditioningSource,
    pub warnings: Vec<String>,
}

/// Applies a [`ProsodySpec`], composing static transforms with
/// target-speaker adaptation: ambitus first (static factor times
/// `std_target / std_source` if requested), then the pitch shift, then
/// vowel-duration scaling (static factor times target/source vowel rate if
/// requested), then contour resampling to the re-timed length.
pub fn apply_prosody(
    source: &ConditioningSource,
    inv: &PhonemeInventory,
    spec: &ProsodySpec,
    source_stats: Option<&SpeakerStats>,
    target_stats: Option<&SpeakerStats>,
) -> Result<AdaptedConditioning, ControlError> {
    spec.validate()?;
    let mut warnings = Vec::new();

    let mut ambitus = spec.ambitus_factor;
    if spec.use_target_ambitus {
        match (source_stats, target_stats) {
            (Some(s), Some(t)) if s.std_log_f0 > 0.0 => {
                ambitus *= t.std_log_f0 / s.std_log_f0;
            }
            (Some(_), Some(_)) => {
                warnings.push("source log-F0 std is zero; ambitus adaptation skipped".into());
            }
            _ => warnings.push("missing speaker stats; ambitus adaptation skipped".into()),
        }
    }
    let mut f0 = ambitus_scale(&source.f0_norm, ambitus)?;
    f0 = pitch_shift(&f0, spec.pitch_shift_semitones);

    let mut duration = spec.vowel_duration_factor;
    if spec.use_target_rate {
        match (source_stats, target_stats) {
            (Some(s), Some(t)) if s.vowel_rate > 0.0 && t.vowel_rate > 0.0 => {
                duration *= t.vowel_rate / s.vowel_rate;
            }
            (Some(_), Some(_)) => {
                warnings.push("vowel rate unavailable; rate adaptation skipped".into());
            }
            _ => warnings.push("missing speaker stats; rate adaptation skipped".into()),
        }
    }
    let alignment = scale_vowel_durations(&source.alignment, inv, duration)?;
    let new_len = alignment.total_frames();
    let (f0, intensity) = resample_contours(&f0, &source.intensity, new_len)?;

    Ok(AdaptedConditioning {
        source: ConditioningSource { f0_norm: f0, intensity, alignment },
        warnings,
    })
}
