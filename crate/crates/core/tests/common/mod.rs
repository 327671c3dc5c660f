//! Shared test fixtures: a deterministic synthetic two-speaker corpus of
//! vowel-like clips, written as wav + alignment + inventory + manifest +
//! config so the full pipeline can run against it.

use fastvgan::cli::Config;
use fastvgan::dsp::{write_wav, Waveform};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

pub const INVENTORY: &str = "sil\naa\tV\nii\tV\nk\n";

#[derive(Debug, Clone, Copy)]
pub struct ToySpeaker {
    pub name: &'static str,
    pub f0_base: f64,
    /// (center_hz, weight) formant peaks shaping the harmonic envelope
    pub formants: [(f64, f64); 2],
}

pub const SPEAKER_A: ToySpeaker =
    ToySpeaker { name: "spk_a", f0_base: 130.0, formants: [(620.0, 1.0), (1100.0, 0.55)] };
pub const SPEAKER_B: ToySpeaker =
    ToySpeaker { name: "spk_b", f0_base: 265.0, formants: [(420.0, 1.0), (2350.0, 0.65)] };

fn hash_noise(i: u64) -> f64 {
    // cheap deterministic white noise in [-1, 1]
    let mut x = i.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(0xD1B54A32D192ED03);
    x ^= x >> 29;
    x = x.wrapping_mul(0xBF58476D1CE4E5B9);
    x ^= x >> 32;
    (x >> 11) as f64 / (1u64 << 52) as f64 * 2.0 - 1.0
}

/// Segment plan of one clip: labels with durations in seconds.
fn plan(seconds: f64, variant: usize) -> Vec<(&'static str, f64)> {
    let body = seconds - 0.22;
    let split = 0.38 + 0.08 * ((variant % 5) as f64 / 4.0); // 0.38..0.46
    vec![
        ("sil", 0.08),
        ("aa", body * split),
        ("k", 0.06),
        ("ii", body * (1.0 - split)),
        ("sil", 0.08),
    ]
}

/// Renders a vowel-like clip: phase-continuous harmonics under a formant
/// envelope, a noise burst for the consonant, silence elsewhere.
pub fn synth_clip(speaker: &ToySpeaker, seconds: f64, variant: usize, sr: u32) -> (Waveform, String) {
    let segs = plan(seconds, variant);
    let n = (seconds * sr as f64) as usize;
    let mut boundaries = Vec::new(); // (label, start_s, end_s)
    let mut t0 = 0.0;
    for (label, dur) in &segs {
        boundaries.push((*label, t0, t0 + dur));
        t0 += dur;
    }

    let envelope = |f: f64| -> f64 {
        let peaks: f64 = speaker
            .formants
            .iter()
            .map(|(fc, w)| w * (-((f - fc) / 420.0).powi(2)).exp())
            .sum();
        peaks + 0.02
    };
    // per-clip pitch movement: slight declination plus slow vibrato
    let f0_at = |t: f64| {
        speaker.f0_base
            * (1.0 - 0.04 * t / seconds + 0.015 * (2.0 * PI * 2.2 * t + variant as f64).sin())
    };

    let mut samples = vec![0.0f32; n];
    let mut phase = 0.0f64;
    let fade = 0.008; // seconds, segment-edge amplitude ramp
    for (i, s) in samples.iter_mut().enumerate() {
        let t = i as f64 / sr as f64;
        let f0 = f0_at(t);
        phase += 2.0 * PI * f0 / sr as f64;
        let seg = boundaries
            .iter()
            .find(|(_, a, b)| t >= *a && t < *b)
            .map(|(label, a, b)| (*label, *a, *b));
        let Some((label, a, b)) = seg else { continue };
        let gate = ((t - a) / fade).min((b - t) / fade).clamp(0.0, 1.0);
        let v = match label {
            "sil" => 0.0,
            "k" => 0.12 * hash_noise(i as u64 + variant as u64 * 7919),
            vowel => {
                // the second vowel sits slightly lower in pitch envelope terms
                let tilt = if vowel == "ii" { 0.92 } else { 1.0 };
                let mut acc = 0.0;
                for h in 1..=30 {
                    let f = f0 * h as f64 * tilt;
                    if f > 7600.0 {
                        break;
                    }
                    acc += envelope(f) / (h as f64).sqrt() * (phase * h as f64 * tilt).sin();
                }
                0.16 * acc
            }
        };
        *s = (v * gate) as f32;
    }
    // keep headroom
    let peak = samples.iter().fold(0.0f32, |m, &v| m.max(v.abs()));
    if peak > 0.85 {
        let k = 0.85 / peak;
        for v in &mut samples {
            *v *= k;
        }
    }

    let alignment: String = boundaries
        .iter()
        .map(|(label, a, b)| format!("{a:.4} {b:.4} {label}\n"))
        .collect();
    (Waveform::new(samples, sr), alignment)
}

pub struct ToyCorpus {
    pub root: PathBuf,
    pub config_path: PathBuf,
    pub manifest_path: PathBuf,
    pub config: Config,
    /// (utterance_id, speaker name) in manifest order
    pub utterances: Vec<(String, String)>,
}

/// Writes a full two-speaker corpus under `root`.
pub fn build_toy_corpus(root: &Path, clips_per_speaker: usize, seconds: f64) -> ToyCorpus {
    std::fs::create_dir_all(root).unwrap();
    std::fs::write(root.join("inventory.txt"), INVENTORY).unwrap();

    let mut manifest = String::from("utterance_id\tspeaker_id\twav_path\talignment_path\n");
    let mut utterances = Vec::new();
    for speaker in [SPEAKER_A, SPEAKER_B] {
        for c in 0..clips_per_speaker {
            let id = format!("{}_{c:02}", speaker.name);
            let (wav, alignment) = synth_clip(&speaker, seconds, c, 16000);
            write_wav(&root.join(format!("{id}.wav")), &wav).unwrap();
            std::fs::write(root.join(format!("{id}.lab")), alignment).unwrap();
            manifest.push_str(&format!("{id}\t{}\t{id}.wav\t{id}.lab\n", speaker.name));
            utterances.push((id, speaker.name.to_string()));
        }
    }
    let manifest_path = root.join("manifest.tsv");
    std::fs::write(&manifest_path, manifest).unwrap();

    let config = Config {
        seed: 41,
        cache_dir: root.join("cache"),
        inventory: root.join("inventory.txt"),
        dsp: fastvgan::dsp::DspConfig::default(),
        model: fastvgan::cli::ModelDims::default(),
        train: fastvgan::train::TrainConfig::default(),
    };
    let config_path = root.join("config.toml");
    std::fs::write(&config_path, config.to_toml()).unwrap();
    ToyCorpus { root: root.to_path_buf(), config_path, manifest_path, config, utterances }
}
