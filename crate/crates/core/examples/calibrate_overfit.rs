// Calibration probe: how fast does reconstruction RMSE fall when
// overfitting two clips at 128-frame crops? Not part of the test suite.
#[path = "../tests/common/mod.rs"]
mod common;

use fastvgan::align::{encode_stream, parse_alignment, to_frames, PhonemeInventory};
use fastvgan::dsp::{estimate_f0, intensity, interpolate_unvoiced, mel_spectrogram, DspConfig};
use fastvgan::model::{normalize_f0, FeatureFrames, ModelConfig, VcModel};
use fastvgan::tensor::Tensor;
use fastvgan::train::{train_step, Corpus, TrainConfig, TrainUtterance};
use std::time::Instant;

fn main() {
    let lr: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let steps: u64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(400);
    let cfg = DspConfig::default();
    let inv = PhonemeInventory::parse(common::INVENTORY).unwrap();

    let mut utterances = Vec::new();
    for (speaker, variant) in [(common::SPEAKER_A, 0usize), (common::SPEAKER_B, 1usize)] {
        let (wav, alignment_text) = common::synth_clip(&speaker, 1.6375, variant, 16000);
        let mel = mel_spectrogram(&wav, &cfg).unwrap();
        let inten = intensity(&mel);
        let f0 = estimate_f0(&wav, &cfg).unwrap();
        let interp = interpolate_unvoiced(&f0).unwrap();
        let voiced_logs: Vec<f64> = f0
            .values_hz
            .iter()
            .zip(&f0.voiced)
            .filter(|(_, &v)| v)
            .map(|(x, _)| x.ln())
            .collect();
        let mean = voiced_logs.iter().sum::<f64>() / voiced_logs.len() as f64;
        let f0_norm = normalize_f0(&interp.values_hz, mean).unwrap();
        let segments = parse_alignment(&alignment_text, &inv).unwrap();
        let alignment = to_frames(&segments, cfg.hop_seconds(), mel.n_frames()).unwrap();
        let stream = encode_stream(&alignment, &inv).unwrap();
        let feats = FeatureFrames::new(f0_norm, inten.values, stream).unwrap();
        let target = Tensor::new(&[mel.n_frames(), 80], mel.data().to_vec());
        println!("utterance {}: {} frames", speaker.name, mel.n_frames());
        utterances.push(TrainUtterance { speaker: speaker.name.into(), feats, mel: target });
    }
    let corpus = Corpus { utterances };
    let mut model =
        VcModel::new(ModelConfig::new(inv.len()), &["spk_a".into(), "spk_b".into()], 7).unwrap();
    let tc = TrainConfig {
        batch_size: 2,
        lr,
        steps,
        seed: 7,
        w_rec: 1.0,
        w_gan: 0.0,
        checkpoint_interval: 0,
        excerpt_frames: 128,
    };
    let start = Instant::now();
    for step in 0..steps {
        let r = train_step(&mut model, &corpus, &tc, step).unwrap();
        if step < 4 || step % 10 == 0 || step == steps - 1 {
            use std::io::Write;
            println!(
                "step {:4}  g_rec {:.4}  ({:.2} s/step)",
                step,
                r.g_rec,
                start.elapsed().as_secs_f64() / (step + 1) as f64
            );
            std::io::stdout().flush().unwrap();
        }
        if r.g_rec < 0.30 {
            println!("reached 0.30 at step {step} after {:.1} s", start.elapsed().as_secs_f64());
            break;
        }
    }
    println!("total {:.1} s", start.elapsed().as_secs_f64());
}
