//! Joint adversarial training.
//!
//! Each step runs one discriminator update (generator frozen: its output
//! enters the discriminator graphs as a detached constant) followed by one
//! generator update (discriminators participate in the graph but their
//! gradients are not exported). Losses are least-squares GAN objectives with
//! real/fake targets 1/0 on both branches plus an RMSE reconstruction term,
//! weighted `w_rec` / `w_gan`. Speaker rows are re-projected to unit norm
//! after every step.

use crate::model::{assemble, discriminator_conditioning, FeatureFrames, VcModel};
use crate::tensor::{adam_step, AdamConfig, Graph, GraphError, OptimError, Tensor};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub steps: u64,
    pub seed: u64,
    pub w_rec: f64,
    pub w_gan: f64,
    pub checkpoint_interval: u64,
    pub excerpt_frames: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            lr: 1e-4,
            steps: 1000,
            seed: 0,
            w_rec: 1.0,
            w_gan: 0.5,
            checkpoint_interval: 500,
            excerpt_frames: 128,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.w_rec < 0.0 || self.w_gan < 0.0 {
            return Err(TrainError::InvalidConfig("loss weights must be >= 0".into()));
        }
        if self.excerpt_frames < 16 {
            return Err(TrainError::InvalidConfig("excerpt length must be >= 16 frames".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("utterance {index} has {frames} frames, fewer than the 16-frame minimum")]
    UtteranceTooShort { index: usize, frames: usize },
    #[error("non-finite {term} loss at step {step}")]
    NonFinite { step: u64, term: &'static str },
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error("io error on '{path}': {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl TrainError {
    fn from_graph(step: u64, term: &'static str, _e: GraphError) -> Self {
        TrainError::NonFinite { step, term }
    }
}

/// One training utterance: normalized conditioning features plus the target
/// log-mel frames, `T x 80`.
#[derive(Debug, Clone)]
pub struct TrainUtterance {
    pub speaker: String,
    pub feats: FeatureFrames,
    pub mel: Tensor<f32>,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub utterances: Vec<TrainUtterance>,
}

impl Corpus {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.utterances.is_empty() {
            return Err(TrainError::EmptyCorpus);
        }
        for (i, u) in self.utterances.iter().enumerate() {
            let t = u.feats.n_frames();
            if t < 16 {
                return Err(TrainError::UtteranceTooShort { index: i, frames: t });
            }
            assert_eq!(u.mel.shape()[0], t, "mel/conditioning frame mismatch");
        }
        Ok(())
    }
}

/// Mean over branches of `mse(real, 1) + mse(fake, 0)`; the plain-arithmetic
/// oracle for the in-graph discriminator loss.
pub fn d_loss(branches: &[(&[f32], &[f32])]) -> f64 {
    let mut acc = 0.0;
    for (real, fake) in branches {
        acc += mse_to(real, 1.0) + mse_to(fake, 0.0);
    }
    acc / branches.len() as f64
}

/// `w_rec * rec_rmse + w_gan * mean over branches of mse(fake, 1)`.
pub fn g_loss(rec_rmse: f64, fake_branches: &[&[f32]], w_rec: f64, w_gan: f64) -> f64 {
    let adv =
        fake_branches.iter().map(|s| mse_to(s, 1.0)).sum::<f64>() / fake_branches.len() as f64;
    w_rec * rec_rmse + w_gan * adv
}

fn mse_to(values: &[f32], target: f64) -> f64 {
    values
        .iter()
        .map(|&v| {
            let d = v as f64 - target;
            d * d
        })
        .sum::<f64>()
        / values.len() as f64
}

/// Per-step loss report. `g_total = w_rec * g_rec + w_gan * g_adv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub d_loss: f64,
    pub g_rec: f64,
    pub g_adv: f64,
    pub g_total: f64,
}

struct BatchItem {
    utterance: usize,
    start: usize,
    len: usize,
}

fn sample_batch(corpus: &Corpus, cfg: &TrainConfig, step: u64) -> Vec<BatchItem> {
    use rand::{Rng, SeedableRng};
    // per-step seeding keeps resumed runs on the same batch sequence
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(step));
    (0..cfg.batch_size)
        .map(|_| {
            let utterance = rng.gen_range(0..corpus.utterances.len());
            let t = corpus.utterances[utterance].feats.n_frames();
            let len = cfg.excerpt_frames.min(t);
            let start = if t > len { rng.gen_range(0..=t - len) } else { 0 };
            BatchItem { utterance, start, len }
        })
        .collect()
}

fn crop_mel(mel: &Tensor<f32>, start: usize, len: usize) -> Tensor<f32> {
    let bins = mel.shape()[1];
    Tensor::new(&[len, bins], mel.data()[start * bins..(start + len) * bins].to_vec())
}

/// One discriminator update then one generator update on the batch.
pub fn train_step(
    model: &mut VcModel<f32>,
    corpus: &Corpus,
    cfg: &TrainConfig,
    step: u64,
) -> Result<StepReport, TrainError> {
    let batch = sample_batch(corpus, cfg, step);
    let inv_b = 1.0 / batch.len() as f64;
    let gen_ids = model.generator_param_ids();
    let disc_ids = model.discriminator_param_ids();
    let adam = AdamConfig::with_lr(cfg.lr);

    // Cropped views plus the detached conditioning each item needs twice.
    struct Prepared {
        feats: FeatureFrames,
        target: Tensor<f32>,
        disc_cond: Tensor<f32>,
        speaker: String,
    }
    let prepared: Vec<Prepared> = batch
        .iter()
        .map(|item| {
            let u = &corpus.utterances[item.utterance];
            let feats = u.feats.crop(item.start, item.len);
            let target = crop_mel(&u.mel, item.start, item.len);
            let spk_vec = model.speakers.vector(&model.set, &u.speaker)?;
            let disc_cond = discriminator_conditioning(&feats, &spk_vec);
            Ok(Prepared { feats, target, disc_cond, speaker: u.speaker.clone() })
        })
        .collect::<Result<_, TrainError>>()?;

    // --- discriminator phase (skipped entirely when the GAN weight is 0;
    // the game has no gradient to offer the generator then) ---
    let mut d_loss_mean = 0.0;
    if cfg.w_gan > 0.0 {
        for p in &prepared {
            // generated mel, detached: forward only, no gradient export
            let fake = generate_detached(model, &p.feats, &p.speaker)?;
            let mut g = Graph::<f32>::new();
            let real_node = g.constant(p.target.clone());
            let fake_node = g.constant(fake);
            let s2_real = model.disc2d.forward(&mut g, &model.set, real_node, &p.disc_cond);
            let s2_fake = model.disc2d.forward(&mut g, &model.set, fake_node, &p.disc_cond);
            let s1_real = model.disc1d.forward(&mut g, &model.set, real_node, &p.disc_cond);
            let s1_fake = model.disc1d.forward(&mut g, &model.set, fake_node, &p.disc_cond);
            let b2_r = g.mse_const(s2_real, 1.0);
            let b2_f = g.mse_const(s2_fake, 0.0);
            let b1_r = g.mse_const(s1_real, 1.0);
            let b1_f = g.mse_const(s1_fake, 0.0);
            let b2 = g.add(b2_r, b2_f);
            let b1 = g.add(b1_r, b1_f);
            let sum = g.add(b2, b1);
            let loss = g.scale(sum, 0.5);
            d_loss_mean += g.value(loss).item() as f64 * inv_b;
            g.backward_seeded(loss, inv_b as f32)
                .map_err(|e| TrainError::from_graph(step, "discriminator", e))?;
            g.export_grads(&mut model.set);
        }
        if cfg!(debug_assertions) {
            for id in &gen_ids {
                debug_assert!(
                    model.set.grad(*id).data().iter().all(|&v| v == 0.0),
                    "generator gradient leaked into the discriminator phase"
                );
            }
        }
        adam_step(&mut model.set, &disc_ids, &adam)?;
        model.set.zero_grads();
    }

    // --- generator phase ---
    let mut g_rec_mean = 0.0;
    let mut g_adv_mean = 0.0;
    let mut g_total_mean = 0.0;
    let allowed: HashSet<_> = gen_ids.iter().copied().collect();
    for p in &prepared {
        let mut g = Graph::<f32>::new();
        let spk_row = model.speakers.row(&p.speaker)?;
        let spk_node = g.param(&model.set, spk_row);
        let cond = assemble(&mut g, &model.set, &model.embedding, &p.feats, spk_node);
        let mel_fake = model.generator.forward(&mut g, &model.set, cond);
        let target_node = g.constant(p.target.clone());
        let rec = g.rmse(mel_fake, target_node);
        let loss = if cfg.w_gan > 0.0 {
            let s2 = model.disc2d.forward(&mut g, &model.set, mel_fake, &p.disc_cond);
            let s1 = model.disc1d.forward(&mut g, &model.set, mel_fake, &p.disc_cond);
            let a2 = g.mse_const(s2, 1.0);
            let a1 = g.mse_const(s1, 1.0);
            let adv_sum = g.add(a2, a1);
            let adv = g.scale(adv_sum, 0.5);
            g_adv_mean += g.value(adv).item() as f64 * inv_b;
            let rec_w = g.scale(rec, cfg.w_rec);
            let adv_w = g.scale(adv, cfg.w_gan);
            g.add(rec_w, adv_w)
        } else {
            g.scale(rec, cfg.w_rec)
        };
        g_rec_mean += g.value(rec).item() as f64 * inv_b;
        g_total_mean += g.value(loss).item() as f64 * inv_b;
        g.backward_seeded(loss, inv_b as f32)
            .map_err(|e| TrainError::from_graph(step, "generator", e))?;
        g.export_grads_filtered(&mut model.set, &allowed);
    }
    if cfg!(debug_assertions) {
        for id in &disc_ids {
            debug_assert!(
                model.set.grad(*id).data().iter().all(|&v| v == 0.0),
                "discriminator gradient leaked into the generator phase"
            );
        }
    }
    adam_step(&mut model.set, &gen_ids, &adam)?;
    model.set.zero_grads();
    model.speakers.project_unit_norm(&mut model.set);

    Ok(StepReport {
        step,
        d_loss: d_loss_mean,
        g_rec: g_rec_mean,
        g_adv: g_adv_mean,
        g_total: g_total_mean,
    })
}

/// Generator forward pass returning a plain tensor (no gradients kept).
pub fn generate_detached(
    model: &VcModel<f32>,
    feats: &FeatureFrames,
    speaker: &str,
) -> Result<Tensor<f32>, TrainError> {
    let mut g = Graph::<f32>::new();
    let spk_row = model.speakers.row(speaker)?;
    let spk_node = g.param(&model.set, spk_row);
    let cond = assemble(&mut g, &model.set, &model.embedding, feats, spk_node);
    let out = model.generator.forward(&mut g, &model.set, cond);
    Ok(g.value(out).clone())
}

/// Summary of a [`train_loop`] run.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub first_report: Option<StepReport>,
    pub last_report: Option<StepReport>,
    pub checkpoints: Vec<PathBuf>,
}

fn ckpt_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("ckpt_{step}.fvg"))
}

/// Runs steps `start_step..cfg.steps` (resume by passing the saved step),
/// writing periodic checkpoints `ckpt_{step}.fvg` and appending to
/// `loss_log.csv` (`step,d_loss,g_rec,g_adv,seconds`).
pub fn train_loop(
    model: &mut VcModel<f32>,
    corpus: &Corpus,
    cfg: &TrainConfig,
    out_dir: &Path,
    start_step: u64,
) -> Result<TrainSummary, TrainError> {
    cfg.validate()?;
    corpus.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|source| TrainError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;

    let log_path = out_dir.join("loss_log.csv");
    let fresh_log = !log_path.exists();
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|source| TrainError::Io { path: log_path.display().to_string(), source })?;
    if fresh_log {
        writeln!(log, "step,d_loss,g_rec,g_adv,seconds")
            .map_err(|source| TrainError::Io { path: log_path.display().to_string(), source })?;
    }

    let mut summary =
        TrainSummary { first_report: None, last_report: None, checkpoints: Vec::new() };
    if start_step == 0 {
        let p = ckpt_path(out_dir, 0);
        model.save(&p, 0)?;
        summary.checkpoints.push(p);
    }

    let started = Instant::now();
    for step in start_step..cfg.steps {
        let report = train_step(model, corpus, cfg, step)?;
        let done = step + 1;
        writeln!(
            log,
            "{},{:.6},{:.6},{:.6},{:.3}",
            done,
            report.d_loss,
            report.g_rec,
            report.g_adv,
            started.elapsed().as_secs_f64()
        )
        .map_err(|source| TrainError::Io { path: log_path.display().to_string(), source })?;
        if summary.first_report.is_none() {
            summary.first_report = Some(report);
        }
        summary.last_report = Some(report);
        let at_interval = cfg.checkpoint_interval > 0 && done % cfg.checkpoint_interval == 0;
        if at_interval || done == cfg.steps {
            let p = ckpt_path(out_dir, done);
            model.save(&p, done)?;
            if summary.checkpoints.last() != Some(&p) {
                summary.checkpoints.push(p);
            }
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::{encode_stream, PhonemeAlignment, PhonemeInventory};
    use crate::model::ModelConfig;

    fn inv() -> PhonemeInventory {
        PhonemeInventory::from_symbols(&[("sil", false), ("aa", true), ("k", false)]).unwrap()
    }

    fn toy_utterance(speaker: &str, t: usize, seed: u64) -> TrainUtterance {
        let third = t / 3;
        let a = PhonemeAlignment { entries: vec![(0, third), (1, t - 2 * third), (2, third)] };
        let stream = encode_stream(&a, &inv()).unwrap();
        let mut s = seed;
        let mut next = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((s >> 33) as f32 / (1u64 << 31) as f32) - 1.0
        };
        let f0: Vec<f32> = (0..t).map(|_| next() * 0.3).collect();
        let inten: Vec<f32> = (0..t).map(|_| -4.0 + next()).collect();
        let feats = FeatureFrames::new(f0, inten, stream).unwrap();
        // smooth, low-amplitude synthetic target
        let mel = Tensor::from_fn(&[t, 80], |i| {
            let frame = (i / 80) as f32;
            let bin = (i % 80) as f32;
            -6.0 + 2.0 * ((bin / 12.0).sin() * (frame / 9.0).cos())
        });
        TrainUtterance { speaker: speaker.into(), feats, mel }
    }

    fn toy_model() -> VcModel<f32> {
        VcModel::new(ModelConfig::new(3), &["a".into(), "b".into()], 5).unwrap()
    }

    fn toy_corpus() -> Corpus {
        Corpus { utterances: vec![toy_utterance("a", 40, 1), toy_utterance("b", 40, 2)] }
    }

    #[test]
    fn d_loss_perfect_and_worst_cases() {
        let ones = vec![1.0f32; 6];
        let zeros = vec![0.0f32; 6];
        assert_eq!(d_loss(&[(&ones, &zeros), (&ones, &zeros)]), 0.0);
        assert_eq!(d_loss(&[(&zeros, &ones), (&zeros, &ones)]), 2.0);
    }

    #[test]
    fn g_loss_unit_case() {
        // rmse 0.4, branch mses {0.2, 0.6}: 1.0*0.4 + 0.5*0.4 = 0.6
        let b1: Vec<f32> = vec![1.0 - 0.2f32.sqrt(); 4];
        let b2: Vec<f32> = vec![1.0 - 0.6f32.sqrt(); 4];
        let loss = g_loss(0.4, &[&b1, &b2], 1.0, 0.5);
        assert!((loss - 0.6).abs() < 1e-6, "{loss}");
    }

    #[test]
    fn g_loss_zero_when_perfect() {
        let ones = vec![1.0f32; 4];
        assert_eq!(g_loss(0.0, &[&ones, &ones], 1.0, 0.5), 0.0);
        // w_gan = 0 reduces to pure reconstruction
        let bad = vec![-3.0f32; 4];
        assert_eq!(g_loss(0.25, &[&bad, &bad], 1.0, 0.0), 0.25);
    }

    #[test]
    fn d_loss_random_scores_match_arithmetic_oracle() {
        let mut s = 77u64;
        let mut next = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((s >> 33) as f32 / (1u64 << 31) as f32) - 1.0
        };
        let real: Vec<f32> = (0..12).map(|_| next()).collect();
        let fake: Vec<f32> = (0..12).map(|_| next()).collect();
        // graph route
        let mut g = Graph::<f32>::new();
        let r = g.constant(Tensor::new(&[12], real.clone()));
        let f = g.constant(Tensor::new(&[12], fake.clone()));
        let br = g.mse_const(r, 1.0);
        let bf = g.mse_const(f, 0.0);
        let branch = g.add(br, bf);
        // hand-computed oracle with a single branch
        let expect = d_loss(&[(&real, &fake)]);
        assert!((g.value(branch).item() as f64 - expect).abs() < 1e-6);
    }

    #[test]
    fn identical_seeds_give_identical_reports() {
        let cfg = TrainConfig {
            batch_size: 2,
            steps: 2,
            excerpt_frames: 16,
            lr: 1e-3,
            seed: 9,
            ..TrainConfig::default()
        };
        let corpus = toy_corpus();
        let run = || {
            let mut model = toy_model();
            let r0 = train_step(&mut model, &corpus, &cfg, 0).unwrap();
            let r1 = train_step(&mut model, &corpus, &cfg, 1).unwrap();
            (r0, r1)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn report_total_decomposes_exactly() {
        let cfg = TrainConfig {
            batch_size: 2,
            steps: 1,
            excerpt_frames: 16,
            w_rec: 1.0,
            w_gan: 0.5,
            seed: 4,
            ..TrainConfig::default()
        };
        let corpus = toy_corpus();
        let mut model = toy_model();
        let r = train_step(&mut model, &corpus, &cfg, 0).unwrap();
        assert!((r.g_total - (cfg.w_rec * r.g_rec + cfg.w_gan * r.g_adv)).abs() < 1e-6);
        assert!(r.d_loss > 0.0);
    }

    #[test]
    fn zero_gan_weight_leaves_discriminator_untouched() {
        let cfg = TrainConfig {
            batch_size: 2,
            steps: 1,
            excerpt_frames: 16,
            w_gan: 0.0,
            seed: 4,
            ..TrainConfig::default()
        };
        let corpus = toy_corpus();
        let mut model = toy_model();
        let before: Vec<Vec<f32>> = model
            .discriminator_param_ids()
            .iter()
            .map(|id| model.set.value(*id).data().to_vec())
            .collect();
        let r = train_step(&mut model, &corpus, &cfg, 0).unwrap();
        assert_eq!(r.g_adv, 0.0);
        assert_eq!(r.d_loss, 0.0);
        for (id, old) in model.discriminator_param_ids().iter().zip(&before) {
            assert_eq!(model.set.value(*id).data(), &old[..]);
        }
    }

    #[test]
    fn speaker_rows_stay_unit_norm_through_steps() {
        let cfg = TrainConfig {
            batch_size: 2,
            steps: 3,
            excerpt_frames: 16,
            lr: 1e-3,
            seed: 2,
            ..TrainConfig::default()
        };
        let corpus = toy_corpus();
        let mut model = toy_model();
        for step in 0..3 {
            train_step(&mut model, &corpus, &cfg, step).unwrap();
            for name in ["a", "b"] {
                let v = model.speakers.vector(&model.set, name).unwrap();
                let norm: f64 =
                    v.data().iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
                assert!((norm - 1.0).abs() < 1e-6, "step {step}: norm {norm}");
            }
        }
    }

    #[test]
    fn zero_steps_produces_initial_checkpoint_only() {
        let dir = tempfile::tempdir().unwrap();
        let cfg =
            TrainConfig { steps: 0, batch_size: 1, excerpt_frames: 16, ..TrainConfig::default() };
        let mut model = toy_model();
        let corpus = toy_corpus();
        let summary = train_loop(&mut model, &corpus, &cfg, dir.path(), 0).unwrap();
        assert_eq!(summary.checkpoints.len(), 1);
        assert!(dir.path().join("ckpt_0.fvg").exists());
        assert!(summary.first_report.is_none());
    }

    #[test]
    fn resume_continues_loss_log_at_saved_step() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = toy_corpus();
        let cfg = TrainConfig {
            steps: 2,
            batch_size: 1,
            excerpt_frames: 16,
            checkpoint_interval: 1,
            seed: 3,
            ..TrainConfig::default()
        };
        let mut model = toy_model();
        train_loop(&mut model, &corpus, &cfg, dir.path(), 0).unwrap();
        // resume from ckpt_2 for two more steps
        let (mut resumed, step) =
            VcModel::load(&dir.path().join("ckpt_2.fvg"), ModelConfig::new(3)).unwrap();
        assert_eq!(step, 2);
        let cfg2 = TrainConfig { steps: 4, ..cfg };
        train_loop(&mut resumed, &corpus, &cfg2, dir.path(), step).unwrap();
        let log = std::fs::read_to_string(dir.path().join("loss_log.csv")).unwrap();
        let steps: Vec<&str> =
            log.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(steps, vec!["1", "2", "3", "4"]);
    }

    #[test]
    fn overfitting_a_single_utterance_reduces_reconstruction() {
        // 500 steps on one utterance: g_rec must drop strictly below its
        // step-10 value
        let cfg = TrainConfig {
            batch_size: 1,
            steps: 500,
            excerpt_frames: 16,
            lr: 1e-3,
            w_gan: 0.0,
            seed: 1,
            ..TrainConfig::default()
        };
        let corpus = Corpus { utterances: vec![toy_utterance("a", 16, 3)] };
        let mut model = toy_model();
        let mut at_10 = f64::MAX;
        let mut last = f64::MAX;
        for step in 0..cfg.steps {
            let r = train_step(&mut model, &corpus, &cfg, step).unwrap();
            if step == 9 {
                at_10 = r.g_rec;
            }
            last = r.g_rec;
        }
        assert!(last < at_10, "step-10 {at_10} vs final {last}");
    }
}
