//! The extract / train / convert / eval command implementations. The binary
//! is a thin argument-parsing wrapper over these.

use super::features::{content_hash, FeatureFile};
use super::manifest::{Manifest, ManifestRecord};
use super::{CliError, Config};
use crate::align::{encode_stream, parse_alignment, to_frames, PhonemeInventory};
use crate::control::{apply_prosody, speaker_prosody_stats, ConditioningSource, ProsodySpec};
use crate::dsp::{
    estimate_f0, griffin_lim, intensity, interpolate_unvoiced, mel_spectrogram, parse_f0_text,
    read_wav, write_wav, F0Contour, MelSpectrogram,
};
use crate::eval::{eval_conversion, EvalReport};
use crate::model::{assemble_to_tensor, normalize_f0, FeatureFrames, ModelConfig, VcModel};
use crate::tensor::Tensor;
use crate::train::{train_loop, Corpus, TrainSummary, TrainUtterance};
use std::collections::HashMap;
use std::path::{Path, PathBuf};

fn load_inventory(cfg: &Config) -> Result<PhonemeInventory, CliError> {
    let text = std::fs::read_to_string(&cfg.inventory).map_err(|e| {
        CliError::Validation(format!("cannot read inventory '{}': {e}", cfg.inventory.display()))
    })?;
    PhonemeInventory::parse(&text).map_err(CliError::validation)
}

fn model_config(cfg: &Config, inv: &PhonemeInventory) -> ModelConfig {
    ModelConfig {
        n_symbols: inv.len(),
        speaker_dim: cfg.model.speaker_dim,
        phoneme_dim: cfg.model.phoneme_dim,
        mel_bins: cfg.dsp.mel_bins,
    }
}

fn cache_path(cfg: &Config, utterance_id: &str) -> PathBuf {
    cfg.cache_dir.join(format!("{utterance_id}.fvgfeat"))
}

/// Analyzes one record into a cacheable feature file.
fn extract_record(
    record: &ManifestRecord,
    cfg: &Config,
    inv: &PhonemeInventory,
    hash: &str,
    alignment_text: &str,
    f0_text: Option<&str>,
) -> Result<FeatureFile, CliError> {
    let wav = read_wav(&record.wav_path).map_err(CliError::validation)?;
    let mel = mel_spectrogram(&wav, &cfg.dsp).map_err(CliError::validation)?;
    let inten = intensity(&mel);
    let f0 = match f0_text {
        Some(text) => {
            let f = parse_f0_text(text).map_err(CliError::validation)?;
            if f.len() != mel.n_frames() {
                return Err(CliError::Validation(format!(
                    "external f0 has {} frames, mel analysis has {}",
                    f.len(),
                    mel.n_frames()
                )));
            }
            f
        }
        None => estimate_f0(&wav, &cfg.dsp).map_err(CliError::validation)?,
    };
    let segments = parse_alignment(alignment_text, inv).map_err(CliError::validation)?;
    let alignment = to_frames(&segments, cfg.dsp.hop_seconds(), mel.n_frames())
        .map_err(CliError::validation)?;
    Ok(FeatureFile {
        utterance_id: record.utterance_id.clone(),
        speaker_id: record.speaker_id.clone(),
        content_hash: hash.to_string(),
        mel,
        f0,
        intensity: inten.values,
        alignment,
    })
}

#[derive(Debug, Default)]
pub struct ExtractSummary {
    pub written: usize,
    pub skipped: usize,
    pub failures: Vec<(String, String)>,
}

/// Caches mel/F0/intensity/alignment features per utterance. Idempotent:
/// entries whose content hash is unchanged are skipped.
pub fn cmd_extract(manifest_path: &Path, cfg: &Config) -> Result<ExtractSummary, CliError> {
    let inv = load_inventory(cfg)?;
    let manifest = Manifest::load(manifest_path)?;
    std::fs::create_dir_all(&cfg.cache_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create cache dir: {e}")))?;

    let mut summary = ExtractSummary::default();
    for record in &manifest.records {
        let result = (|| -> Result<bool, CliError> {
            let wav_bytes = std::fs::read(&record.wav_path)
                .map_err(|e| CliError::Validation(format!("read wav: {e}")))?;
            let alignment_text = std::fs::read_to_string(&record.alignment_path)
                .map_err(|e| CliError::Validation(format!("read alignment: {e}")))?;
            let f0_text = match &record.f0_path {
                Some(p) => Some(
                    std::fs::read_to_string(p)
                        .map_err(|e| CliError::Validation(format!("read f0: {e}")))?,
                ),
                None => None,
            };
            let hash = content_hash(
                &wav_bytes,
                alignment_text.as_bytes(),
                f0_text.as_deref().map(str::as_bytes),
                &cfg.dsp,
            );
            let path = cache_path(cfg, &record.utterance_id);
            if let Ok(existing) = FeatureFile::load(&path) {
                if existing.content_hash == hash {
                    return Ok(false); // up to date
                }
            }
            let features =
                extract_record(record, cfg, &inv, &hash, &alignment_text, f0_text.as_deref())?;
            features.save(&path)?;
            Ok(true)
        })();
        match result {
            Ok(true) => summary.written += 1,
            Ok(false) => summary.skipped += 1,
            Err(e) => summary.failures.push((record.utterance_id.clone(), e.to_string())),
        }
    }
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    pub resume: Option<PathBuf>,
    pub steps: Option<u64>,
}

fn load_cached_features(
    manifest: &Manifest,
    cfg: &Config,
) -> Result<Vec<FeatureFile>, CliError> {
    manifest
        .records
        .iter()
        .map(|r| {
            let path = cache_path(cfg, &r.utterance_id);
            if !path.exists() {
                return Err(CliError::Validation(format!(
                    "no cached features for '{}' ({} missing); run extract first",
                    r.utterance_id,
                    path.display()
                )));
            }
            FeatureFile::load(&path)
        })
        .collect()
}

/// Pools per-speaker prosody stats and builds normalized training features.
fn build_corpus(
    features: &[FeatureFile],
    inv: &PhonemeInventory,
) -> Result<(Corpus, HashMap<String, crate::model::SpeakerStats>), CliError> {
    let mut by_speaker: HashMap<String, Vec<&FeatureFile>> = HashMap::new();
    for f in features {
        by_speaker.entry(f.speaker_id.clone()).or_default().push(f);
    }
    let mut stats = HashMap::new();
    for (speaker, files) in &by_speaker {
        let contours: Vec<F0Contour> = files.iter().map(|f| f.f0.clone()).collect();
        let alignments: Vec<_> = files.iter().map(|f| f.alignment.clone()).collect();
        let s = speaker_prosody_stats(&contours, &alignments, inv).map_err(|e| {
            CliError::Validation(format!("speaker '{speaker}': {e}"))
        })?;
        stats.insert(speaker.clone(), s);
    }

    let mut utterances = Vec::with_capacity(features.len());
    for f in features {
        let s = stats[&f.speaker_id];
        let interpolated = interpolate_unvoiced(&f.f0).map_err(|e| {
            CliError::Validation(format!("utterance '{}': {e}", f.utterance_id))
        })?;
        let f0_norm = normalize_f0(&interpolated.values_hz, s.mean_log_f0)
            .map_err(CliError::validation)?;
        let stream = encode_stream(&f.alignment, inv).map_err(CliError::validation)?;
        let feats = FeatureFrames::new(f0_norm, f.intensity.clone(), stream)
            .map_err(CliError::validation)?;
        let mel = Tensor::new(&[f.mel.n_frames(), f.mel.n_mels()], f.mel.data().to_vec());
        utterances.push(TrainUtterance { speaker: f.speaker_id.clone(), feats, mel });
    }
    Ok((Corpus { utterances }, stats))
}

/// Runs the training loop over cached features.
pub fn cmd_train(args: &TrainArgs, cfg: &Config) -> Result<TrainSummary, CliError> {
    let inv = load_inventory(cfg)?;
    let manifest = Manifest::load(&args.manifest)?;
    if manifest.records.is_empty() {
        return Err(CliError::Validation("manifest has no records".into()));
    }
    let features = load_cached_features(&manifest, cfg)?;
    let (corpus, stats) = build_corpus(&features, &inv)?;
    let speakers = manifest.speakers();
    if speakers.len() < 2 {
        log::warn!("only {} speaker(s); voice conversion needs at least 2", speakers.len());
    }

    let mcfg = model_config(cfg, &inv);
    let (mut model, start_step) = match &args.resume {
        Some(ckpt) => {
            if !ckpt.exists() {
                return Err(CliError::Validation(format!(
                    "checkpoint '{}' does not exist",
                    ckpt.display()
                )));
            }
            VcModel::load(ckpt, mcfg).map_err(CliError::validation)?
        }
        None => (
            VcModel::new(mcfg, &speakers, cfg.seed).map_err(CliError::validation)?,
            0,
        ),
    };
    for (speaker, s) in &stats {
        // resumed checkpoints may know more speakers than this manifest
        if model.speakers.names().contains(speaker) {
            model.speakers.set_stats(speaker, *s).map_err(CliError::validation)?;
        }
    }

    let mut tcfg = cfg.train.clone();
    tcfg.seed = cfg.seed;
    if let Some(steps) = args.steps {
        tcfg.steps = steps;
    }
    train_loop(&mut model, &corpus, &tcfg, &args.out_dir, start_step)
        .map_err(CliError::runtime)
}

/// Where convert takes its conditioning from.
#[derive(Debug, Clone)]
pub enum ConvertInput {
    /// Analyze a wav + alignment (optionally an external F0 file).
    File { wav: PathBuf, alignment: PathBuf, f0: Option<PathBuf>, source_speaker: String },
    /// Reuse a cached utterance's contours and alignment (expressive
    /// transfer); the source speaker defaults to the cached one.
    Cached { utterance_id: String, source_speaker: Option<String> },
}

#[derive(Debug, Clone)]
pub struct ConvertArgs {
    pub checkpoint: PathBuf,
    pub input: ConvertInput,
    pub target_speaker: String,
    pub spec: ProsodySpec,
    pub out_wav: Option<PathBuf>,
    pub out_mel: Option<PathBuf>,
    pub dump_conditioning: Option<PathBuf>,
    pub gl_iters: Option<usize>,
}

#[derive(Debug)]
pub struct ConvertOutcome {
    pub frames: usize,
    pub warnings: Vec<String>,
}

/// Builds conditioning from the source utterance, swaps in the target
/// speaker embedding, applies the prosody spec, and synthesizes.
pub fn cmd_convert(args: &ConvertArgs, cfg: &Config) -> Result<ConvertOutcome, CliError> {
    let inv = load_inventory(cfg)?;
    if !args.checkpoint.exists() {
        return Err(CliError::Validation(format!(
            "checkpoint '{}' does not exist",
            args.checkpoint.display()
        )));
    }
    let mcfg = model_config(cfg, &inv);
    let (model, _) = VcModel::load(&args.checkpoint, mcfg).map_err(CliError::validation)?;

    // gather raw per-frame features for the source utterance
    let (_mel_src, f0_raw, inten, alignment, source_speaker) = match &args.input {
        ConvertInput::File { wav, alignment, f0, source_speaker } => {
            let w = read_wav(wav).map_err(CliError::validation)?;
            let mel = mel_spectrogram(&w, &cfg.dsp).map_err(CliError::validation)?;
            let inten = intensity(&mel);
            let f0 = match f0 {
                Some(p) => {
                    let text = std::fs::read_to_string(p)
                        .map_err(|e| CliError::Validation(format!("read f0: {e}")))?;
                    let c = parse_f0_text(&text).map_err(CliError::validation)?;
                    if c.len() != mel.n_frames() {
                        return Err(CliError::Validation(format!(
                            "external f0 has {} frames, mel analysis has {}",
                            c.len(),
                            mel.n_frames()
                        )));
                    }
                    c
                }
                None => estimate_f0(&w, &cfg.dsp).map_err(CliError::validation)?,
            };
            let text = std::fs::read_to_string(alignment)
                .map_err(|e| CliError::Validation(format!("read alignment: {e}")))?;
            let segments = parse_alignment(&text, &inv).map_err(CliError::validation)?;
            let frames = to_frames(&segments, cfg.dsp.hop_seconds(), mel.n_frames())
                .map_err(CliError::validation)?;
            (mel, f0, inten.values, frames, source_speaker.clone())
        }
        ConvertInput::Cached { utterance_id, source_speaker } => {
            let f = FeatureFile::load(&cache_path(cfg, utterance_id))?;
            let speaker = source_speaker.clone().unwrap_or_else(|| f.speaker_id.clone());
            (f.mel, f.f0, f.intensity, f.alignment, speaker)
        }
    };

    let source_stats = model.speakers.stats(&source_speaker).map_err(CliError::validation)?;
    // target must be registered even when no adaptation is requested
    model.speakers.row(&args.target_speaker).map_err(CliError::validation)?;
    let target_stats = model.speakers.stats(&args.target_speaker).ok();

    let interpolated = interpolate_unvoiced(&f0_raw).map_err(CliError::validation)?;
    let f0_norm =
        normalize_f0(&interpolated.values_hz, source_stats.mean_log_f0).map_err(CliError::validation)?;
    let source = ConditioningSource { f0_norm, intensity: inten, alignment };
    let adapted = apply_prosody(&source, &inv, &args.spec, Some(&source_stats), target_stats.as_ref())
        .map_err(CliError::validation)?;
    for w in &adapted.warnings {
        log::warn!("{w}");
    }

    let stream = encode_stream(&adapted.source.alignment, &inv).map_err(CliError::validation)?;
    let feats = FeatureFrames::new(
        adapted.source.f0_norm.clone(),
        adapted.source.intensity.clone(),
        stream,
    )
    .map_err(CliError::validation)?;

    if let Some(path) = &args.dump_conditioning {
        let spk_row = model.speakers.row(&args.target_speaker).map_err(CliError::validation)?;
        let cond = assemble_to_tensor(&model.set, &model.embedding, &feats, spk_row);
        write_conditioning_dump(path, &cond)?;
    }

    let mel_out = crate::train::generate_detached(&model, &feats, &args.target_speaker)
        .map_err(CliError::runtime)?;
    let frames = mel_out.shape()[0];
    let mel_spec = MelSpectrogram::new(
        mel_out.data().to_vec(),
        mel_out.shape()[1],
        cfg.dsp.hop_seconds(),
        cfg.dsp.sample_rate,
    );

    if let Some(path) = &args.out_mel {
        // store the generated mel with the adapted conditioning, F0 written
        // back in the target speaker's register
        let register = target_stats.map_or(source_stats.mean_log_f0, |t| t.mean_log_f0);
        let f0_hz: Vec<f64> = adapted
            .source
            .f0_norm
            .iter()
            .map(|&v| (v as f64 + register).exp())
            .collect();
        let n = f0_hz.len();
        let out = FeatureFile {
            utterance_id: path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "converted".into()),
            speaker_id: args.target_speaker.clone(),
            content_hash: String::new(),
            mel: mel_spec.clone(),
            f0: F0Contour::new(f0_hz, vec![true; n]),
            intensity: adapted.source.intensity.clone(),
            alignment: adapted.source.alignment.clone(),
        };
        out.save(path)?;
    }
    if let Some(path) = &args.out_wav {
        let iters = args.gl_iters.unwrap_or(cfg.dsp.griffin_lim_iters);
        let wav = griffin_lim(&mel_spec, &cfg.dsp, iters).map_err(CliError::runtime)?;
        write_wav(path, &wav).map_err(CliError::runtime)?;
    }
    Ok(ConvertOutcome { frames, warnings: adapted.warnings })
}

pub const CONDITIONING_DUMP_HEADER: &str = "FVGCOND v1";

fn write_conditioning_dump(path: &Path, cond: &Tensor<f32>) -> Result<(), CliError> {
    let mut out = Vec::new();
    out.extend_from_slice(CONDITIONING_DUMP_HEADER.as_bytes());
    out.push(b'\n');
    let dims: Vec<String> = cond.shape().iter().map(|d| d.to_string()).collect();
    out.extend_from_slice(dims.join(" ").as_bytes());
    out.push(b'\n');
    for v in cond.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, out)
        .map_err(|e| CliError::Runtime(format!("cannot write '{}': {e}", path.display())))
}

/// Parses a conditioning dump back into a tensor (test oracles).
pub fn read_conditioning_dump(path: &Path) -> Result<Tensor<f32>, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Validation(format!("cannot read '{}': {e}", path.display())))?;
    let bad = |what: &str| CliError::Validation(format!("conditioning dump: {what}"));
    let mut pos = 0;
    let line = |pos: &mut usize| -> Result<String, CliError> {
        let end = bytes[*pos..].iter().position(|&b| b == b'\n').ok_or_else(|| bad("truncated"))?;
        let s = std::str::from_utf8(&bytes[*pos..*pos + end])
            .map_err(|_| bad("non-utf8 header"))?
            .to_string();
        *pos += end + 1;
        Ok(s)
    };
    if line(&mut pos)? != CONDITIONING_DUMP_HEADER {
        return Err(bad("bad header"));
    }
    let dims: Vec<usize> = line(&mut pos)?
        .split(' ')
        .map(|f| f.parse().map_err(|_| bad("bad dims")))
        .collect::<Result<_, _>>()?;
    let numel: usize = dims.iter().product();
    if bytes.len() - pos != numel * 4 {
        return Err(bad("payload size mismatch"));
    }
    let data: Vec<f32> = bytes[pos..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok(Tensor::new(&dims, data))
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub pairs: PathBuf,
    pub checkpoint: PathBuf,
    pub out_dir: PathBuf,
    pub n_bootstrap: usize,
}

/// Scores converted/reference pairs and writes `report.csv` plus
/// `summary.csv` under the output directory.
pub fn cmd_eval(args: &EvalArgs, cfg: &Config) -> Result<EvalReport, CliError> {
    let inv = load_inventory(cfg)?;
    if !args.checkpoint.exists() {
        return Err(CliError::Validation(format!(
            "checkpoint '{}' does not exist",
            args.checkpoint.display()
        )));
    }
    // validate the checkpoint pairs with this config before reporting on it
    VcModel::load(&args.checkpoint, model_config(cfg, &inv)).map_err(CliError::validation)?;

    let text = std::fs::read_to_string(&args.pairs).map_err(|e| {
        CliError::Validation(format!("cannot read pairs '{}': {e}", args.pairs.display()))
    })?;
    let dir = args.pairs.parent().unwrap_or(Path::new("."));
    let mut lines = text.lines().enumerate();
    let header = lines
        .next()
        .map(|(_, l)| l)
        .ok_or_else(|| CliError::Validation("pairs file is empty".into()))?;
    if header.split('\t').collect::<Vec<_>>() != ["pair_id", "converted_path", "reference_path", "target"]
    {
        return Err(CliError::Validation(
            "pairs header must be 'pair_id\tconverted_path\treference_path\ttarget'".into(),
        ));
    }

    let mut pairs = Vec::new();
    let mut unpaired = Vec::new();
    for (i, raw) in lines {
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 4 {
            return Err(CliError::Validation(format!(
                "pairs line {}: expected 4 fields, got {}",
                i + 1,
                fields.len()
            )));
        }
        let resolve = |p: &str| {
            let pb = PathBuf::from(p);
            if pb.is_relative() { dir.join(pb) } else { pb }
        };
        let converted = resolve(fields[1]);
        let reference = resolve(fields[2]);
        let mut missing = Vec::new();
        for p in [&converted, &reference] {
            if !p.exists() {
                missing.push(p.display().to_string());
            }
        }
        if !missing.is_empty() {
            unpaired.push(format!("{}: missing {}", fields[0], missing.join(", ")));
            continue;
        }
        let mel_of = |p: &Path| -> Result<MelSpectrogram, CliError> {
            if p.extension().is_some_and(|e| e == "fvgfeat") {
                Ok(FeatureFile::load(p)?.mel)
            } else {
                let w = read_wav(p).map_err(CliError::validation)?;
                mel_spectrogram(&w, &cfg.dsp).map_err(CliError::validation)
            }
        };
        pairs.push((
            fields[0].to_string(),
            fields[3].to_string(),
            mel_of(&converted)?,
            mel_of(&reference)?,
        ));
    }
    if !unpaired.is_empty() {
        return Err(CliError::Validation(format!(
            "{} unpaired entr{}:\n  {}",
            unpaired.len(),
            if unpaired.len() == 1 { "y" } else { "ies" },
            unpaired.join("\n  ")
        )));
    }

    let report = eval_conversion(&pairs, args.n_bootstrap, cfg.seed).map_err(CliError::validation)?;
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create out dir: {e}")))?;
    std::fs::write(args.out_dir.join("report.csv"), report.to_csv())
        .map_err(|e| CliError::Runtime(format!("cannot write report: {e}")))?;
    let summary = format!("mean,ci_lo,ci_hi,n\n{}", report.summary_line());
    std::fs::write(args.out_dir.join("summary.csv"), summary)
        .map_err(|e| CliError::Runtime(format!("cannot write summary: {e}")))?;
    Ok(report)
}
