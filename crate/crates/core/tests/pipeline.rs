//! End-to-end command tests on a small synthetic corpus.

mod common;

use fastvgan::cli::{
    cmd_convert, cmd_eval, cmd_extract, cmd_train, read_conditioning_dump, CliError, Config,
    ConvertArgs, ConvertInput, EvalArgs, FeatureFile, TrainArgs,
};
use fastvgan::control::ProsodySpec;
use fastvgan::model::{ModelConfig, VcModel};
use fastvgan::train::TrainConfig;
use std::path::{Path, PathBuf};

/// Small corpus plus a short training run shared by the convert/eval tests.
fn quick_setup(root: &Path, steps: u64) -> (common::ToyCorpus, PathBuf) {
    let mut corpus = common::build_toy_corpus(root, 2, 0.8);
    corpus.config.train = TrainConfig {
        batch_size: 2,
        lr: 1e-3,
        steps,
        seed: corpus.config.seed,
        w_rec: 1.0,
        w_gan: 0.5,
        checkpoint_interval: 500,
        excerpt_frames: 16,
    };
    let summary = cmd_extract(&corpus.manifest_path, &corpus.config).unwrap();
    assert!(summary.failures.is_empty(), "{:?}", summary.failures);
    let out_dir = root.join("run");
    let train_summary = cmd_train(
        &TrainArgs {
            manifest: corpus.manifest_path.clone(),
            out_dir: out_dir.clone(),
            resume: None,
            steps: None,
        },
        &corpus.config,
    )
    .unwrap();
    let ckpt = train_summary.checkpoints.last().unwrap().clone();
    (corpus, ckpt)
}

#[test]
fn extract_is_idempotent_and_tracks_changes() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = common::build_toy_corpus(dir.path(), 2, 0.8);
    let first = cmd_extract(&corpus.manifest_path, &corpus.config).unwrap();
    assert_eq!(first.written, 4);
    assert_eq!(first.skipped, 0);
    assert!(first.failures.is_empty());

    // unchanged rerun writes nothing
    let again = cmd_extract(&corpus.manifest_path, &corpus.config).unwrap();
    assert_eq!(again.written, 0);
    assert_eq!(again.skipped, 4);

    // touching one wav re-extracts exactly that record
    let (id, speaker) = &corpus.utterances[0];
    let sp = if speaker == common::SPEAKER_A.name { common::SPEAKER_A } else { common::SPEAKER_B };
    let (wav, _) = common::synth_clip(&sp, 0.8, 3, 16000);
    fastvgan::dsp::write_wav(&dir.path().join(format!("{id}.wav")), &wav).unwrap();
    let third = cmd_extract(&corpus.manifest_path, &corpus.config).unwrap();
    assert_eq!(third.written, 1);
    assert_eq!(third.skipped, 3);
}

#[test]
fn extract_outputs_are_byte_deterministic() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let a = common::build_toy_corpus(dir_a.path(), 1, 0.8);
    let b = common::build_toy_corpus(dir_b.path(), 1, 0.8);
    cmd_extract(&a.manifest_path, &a.config).unwrap();
    cmd_extract(&b.manifest_path, &b.config).unwrap();
    for (id, _) in &a.utterances {
        let fa = std::fs::read(a.config.cache_dir.join(format!("{id}.fvgfeat"))).unwrap();
        let fb = std::fs::read(b.config.cache_dir.join(format!("{id}.fvgfeat"))).unwrap();
        assert_eq!(fa, fb, "feature file for {id} differs across identical runs");
    }
}

#[test]
fn extract_collects_per_record_failures() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = common::build_toy_corpus(dir.path(), 1, 0.8);
    // corrupt one wav and give another an alignment with an unknown label
    let (id0, _) = &corpus.utterances[0];
    std::fs::write(dir.path().join(format!("{id0}.wav")), b"not audio").unwrap();
    let (id1, _) = &corpus.utterances[1];
    std::fs::write(dir.path().join(format!("{id1}.lab")), "0.0 0.8 ZZ\n").unwrap();
    let summary = cmd_extract(&corpus.manifest_path, &corpus.config).unwrap();
    assert_eq!(summary.failures.len(), 2);
    let ids: Vec<&String> = summary.failures.iter().map(|(id, _)| id).collect();
    assert!(ids.contains(&id0) && ids.contains(&id1));
    let msgs: Vec<&String> = summary.failures.iter().map(|(_, m)| m).collect();
    assert!(msgs.iter().any(|m| m.contains("ZZ")), "{msgs:?}");
}

#[test]
fn train_missing_cache_instructs_extract() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = common::build_toy_corpus(dir.path(), 1, 0.8);
    let err = cmd_train(
        &TrainArgs {
            manifest: corpus.manifest_path.clone(),
            out_dir: dir.path().join("run"),
            resume: None,
            steps: None,
        },
        &corpus.config,
    )
    .unwrap_err();
    assert!(err.to_string().contains("run extract first"), "{err}");
}

#[test]
fn train_convert_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, ckpt) = quick_setup(dir.path(), 3);
    assert!(dir.path().join("run/ckpt_0.fvg").exists());
    assert!(dir.path().join("run/ckpt_3.fvg").exists());

    // resynthesis: target speaker = source speaker, no transforms
    let (id, speaker) = &corpus.utterances[0];
    let out_wav = dir.path().join("resynth.wav");
    let out_mel = dir.path().join("resynth.fvgfeat");
    let outcome = cmd_convert(
        &ConvertArgs {
            checkpoint: ckpt.clone(),
            input: ConvertInput::File {
                wav: dir.path().join(format!("{id}.wav")),
                alignment: dir.path().join(format!("{id}.lab")),
                f0: None,
                source_speaker: speaker.clone(),
            },
            target_speaker: speaker.clone(),
            spec: ProsodySpec::default(),
            out_wav: Some(out_wav.clone()),
            out_mel: Some(out_mel.clone()),
            dump_conditioning: None,
            gl_iters: Some(4),
        },
        &corpus.config,
    )
    .unwrap();
    assert!(outcome.warnings.is_empty());
    assert!(out_wav.exists() && out_mel.exists());
    let generated = FeatureFile::load(&out_mel).unwrap();
    assert_eq!(generated.mel.n_frames(), outcome.frames);

    // eval on an identical pair scores exactly 1
    let pairs = dir.path().join("pairs.tsv");
    std::fs::write(
        &pairs,
        format!(
            "pair_id\tconverted_path\treference_path\ttarget\np0\t{id}.wav\t{id}.wav\t{speaker}\n"
        ),
    )
    .unwrap();
    let report = cmd_eval(
        &EvalArgs {
            pairs,
            checkpoint: ckpt.clone(),
            out_dir: dir.path().join("eval"),
            n_bootstrap: 200,
        },
        &corpus.config,
    )
    .unwrap();
    assert!((report.mean - 1.0).abs() < 1e-9);
    assert!(dir.path().join("eval/report.csv").exists());
    let summary = std::fs::read_to_string(dir.path().join("eval/summary.csv")).unwrap();
    assert!(summary.starts_with("mean,ci_lo,ci_hi,n\n"));
}

#[test]
fn cli_resume_continues_to_requested_step() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, ckpt) = quick_setup(dir.path(), 2);
    assert!(ckpt.ends_with("ckpt_2.fvg"));
    cmd_train(
        &TrainArgs {
            manifest: corpus.manifest_path.clone(),
            out_dir: dir.path().join("run"),
            resume: Some(ckpt),
            steps: Some(4),
        },
        &corpus.config,
    )
    .unwrap();
    let log = std::fs::read_to_string(dir.path().join("run/loss_log.csv")).unwrap();
    let steps: Vec<&str> = log.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(steps, vec!["1", "2", "3", "4"]);
    assert!(dir.path().join("run/ckpt_4.fvg").exists());
}

#[test]
fn pitch_shift_offsets_the_f0_channel_by_ln_two() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, ckpt) = quick_setup(dir.path(), 1);
    let (id, speaker) = &corpus.utterances[0];
    let convert = |semitones: f64, dump: &Path| {
        cmd_convert(
            &ConvertArgs {
                checkpoint: ckpt.clone(),
                input: ConvertInput::Cached {
                    utterance_id: id.clone(),
                    source_speaker: Some(speaker.clone()),
                },
                target_speaker: speaker.clone(),
                spec: ProsodySpec { pitch_shift_semitones: semitones, ..ProsodySpec::default() },
                out_wav: None,
                out_mel: None,
                dump_conditioning: Some(dump.to_path_buf()),
                gl_iters: None,
            },
            &corpus.config,
        )
        .unwrap();
    };
    let d0 = dir.path().join("cond0.bin");
    let d12 = dir.path().join("cond12.bin");
    convert(0.0, &d0);
    convert(12.0, &d12);
    let c0 = read_conditioning_dump(&d0).unwrap();
    let c12 = read_conditioning_dump(&d12).unwrap();
    assert_eq!(c0.shape(), c12.shape());
    let channels = c0.shape()[2];
    let ln2 = std::f64::consts::LN_2 as f32;
    for (i, (a, b)) in c0.data().iter().zip(c12.data()).enumerate() {
        match i % channels {
            // channel 0 is normalized log-F0: offset by exactly ln 2
            0 => assert!((b - a - ln2).abs() < 1e-6, "f0 channel: {a} vs {b}"),
            // channel 1 is intensity: untouched
            1 => assert_eq!(a, b),
            _ => {}
        }
    }
}

#[test]
fn convert_rejects_unknown_speakers() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, ckpt) = quick_setup(dir.path(), 1);
    let (id, speaker) = &corpus.utterances[0];
    let err = cmd_convert(
        &ConvertArgs {
            checkpoint: ckpt,
            input: ConvertInput::Cached {
                utterance_id: id.clone(),
                source_speaker: Some(speaker.clone()),
            },
            target_speaker: "nobody".into(),
            spec: ProsodySpec::default(),
            out_wav: None,
            out_mel: None,
            dump_conditioning: None,
            gl_iters: None,
        },
        &corpus.config,
    )
    .unwrap_err();
    assert!(matches!(err, CliError::Validation(_)));
    assert!(err.to_string().contains("nobody"));
}

#[test]
fn eval_requires_checkpoint_and_lists_unpaired() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = common::build_toy_corpus(dir.path(), 1, 0.8);
    let pairs = dir.path().join("pairs.tsv");
    std::fs::write(
        &pairs,
        "pair_id\tconverted_path\treference_path\ttarget\np0\tmissing1.wav\tmissing2.wav\tx\n",
    )
    .unwrap();
    // missing checkpoint is a validation error
    let err = cmd_eval(
        &EvalArgs {
            pairs: pairs.clone(),
            checkpoint: dir.path().join("no_such.fvg"),
            out_dir: dir.path().join("eval"),
            n_bootstrap: 100,
        },
        &corpus.config,
    )
    .unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("no_such.fvg"));

    // with a real checkpoint, unpaired entries are listed by pair id
    let model = VcModel::<f32>::new(ModelConfig::new(4), &["spk_a".into()], 1).unwrap();
    let ckpt = dir.path().join("m.fvg");
    model.save(&ckpt, 0).unwrap();
    let err = cmd_eval(
        &EvalArgs {
            pairs,
            checkpoint: ckpt,
            out_dir: dir.path().join("eval"),
            n_bootstrap: 100,
        },
        &corpus.config,
    )
    .unwrap_err();
    assert!(err.to_string().contains("p0"), "{err}");
    assert!(err.to_string().contains("missing1.wav"));
}

#[test]
fn binary_maps_errors_to_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_fastvgan");
    // no --config: validation, exit 1
    let out = std::process::Command::new(bin)
        .args(["extract", "--manifest", "nope.tsv"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));

    // unknown flag: usage/validation, exit 1
    let out = std::process::Command::new(bin).args(["--definitely-not-a-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    // --help exits 0
    let out = std::process::Command::new(bin).arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn config_seed_round_trip_through_file() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = common::build_toy_corpus(dir.path(), 1, 0.8);
    let loaded = Config::load(&corpus.config_path).unwrap();
    assert_eq!(loaded.seed, corpus.config.seed);
    assert_eq!(loaded.dsp, corpus.config.dsp);
    // paths resolved relative to the config file
    assert!(loaded.inventory.ends_with("inventory.txt"));
    assert!(loaded.inventory.is_absolute() || loaded.inventory.exists());
}
