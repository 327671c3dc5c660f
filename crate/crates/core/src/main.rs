use clap::{Parser, Subcommand};
use fastvgan::cli::{
    cmd_convert, cmd_eval, cmd_extract, cmd_train, CliError, Config, ConvertArgs, ConvertInput,
    EvalArgs, TrainArgs, EXIT_OK,
};
use fastvgan::control::ProsodySpec;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "fastvgan",
    about = "Controllable voice conversion: explicit prosody conditioning, convolutional GAN mel synthesis",
    version
)]
struct Cli {
    /// Path to the TOML config file (required by every command)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed (features, training, evaluation)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Verbose logging
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cache mel/F0/intensity/alignment features for every manifest record
    Extract {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Train on cached features, writing checkpoints and a loss log
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Resume from a checkpoint
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override the configured step count
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Convert an utterance to a target speaker with optional prosody transforms
    Convert {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Source audio (requires --alignment); alternative to --contour-from
        #[arg(long, requires = "alignment", conflicts_with = "contour_from")]
        input_wav: Option<PathBuf>,
        #[arg(long)]
        alignment: Option<PathBuf>,
        /// External per-frame F0 file ("hz voiced_flag" lines)
        #[arg(long)]
        f0: Option<PathBuf>,
        /// Speaker of the source utterance (for F0 normalization)
        #[arg(long)]
        source_speaker: Option<String>,
        /// Reuse a cached utterance's contours and alignment
        #[arg(long)]
        contour_from: Option<String>,
        #[arg(long)]
        target_speaker: String,
        /// Pitch shift in semitones
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        pitch_shift: f64,
        /// Ambitus (F0 range) scaling factor
        #[arg(long, default_value_t = 1.0)]
        ambitus: f64,
        /// Vowel duration scaling factor
        #[arg(long, default_value_t = 1.0)]
        vowel_rate: f64,
        /// Adapt mean F0 to the target speaker (implicit in the model;
        /// accepted for completeness)
        #[arg(long)]
        adapt_mean_f0: bool,
        /// Match the target speaker's log-F0 spread
        #[arg(long)]
        adapt_ambitus: bool,
        /// Match the target speaker's vowel rate
        #[arg(long)]
        adapt_rate: bool,
        #[arg(long)]
        out_wav: Option<PathBuf>,
        #[arg(long)]
        out_mel: Option<PathBuf>,
        /// Write the assembled conditioning tensor for inspection
        #[arg(long)]
        dump_conditioning: Option<PathBuf>,
        /// Griffin-Lim iterations (defaults to the config value)
        #[arg(long)]
        gl_iters: Option<usize>,
    },
    /// Score converted/reference pairs with the proxy-similarity harness
    Eval {
        /// TSV with header: pair_id, converted_path, reference_path, target
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Bootstrap resamples for the confidence interval
        #[arg(long, default_value_t = 1000)]
        n_bootstrap: usize,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config_path = cli
        .config
        .ok_or_else(|| CliError::Validation("--config is required".into()))?;
    let mut cfg = Config::load(&config_path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    } else {
        cfg.train.seed = cfg.seed;
    }

    match cli.command {
        Command::Extract { manifest } => {
            let summary = cmd_extract(&manifest, &cfg)?;
            println!(
                "extract: {} written, {} up to date, {} failed",
                summary.written,
                summary.skipped,
                summary.failures.len()
            );
            for (id, err) in &summary.failures {
                eprintln!("  {id}: {err}");
            }
            if !summary.failures.is_empty() {
                return Err(CliError::Validation(format!(
                    "{} record(s) failed to extract",
                    summary.failures.len()
                )));
            }
            Ok(())
        }
        Command::Train { manifest, out_dir, resume, steps } => {
            let summary = cmd_train(&TrainArgs { manifest, out_dir, resume, steps }, &cfg)?;
            if let Some(last) = summary.last_report {
                println!(
                    "train: step {} d_loss {:.4} g_rec {:.4} g_adv {:.4}",
                    last.step + 1,
                    last.d_loss,
                    last.g_rec,
                    last.g_adv
                );
            }
            println!("checkpoints: {}", summary.checkpoints.len());
            Ok(())
        }
        Command::Convert {
            checkpoint,
            input_wav,
            alignment,
            f0,
            source_speaker,
            contour_from,
            target_speaker,
            pitch_shift,
            ambitus,
            vowel_rate,
            adapt_mean_f0,
            adapt_ambitus,
            adapt_rate,
            out_wav,
            out_mel,
            dump_conditioning,
            gl_iters,
        } => {
            let input = match (input_wav, contour_from) {
                (Some(wav), None) => ConvertInput::File {
                    wav,
                    alignment: alignment.ok_or_else(|| {
                        CliError::Validation("--alignment is required with --input-wav".into())
                    })?,
                    f0,
                    source_speaker: source_speaker.ok_or_else(|| {
                        CliError::Validation(
                            "--source-speaker is required with --input-wav".into(),
                        )
                    })?,
                },
                (None, Some(utterance_id)) => {
                    ConvertInput::Cached { utterance_id, source_speaker }
                }
                _ => {
                    return Err(CliError::Validation(
                        "provide either --input-wav or --contour-from".into(),
                    ))
                }
            };
            let spec = ProsodySpec {
                pitch_shift_semitones: pitch_shift,
                ambitus_factor: ambitus,
                vowel_duration_factor: vowel_rate,
                use_target_mean_f0: adapt_mean_f0,
                use_target_ambitus: adapt_ambitus,
                use_target_rate: adapt_rate,
            };
            spec.validate().map_err(|e| CliError::Validation(e.to_string()))?;
            let outcome = cmd_convert(
                &ConvertArgs {
                    checkpoint,
                    input,
                    target_speaker,
                    spec,
                    out_wav,
                    out_mel,
                    dump_conditioning,
                    gl_iters,
                },
                &cfg,
            )?;
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            println!("convert: {} frames generated", outcome.frames);
            Ok(())
        }
        Command::Eval { pairs, checkpoint, out_dir, n_bootstrap } => {
            let report = cmd_eval(&EvalArgs { pairs, checkpoint, out_dir, n_bootstrap }, &cfg)?;
            println!(
                "eval: mean {:.4} ci [{:.4}, {:.4}] n {}",
                report.mean,
                report.ci_lo,
                report.ci_hi,
                report.scores.len()
            );
            Ok(())
        }
    }
}

fn main() {
    // usage problems are validation errors (exit 1), except help/version
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => fastvgan::cli::EXIT_VALIDATION,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let level = if cli.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => std::process::exit(EXIT_OK),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
