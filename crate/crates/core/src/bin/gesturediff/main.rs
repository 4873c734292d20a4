//! `gesturediff`: feature extraction, training, generation and evaluation
//! from the command line. Human-readable progress goes to stderr, a JSON
//! summary to stdout. Exit codes: 0 ok, 1 runtime failure, 2 bad usage or
//! input.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use gesturediff::ablation::{run_ablation, AblationConfig};
use gesturediff::corpus::corpus_stats;
use gesturediff::denoiser::AblationLayout;
use gesturediff::features::{Lexicon, Standardizer};
use gesturediff::fgd::{train_autoencoder, AutoencoderConfig, FgdReference, MotionAutoencoder, RawSpace};
use gesturediff::generator::SamplerOptions;
use gesturediff::kv::KeyValues;
use gesturediff::pipeline::{
    bvh_features, extract_session, load_bvh_features, load_sessions, save_session, speech_features, TrainedModel,
};
use gesturediff::trainer::{train, window_dataset, RunConfig};
use gesturediff::Error;

#[derive(Parser)]
#[command(name = "gesturediff", version, about = "Diffusion-based co-speech gesture synthesis")]
struct Cli {
    /// Log progress (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract gesture, audio and text features of one recorded session.
    ExtractFeatures {
        /// Speech recording.
        #[arg(long)]
        wav: PathBuf,
        /// Word timings as start<TAB>end<TAB>word lines.
        #[arg(long)]
        tsv: PathBuf,
        /// Motion capture at 30 fps.
        #[arg(long)]
        bvh: PathBuf,
        /// Speaker index, 0..17.
        #[arg(long)]
        speaker: usize,
        /// Session directory to write.
        #[arg(long)]
        out_dir: PathBuf,
        /// Word vectors (`word v1 .. v300` lines); hashed vectors otherwise.
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
    /// Train a denoiser on the session directories under a data directory.
    Train {
        /// Flat key = value run config; desk defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data_dir: PathBuf,
        /// Conditioning layout: split, full-seed-speech or full-seed.
        #[arg(long)]
        layout: Option<AblationLayout>,
        /// Checkpoint path; .cfg, .gns, .gds and .loss.csv files go beside it.
        #[arg(long)]
        out_checkpoint: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Training seed; overrides the config.
        #[arg(long, env = "GESTUREDIFF_SEED")]
        seed: Option<u64>,
    },
    /// Generate a BVH performance for a recording and its transcript.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        wav: PathBuf,
        #[arg(long)]
        tsv: PathBuf,
        #[arg(long)]
        speaker: usize,
        /// Motion whose first frames seed the first clip; mean pose otherwise.
        #[arg(long)]
        seed_bvh: Option<PathBuf>,
        /// Style guidance scale (>= -1; 0 disables guidance).
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        gamma: f64,
        #[arg(long, env = "GESTUREDIFF_SEED", default_value_t = 0)]
        rng_seed: u64,
        /// Linear crossfade frames at clip boundaries.
        #[arg(long, default_value_t = 0)]
        blend_frames: usize,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        out_bvh: PathBuf,
    },
    /// Fréchet gesture distance between two directories of BVH files.
    EvaluateFgd {
        #[arg(long)]
        real_dir: PathBuf,
        #[arg(long)]
        gen_dir: PathBuf,
        /// Autoencoder checkpoint; trained on the real set and saved here
        /// when the file does not exist.
        #[arg(long)]
        autoencoder: PathBuf,
        /// Raw-space samples: frames or windows.
        #[arg(long, default_value = "frames")]
        raw_space: RawSpace,
        /// Frame stride between encoded windows.
        #[arg(long, default_value_t = 1)]
        stride: usize,
        /// Autoencoder training epochs when one is trained.
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, env = "GESTUREDIFF_SEED", default_value_t = 0)]
        seed: u64,
    },
    /// Train every conditioning layout and compare them by FGD.
    Ablation {
        /// Run config; `ae.*` keys set the autoencoder, `ablation.*` the scoring.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data_dir: PathBuf,
        /// Sessions (taken from the end, in name order) held out for scoring.
        #[arg(long, default_value_t = 1)]
        heldout: usize,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, env = "GESTUREDIFF_SEED")]
        seed: Option<u64>,
        /// Also write the report as CSV.
        #[arg(long)]
        out_csv: Option<PathBuf>,
    },
    /// Durations, word counts, word frequencies and laughter of a corpus.
    CorpusStats {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long, default_value_t = 4)]
        workers: usize,
        #[arg(long, default_value_t = 3)]
        top_k: usize,
        #[arg(long, default_value_t = 60.0)]
        bin_seconds: f64,
        #[arg(long, default_value_t = 100.0)]
        bin_words: f64,
    },
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Numeric(_) => 1,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn runtime(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

fn lexicon(path: Option<&Path>) -> Result<Lexicon, Failure> {
    Ok(match path {
        Some(p) => Lexicon::load(p)?,
        None => Lexicon::default(),
    })
}

fn ensure_parent(path: &Path) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    ensure_parent(path)?;
    fs::write(path, bytes).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn load_run_config(path: Option<&Path>) -> Result<KeyValues, Failure> {
    Ok(match path {
        Some(p) => KeyValues::load(p)?,
        None => KeyValues::default(),
    })
}

fn run(command: Command) -> Result<Value, Failure> {
    match command {
        Command::ExtractFeatures {
            wav,
            tsv,
            bvh,
            speaker,
            out_dir,
            lexicon: lex,
        } => {
            let name = out_dir
                .file_name()
                .map_or_else(|| "session".to_string(), |n| n.to_string_lossy().into_owned());
            let session = extract_session(&name, &wav, &tsv, &bvh, speaker, &lexicon(lex.as_deref())?)?;
            save_session(&session, &out_dir)?;
            eprintln!(
                "wrote {} frames of features to {}",
                session.num_frames(),
                out_dir.display()
            );
            Ok(json!({
                "command": "extract-features",
                "out_dir": out_dir,
                "frames": session.num_frames(),
                "widths": {
                    "gesture": session.gesture.ncols(),
                    "audio": session.audio.ncols(),
                    "text": session.text.ncols(),
                },
            }))
        }
        Command::Train {
            config,
            data_dir,
            layout,
            out_checkpoint,
            steps,
            lr,
            seed,
        } => {
            let mut run = RunConfig::from_kv(&load_run_config(config.as_deref())?)?;
            if let Some(l) = layout {
                run.model.layout = l;
            }
            if let Some(s) = steps {
                run.train.steps = s;
            }
            if let Some(v) = lr {
                run.train.lr = v;
            }
            if let Some(s) = seed {
                run.train.seed = s;
            }
            run.validate()?;
            let sessions = load_sessions(&data_dir)?;
            let standardizer = Standardizer::fit(sessions.iter().map(|s| &s.gesture))?;
            let clips = window_dataset(
                &sessions,
                &standardizer,
                run.model.n_seed,
                run.model.n_pred,
                run.train.stride,
            )?;
            if clips.is_empty() {
                return Err(usage(format!(
                    "no session under {} is long enough for one {}-frame clip",
                    data_dir.display(),
                    run.model.clip_frames()
                )));
            }
            eprintln!(
                "training {} layout on {} clips for {} steps",
                run.model.layout,
                clips.len(),
                run.train.steps
            );
            let outcome = train(&clips, &run)?;
            ensure_parent(&out_checkpoint)?;
            let loss_csv = out_checkpoint.with_extension("loss.csv");
            let losses = outcome.losses.clone();
            outcome.write_loss_csv(&loss_csv)?;
            TrainedModel {
                model: outcome.model,
                schedule: outcome.schedule,
                standardizer,
            }
            .save(&out_checkpoint)?;
            let first = losses.first().copied();
            let last = losses.last().copied();
            eprintln!(
                "loss {:.5} -> {:.5}; checkpoint {}",
                first.unwrap_or(f64::NAN),
                last.unwrap_or(f64::NAN),
                out_checkpoint.display()
            );
            Ok(json!({
                "command": "train",
                "checkpoint": out_checkpoint,
                "loss_csv": loss_csv,
                "layout": run.model.layout.key(),
                "clips": clips.len(),
                "steps": run.train.steps,
                "seed": run.train.seed,
                "initial_loss": first,
                "final_loss": last,
            }))
        }
        Command::Generate {
            checkpoint,
            wav,
            tsv,
            speaker,
            seed_bvh,
            gamma,
            rng_seed,
            blend_frames,
            lexicon: lex,
            out_bvh,
        } => {
            if !(gamma >= -1.0) {
                return Err(usage(format!("--gamma must be >= -1, got {gamma}")));
            }
            let trained = TrainedModel::load(&checkpoint)?;
            let (audio, text) = speech_features(&wav, &tsv, &lexicon(lex.as_deref())?, None)?;
            let seed = seed_bvh.as_deref().map(bvh_features).transpose()?;
            let options = SamplerOptions {
                gamma,
                zero_noise: false,
            };
            let (_, out) = trained.generate(
                audio,
                text,
                speaker,
                seed.as_ref().map(|(sk, g)| (sk, g)),
                options,
                rng_seed,
                blend_frames,
            )?;
            write_file(&out_bvh, out.bvh.as_bytes())?;
            eprintln!(
                "generated {} frames in {} clips -> {}",
                out.motion.num_frames(),
                out.standardized.clips.len(),
                out_bvh.display()
            );
            Ok(json!({
                "command": "generate",
                "out_bvh": out_bvh,
                "frames": out.motion.num_frames(),
                "clips": out.standardized.clips.len(),
                "gamma": gamma,
                "rng_seed": rng_seed,
            }))
        }
        Command::EvaluateFgd {
            real_dir,
            gen_dir,
            autoencoder,
            raw_space,
            stride,
            epochs,
            seed,
        } => {
            let real = load_bvh_features(&real_dir)?;
            let generated = load_bvh_features(&gen_dir)?;
            let std_path = autoencoder.with_extension("gds");
            let trained_now = !autoencoder.exists();
            let (ae, standardizer) = if trained_now {
                let standardizer = Standardizer::fit(real.iter().map(|g| &g.frames))?;
                let corpus: Vec<_> = real.iter().map(|g| standardizer.apply(&g.frames)).collect();
                let config = AutoencoderConfig {
                    epochs,
                    seed,
                    ..AutoencoderConfig::new(standardizer.dim())
                };
                eprintln!("training autoencoder on {} real sequences", corpus.len());
                let ae = train_autoencoder(&corpus, config)?;
                ensure_parent(&autoencoder)?;
                ae.save(&autoencoder)?;
                standardizer.save(&std_path)?;
                (ae, standardizer)
            } else {
                (MotionAutoencoder::load(&autoencoder)?, Standardizer::load(&std_path)?)
            };
            let apply = |set: &[gesturediff::features::GestureFeatureSeq]| -> Vec<_> {
                set.iter().map(|g| standardizer.apply(&g.frames)).collect()
            };
            let reference = FgdReference::new(&apply(&real), &ae, raw_space, stride)?;
            let report = reference.compare(&apply(&generated), &ae)?;
            eprintln!(
                "FGD feature space {:.6}  raw space ({raw_space}) {:.6}",
                report.feature_space, report.raw_space
            );
            Ok(json!({
                "command": "evaluate-fgd",
                "feature_space": report.feature_space,
                "raw_space": report.raw_space,
                "raw_space_samples": raw_space.to_string(),
                "autoencoder": autoencoder,
                "trained_autoencoder": trained_now,
            }))
        }
        Command::Ablation {
            config,
            data_dir,
            heldout,
            steps,
            seed,
            out_csv,
        } => {
            let mut c = AblationConfig::from_kv(&load_run_config(config.as_deref())?)?;
            if let Some(s) = steps {
                c.run.train.steps = s;
            }
            if let Some(s) = seed {
                c.run.train.seed = s;
                c.rng_seed = s;
            }
            let sessions = load_sessions(&data_dir)?;
            if heldout == 0 || heldout >= sessions.len() {
                return Err(usage(format!(
                    "--heldout must be between 1 and {} for {} sessions",
                    sessions.len().saturating_sub(1),
                    sessions.len()
                )));
            }
            let (train_part, held_part) = sessions.split_at(sessions.len() - heldout);
            let report = run_ablation(train_part, held_part, &c)?;
            eprint!("{}", report.render_table());
            if let Some(p) = &out_csv {
                write_file(p, report.to_csv().as_bytes())?;
            }
            let rows: Vec<Value> = report
                .rows
                .iter()
                .map(|r| {
                    json!({
                        "layout": r.layout.key(),
                        "fgd_feature": r.feature_space,
                        "fgd_raw": r.raw_space,
                        "final_loss": r.final_loss,
                    })
                })
                .collect();
            Ok(json!({ "command": "ablation", "rows": rows }))
        }
        Command::CorpusStats {
            data_dir,
            workers,
            top_k,
            bin_seconds,
            bin_words,
        } => {
            if !(bin_seconds > 0.0 && bin_words > 0.0) {
                return Err(usage("histogram bin widths must be positive"));
            }
            let stats = corpus_stats(&data_dir, workers)?;
            eprint!("{}", stats.render(bin_seconds, bin_words, top_k));
            Ok(json!({
                "command": "corpus-stats",
                "files": stats.files,
                "total_words": stats.total_words(),
                "max_words": stats.max_words(),
                "laughs": stats.laughs,
                "top_words": stats.top_words(top_k),
                "duration_histogram": stats.duration_histogram(bin_seconds),
                "words_histogram": stats.words_histogram(bin_words),
                "unreadable": stats.unreadable,
            }))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
