use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use trajector::error::{Error, Result};
use trajector::eval::{psnr, read_image, ssim, uqi, SSIM_WINDOW, UQI_WINDOW};
use trajector::ingest::SynthConfig;
use trajector::phase::{delay_embed, epsilon_for_rate, export_rp_image, recurrence_plot, relative_trajectory};
use trajector::pipeline::{
    self, extract_features, load_config, predict_one, synth_dataset, train_streams, RunConfig,
};

#[derive(Parser)]
#[command(name = "trajector", version, about = "Face-landmark trajectory deepfake detector")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Tunables shared by the subcommands. Precedence: command-line flag >
/// config file (--config) > built-in default.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// JSON file with a full run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Delay-embedding lag in frames
    #[arg(long)]
    tau: Option<usize>,
    /// Delay-embedding dimension
    #[arg(long)]
    embed_dim: Option<usize>,
    /// Target recurrence rate for the epsilon threshold
    #[arg(long)]
    rec_rate: Option<f64>,
    /// Shape-fit ridge regularization
    #[arg(long)]
    lambda: Option<f64>,
    /// Per-frame canonical-point clamp, model units (default derived from fps)
    #[arg(long)]
    max_step: Option<f64>,
    /// Mass assigned to "unknown" per stream before fusion
    #[arg(long)]
    discount: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Transformer hidden dimension
    #[arg(long)]
    hidden: Option<usize>,
    /// Transformer encoder layers
    #[arg(long)]
    layers: Option<usize>,
    /// Attention heads
    #[arg(long)]
    heads: Option<usize>,
    /// Maximum embedded sequence length fed to the model
    #[arg(long)]
    max_len: Option<usize>,
    /// Train/val/test fractions, e.g. 0.8,0.1,0.1
    #[arg(long)]
    split: Option<String>,
    /// Disable the sinusoidal positional encoding
    #[arg(long)]
    no_positional: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => load_config(path)?,
            None => RunConfig::default(),
        };
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        take!(seed, tau, embed_dim, rec_rate, lambda, discount, lr, batch_size, epochs, hidden,
              layers, heads, max_len);
        if let Some(v) = self.max_step {
            cfg.max_step = Some(v);
        }
        if let Some(raw) = &self.split {
            let parts: Vec<f64> = raw
                .split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::invalid(format!("bad --split value {raw:?}")))?;
            if parts.len() != 3 {
                return Err(Error::invalid("--split needs three comma-separated fractions"));
            }
            cfg.split = [parts[0], parts[1], parts[2]];
        }
        if self.no_positional {
            cfg.use_positional = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic landmark dataset
    Synth {
        /// Output dataset directory
        #[arg(long)]
        out: PathBuf,
        /// Tracks per class
        #[arg(long, default_value_t = 500)]
        n: usize,
        /// Frames per track
        #[arg(long, default_value_t = 150)]
        frames: usize,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Extract FE/HP feature CSVs with a seeded train/val/test split
    Features {
        /// Dataset manifest CSV
        #[arg(long)]
        manifest: PathBuf,
        /// Output feature directory
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train the FE and HP stream models
    Train {
        /// Feature directory from `features`
        #[arg(long)]
        features: PathBuf,
        /// Output directory for checkpoints and history
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate checkpoints on the test split and fuse the streams
    Eval {
        /// Feature directory from `features`
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        checkpoint_fe: PathBuf,
        #[arg(long)]
        checkpoint_hp: PathBuf,
        /// Output directory for reports and verdicts
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Classify a single track file
    Predict {
        /// Track JSON file
        #[arg(long)]
        track: PathBuf,
        #[arg(long)]
        checkpoint_fe: PathBuf,
        #[arg(long)]
        checkpoint_hp: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Export recurrence plots as PGM images
    Rp {
        /// Dataset manifest CSV (every track, both streams)
        #[arg(long, conflicts_with = "track")]
        manifest: Option<PathBuf>,
        /// Single track JSON file
        #[arg(long)]
        track: Option<PathBuf>,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Full-reference image quality metrics between two PGM/PPM images
    Quality {
        /// Reference image
        a: PathBuf,
        /// Comparison image
        b: PathBuf,
    },
}

fn cmd_synth(out: &Path, n: usize, frames: usize, config: &ConfigArgs) -> Result<()> {
    let cfg = config.resolve()?;
    let template = SynthConfig {
        n_frames: frames,
        ..SynthConfig::default()
    };
    let rows = synth_dataset(out, n, &template, &cfg)?;
    if rows.is_empty() {
        eprintln!("warning: n = 0, wrote an empty manifest");
    }
    println!(
        "wrote {} tracks and manifest to {}",
        rows.len(),
        out.display()
    );
    Ok(())
}

fn cmd_features(manifest: &Path, out: &Path, config: &ConfigArgs) -> Result<()> {
    let cfg = config.resolve()?;
    let summary = extract_features(manifest, out, &cfg)?;
    for (file, err) in &summary.skipped {
        eprintln!("skipped {file}: {err}");
    }
    println!(
        "extracted {} tracks ({} skipped); split {}/{}/{} into {}",
        summary.n_ok,
        summary.skipped.len(),
        summary.split_counts[0],
        summary.split_counts[1],
        summary.split_counts[2],
        out.display()
    );
    Ok(())
}

fn cmd_train(features: &Path, out: &Path, config: &ConfigArgs) -> Result<()> {
    let cfg = config.resolve()?;
    let trained = train_streams(features, out, &cfg)?;
    for (tag, history) in [("FE", &trained.history_fe), ("HP", &trained.history_hp)] {
        if let Some(last) = history.last() {
            println!(
                "{tag}: {} epochs, final train loss {:.6}, train acc {:.4}",
                history.len(),
                last.train_loss,
                last.train_acc
            );
        }
    }
    println!("checkpoints written to {}", out.display());
    Ok(())
}

fn cmd_eval(
    features: &Path,
    checkpoint_fe: &Path,
    checkpoint_hp: &Path,
    out: &Path,
    config: &ConfigArgs,
) -> Result<()> {
    let cfg = config.resolve()?;
    let outputs = pipeline::evaluate(features, checkpoint_fe, checkpoint_hp, out, &cfg)?;
    println!(
        "FE    ACC {:.4}  AUC {:.4}",
        outputs.report_fe.acc, outputs.report_fe.auc
    );
    println!(
        "HP    ACC {:.4}  AUC {:.4}",
        outputs.report_hp.acc, outputs.report_hp.auc
    );
    println!(
        "fused ACC {:.4}  AUC {:.4}  ({} test videos)",
        outputs.report_fused.acc,
        outputs.report_fused.auc,
        outputs.verdicts.len()
    );
    println!("reports and verdicts written to {}", out.display());
    Ok(())
}

fn cmd_predict(
    track: &Path,
    checkpoint_fe: &Path,
    checkpoint_hp: &Path,
    config: &ConfigArgs,
) -> Result<()> {
    let cfg = config.resolve()?;
    let v = predict_one(track, checkpoint_fe, checkpoint_hp, &cfg)?;
    println!(
        "{} p_fe={} p_hp={} m_real={} m_fake={} m_theta={} label={}",
        v.video_id, v.p_fe, v.p_hp, v.mass.m_real, v.mass.m_fake, v.mass.m_theta, v.label_pred
    );
    Ok(())
}

fn export_track_rps(track_path: &Path, video_id: Option<&str>, out: &Path, cfg: &RunConfig) -> Result<()> {
    let bytes = std::fs::read(track_path).map_err(|e| Error::file(track_path, e))?;
    let track = trajector::ingest::parse_track(&bytes).map_err(|e| Error::file(track_path, e))?;
    let track = trajector::ingest::interpolate_gaps(&track, cfg.max_gap).track;
    let model = trajector::face3d::ShapeModel::bundled();
    let (fe, hp) = trajector::features::build_sequences(&track, &model, &cfg.feature_params())?;
    let id = video_id.unwrap_or(&track.video_id);
    for seq in [&fe, &hp] {
        let rel = relative_trajectory(seq)?;
        let emb = delay_embed(&rel, cfg.tau, cfg.embed_dim)?;
        let eps = epsilon_for_rate(&emb, cfg.rec_rate)?;
        let rp = recurrence_plot(&emb, eps)?;
        let tag = seq.stream.tag().to_lowercase();
        export_rp_image(&rp, &out.join(format!("{id}_{tag}.pgm")))?;
    }
    Ok(())
}

fn cmd_rp(
    manifest: Option<&Path>,
    track: Option<&Path>,
    out: &Path,
    config: &ConfigArgs,
) -> Result<()> {
    let cfg = config.resolve()?;
    std::fs::create_dir_all(out).map_err(|e| Error::file(out, e))?;
    let mut count = 0usize;
    match (manifest, track) {
        (Some(manifest), None) => {
            let base = manifest.parent().unwrap_or(Path::new("."));
            for row in pipeline::read_manifest(manifest)? {
                export_track_rps(&base.join(&row.file), Some(&row.video_id), out, &cfg)?;
                count += 1;
            }
        }
        (None, Some(track)) => {
            export_track_rps(track, None, out, &cfg)?;
            count = 1;
        }
        _ => return Err(Error::invalid("pass exactly one of --manifest or --track")),
    }
    println!(
        "wrote {} recurrence plots ({count} tracks x 2 streams) to {}",
        count * 2,
        out.display()
    );
    Ok(())
}

fn cmd_quality(a: &Path, b: &Path) -> Result<()> {
    let img_a = read_image(a)?;
    let img_b = read_image(b)?;
    let p = psnr(&img_a, &img_b)?;
    if p.is_infinite() {
        println!("PSNR: inf dB");
    } else {
        println!("PSNR: {p:.4} dB");
    }
    println!("SSIM: {:.6}", ssim(&img_a, &img_b, SSIM_WINDOW)?);
    let u = uqi(&img_a, &img_b, UQI_WINDOW)?;
    println!("UQI: {:.6}", u.value);
    if u.skipped_windows > 0 {
        eprintln!("note: {} zero-denominator windows skipped in UQI", u.skipped_windows);
    }
    println!("IEF: n/a");
    println!("VIF: n/a");
    println!("RECO: n/a");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Synth {
            out,
            n,
            frames,
            config,
        } => cmd_synth(out, *n, *frames, config),
        Command::Features {
            manifest,
            out,
            config,
        } => cmd_features(manifest, out, config),
        Command::Train {
            features,
            out,
            config,
        } => cmd_train(features, out, config),
        Command::Eval {
            features,
            checkpoint_fe,
            checkpoint_hp,
            out,
            config,
        } => cmd_eval(features, checkpoint_fe, checkpoint_hp, out, config),
        Command::Predict {
            track,
            checkpoint_fe,
            checkpoint_hp,
            config,
        } => cmd_predict(track, checkpoint_fe, checkpoint_hp, config),
        Command::Rp {
            manifest,
            track,
            out,
            config,
        } => cmd_rp(manifest.as_deref(), track.as_deref(), out, config),
        Command::Quality { a, b } => cmd_quality(a, b),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
