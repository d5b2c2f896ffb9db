use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fast_ste::data_synth::{convert_mostel, generate_dataset, BackgroundSet, FontSet, SynthConfig, WordList};
use fast_ste::metrics::{evaluate_pairs, Lpips};
use fast_ste::pipeline::{predict_dataset, write_debug, EditOptions, EditRequest, Pipeline};
use fast_ste::trainer::{run_ablation_from_file, train_from_dirs, Stage, TrainConfig};
use fast_ste::{FastError, TensorImage};

#[derive(Parser)]
#[command(name = "fast", version, about = "Two-stage scene text editing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Mask,
    Image,
    Unet,
}

#[derive(Subcommand)]
enum Command {
    /// Render a paired synthetic dataset.
    Synth {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Directory of .ttf/.otf files; bundled fonts when omitted.
        #[arg(long)]
        fonts: Option<PathBuf>,
        /// Directory of background images; procedural textures when omitted.
        #[arg(long)]
        backgrounds: Option<PathBuf>,
        /// Number of procedural backgrounds when no directory is given.
        #[arg(long, default_value_t = 64)]
        procedural_backgrounds: usize,
        /// Newline-separated word list; bundled list when omitted.
        #[arg(long)]
        words: Option<PathBuf>,
        /// JSON generator settings (ranges, contrast, coverage).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Convert a MOSTEL-style folder (i_s, t_b or t_f, i_s.txt, i_t.txt) to this dataset layout.
    ConvertMostel {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one stage.
    Train {
        #[arg(long, value_enum)]
        stage: StageArg,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directories; several are concatenated.
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an ablation matrix and print the table.
    Ablate {
        #[arg(long)]
        matrix: PathBuf,
        /// Also write the table as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Edit every sample of a dataset to its target text.
    Predict {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, env = "FAST_CKPT_DIR")]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Estimate source masks with the U-Net instead of using the stored ones.
        #[arg(long)]
        estimate_masks: bool,
        #[arg(long)]
        binarize_mask: bool,
    },
    /// Score generated images against a dataset's targets.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// LPIPS (SqueezeNet) safetensors; LPIPS is reported as null without it.
        #[arg(long)]
        lpips_weights: Option<PathBuf>,
    },
    /// Edit a single crop.
    Edit {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, env = "FAST_CKPT_DIR")]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write m_a.png, m_f.png and m_b.png here.
        #[arg(long)]
        debug_dir: Option<PathBuf>,
        /// Threshold the stage-I mask at 0 before stage II.
        #[arg(long, conflicts_with = "raw_mask")]
        binarize_mask: bool,
        /// Feed the stage-I mask unthresholded (the default).
        #[arg(long)]
        raw_mask: bool,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, env = "FAST_CKPT_DIR")]
        ckpt: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Built web UI to serve under /ui.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
        #[arg(long)]
        binarize_mask: bool,
    },
}

fn is_validation(e: &FastError) -> bool {
    matches!(
        e,
        FastError::GlyphOverflow(_)
            | FastError::InvalidText(_)
            | FastError::MissingCheckpoint(_)
            | FastError::MissingStage1Checkpoint(_)
            | FastError::MissingFont(_)
            | FastError::ShapeMismatch(_)
            | FastError::InvalidRequest(_)
            | FastError::InvalidConfig(_)
            | FastError::InsufficientAssets(_)
            | FastError::EmptyDataset
            | FastError::Image(_)
            | FastError::Json(_)
    ) || matches!(e, FastError::Io(io) if io.kind() == std::io::ErrorKind::NotFound)
}

fn synth(
    count: usize,
    seed: u64,
    out: &Path,
    fonts: Option<PathBuf>,
    backgrounds: Option<PathBuf>,
    procedural: usize,
    words: Option<PathBuf>,
    config: Option<PathBuf>,
) -> fast_ste::Result<()> {
    let fonts = match fonts {
        Some(d) => FontSet::from_dir(&d)?,
        None => FontSet::bundled(),
    };
    let bgs = match backgrounds {
        Some(d) => BackgroundSet::from_dir(&d)?,
        None => BackgroundSet::procedural(procedural),
    };
    let words = match words {
        Some(p) => WordList::from_file(&p)?,
        None => WordList::bundled(),
    };
    let cfg: SynthConfig = match config {
        Some(p) => serde_json::from_slice(&std::fs::read(p)?)?,
        None => SynthConfig::default(),
    };
    let records = generate_dataset(count, &fonts, &bgs, &words, seed, &cfg, out)?;
    println!("wrote {} samples to {}", records.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> fast_ste::Result<()> {
    match cli.command {
        Command::Synth { count, seed, out, fonts, backgrounds, procedural_backgrounds, words, config } => {
            synth(count, seed, &out, fonts, backgrounds, procedural_backgrounds, words, config)
        }
        Command::ConvertMostel { src, out } => {
            let n = convert_mostel(&src, &out)?;
            println!("converted {n} samples to {}", out.display());
            Ok(())
        }
        Command::Train { stage, config, data, out } => {
            let stage = match stage {
                StageArg::Mask => Stage::Mask,
                StageArg::Image => Stage::Image,
                StageArg::Unet => Stage::Unet,
            };
            let mut cfg = match config {
                Some(p) => TrainConfig::from_json_file(&p)?,
                None => TrainConfig::for_stage(stage),
            };
            if cfg.stage != stage {
                return Err(FastError::InvalidConfig(format!("--stage {stage:?} but config says {:?}", cfg.stage)));
            }
            cfg.stage = stage;
            train_from_dirs(cfg, &data, &out)?;
            println!("checkpoint written to {}", out.display());
            Ok(())
        }
        Command::Ablate { matrix, out } => {
            let table = run_ablation_from_file(&matrix)?;
            print!("{}", table.to_markdown());
            if let Some(p) = out {
                std::fs::write(p, serde_json::to_vec_pretty(&table)?)?;
            }
            Ok(())
        }
        Command::Predict { dataset, ckpt, out, estimate_masks, binarize_mask } => {
            let p = Pipeline::load(&ckpt)?.with_options(EditOptions { binarize_mask });
            let n = predict_dataset(&p, &dataset, &out, !estimate_masks)?;
            println!("wrote {n} edited images to {}", out.display());
            Ok(())
        }
        Command::Eval { dataset, generated, out, lpips_weights } => {
            let lpips = match lpips_weights {
                Some(p) => Some(Lpips::from_safetensors(&p)?),
                None => None,
            };
            let report = evaluate_pairs(&dataset, &generated, lpips.as_ref())?;
            fast_nn::io::write_atomic(&out, &serde_json::to_vec_pretty(&report)?)?;
            println!(
                "n={} mse={:.4} psnr={:.2} ssim={:.3} ms_ssim={:.3} lpips={}",
                report.n_samples,
                report.mse,
                report.psnr_db,
                report.ssim,
                report.ms_ssim,
                report.lpips.map_or("n/a".to_string(), |v| format!("{v:.4}"))
            );
            Ok(())
        }
        Command::Edit { image, text, mask, ckpt, out, debug_dir, binarize_mask, raw_mask: _ } => {
            let img = TensorImage::load_rgb(&image)?;
            let source_mask = match mask {
                Some(p) => Some(TensorImage::load_mask(&p, 1)?),
                None => None,
            };
            let p = Pipeline::load(&ckpt)?;
            let req = EditRequest { image: img, target_text: text, source_mask };
            let res = p.edit_with(&req, EditOptions { binarize_mask })?;
            res.edited.save_rgb(&out)?;
            if let Some(d) = debug_dir {
                write_debug(&d, &res.intermediates)?;
            }
            Ok(())
        }
        Command::Serve { ckpt, addr, ui_dir, binarize_mask } => {
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(fast_ste::service::serve(ckpt, addr, EditOptions { binarize_mask }, ui_dir))
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if is_validation(&e) { 2 } else { 1 })
        }
    }
}
