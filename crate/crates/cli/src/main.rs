use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dprong_cli::config::PipelineConfig;
use dprong_cli::dataset::Split;
use dprong_cli::{exit_code, pipeline, render, CliError, ModelMode, PredictMode, Result};
use dprong_core::GridSpec;

#[derive(Debug, Parser)]
#[command(name = "dprong", version, about = "Simulate, build, train, predict, evaluate and render evidential occupancy grids")]
struct Cli {
    /// Pipeline config (TOML); flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for the running stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReportFormat {
    Table,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic driving scenes and their scans.
    Simulate {
        /// Directory that receives one `seq_NNNNN/` per scene.
        #[arg(long)]
        out: PathBuf,
        /// Number of scenes.
        #[arg(long)]
        count: Option<usize>,
        /// Scene length in seconds.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Fuse simulated scans into eOGM sequences with masks and splits.
    Build {
        /// Output directory of `simulate`.
        #[arg(long)]
        sequences: PathBuf,
        /// Dataset directory to create.
        #[arg(long)]
        out: PathBuf,
        /// `WIDTHxHEIGHT@RESOLUTION`, e.g. `32x32@1.0`.
        #[arg(long, value_parser = parse_grid)]
        grid: Option<GridSpec>,
    },
    /// Train a model: next-frame stage, then multi-step finetuning.
    Train {
        /// Dataset directory written by `build`.
        #[arg(long)]
        dataset: PathBuf,
        /// Directory for checkpoints and the loss history.
        #[arg(long)]
        out: PathBuf,
        /// Double-prong model or the single-prong ablation.
        #[arg(long, value_enum)]
        mode: Option<ModelMode>,
        /// Epochs for each of the two stages.
        #[arg(long)]
        epochs: Option<usize>,
        /// Weight of the full-map loss term.
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Predict future frames for a split.
    Predict {
        /// Dataset directory written by `build`.
        #[arg(long)]
        dataset: PathBuf,
        /// Directory for `<sequence>.eogm` predictions and their index.
        #[arg(long)]
        out: PathBuf,
        /// Model checkpoint; not needed for `persist`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "double")]
        mode: PredictMode,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Frames to predict after the input window.
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Score predictions per horizon step.
    Evaluate {
        /// Dataset directory written by `build`.
        #[arg(long)]
        dataset: PathBuf,
        /// Output directory of `predict`.
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: ReportFormat,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write eOGM frames as PPM images.
    Render {
        /// An `.eogm` file.
        #[arg(long)]
        input: PathBuf,
        /// Directory for `frame_NNN.ppm` images.
        #[arg(long)]
        out: PathBuf,
        /// Render only this frame (default: all).
        #[arg(long)]
        frame: Option<usize>,
    },
}

fn parse_grid(s: &str) -> std::result::Result<GridSpec, String> {
    let (dims, res) = s.split_once('@').unwrap_or((s, "1.0"));
    let (w, h) = dims.split_once('x').ok_or("expected WIDTHxHEIGHT[@RESOLUTION]")?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    let res: f64 = res.trim().parse().map_err(|e| format!("{res:?}: {e}"))?;
    GridSpec::new(parse(w)?, parse(h)?, res).map_err(|e| e.to_string())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    match cli.command {
        Command::Simulate { out, count, duration } => {
            let s = &mut cfg.simulate;
            s.count = count.unwrap_or(s.count);
            s.duration_s = duration.unwrap_or(s.duration_s);
            s.seed = cli.seed.unwrap_or(s.seed);
            let dirs = pipeline::simulate_scenes(&out, s)?;
            println!("wrote {} sequences to {}", dirs.len(), out.display());
        }
        Command::Build { sequences, out, grid } => {
            let b = &mut cfg.build;
            b.grid = grid.unwrap_or(b.grid);
            b.seed = cli.seed.unwrap_or(b.seed);
            let m = dprong_cli::build_dataset(&sequences, &out, b)?;
            let n = |s| m.split(s).count();
            println!("built {} sequences (train {}, val {}, test {})", m.sequences.len(), n(Split::Train), n(Split::Val), n(Split::Test));
        }
        Command::Train { dataset, out, mode, epochs, alpha } => {
            let (m, t) = (&mut cfg.model, &mut cfg.train);
            m.mode = mode.unwrap_or(m.mode);
            m.alpha = alpha.unwrap_or(m.alpha);
            if let Some(e) = epochs {
                t.next_frame_epochs = e;
                t.finetune_epochs = e;
            }
            if let Some(s) = cli.seed {
                m.seed = s;
                t.seed = s;
            }
            let history = pipeline::train_to_dir(&dataset, &out, m, t)?;
            if let Some(last) = history.last() {
                println!("trained {} epochs; final {} loss {:.6e}", history.len(), last.stage.as_str(), last.mean_loss);
            }
        }
        Command::Predict { dataset, out, checkpoint, mode, split, horizon } => {
            let h = horizon.unwrap_or(cfg.train.horizon);
            let idx = pipeline::predict_to_dir(&dataset, checkpoint.as_deref(), &out, mode, split.into(), cfg.train.input_frames, h)?;
            println!("predicted {} sequences, {} steps each", idx.sequences.len(), idx.horizon);
        }
        Command::Evaluate { dataset, predictions, format, out } => {
            let report = pipeline::evaluate_dir(&dataset, &predictions)?;
            let text = match format {
                ReportFormat::Table => report.to_table(),
                ReportFormat::Json => report.to_json(),
            };
            if let Some(p) = out {
                std::fs::write(&p, &text).map_err(|source| CliError::Io { path: p.clone(), source })?;
            }
            print!("{text}");
        }
        Command::Render { input, out, frame } => {
            let written = render::render_file(&input, &out, frame, &cfg.render)?;
            println!("wrote {} images to {}", written.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
