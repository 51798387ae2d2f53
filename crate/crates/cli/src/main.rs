use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use deformgs::gradcheck::{run_gradcheck, GradcheckOptions};
use deformgs::scene::{generate_synthetic, load_checkpoint, load_dataset, Split, SynthSpec};
use deformgs::trainer::{evaluate, render_cmd, train, TrainConfig};

#[derive(Parser)]
#[command(name = "deformgs", version, about = "Deformable 3D Gaussian splatting on the CPU")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a dataset directory.
    Train {
        /// Config file (flat TOML); defaults to the desk profile.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the worker count from the config.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Render a checkpoint from a camera pose file.
    Render {
        #[arg(long)]
        ckpt: PathBuf,
        /// JSON with width, height, camera_angle_x and transform_matrix.
        #[arg(long)]
        pose: PathBuf,
        #[arg(long)]
        time: f64,
        /// Also write `<out>_depth.png`.
        #[arg(long)]
        depth: bool,
        #[arg(long, default_value = "render.png")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        report: PathBuf,
    },
    /// Finite-difference check of every analytic gradient.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        scenes: usize,
    },
    /// Generate a synthetic dynamic scene.
    Synth {
        /// Spec file (TOML); defaults to the built-in scene.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train {
            config,
            data,
            out,
            workers,
        } => {
            let mut cfg = match config {
                Some(p) => TrainConfig::load(&p)?,
                None => TrainConfig::default(),
            };
            if let Some(w) = workers {
                cfg.workers = w;
            }
            let dataset = load_dataset(&data)?;
            let outcome = train(&cfg, &dataset, Some(&out))?;
            println!(
                "trained {} iterations, {} Gaussians; checkpoint at {}",
                outcome.checkpoint.iteration,
                outcome.checkpoint.cloud.len(),
                out.join("final.dgs").display()
            );
        }
        Command::Render {
            ckpt,
            pose,
            time,
            depth,
            out,
        } => {
            let r = render_cmd(&ckpt, &pose, time, depth, &out)?;
            println!("wrote {}", r.color.display());
            if let Some(d) = r.depth {
                println!("wrote {}", d.display());
            }
        }
        Command::Eval {
            ckpt,
            data,
            split,
            report,
        } => {
            let split: Split = split.parse()?;
            let ck = load_checkpoint(&ckpt)?;
            let dataset = load_dataset(&data)?;
            let rep = evaluate(&ck, &dataset, split)?;
            rep.write_csv(&report)
                .with_context(|| format!("writing {}", report.display()))?;
            println!(
                "{} frames: mean PSNR {:.3} dB, mean SSIM {:.4}",
                rep.rows.len(),
                rep.mean_psnr,
                rep.mean_ssim
            );
        }
        Command::Gradcheck { seed, scenes } => {
            let report = run_gradcheck(&GradcheckOptions {
                seed,
                scenes,
                ..Default::default()
            });
            print!("{report}");
            if !report.passed() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Synth { spec, out } => {
            let spec = match spec {
                Some(p) => SynthSpec::load(&p)?,
                None => SynthSpec::default(),
            };
            let gt = generate_synthetic(&spec, &out)?;
            println!("wrote {} frames to {}", gt.frames.len(), out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
