//! Experiment runner: `dmden <subcommand> --config <path> [--seed S] [--out <path>]`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 i/o
//! failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dmden_core::error::{Error, Result};
use dmden_core::harness::config::ExperimentConfig;
use dmden_core::harness::{
    run_bench, run_bounds, run_generate, run_lipschitz, run_mismatch, run_resample_compare,
    run_snr_sweep, run_t_sweep, run_trajectory,
};
use dmden_core::model;

#[derive(Parser)]
#[command(
    name = "dmden",
    version,
    about = "Diffusion-based denoising experiments against closed-form mixture ground truth"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration file (`section.key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the master seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output path from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// NMSE of LS / CME / deterministic / re-sampling denoisers over the SNR grid.
    SnrSweep(Common),
    /// NMSE versus the number of diffusion steps.
    TSweep(Common),
    /// NMSE of the intermediate estimates along the reverse walk.
    Trajectory(Common),
    /// Matched versus SNR-mismatched denoising.
    Mismatch(Common),
    /// Deterministic versus re-sampling walks with the paired margin.
    ResampleCompare(Common),
    /// Per-step Lipschitz constants and the composed/noise forms.
    Lipschitz(Common),
    /// Distance-bound evaluators over the configured step counts.
    Bounds(Common),
    /// Wall-time per denoised batch over the SNR grid.
    Bench(Common),
    /// Train the noise-prediction network and write a checkpoint.
    Train(Common),
    /// Generate samples by the full stochastic reverse process.
    Generate(Common),
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = Some(out.clone());
    }
    Ok(cfg)
}

fn out_path(cfg: &ExperimentConfig, default_name: &str) -> PathBuf {
    cfg.out
        .clone()
        .unwrap_or_else(|| PathBuf::from(default_name))
}

/// Per-SNR file name for multi-report experiments: `stem.snr{v}dB.ext`.
fn per_snr_path(base: &Path, snr_db: f64, multi: bool) -> PathBuf {
    if !multi {
        return base.to_path_buf();
    }
    let stem = base
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let ext = base
        .extension()
        .map(|s| format!(".{}", s.to_string_lossy()))
        .unwrap_or_default();
    base.with_file_name(format!("{stem}.snr{snr_db}dB{ext}"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SnrSweep(c) => {
            let cfg = load_config(&c)?;
            let report = run_snr_sweep(&cfg)?;
            let path = out_path(&cfg, "snr_sweep.csv");
            report.write(&path)?;
            println!("wrote {}", path.display());
        }
        Command::TSweep(c) => {
            let cfg = load_config(&c)?;
            let reports = run_t_sweep(&cfg)?;
            let base = out_path(&cfg, "t_sweep.csv");
            let multi = reports.len() > 1;
            for (snr_db, report) in reports {
                let path = per_snr_path(&base, snr_db, multi);
                report.write(&path)?;
                println!("wrote {}", path.display());
            }
        }
        Command::Trajectory(c) => {
            let cfg = load_config(&c)?;
            let reports = run_trajectory(&cfg)?;
            let base = out_path(&cfg, "trajectory.csv");
            let multi = reports.len() > 1;
            for (snr_db, report) in reports {
                let path = per_snr_path(&base, snr_db, multi);
                report.write(&path)?;
                println!("wrote {}", path.display());
            }
        }
        Command::Mismatch(c) => {
            let cfg = load_config(&c)?;
            let report = run_mismatch(&cfg)?;
            let path = out_path(&cfg, "mismatch.csv");
            report.write(&path)?;
            println!("wrote {}", path.display());
        }
        Command::ResampleCompare(c) => {
            let cfg = load_config(&c)?;
            let report = run_resample_compare(&cfg)?;
            let path = out_path(&cfg, "resample_compare.csv");
            report.write(&path)?;
            println!("wrote {}", path.display());
        }
        Command::Lipschitz(c) => {
            let cfg = load_config(&c)?;
            let table = run_lipschitz(&cfg)?;
            let path = out_path(&cfg, "lipschitz.csv");
            table.write(&path)?;
            println!("wrote {}", path.display());
        }
        Command::Bounds(c) => {
            let cfg = load_config(&c)?;
            let table = run_bounds(&cfg)?;
            let path = out_path(&cfg, "bounds.csv");
            table.write(&path)?;
            println!("wrote {}", path.display());
        }
        Command::Bench(c) => {
            let cfg = load_config(&c)?;
            let report = run_bench(&cfg)?;
            let path = out_path(&cfg, "bench.csv");
            report.write(&path)?;
            println!("wrote {}", path.display());
        }
        Command::Train(c) => {
            let cfg = load_config(&c)?;
            let g = cfg.build_gmm()?;
            let s = cfg.build_schedule()?;
            let mut rng = dmden_core::rng::master_rng(cfg.train.seed);
            let net =
                model::MlpNetwork::random(g.dim(), &cfg.model.hidden, cfg.model.embed, &mut rng)?;
            println!(
                "training: N={} hidden={:?} embed={} parameters={}",
                g.dim(),
                cfg.model.hidden,
                cfg.model.embed,
                net.param_count()
            );
            let result = model::train(net, &g, &s, &cfg.train, &mut rng)?;
            for (epoch, loss) in result.epoch_losses.iter().enumerate() {
                println!("epoch {epoch}: loss {loss}");
            }
            let path = out_path(&cfg, "model.ckpt");
            model::save(&result.net, &path)?;
            println!("wrote {}", path.display());
        }
        Command::Generate(c) => {
            let cfg = load_config(&c)?;
            let output = run_generate(&cfg)?;
            let path = out_path(&cfg, "samples.txt");
            std::fs::write(&path, &output.file_text)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            println!(
                "wrote {} (mean norm {}, energy per dimension {})",
                path.display(),
                output.mean_norm,
                output.energy_per_dim
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dmden: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
