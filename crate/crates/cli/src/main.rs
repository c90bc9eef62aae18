use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use bhtomo::pipeline::{self, ExportKind, RunConfig};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bhtomo", version, about = "Lensed emission tomography around a Schwarzschild black hole")]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's `output`.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Replace every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Force round-robin frame batches.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Trace (or load cached) rays for the configured camera.
    Trace,
    /// Synthesize ground truth and measurements.
    Generate,
    /// Reconstruct the emission and rotation axis from a dataset.
    Fit {
        #[arg(long)]
        dataset: PathBuf,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint against a dataset's ground truth.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Velocity-mismatch sweep.
    Sweep,
    /// Export a checkpoint as a volume, frames, or plots.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_parser = parse_kind)]
        what: ExportKind,
    },
    /// Re-run a manifest's command into a scratch directory and compare artifacts.
    Verify {
        /// Directory holding manifest.json.
        #[arg(long)]
        manifest: PathBuf,
    },
}

fn parse_kind(s: &str) -> Result<ExportKind, String> {
    s.parse().map_err(|e: bhtomo::Error| e.to_string())
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let path = cli.config.as_deref().context("--config is required")?;
    let mut cfg = RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = cli.seed {
        pipeline::override_seed(&mut cfg, seed);
    }
    if cli.deterministic {
        cfg.solver.deterministic = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output_dir(cli: &Cli, cfg: &RunConfig) -> anyhow::Result<PathBuf> {
    match cli.output.clone().or_else(|| cfg.output.clone()) {
        Some(p) => Ok(p),
        None => bail!("no output directory: pass --output or set `output` in the config"),
    }
}

fn require_dir(p: &Path, what: &str) -> anyhow::Result<()> {
    if !p.is_dir() {
        bail!("{what} {} is not a directory", p.display());
    }
    Ok(())
}

fn require_file(p: &Path, what: &str) -> anyhow::Result<()> {
    if !p.is_file() {
        bail!("{what} {} does not exist", p.display());
    }
    Ok(())
}

fn print_json<T: serde::Serialize>(v: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    if let Command::Verify { manifest } = &cli.command {
        require_dir(manifest, "manifest directory")?;
        let scratch = std::env::temp_dir().join(format!("bhtomo-verify-{}", std::process::id()));
        let mismatched = pipeline::verify_manifest(manifest, &scratch);
        let _ = std::fs::remove_dir_all(&scratch);
        let mismatched = mismatched?;
        if mismatched.is_empty() {
            println!("all artifacts reproduced");
            return Ok(ExitCode::SUCCESS);
        }
        for m in &mismatched {
            println!("mismatch: {m}");
        }
        return Ok(ExitCode::FAILURE);
    }
    let cfg = load_config(&cli)?;
    let out = output_dir(&cli, &cfg)?;
    match &cli.command {
        Command::Trace => print_json(&pipeline::trace(&cfg, &out)?)?,
        Command::Generate => {
            let m = pipeline::generate(&cfg, &out)?;
            log::info!("wrote {} artifacts to {}", m.artifacts.len(), out.display());
        }
        Command::Fit { dataset, resume } => {
            require_dir(dataset, "dataset")?;
            if let Some(r) = resume {
                require_file(r, "checkpoint")?;
            }
            let report = pipeline::fit(&cfg, dataset, &out, resume.as_deref())?;
            for f in &report.failures {
                log::warn!("run failed: {f}");
            }
            print_json(&report)?;
        }
        Command::Evaluate { checkpoint, dataset } => {
            require_file(checkpoint, "checkpoint")?;
            require_dir(dataset, "dataset")?;
            print_json(&pipeline::evaluate(&cfg, checkpoint, dataset, &out)?)?;
        }
        Command::Sweep => {
            let table = pipeline::sweep(&cfg, &out)?;
            let failed = table.rows.iter().filter(|r| r.error.is_some()).count();
            if failed > 0 {
                log::warn!("{failed} of {} sweep fits failed; see sweep.csv", table.rows.len());
            }
            println!("wrote {}", out.join("summary.csv").display());
        }
        Command::Export { checkpoint, what } => {
            require_file(checkpoint, "checkpoint")?;
            for p in pipeline::export(&cfg, checkpoint, *what, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Verify { .. } => unreachable!(),
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
