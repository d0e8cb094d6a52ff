//! `roughflow`: sampling, solving and verification experiments driven by JSON configs.

mod config;
mod manifest;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ExperimentConfig, Kind, NoiseConfig};

/// Bad input: exit status 2.
#[derive(Debug)]
pub struct Invalid(pub String);

/// A numeric check that did not pass: exit status 3.
#[derive(Debug)]
pub struct Failed(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::fmt::Display for Failed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}
impl std::error::Error for Failed {}

const THREADS_VAR: &str = "ROUGHFLOW_THREADS";

#[derive(Parser)]
#[command(name = "roughflow", version, about = "Rough-path solver experiments", propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fractional Brownian noise.
    Noise {
        #[command(subcommand)]
        action: NoiseAction,
    },
    /// Operator-area differences between dyadic levels.
    Area(RunArgs),
    /// Global solve with per-interval diagnostics.
    Solve(RunArgs),
    /// Cocycle residuals under the Wiener shift.
    Rds(RunArgs),
    /// Comparison with a classical integrator on smooth noise.
    Oracle(RunArgs),
    /// The analytic step schedule.
    Schedule(RunArgs),
    /// Cauchy ratios of solutions driven by dyadic interpolants.
    Convergence(RunArgs),
    /// Any experiment; the kind is read from the config.
    Run(RunArgs),
    /// Reruns a manifest and checks that every artifact is byte-identical.
    Rerun {
        manifest: PathBuf,
        /// Output directory; defaults to `rerun/` next to the manifest.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum NoiseAction {
    /// One sample written as `time,mode_1..mode_d`.
    Sample {
        #[arg(long, default_value_t = 0.45)]
        hurst: f64,
        #[arg(long)]
        modes: usize,
        #[arg(long, default_value_t = 2.0)]
        decay_p: f64,
        #[arg(long, default_value_t = 256)]
        grid_n: usize,
        /// `start,end`
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "0,1")]
        window: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Samples for every seed of a config.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config.
    #[arg(long, short)]
    config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match configure_threads().and_then(|_| dispatch(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_status(&e))
        }
    }
}

fn exit_status(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<Invalid>() {
            return 2;
        }
        if cause.is::<Failed>() {
            return 3;
        }
        if let Some(err) = cause.downcast_ref::<roughflow::Error>() {
            return if err.is_validation() { 2 } else { 3 };
        }
    }
    3
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var(THREADS_VAR) else { return Ok(()) };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| Invalid(format!("{THREADS_VAR} must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    let (args, kind) = match command {
        Command::Noise { action: NoiseAction::Sample { hurst, modes, decay_p, grid_n, window, seed, out } } => return sample(hurst, modes, decay_p, grid_n, &window, seed, &out),
        Command::Noise { action: NoiseAction::Run(a) } => (a, Some(Kind::Noise)),
        Command::Area(a) => (a, Some(Kind::AreaConvergence)),
        Command::Solve(a) => (a, Some(Kind::Solve)),
        Command::Rds(a) => (a, Some(Kind::Cocycle)),
        Command::Oracle(a) => (a, Some(Kind::Oracle)),
        Command::Schedule(a) => (a, Some(Kind::Schedule)),
        Command::Convergence(a) => (a, Some(Kind::Convergence)),
        Command::Run(a) => (a, None),
        Command::Rerun { manifest, out } => return rerun(&manifest, out),
    };
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(k) = kind {
        cfg = cfg.with_kind(k)?;
    }
    if let Some(out) = args.out {
        cfg.output_dir = out;
    }
    let dir = cfg.output_dir.clone();
    execute(&cfg, &dir, manifest::MANIFEST)
}

fn execute(cfg: &ExperimentConfig, dir: &Path, manifest_name: &str) -> anyhow::Result<()> {
    let outcome = run::run(cfg, dir)?;
    let m = manifest::write(dir, manifest_name, cfg, &outcome.files)?;
    println!("wrote {} artifacts and {} (config sha256 {})", m.artifacts.len(), dir.join(manifest_name).display(), &m.config_sha256[..12]);
    match outcome.failure {
        Some(f) => Err(f.into()),
        None => Ok(()),
    }
}

fn sample(hurst: f64, modes: usize, decay_p: f64, grid_n: usize, window: &[f64], seed: u64, out: &Path) -> anyhow::Result<()> {
    if window.len() != 2 {
        return Err(Invalid(format!("--window needs `start,end`, got {} values", window.len())).into());
    }
    let file_name = out
        .file_name()
        .and_then(|f| f.to_str())
        .ok_or_else(|| Invalid(format!("--out {} needs a file name", out.display())))?
        .to_string();
    let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf();
    let cfg = ExperimentConfig {
        kind: Some(Kind::Noise),
        noise: NoiseConfig { hurst, decay_p, modes: Some(modes), window: [window[0], window[1]], grid_n, file_name: Some(file_name.clone()) },
        seeds: vec![seed],
        output_dir: dir.clone(),
        ..serde_json::from_str("{}").expect("empty config parses")
    };
    execute(&cfg, &dir, &format!("{file_name}.manifest.json"))
}

fn rerun(path: &Path, out: Option<PathBuf>) -> anyhow::Result<()> {
    let m = manifest::read(path)?;
    let dir = out.unwrap_or_else(|| path.parent().unwrap_or(Path::new(".")).join("rerun"));
    let mut cfg = m.config.clone();
    cfg.output_dir = dir.clone();
    let name = path.file_name().and_then(|f| f.to_str()).unwrap_or(manifest::MANIFEST).to_string();
    execute(&cfg, &dir, &name)?;
    let mut mismatched = Vec::new();
    for a in &m.artifacts {
        let h = manifest::hash_file(&dir.join(&a.path)).unwrap_or_default();
        if h != a.sha256 {
            mismatched.push(a.path.clone());
        }
    }
    if mismatched.is_empty() {
        println!("all {} artifacts reproduced byte for byte", m.artifacts.len());
        Ok(())
    } else {
        Err(Failed(format!("artifacts differ from the manifest: {}", mismatched.join(", "))).into())
    }
}
