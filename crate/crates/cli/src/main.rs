use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use light4d_core::config::RunConfig;
use light4d_core::io::{list_frames, read_frames, write_frames};
use light4d_core::metrics::compute_report;
use light4d_core::pipeline::{execute, prepare, tau_g_sweep, write_artifacts, write_tau_csv};

#[derive(Parser)]
#[command(name = "light4d", version, about = "Training-free relighting guidance on synthetic scenes")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration for a 30, 90 or 180 degree camera sweep.
    #[arg(long, global = true)]
    preset: Option<u32>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (or file, for dump-schedule and eval).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Render the scene, run the solver and write frames, trace and reports.
    Run,
    /// Repeat the run for several geometric isolation thresholds.
    AblateTauG {
        #[arg(long, value_delimiter = ',', required = true)]
        taus: Vec<f64>,
    },
    /// Compare two frame directories.
    Eval { a: PathBuf, b: PathBuf },
    /// Write (t, lambda) samples of the fusion schedule as CSV.
    DumpSchedule {
        #[arg(long, default_value_t = 1001)]
        grid: usize,
    },
    /// Export the source, target-view and ground-truth renders with buffers.
    RenderScene,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match (&self.config, self.preset) {
            (Some(path), _) => RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
            (None, Some(range)) => RunConfig::preset(range)?,
            (None, None) => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = Some(out.clone());
        }
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &RunConfig) -> PathBuf {
        cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}

fn cmd_run(common: &Common) -> Result<()> {
    let cfg = common.load()?;
    let dir = common.out_dir(&cfg);
    let outcome = execute(&cfg)?;
    write_artifacts(&cfg, &outcome, &dir).with_context(|| format!("writing artifacts to {}", dir.display()))?;
    println!("{}", serde_json::to_string_pretty(&outcome.report_truth)?);
    info!("wrote {}", dir.display());
    Ok(())
}

fn cmd_ablate_tau_g(common: &Common, taus: &[f64]) -> Result<()> {
    let cfg = common.load()?;
    let dir = common.out_dir(&cfg);
    let rows = tau_g_sweep(&cfg, taus)?;
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("tau_g_sweep.csv");
    write_tau_csv(&rows, &path)?;
    for r in &rows {
        println!(
            "tau_g {:.3}  hfpr {:.4}  flicker {:.4e}  flow_l1 {:.4}  psnr {:.2}",
            r.tau_g, r.hfpr, r.flicker_energy, r.motion_flow_l1, r.psnr
        );
    }
    info!("wrote {}", path.display());
    Ok(())
}

fn cmd_eval(common: &Common, a: &Path, b: &Path) -> Result<()> {
    let (na, nb) = (list_frames(a)?.len(), list_frames(b)?.len());
    if na != nb {
        bail!("frame count mismatch: {} has {na}, {} has {nb}", a.display(), b.display());
    }
    let va = read_frames(a).with_context(|| format!("reading {}", a.display()))?;
    let vb = read_frames(b).with_context(|| format!("reading {}", b.display()))?;
    let cfg = common.load()?;
    let report = compute_report(&va, &vb, &cfg.flow)?;
    let text = serde_json::to_string_pretty(&report)?;
    match &common.out {
        Some(path) => std::fs::write(path, &text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn cmd_dump_schedule(common: &Common, grid: usize) -> Result<()> {
    if grid < 2 {
        bail!("grid needs at least 2 points");
    }
    let cfg = common.load()?;
    let schedule = cfg.fusion_schedule()?;
    let mut text = String::from("t,lambda\n");
    for i in 0..grid {
        let t = i as f64 / (grid - 1) as f64;
        text.push_str(&format!("{t},{}\n", schedule.lambda_at(t)?));
    }
    match &common.out {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn cmd_render_scene(common: &Common) -> Result<()> {
    let cfg = common.load()?;
    let dir = common.out_dir(&cfg);
    let prepared = prepare(&cfg)?;
    prepared.source.export(&dir.join("source"), cfg.frame_format)?;
    prepared.geometry.export(&dir.join("target_views"), cfg.frame_format)?;
    write_frames(&dir.join("ground_truth"), &prepared.truth, cfg.frame_format)?;
    write_frames(&dir.join("warped_source"), &prepared.warped, cfg.frame_format)?;
    info!("wrote {}", dir.display());
    Ok(())
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("LIGHT4D_THREADS") {
        let n: usize = v.parse().with_context(|| format!("LIGHT4D_THREADS={v} is not a count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = init_threads().and_then(|_| match &cli.command {
        Command::Run => cmd_run(&cli.common),
        Command::AblateTauG { taus } => cmd_ablate_tau_g(&cli.common, taus),
        Command::Eval { a, b } => cmd_eval(&cli.common, a, b),
        Command::DumpSchedule { grid } => cmd_dump_schedule(&cli.common, *grid),
        Command::RenderScene => cmd_render_scene(&cli.common),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
