use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use millforge::milling::MillingMode;
use millforge_cli::{cmd_check, cmd_optimize, cmd_sweep, default_out_dir, load_tool, parse_vary, sweep_table};

#[derive(Parser)]
#[command(name = "millforge", version, about = "Level-set topology optimization with CNC milling constraints")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the optimizer on a problem file.
    Optimize {
        problem: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Write the shape every N iterations.
        #[arg(long)]
        checkpoint_every: Option<usize>,
    },
    /// Report which boundary samples of a shape the tool can reach. Exits 0
    /// only if every sample is millable.
    Check {
        /// `.lsg` grid or `.stl` mesh.
        shape: PathBuf,
        /// JSON with bit_radius, bit_length, head_radius (mm).
        #[arg(long)]
        tool: PathBuf,
        /// off, three_axis, hemisphere, normal or heat.
        #[arg(long, default_value = "hemisphere")]
        mode: String,
        /// 3-axis directions, e.g. "0,0,-1;-x;+y".
        #[arg(long)]
        dirs: Option<String>,
        /// Voxel size for STL input.
        #[arg(long)]
        h: Option<f64>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run the cartesian product of parameter variations.
    Sweep {
        problem: PathBuf,
        /// key=v1,v2,... ; repeatable. Keys are dotted paths into the problem
        /// file (tool.bit_radius, volume_fraction, ...) or `mode`/`dirs`.
        #[arg(long, required = true)]
        vary: Vec<String>,
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Runs in flight at once.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(k) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(k).build_global().context("setting up threads")?;
    }
    match cli.command {
        Command::Optimize { problem, out, checkpoint_every } => {
            let out = out.unwrap_or_else(|| default_out_dir(&problem));
            let o = cmd_optimize(&problem, &out, checkpoint_every)?;
            println!("{}", serde_json::to_string_pretty(&o.summary)?);
            println!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Check { shape, tool, mode, dirs, h, out } => {
            let tool = load_tool(&tool)?;
            let mode = MillingMode::parse(&mode, dirs.as_deref())?;
            let report = cmd_check(&shape, &tool, &mode, h, out.as_deref())?;
            println!("{}", report.summary());
            Ok(if report.access.passes() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Sweep { problem, vary, out, jobs } => {
            let vary = vary.iter().map(|v| parse_vary(v)).collect::<Result<Vec<_>>>()?;
            let out = out.unwrap_or_else(|| default_out_dir(&problem));
            let rows = cmd_sweep(&problem, &vary, &out, jobs)?;
            print!("{}", sweep_table(&rows));
            Ok(ExitCode::SUCCESS)
        }
    }
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
