//! `dscn`: command-line driver for the semantic-transmission pipeline.
//!
//! Typical run:
//! ```text
//! dscn init-config --out run.toml
//! dscn gen-data    --config run.toml
//! dscn train-vqvae --config run.toml
//! dscn train-clf   --config run.toml
//! dscn train-dot   --config run.toml
//! dscn train-sedd  --config run.toml
//! dscn sweep       --config run.toml
//! ```
//!
//! Exit codes: 0 success, 1 usage, 2 config, 3 missing dependency, 4 runtime.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dscn_core::error::Error;

use commands::TrainStage;
use config::RunConfig;

#[derive(Parser)]
#[command(name = "dscn", version, about = "semantic transmission of RF signals over token erasure channels")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides DSCN_OUT and the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Cap worker threads for matrix kernels.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write an editable default configuration file.
    InitConfig {
        /// Destination path.
        #[arg(long, default_value = "dscn.toml")]
        path: PathBuf,
    },
    /// Generate train/val/eval datasets.
    GenData {
        /// Use the 3-class desk subset or the full 6-class set.
        #[arg(long)]
        classes: Option<usize>,
        /// Also export inspection CSVs.
        #[arg(long)]
        export_csv: bool,
    },
    /// Train the signal tokenizer.
    TrainVqvae,
    /// Train the autoregressive prior (needs the tokenizer).
    TrainDot,
    /// Train the diffusion prior (needs the tokenizer).
    TrainSedd,
    /// Train and freeze the task classifier.
    TrainClf,
    /// Run the truncation and puncture sweeps; emit CSV + SVG.
    Sweep {
        /// Keep only sweep points with this nominal erasure rate.
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Detailed single-point evaluation with the semantic-channel matrix.
    Evaluate {
        /// Truncation erasure rate.
        #[arg(long)]
        epsilon: Option<f64>,
        /// Burst length i (keep one token in i+1).
        #[arg(long)]
        burst: Option<usize>,
        /// Number of transmissions.
        #[arg(long, default_value_t = 96)]
        n: usize,
    },
    /// Finite-difference verification of every trainable block.
    GradCheck,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Dependency(_) => 3,
        _ => 4,
    }
}

fn resolve_out_dir(cli_out: &Option<PathBuf>, cfg: Option<&RunConfig>) -> PathBuf {
    if let Some(o) = cli_out {
        return o.clone();
    }
    if let Ok(env_out) = std::env::var("DSCN_OUT") {
        if !env_out.is_empty() {
            return PathBuf::from(env_out);
        }
    }
    if let Some(cfg) = cfg {
        if let Some(o) = &cfg.out_dir {
            return o.clone();
        }
    }
    PathBuf::from("out")
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config <file> is required for this command".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Error> {
    match &cli.cmd {
        Cmd::InitConfig { path } => {
            std::fs::write(path, config::example_config())?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Cmd::GradCheck => commands::grad_check(),
        cmd => {
            let cfg = load_config(cli)?;
            let out = resolve_out_dir(&cli.out, Some(&cfg));
            std::fs::create_dir_all(&out)?;
            match cmd {
                Cmd::GenData {
                    classes,
                    export_csv,
                } => commands::gen_data(&cfg, &out, *classes, *export_csv),
                Cmd::TrainVqvae => commands::train(&cfg, &out, TrainStage::Vqvae),
                Cmd::TrainDot => commands::train(&cfg, &out, TrainStage::Dot),
                Cmd::TrainSedd => commands::train(&cfg, &out, TrainStage::Sedd),
                Cmd::TrainClf => commands::train(&cfg, &out, TrainStage::Clf),
                Cmd::Sweep { epsilon } => commands::sweep(&cfg, &out, *epsilon),
                Cmd::Evaluate { epsilon, burst, n } => {
                    commands::evaluate(&cfg, &out, *epsilon, *burst, *n)
                }
                Cmd::InitConfig { .. } | Cmd::GradCheck => unreachable!(),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version arrive here as "errors" with success status.
            let code = if e.exit_code() == 0 { 0 } else { 1 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(threads) = cli.threads {
        // matrixmultiply reads this at first use.
        std::env::set_var("MATMUL_NUM_THREADS", threads.max(1).to_string());
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
