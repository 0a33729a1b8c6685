use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dragforge::config::Config;
use dragforge::synth::{build_scene, write_scenario, SceneKind};
use dragforge::{pipeline, service, AppError};
use dragforge_core::drag::RegionMode;

#[derive(Parser)]
#[command(name = "dragforge", version, about = "Point-based drag editing over synthetic feature fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment, mask, drag, sample and evaluate per a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long)]
        verbose: bool,
    },
    /// Serve the session HTTP API.
    Serve {
        #[arg(long, env = "DRAGFORGE_BIND", default_value = "127.0.0.1:8080")]
        bind: String,
        /// Root of the per-session artifact directories.
        #[arg(long, default_value = "sessions")]
        data_dir: PathBuf,
        #[arg(short, long)]
        verbose: bool,
    },
    /// Write a synthetic scenario (config plus inputs) to a directory.
    Synth {
        #[arg(value_enum)]
        scene: SceneKind,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fixed-square radius; semantic regions when absent.
        #[arg(long)]
        square_radius: Option<usize>,
    },
}

fn init_logging(verbose: bool) {
    let level = if verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
}

fn run(config_path: PathBuf, out_dir: PathBuf, seed: Option<u64>) -> Result<(), AppError> {
    let mut config = Config::load(&config_path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let base = config_path.parent().map(PathBuf::from).unwrap_or_default();
    let report = pipeline::run_to_dir(&config, &base, &out_dir, |e| {
        log::debug!("k={} point={} {:?} loss={:.6} distance={:.3}", e.k, e.point, e.decision, e.loss, e.distance);
    })?;
    println!(
        "md={:.4} converged={} updates={} artifacts={}",
        report.eval.md,
        report.eval.converged,
        report.eval.updates,
        out_dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            out_dir,
            seed,
            verbose,
        } => {
            init_logging(verbose);
            run(config, out_dir, seed)
        }
        Command::Serve {
            bind,
            data_dir,
            verbose,
        } => {
            init_logging(verbose);
            let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
            rt.block_on(service::serve(&bind, &data_dir))
                .map_err(|e| AppError::Runtime(format!("serve {bind}: {e}")))
        }
        Command::Synth {
            scene,
            out_dir,
            seed,
            square_radius,
        } => {
            init_logging(false);
            let mode = match square_radius {
                Some(radius) => RegionMode::FixedSquare { radius },
                None => RegionMode::Semantic,
            };
            build_scene(scene, seed, mode)
                .and_then(|s| write_scenario(&s, seed, &out_dir))
                .map(|path| println!("{}", path.display()))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dragforge: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
