use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wormhole_lab::{run, RunConfig, RunError, OUT_DIR_ENV};

#[derive(Parser)]
#[command(
    name = "wormhole-lab",
    version,
    about = "Run collapse, clustering, flip and wormhole experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads; results do not depend on this.
        #[arg(long)]
        threads: Option<usize>,
        /// Output directory (overrides the config's `output_dir`).
        #[arg(long, env = OUT_DIR_ENV)]
        out: Option<PathBuf>,
    },
    /// Check a config and print it with defaults filled in.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn execute(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Validate { config } => {
            let cfg = RunConfig::load(&config)?.with_defaults();
            cfg.validate()?;
            println!(
                "{}",
                serde_json::to_string_pretty(&cfg).expect("configs always serialize")
            );
            Ok(())
        }
        Command::Run {
            config,
            threads,
            out,
        } => {
            let mut cfg = RunConfig::load(&config)?.with_defaults();
            if threads.is_some() {
                cfg.threads = threads;
            }
            cfg.threads
                .get_or_insert_with(wormhole_lab::runner::default_threads);
            let out_dir = out
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("runs").join(cfg.experiment.name()));
            cfg.output_dir = Some(out_dir.clone());
            cfg.validate()?;
            let outcome = run(&cfg, &out_dir)?;
            eprintln!(
                "{} finished in {:.2} s; report at {}",
                cfg.experiment.name(),
                outcome.wall_time_seconds,
                outcome.report_path.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = match e {
                RunError::Config(_) => "config error",
                RunError::Runtime(_) => "runtime error",
            };
            eprintln!("{kind}: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
