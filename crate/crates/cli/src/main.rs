use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ghyp::commands::{self, DetectArgs, SynthKind};
use ghyp::config::{Format, Overrides};
use ghyp::CliError;
use ghyp_core::anomaly::DetectorKind;

#[derive(Parser)]
#[command(
    name = "ghyp",
    version,
    about = "Hyperbolic graph embedding and two-phase anomaly detection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Seed; overrides `[run] seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output root; overrides `[output] dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            out: self.out.clone(),
            format: self.format,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the embedding model (phase one) and save the embedding.
    Embed {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Classify nodes of a saved embedding (phase two).
    Detect {
        #[arg(long)]
        embedding: PathBuf,
        /// CSV with `node_id` first and `label` last.
        #[arg(long)]
        labels: PathBuf,
        /// Reads `[detector]`, `[output]`, `[run]` and `[data] split`.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Single detector; replaces `[detector] kinds`.
        #[arg(long)]
        detector: Option<DetectorKind>,
        /// Model name in report rows.
        #[arg(long)]
        name: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Embed and detect end to end.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the geometry, gradient and metric self-check suites.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic benchmark graph.
    Synth {
        #[arg(long, value_enum)]
        kind: SynthKind,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn execute(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Embed { config, common } => {
            let o = commands::embed(&config, &common.overrides())?;
            println!("TT {:.2} s", o.tt_seconds);
            println!("{}", o.dir.display());
        }
        Command::Detect {
            embedding,
            labels,
            config,
            detector,
            name,
            common,
        } => {
            let args = DetectArgs {
                embedding,
                labels,
                config,
                detector,
                name,
                overrides: common.overrides(),
            };
            let o = commands::detect(&args)?;
            print!("{}", o.report);
            println!("{}", o.dir.display());
        }
        Command::Run { config, common } => {
            let o = commands::run(&config, &common.overrides())?;
            print!("{}", o.report);
            println!("{}", o.dir.display());
        }
        Command::Check { seed } => {
            let mut ok = true;
            for suite in commands::check(seed) {
                for line in suite.lines() {
                    println!("{line}");
                }
                println!("{}: {:.2} s", suite.suite, suite.seconds);
                ok &= suite.passed();
            }
            return Ok(ok);
        }
        Command::Synth { kind, seed, out } => {
            let (e, f) = commands::synth(kind, seed, &out)?;
            println!("{}\n{}", e.display(), f.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GHY_LOG", "error")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
