use clap::{Args, Parser, Subcommand, ValueEnum};
use hyplab::config::{BoundSuiteSpec, Experiment, ExperimentConfig};
use hyplab::experiments::preset;
use hyplab::report::execute;
use hyplab::CliError;
use hyplab_core::bounds::GridLevel;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "hyplab", version, about = "Heat kernels, log determinants and certified inequalities on hyperbolic surfaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: Global,
}

#[derive(Args)]
struct Global {
    /// Output directory; overrides the config's `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed recorded in every report; overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for grid sweeps.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run { config: PathBuf },
    /// Certify registered inequalities.
    Bounds {
        #[arg(long, conflicts_with = "id", required_unless_present = "id")]
        all: bool,
        #[arg(long)]
        id: Vec<String>,
        /// Use the refined grids.
        #[arg(long)]
        refined: bool,
    },
    /// Compute the plane constant by both regularization routes.
    #[command(name = "e-h")]
    EH,
    /// Assemble the log determinant of a preset surface.
    Logdet {
        #[arg(long, value_enum, default_value_t = Surface::Bolza)]
        surface: Surface,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Surface {
    Bolza,
}

const DEFAULT_OUT: &str = "hyplab-out";

fn build(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.command {
        Command::Run { config } => ExperimentConfig::load(config)?,
        Command::Bounds { id, refined, .. } => {
            let mut c = preset(Experiment::BoundSuite);
            c.bounds = Some(BoundSuiteSpec {
                level: if *refined { GridLevel::Refined } else { GridLevel::Default },
                ids: if id.is_empty() { None } else { Some(id.clone()) },
            });
            c
        }
        Command::EH => preset(Experiment::EH),
        Command::Logdet { surface: Surface::Bolza } => preset(Experiment::Logdet),
    };
    if let Some(seed) = cli.global.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("hyplab: cannot size thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let cfg = match build(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("hyplab: {e}");
            return ExitCode::from(2);
        }
    };
    let out = cli.global.out.clone().or_else(|| cfg.output.dir.clone()).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let started = std::time::Instant::now();
    match execute(&cfg, &out) {
        Ok(summary) => {
            for c in &summary.report.checks {
                println!("{} {:<45} {:>14.6e}  {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.detail);
            }
            eprintln!(
                "{} -> {} ({:.1}s, config {})",
                cfg.experiment.name(),
                summary.report_path.display(),
                started.elapsed().as_secs_f64(),
                &summary.report.config_hash[..12]
            );
            if summary.report.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("hyplab: {e}");
            ExitCode::from(2)
        }
    }
}
