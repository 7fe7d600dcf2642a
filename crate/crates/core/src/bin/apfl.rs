use std::path::PathBuf;
use std::process::ExitCode;

use apfl::broadcast::BroadcastMode;
use apfl::config::{parse_config, scenario_config, ExperimentConfig, Protocol};
use apfl::report::{compare, write_run};
use clap::{Args, Parser, Subcommand};

/// Asynchronous personalized federated learning simulator.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Print a comparison table of summary.csv files.
    Compare {
        #[arg(required = true)]
        summaries: Vec<PathBuf>,
    },
    /// Run a built-in five-client scenario (A, B, C or D).
    Scenario {
        name: String,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    protocol: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long)]
    broadcast_mode: Option<String>,
}

impl Overrides {
    fn apply(&self, mut cfg: ExperimentConfig) -> apfl::Result<ExperimentConfig> {
        if let Some(p) = &self.protocol {
            cfg.protocol = p.parse::<Protocol>()?;
        }
        if let Some(s) = self.seed {
            cfg.seed = Some(s);
        }
        if let Some(m) = &self.broadcast_mode {
            cfg.apfl.broadcast_mode = m.parse::<BroadcastMode>()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

const CONFIG_ERROR: u8 = 1;
const RUNTIME_ERROR: u8 = 2;

fn execute(cfg: ExperimentConfig, out_dir: &std::path::Path) -> ExitCode {
    let trace = match apfl::sim::run(&cfg) {
        Ok(t) => t,
        Err(e) => return fail(RUNTIME_ERROR, &e),
    };
    match write_run(out_dir, &trace) {
        Ok((metrics, summary)) => {
            println!(
                "{}: final mean accuracy {:.4}, Q_max {}; wrote {} and {}",
                trace.protocol,
                trace.final_mean_accuracy(),
                trace.staleness.q_max,
                metrics.display(),
                summary.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => fail(RUNTIME_ERROR, &e),
    }
}

fn fail(code: u8, err: &dyn std::fmt::Display) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(CONFIG_ERROR) } else { ExitCode::SUCCESS };
        }
    };
    match cli.command {
        Command::Run { config, overrides } => {
            match parse_config(&config).and_then(|c| overrides.apply(c)) {
                Ok(cfg) => execute(cfg, &overrides.out_dir),
                Err(e) => fail(CONFIG_ERROR, &format!("{}: {e}", config.display())),
            }
        }
        Command::Scenario { name, overrides } => match scenario_config(&name).and_then(|c| overrides.apply(c)) {
            Ok(cfg) => execute(cfg, &overrides.out_dir),
            Err(e) => fail(CONFIG_ERROR, &e),
        },
        Command::Compare { summaries } => match compare(&summaries) {
            Ok(table) => {
                print!("{table}");
                ExitCode::SUCCESS
            }
            Err(e) => fail(RUNTIME_ERROR, &e),
        },
    }
}
