use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fljam::config::ScenarioConfig;
use fljam::error::Error;
use fljam::experiments::{reproduce_experiment, ReproduceOptions, RunCache};
use fljam::harness::{compare_rankings, parse_ranking, run_scenario};

#[derive(Parser)]
#[command(name = "fljam", version, about = "Federated learning under over-the-air jamming")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario for each configured seed.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to the config's `output` or `./out`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Regenerate a published table or figure as CSV.
    Reproduce {
        /// table2, table3, table4, table6, fig2 or fig3 to fig9.
        name: String,
        #[arg(long)]
        out: PathBuf,
        /// Base scenario to sweep from.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        rounds: Option<usize>,
        /// Budget axis for figure sweeps.
        #[arg(long, value_delimiter = ',')]
        budgets: Option<Vec<f64>>,
    },
    /// Print the top-k set difference of two rankings for every k.
    CompareRankings {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Report a single prefix length.
        #[arg(long)]
        k: Option<usize>,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::InvalidArgument(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn runtime(e: Error) -> Failure {
    match e {
        Error::Config { .. } => Failure::Config(e.to_string()),
        other => Failure::Runtime(other.to_string()),
    }
}

fn load(path: &Path) -> Result<ScenarioConfig, Failure> {
    let cfg = ScenarioConfig::load(path).map_err(|e| match e {
        Error::Io(io) => Failure::Config(format!("cannot read {}: {io}", path.display())),
        other => Failure::from(other),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn read_ranking(path: &Path) -> Result<Vec<usize>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    Ok(parse_ranking(&text)?)
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let mut cfg = load(&config)?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            let out = out.or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
            let rows = run_scenario(&cfg, &out).map_err(runtime)?;
            for r in rows {
                println!("seed {} final_accuracy {:.4} mean_budget {:.4}", r.seed, r.final_accuracy, r.mean_budget);
            }
            println!("results written to {}", out.display());
        }
        Command::Reproduce { name, out, config, seeds, rounds, budgets } => {
            let mut base = match &config {
                Some(p) => load(p)?,
                None => ScenarioConfig::default(),
            };
            if let Some(s) = seeds {
                base.seeds = s;
            }
            if let Some(r) = rounds {
                base.rounds = r;
            }
            base.validate()?;
            let opts = ReproduceOptions { base, budgets };
            let files = reproduce_experiment(&name, &opts, &mut RunCache::new(), &out).map_err(|e| match e {
                Error::InvalidArgument(_) => Failure::Config(e.to_string()),
                other => runtime(other),
            })?;
            for f in files {
                println!("{}", f.display());
            }
        }
        Command::CompareRankings { a, b, k } => {
            let ra = read_ranking(&a)?;
            let rb = read_ranking(&b)?;
            let ks: Vec<usize> = match k {
                Some(k) => vec![k],
                None => (1..ra.len().max(1)).collect(),
            };
            println!("k,difference");
            for k in ks {
                println!("{k},{}", compare_rankings(&ra, &rb, k)?);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
