use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gossip_bandits::harness::{self, output, ExperimentConfig, Summary};
use gossip_bandits::linear::{compute_spanner, ActionSet, SpannerOptions};
use gossip_bandits::{Error, Result};

/// Distributed bandits over gossip networks.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and print its summary.
    Run { config: PathBuf },
    /// Re-run an experiment for each value of one config key.
    Sweep {
        config: PathBuf,
        /// Dotted key, e.g. `algorithm.horizon`.
        #[arg(long)]
        vary: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Resolve parameters and run every invariant check on a few blocks.
    Validate {
        config: PathBuf,
        /// Blocks to simulate.
        #[arg(long, default_value_t = 4)]
        blocks: usize,
    },
    /// Build and certify a volumetric spanner for an action set.
    Spanner {
        actions: PathBuf,
        #[arg(long)]
        cap: Option<usize>,
        #[arg(long)]
        strict: bool,
        /// Write `members.txt` and `lambda.csv` here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let e = output::run_and_write(&cfg)?;
            println!("{}", Summary::new(&cfg, &e).to_json());
            if cfg.algorithm.strict && e.params.theory_valid && e.violations() > 0 {
                return Err(Error::InvariantViolation(format!("{} violations", e.violations())));
            }
        }
        Command::Sweep { config, vary, values } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| Error::ConfigInvalid(format!("{}: {e}", config.display())))?;
            let table: toml::Table = toml::from_str(&text).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
            let points = harness::sweep(&table, &vary, &values)?;
            println!("{}", serde_json::to_string_pretty(&points).expect("serializes"));
        }
        Command::Validate { config, blocks } => {
            let cfg = ExperimentConfig::load(&config)?;
            let prep = harness::prepare(&cfg)?;
            let mut e = harness::run_replay(&prep, 0, Some(blocks.max(3)))?;
            let p = &prep.params;
            for w in &p.warnings {
                eprintln!("warning: {w}");
            }
            println!("{}", serde_json::to_string_pretty(p).expect("serializes"));
            println!(
                "simulated {} blocks: max consensus error {:e} (bound {:e}), max ghost ratio {}",
                e.rows.len(),
                e.max_consensus_err,
                p.consensus_bound.max(gossip_bandits::gossip::CONSENSUS_FLOOR),
                e.max_ghost_ratio.map_or("off".into(), |g| g.to_string())
            );
            let violations = std::mem::take(&mut e.violations);
            for v in &violations {
                eprintln!("violation: {v}");
            }
            if !violations.is_empty() && p.theory_valid {
                return Err(Error::InvariantViolation(format!("{} violations", violations.len())));
            }
        }
        Command::Spanner { actions, cap, strict, out } => {
            let omega = ActionSet::load(&actions).map_err(|e| match e {
                Error::Io(io) => Error::ConfigInvalid(format!("{}: {io}", actions.display())),
                other => other,
            })?;
            let s = compute_spanner(&omega, SpannerOptions { size_cap: cap, strict })?;
            let c = s.certificate();
            println!("actions: {} in R^{} (rank {})", omega.arms(), omega.ambient_dim(), omega.effective_dim());
            let members: Vec<String> = s.members().iter().map(|m| (m + 1).to_string()).collect();
            println!("members (1-based): {}", members.join(" "));
            println!("size: {} (cap {})", s.size(), s.size_cap());
            println!("max quadratic form: {}", c.max_quadratic_form);
            println!("constant: {}", c.constant);
            println!("residual: {:e}", c.residual);
            println!("certified: {}", c.certified);
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                let m = std::fs::File::create(dir.join("members.txt"))?;
                let l = std::fs::File::create(dir.join("lambda.csv"))?;
                s.export(m, l)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
