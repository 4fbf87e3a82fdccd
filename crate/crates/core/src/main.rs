use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use bohmgrav::acceptance::{VerifyOptions, INJECTIONS};
use bohmgrav::commands::{self, Outcome, EXIT_CONFIG};
use bohmgrav::config::{parse_config_with, RunConfig};
use bohmgrav::Error;

#[derive(Parser)]
#[command(name = "bohmgrav", version, about = "Stationary quantum self-gravitating densities on 2D domains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key = value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key (repeatable), e.g. --set sigma=31.4159
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (overrides output_dir)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for independent solves
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Level {
    Quick,
    Full,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the coupled system and export u, phi, n
    Solve(Common),
    /// Two solves started from bumps at center_a and center_b
    Nonuniq(Common),
    /// Sweep epsilon (against the classical state) or sigma (classical threshold scan)
    Sweep(Common),
    /// Classical steady state at sigma
    Classical(Common),
    /// Run the acceptance criteria
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "quick")]
        level: Level,
        /// Break one invariant on purpose to check that verify notices
        #[arg(long, hide = true)]
        inject_failure: Option<String>,
    },
}

fn load(common: &Common) -> Result<RunConfig, Error> {
    let text = match &common.config {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?,
        None => String::new(),
    };
    let mut cfg = parse_config_with(&text, &common.set)?;
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if common.jobs == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Outcome {
    let common = match &cli.command {
        Command::Solve(c) | Command::Nonuniq(c) | Command::Sweep(c) | Command::Classical(c) => c,
        Command::Verify { common, .. } => common,
    };
    let cfg = match load(common) {
        Ok(c) => c,
        Err(e) => {
            return Outcome {
                code: EXIT_CONFIG,
                dir: None,
                summary: e.to_string(),
            }
        }
    };
    match &cli.command {
        Command::Solve(_) => commands::cmd_solve(&cfg),
        Command::Nonuniq(c) => commands::cmd_nonuniq(&cfg, c.jobs),
        Command::Sweep(c) => commands::cmd_sweep(&cfg, c.jobs),
        Command::Classical(_) => commands::cmd_classical(&cfg),
        Command::Verify { level, inject_failure, .. } => {
            if let Some(name) = inject_failure {
                if !INJECTIONS.contains(&name.as_str()) {
                    return Outcome {
                        code: EXIT_CONFIG,
                        dir: None,
                        summary: format!("unknown injection `{name}` (known: {})", INJECTIONS.join(", ")),
                    };
                }
            }
            let opts = VerifyOptions {
                full: matches!(level, Level::Full),
                inject: inject_failure.clone(),
            };
            commands::cmd_verify(&cfg, &opts)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    let outcome = run(cli);
    let place = outcome.dir.as_ref().map(|d| format!(" [{}]", d.display())).unwrap_or_default();
    if outcome.code == 0 {
        println!("{}{place}", outcome.summary);
    } else {
        eprintln!("error: {}{place}", outcome.summary);
    }
    ExitCode::from(outcome.code as u8)
}
