use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use optbft_cli::{cmd_check, cmd_run, cmd_sweep, Axis, CliError, Override};

/// Run, sweep and check optbft simulation scenarios.
///
/// Exit codes: 0 ok, 1 usage, 2 invalid scenario, 3 safety violation.
#[derive(Debug, Parser)]
#[command(name = "optbft", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one scenario and write metrics.csv, summary.json and report.txt.
    Run {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(long, default_value = "optbft-out")]
        out: PathBuf,
    },
    /// Run the cross product of one or more axes over a template scenario.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Axis as dotted.path=v1,v2,...; repeatable. `n` and `f` are accepted
        /// for the system parameters.
        #[arg(long = "sweep", value_name = "AXIS=VALUES")]
        axes: Vec<String>,
        #[arg(long, default_value = "optbft-sweep")]
        out: PathBuf,
    },
    /// Validate a scenario and print its derived thresholds without running it.
    Check {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Replace the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override a field as dotted.path=value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl Common {
    fn overrides(&self) -> Result<Vec<Override>, CliError> {
        self.sets.iter().map(|s| Override::parse(s)).collect()
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("optbft: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Run { common, out } => {
            let m = cmd_run(&common.scenario, Some(&out), &common.overrides()?, common.seed)?;
            say(&m.report());
            say(&format!("wrote {}\n", out.display()));
            if !m.safety.is_empty() {
                return Err(CliError::Unsafe(1));
            }
        }
        Command::Sweep { common, axes, out } => {
            let axes = axes.iter().map(|a| Axis::parse(a)).collect::<Result<Vec<_>, _>>()?;
            let rows = cmd_sweep(&common.scenario, &axes, Some(&out), &common.overrides()?, common.seed)?;
            for r in &rows {
                let point: Vec<String> = axes.iter().zip(&r.point).map(|(a, v)| format!("{}={v}", a.path)).collect();
                let verdict = if r.metrics.safety.is_empty() { "safe" } else { "UNSAFE" };
                say(&format!(
                    "run {:03} {:<40} honest bytes {:>12} {verdict}\n",
                    r.run,
                    point.join(" "),
                    r.metrics.total_honest_bytes_sent()
                ));
            }
            say(&format!("wrote {}\n", out.join("aggregate.csv").display()));
            let unsafe_runs = rows.iter().filter(|r| !r.metrics.safety.is_empty()).count();
            if unsafe_runs > 0 {
                return Err(CliError::Unsafe(unsafe_runs));
            }
        }
        Command::Check { common } => say(&cmd_check(&common.scenario, &common.overrides()?)?),
    }
    Ok(())
}

/// Writes to stdout, tolerating a closed pipe such as `optbft run ... | head`.
fn say(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}
