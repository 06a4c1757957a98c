use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fpme_harness::{run, to_csv, ExperimentConfig, ExperimentKind, HarnessError, Summary};

#[derive(Parser)]
#[command(name = "fpme", version, about = "Verification suites and experiments for the fractional porous medium solver")]
struct Cli {
    /// List the built-in experiment kinds and their checks.
    #[arg(long)]
    list_suites: bool,

    #[command(subcommand)]
    verb: Option<Verb>,
}

#[derive(clap::Args)]
struct Io {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Directory for the CSV output.
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Verb {
    /// verify-extension, verify-norms and determinism experiments.
    Verify(Io),
    /// solve experiments.
    Solve(Io),
    /// sweep-R, sweep-k, sweep-dt and sweep-N experiments.
    Sweep(Io),
    /// exact-compare experiments.
    Compare(Io),
}

fn list_suites() {
    for kind in ExperimentKind::ALL {
        println!("{:<17} ({:<7}) {}", kind.name(), kind.verb(), kind.checks().join(", "));
    }
}

fn execute(verb: &str, io: &Io) -> Result<bool, HarnessError> {
    let config = ExperimentConfig::load(&io.config)?;
    if config.kind.verb() != verb {
        return Err(HarnessError::Config {
            path: io.config.display().to_string(),
            message: format!(
                "field `kind`: {} experiments run under `fpme {}`, not `fpme {verb}`",
                config.kind.name(),
                config.kind.verb()
            ),
        });
    }
    let rows = run(&config)?;
    std::fs::create_dir_all(&io.out).map_err(|e| HarnessError::Io {
        path: io.out.display().to_string(),
        message: e.to_string(),
    })?;
    let path = io.out.join(config.output_name());
    std::fs::write(&path, to_csv(&rows)).map_err(|e| HarnessError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let summary = Summary::of(&rows);
    println!("{}", summary.line(&config.id));
    for row in rows.iter().filter(|r| !r.pass()) {
        eprintln!("  failed: {} {} = {:e} (threshold {:e})", row.case, row.quantity, row.value, row.threshold);
    }
    Ok(summary.failed == 0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if cli.list_suites {
        list_suites();
        return ExitCode::SUCCESS;
    }
    let Some(verb) = cli.verb else {
        eprintln!("fpme: expected a verb (verify, solve, sweep, compare) or --list-suites");
        return ExitCode::from(2);
    };
    let (name, io) = match &verb {
        Verb::Verify(io) => ("verify", io),
        Verb::Solve(io) => ("solve", io),
        Verb::Sweep(io) => ("sweep", io),
        Verb::Compare(io) => ("compare", io),
    };
    match execute(name, io) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("fpme: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
