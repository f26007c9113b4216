use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use relodkit_cli::{cmd_compare, cmd_plot, cmd_run, load_scenario, CliError, Override};

#[derive(Parser)]
#[command(name = "relodkit", version, about = "Run, plot and compare remote-local RL scenarios")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every arm of a scenario for every seed.
    Run {
        #[arg(short = 'c', long = "config")]
        config: PathBuf,
        /// Output directory (default: runs/<scenario>).
        #[arg(short = 'o', long = "out")]
        out: Option<PathBuf>,
        /// Override a configuration key; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<Override>,
    },
    /// Draw learning curves into <dir>/curves.svg.
    Plot { dir: PathBuf },
    /// Print per-arm final returns and write <dir>/summary.csv.
    Compare { dir: PathBuf },
}

fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var("RELODKIT_SEED") {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| CliError::Usage(format!("RELODKIT_SEED: not a seed: `{v}`"))),
        Err(_) => Ok(None),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run { config, out, set } => env_seed().and_then(|seed| {
            let scenario = load_scenario(&config, &set, seed)?;
            let out = out.unwrap_or_else(|| PathBuf::from("runs").join(&scenario.name));
            let n = scenario.arms.len() * scenario.seeds.len();
            let mut i = 0;
            let outcome = cmd_run(&scenario, &out, |name| {
                i += 1;
                eprintln!("[{i}/{n}] {name}");
            })?;
            println!("wrote {} runs to {}", outcome.csvs.len(), out.display());
            Ok(())
        }),
        Cmd::Plot { dir } => cmd_plot(&dir).map(|(path, warnings)| {
            warnings.iter().for_each(|w| eprintln!("warning: {w}"));
            println!("{}", path.display());
        }),
        Cmd::Compare { dir } => cmd_compare(&dir).map(|s| {
            s.warnings.iter().for_each(|w| eprintln!("warning: {w}"));
            print!("{}", s.to_text());
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
