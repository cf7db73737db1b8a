use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vidcast_cli::{cmd_benchmark, cmd_ingest, cmd_render, cmd_train, resolve_out, CliError, CliResult, Config};

#[derive(Parser)]
#[command(name = "vidcast", version, about = "Forecast time series by predicting rendered video frames")]
struct Cli {
    /// TOML configuration; built-in defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: $VIDCAST_OUT/<command>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load prices, compute changes and write the splits.
    Ingest,
    /// Write one PNG frame per day for each layout variant.
    Render,
    /// Train the configured method and write its checkpoint.
    Train,
    /// Fit all configured methods and score them on the test windows.
    Benchmark,
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => {
            let cfg = Config::default();
            cfg.validate()?;
            cfg
        }
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let seed = cfg.seed;
    match cli.command {
        Command::Ingest => {
            let out = resolve_out(cli.out, "ingest");
            let s = cmd_ingest(&cfg, seed, &out)?;
            for (name, split) in &s.splits {
                println!(
                    "{name}: {} rows ({} .. {})",
                    split.rows,
                    split.first_date.as_deref().unwrap_or("-"),
                    split.last_date.as_deref().unwrap_or("-")
                );
            }
        }
        Command::Render => {
            let out = resolve_out(cli.out, "render");
            let n = cmd_render(&cfg, seed, &out)?;
            println!("wrote {n} frames to {}", out.display());
        }
        Command::Train => {
            let out = resolve_out(cli.out, "train");
            let s = cmd_train(&cfg, seed, &out)?;
            let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
            println!("final train loss {} val loss {}", fmt(s.final_train), fmt(s.final_val));
        }
        Command::Benchmark => {
            let out = resolve_out(cli.out, "benchmark");
            let table = cmd_benchmark(&cfg, seed, &out)?;
            print!("{}", table.to_report());
            let failed = table.n_failed();
            if failed > 0 {
                return Err(CliError::Runtime(format!("{failed} method(s) failed; see report.txt")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
