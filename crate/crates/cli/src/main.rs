use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use flashmhf_cli::commands::{cmd_bench, cmd_check, cmd_report, cmd_train_toy, CmdOutput};
use flashmhf_cli::config::{Config, KEYS};
use flashmhf_cli::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Fault {
    Dsilu,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PrecisionArg {
    Single,
    Double,
}

#[derive(Debug, Parser)]
#[command(name = "flashmhf", version, about = "Property checks, memory benchmarks and toy training for multi-head gated FFNs")]
#[command(after_help = config_help())]
struct Cli {
    /// Master seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// key = value config file; flags override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Arithmetic precision for bench
    #[arg(long, global = true, value_enum)]
    precision: Option<PrecisionArg>,
    /// Divisor for the bench grid's L and widths
    #[arg(long, global = true)]
    scale: Option<usize>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override any config key
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, global = true, hide = true, value_enum)]
    inject_fault: Option<Fault>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Run the property suite; exit 1 if any property fails
    Check,
    /// Sweep the scaled grid and write bench.csv
    Bench,
    /// Train every student on the toy regression task
    TrainToy,
    /// Merge bench CSVs into report.md and merged.csv
    Report { inputs: Vec<PathBuf> },
}

fn config_help() -> String {
    let mut s = String::from("Config keys:\n");
    for (k, d) in KEYS {
        s.push_str(&format!("  {k:<13} {d}\n"));
    }
    s
}

fn build_config(cli: &Cli) -> CliResult<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let usage = CliError::Usage;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(p) = cli.precision {
        cfg.set("precision", match p {
            PrecisionArg::Single => "single",
            PrecisionArg::Double => "double",
        })
        .map_err(usage)?;
    }
    if let Some(s) = cli.scale {
        cfg.set("scale", &s.to_string()).map_err(usage)?;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    for kv in &cli.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim()).map_err(usage)?;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> CliResult<CmdOutput> {
    let cfg = build_config(cli)?;
    if let Some(Fault::Dsilu) = cli.inject_fault {
        flashmhf_core::activation::set_dsilu_fault(true);
    }
    match &cli.cmd {
        Cmd::Check => Ok(cmd_check(&cfg)),
        Cmd::Bench => cmd_bench(&cfg),
        Cmd::TrainToy => cmd_train_toy(&cfg),
        Cmd::Report { inputs } => cmd_report(&cfg, inputs),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            print!("{}", out.stdout);
            if out.success {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
