use std::path::PathBuf;
use std::process::ExitCode;

use bose_cli::record::{append_records, write_sweep_csv};
use bose_cli::{run, CliError, Command, ExperimentConfig, RunOptions};
use clap::Parser;

/// Grand-canonical lattice Bose gas estimators.
#[derive(Debug, Parser)]
#[command(name = "bose", version)]
struct Args {
    command: Command,
    /// TOML configuration; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Append JSON-line records here instead of printing them. Sweeps also
    /// write a CSV next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    nmax: Option<usize>,
    #[arg(long)]
    lmax: Option<usize>,
    #[arg(long)]
    ntau: Option<usize>,
    /// Write zero wall-clock time so reruns give identical bytes.
    #[arg(long)]
    no_timing: bool,
}

fn execute(args: &Args) -> Result<(), CliError> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.mc.seed = s;
    }
    if let Some(c) = args.chains {
        cfg.mc.chains = c;
    }
    if let Some(n) = args.samples {
        cfg.mc.samples = n;
    }
    if let Some(n) = args.nmax {
        cfg.truncation.n_max = n;
    }
    if let Some(l) = args.lmax {
        cfg.truncation.l_max = l;
    }
    if let Some(t) = args.ntau {
        cfg.grid.slices = t;
    }
    let out = run(args.command, &cfg, RunOptions { timing: !args.no_timing })?;
    if args.command == Command::Validate {
        for r in &out.records {
            let passed = r.details["passed"].as_bool().unwrap_or(false);
            let detail = r.details["detail"].as_str().unwrap_or("");
            eprintln!("{} {}: {detail}", if passed { "PASS" } else { "FAIL" }, r.observable);
        }
    }
    match &args.out {
        Some(path) => {
            append_records(path, &out.records)?;
            if let Some(params) = &out.sweep {
                let rows: Vec<_> = params.iter().copied().zip(&out.records).collect();
                write_sweep_csv(&path.with_extension("csv"), &rows)?;
            }
        }
        None => {
            for r in &out.records {
                println!("{}", r.to_json());
            }
        }
    }
    if out.failed_checks > 0 {
        return Err(CliError::ChecksFailed(out.failed_checks));
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bose: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
