use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use rkl_core::cli::{parse_with_overrides, run, EXIT_CONFIG};

/// Isothermal coordinates, Bergman kernels, spectral and heat-kernel estimates.
#[derive(Parser, Debug)]
#[command(name = "rkl", version)]
struct Args {
    /// Command (kernel, isothermal, spectral, heat, green, capacity, experiment); overrides the config key.
    command: Option<String>,
    /// Configuration file in `key = value` form.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. --set R=4 (repeatable).
    #[arg(short, long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Exit with status 3 when an asserted inequality fails.
    #[arg(long)]
    audit: bool,
}

fn threads() -> Result<(), String> {
    let Ok(v) = std::env::var("RKL_THREADS") else { return Ok(()) };
    let n: usize = v.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| format!("RKL_THREADS must be a positive integer, found '{v}'"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Err(e) = threads() {
        eprintln!("rkl: {e}");
        return ExitCode::from(EXIT_CONFIG as u8);
    }
    let text = match &args.config {
        Some(p) => match std::fs::read_to_string(p) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("rkl: cannot read {}: {e}", p.display());
                return ExitCode::from(EXIT_CONFIG as u8);
            }
        },
        None => String::new(),
    };
    let mut overrides = Vec::new();
    for s in &args.set {
        match s.split_once('=') {
            Some((k, v)) => overrides.push((k.trim().to_string(), v.trim().to_string())),
            None => {
                eprintln!("rkl: --set expects KEY=VALUE, found '{s}'");
                return ExitCode::from(EXIT_CONFIG as u8);
            }
        }
    }
    if let Some(c) = &args.command {
        overrides.push(("command".into(), c.clone()));
    }
    if let Some(d) = &args.out_dir {
        overrides.push(("out_dir".into(), d.display().to_string()));
    }
    if args.audit {
        overrides.push(("audit_mode".into(), "true".into()));
    }
    let cfg = match parse_with_overrides(&text, &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("rkl: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    ExitCode::from(run(&cfg) as u8)
}
