use penalimit::config::{Experiment, ExperimentConfig};
use penalimit::experiments::run_experiment;
use penalimit::CliError;
use std::path::PathBuf;
use std::process::ExitCode;

const USAGE: &str = "usage: penalimit <experiment-id> [--config <file>] [--<key> <value> ...] --out <dir>

experiments:
  nncf-sweep   penalty sweep, smooth advection-diffusion benchmark (eps = 10)
  nncf-layer   penalty sweep with an unresolved boundary layer (eps = 1e-4)
  nncf-strip   continuous-region strip study at h = 2^-5
  imd-sweep    displacement penalty sweep against the cG reference
  imd-adapt    adaptive continuous-region displacement runs vs the dG reference

Any configuration key can be overridden on the command line with a flag of
the same name, e.g. --n 32 --sigmas \"[1e3, 1e5]\" --t_end 0.4.

outputs (under --out):
  results.csv                 per-sigma / per-a / per-step table
  summary.csv                 per-run totals (displacement experiments)
  snapshots/step_%05d.vtk     cell data snapshots (with --snapshot_every k)
  checkpoints/step_%05d.bin   reference run checkpoint series";

fn parse_args() -> Result<(ExperimentConfig, PathBuf), CliError> {
    let mut args = std::env::args().skip(1).peekable();
    let Some(first) = args.next() else {
        return Err(CliError::Config(USAGE.into()));
    };
    if first == "--help" || first == "-h" {
        println!("{USAGE}");
        std::process::exit(0);
    }
    let experiment = Experiment::parse(&first)?;
    let mut config_file: Option<PathBuf> = None;
    let mut out: Option<PathBuf> = None;
    let mut overrides: Vec<(String, String)> = Vec::new();
    while let Some(arg) = args.next() {
        let Some(key) = arg.strip_prefix("--") else {
            return Err(CliError::Config(format!(
                "unexpected argument '{arg}'\n{USAGE}"
            )));
        };
        let value = args
            .next()
            .ok_or_else(|| CliError::Config(format!("flag --{key} needs a value")))?;
        match key {
            "config" => config_file = Some(PathBuf::from(value)),
            "out" => out = Some(PathBuf::from(value)),
            other => overrides.push((other.to_string(), value)),
        }
    }
    let out = out.ok_or_else(|| CliError::Config(format!("missing --out <dir>\n{USAGE}")))?;
    let cfg = ExperimentConfig::load(experiment, config_file.as_deref(), &overrides)?;
    Ok((cfg, out))
}

fn main() -> ExitCode {
    let (cfg, out) = match parse_args() {
        Ok(v) => v,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if cfg.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
        {
            eprintln!("could not size the thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run_experiment(&cfg, &out) {
        Ok(()) => {
            eprintln!("[{}] done, results in {}", cfg.experiment.id(), out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
