use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use survlap::theta::Strategy;
use survlap_cli::{run, RunConfig};

/// Approximate Bayesian inference for latent Gaussian survival models.
#[derive(Parser, Debug)]
#[command(name = "survlap", version, about)]
struct Args {
    /// Model specification (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Dataset binding, name=path; repeatable.
    #[arg(long = "data", value_parser = parse_binding)]
    data: Vec<(String, PathBuf)>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// RNG seed for posterior sampling.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Number of posterior draws for DIC/WAIC.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    /// Hyperparameter exploration strategy.
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    /// Also report hazard ratios (exp of fixed effects).
    #[arg(long)]
    hr: bool,
    /// Report random-effect hyperparameters as sd/correlation.
    #[arg(long)]
    sdcor: bool,
    /// Write prior/posterior overlay tables.
    #[arg(long)]
    priors: bool,
    /// Validate the specification and data bindings, then exit.
    #[arg(long)]
    validate_only: bool,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum StrategyArg {
    Auto,
    Grid,
    Eb,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Strategy {
        match s {
            StrategyArg::Auto => Strategy::Auto,
            StrategyArg::Grid => Strategy::Grid,
            StrategyArg::Eb => Strategy::EmpiricalBayes,
        }
    }
}

fn parse_binding(s: &str) -> Result<(String, PathBuf), String> {
    let (name, path) = s
        .split_once('=')
        .ok_or_else(|| format!("expected name=path, got '{s}'"))?;
    if name.is_empty() || path.is_empty() {
        return Err(format!("expected name=path, got '{s}'"));
    }
    Ok((name.to_string(), PathBuf::from(path)))
}

fn main() -> ExitCode {
    let args = Args::parse();
    let config = RunConfig {
        spec_path: args.spec,
        data: args.data.into_iter().collect::<BTreeMap<_, _>>(),
        out_dir: args.out,
        seed: args.seed,
        samples: args.samples,
        strategy: args.strategy.map(Strategy::from),
        hr: args.hr,
        sdcor: args.sdcor,
        priors: args.priors,
        validate_only: args.validate_only,
    };
    match run(&config) {
        Ok(Some(result)) => {
            println!(
                "fit complete in {:.2}s: log-mlik {:.4}, dic {:.2}, waic {:.2}",
                result.wall_time_s,
                result.criteria.log_mlik,
                result.criteria.dic,
                result.criteria.waic
            );
            for w in &result.warnings {
                eprintln!("warning: {w}");
            }
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
