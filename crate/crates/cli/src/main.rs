//! `dabsde`: batch runner for fBm sampling, BSDE solves, contraction
//! diagnostics and comparison experiments.
//!
//! Every command writes into `--out` a `manifest.json` (before the run, and
//! again with the final status), its CSV/JSON outputs, and `error.json` on
//! failure. Exit codes: 0 success, 1 completed with a failed check,
//! 2 invalid configuration, 3 numerical or convergence failure, 4 I/O.

mod commands;
mod failure;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dabsde_core::fbm::SamplingMethod;
use dabsde_core::{ProblemConfig, BUILTIN_NAMES};
use serde_json::Value;

use commands::SampleConfig;
use failure::Failure;
use manifest::Run;

#[derive(Parser, Debug)]
#[command(name = "dabsde", version, about = "Anticipated BSDEs with delayed generators driven by fBm")]
struct Cli {
    /// Problem configuration (JSON).
    #[arg(long, global = true, conflicts_with = "builtin")]
    config: Option<PathBuf>,
    /// Name of a builtin problem instead of --config.
    #[arg(long, global = true)]
    builtin: Option<String>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample fBm paths to paths.csv.
    FbmSample(SampleArgs),
    /// Solve the BSDE; writes solution.csv and diagnostics.json.
    Solve(SolveArgs),
    /// Solve and tabulate successive-difference ratios.
    Contraction(SolveArgs),
    /// Run the comparison experiment; writes gap.csv and ordering.json.
    Compare,
    /// Run the pre-solve validators only.
    Validate,
    /// Print the builtin problem names, or one builtin's configuration.
    Builtins {
        name: Option<String>,
    },
}

#[derive(Args, Debug)]
struct SampleArgs {
    /// Hurst parameter in (0, 1).
    #[arg(long)]
    hurst: Option<f64>,
    /// Time horizon of the sampled grid.
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long)]
    n_steps: Option<usize>,
    #[arg(long)]
    n_paths: Option<usize>,
    /// Sampler; defaults to circulant embedding.
    #[arg(long, value_enum)]
    method: Option<Method>,
    /// Also write the empirical-vs-exact covariance table.
    #[arg(long)]
    validate: bool,
}

#[derive(Args, Debug)]
struct SolveArgs {
    /// Overrides the β of the convergence norm.
    #[arg(long)]
    beta: Option<f64>,
    /// Overrides the configured number of paths.
    #[arg(long)]
    n_paths: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Method {
    Cholesky,
    Circulant,
}

impl From<Method> for SamplingMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::Cholesky => SamplingMethod::Cholesky,
            Method::Circulant => SamplingMethod::Circulant,
        }
    }
}

fn load_problem(cli: &Cli) -> Result<ProblemConfig, Failure> {
    let mut cfg = match (&cli.config, &cli.builtin) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
            ProblemConfig::from_json(&text)?
        }
        (None, Some(name)) => ProblemConfig::builtin(name)?,
        (None, None) => {
            return Err(dabsde_core::Error::Validation(vec!["either --config or --builtin is required".into()]).into())
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn sample_config(cli: &Cli, args: &SampleArgs) -> Result<SampleConfig, Failure> {
    let base = if cli.config.is_some() || cli.builtin.is_some() {
        let p = load_problem(cli)?;
        SampleConfig {
            hurst: p.hurst,
            t_max: p.horizon + p.anticipation,
            n_steps: p.n_steps,
            n_paths: p.n_paths,
            seed: p.seed,
            method: p.method,
        }
    } else {
        SampleConfig {
            hurst: 0.7,
            t_max: 1.0,
            n_steps: 64,
            n_paths: 1000,
            seed: cli.seed.unwrap_or(0),
            method: SamplingMethod::Circulant,
        }
    };
    Ok(SampleConfig {
        hurst: args.hurst.unwrap_or(base.hurst),
        t_max: args.t_max.unwrap_or(base.t_max),
        n_steps: args.n_steps.unwrap_or(base.n_steps),
        n_paths: args.n_paths.unwrap_or(base.n_paths),
        method: args.method.map(Into::into).unwrap_or(base.method),
        ..base
    })
}

fn problem_with(cli: &Cli, n_paths: Option<usize>) -> Result<ProblemConfig, Failure> {
    let mut cfg = load_problem(cli)?;
    if let Some(n) = n_paths {
        cfg.n_paths = n;
    }
    cfg.check()?;
    Ok(cfg)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::FbmSample(_) => "fbm-sample",
        Command::Solve(_) => "solve",
        Command::Contraction(_) => "contraction",
        Command::Compare => "compare",
        Command::Validate => "validate",
        Command::Builtins { .. } => "builtins",
    }
}

fn to_value(x: &impl serde::Serialize) -> Value {
    serde_json::to_value(x).expect("configs serialise")
}

/// Resolves the configuration, runs the command and finalises the manifest.
fn execute(cli: &Cli) -> Result<(), Failure> {
    let name = command_name(&cli.command);
    enum Job {
        Sample(SampleConfig, bool),
        Problem(ProblemConfig, Option<f64>),
    }
    let resolved = match &cli.command {
        Command::FbmSample(a) => sample_config(cli, a).map(|c| Job::Sample(c, a.validate)),
        Command::Solve(a) | Command::Contraction(a) => problem_with(cli, a.n_paths).map(|c| Job::Problem(c, a.beta)),
        Command::Compare | Command::Validate => problem_with(cli, None).map(|c| Job::Problem(c, None)),
        Command::Builtins { name } => return list_builtins(name.as_deref()),
    };
    let config = match &resolved {
        Ok(Job::Sample(c, _)) => to_value(c),
        Ok(Job::Problem(c, beta)) => {
            let mut v = to_value(c);
            if let Some(b) = beta {
                v["beta_override"] = Value::from(*b);
            }
            v
        }
        Err(_) => Value::Null,
    };
    let mut run = Run::start(&cli.out, name, config)?;
    let outcome = resolved.and_then(|job| match (&cli.command, job) {
        (Command::FbmSample(_), Job::Sample(c, validate)) => commands::fbm_sample(&c, validate, &mut run),
        (Command::Solve(_), Job::Problem(c, beta)) => commands::solve(&c, beta, &mut run),
        (Command::Contraction(_), Job::Problem(c, beta)) => commands::contraction(&c, beta, &mut run),
        (Command::Compare, Job::Problem(c, _)) => commands::compare(&c, &mut run),
        (Command::Validate, Job::Problem(c, _)) => commands::validate(&c, &mut run),
        _ => unreachable!("job kind follows the command"),
    });
    run.finish(&outcome)?;
    outcome
}

fn list_builtins(name: Option<&str>) -> Result<(), Failure> {
    match name {
        None => {
            for n in BUILTIN_NAMES {
                println!("{n}");
            }
        }
        Some(n) => {
            let cfg = ProblemConfig::builtin(n)?;
            println!("{}", serde_json::to_string_pretty(&cfg).expect("configs serialise"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
