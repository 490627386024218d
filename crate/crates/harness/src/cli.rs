//! The `rsbm` command line.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rsbm_core::dual::fkpp_solve;
use rsbm_core::environment::{sample_environment, Environment, EnvironmentSpec, PotentialLaw};
use rsbm_core::io::{read_environment_binary, write_environment_binary, write_environment_csv, write_field_path};
use rsbm_core::pam::{Semigroup, SemigroupBackend};
use rsbm_core::spectral::{assemble, top_eigenpair};
use rsbm_core::{LatticeBox, TestFunction};

use crate::config::{ExperimentConfig, KEY_REFERENCE};
use crate::error::{HarnessError, HarnessResult};
use crate::experiments::run_experiment;
use crate::report::{merge_reports, write_json};

#[derive(Debug, Parser)]
#[command(name = "rsbm", version, about = "Branching random walks in random environment: experiments and solvers")]
#[command(after_long_help = KEY_REFERENCE)]
pub struct Cli {
    /// Overrides mc.base_seed (run, validate) or the environment seed (env sample).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides mc.max_threads (run, validate); RSBM_THREADS is the fallback.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Overrides output.dir (run, validate) or names the output file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Runs the experiment described by a config file.
    #[command(after_long_help = KEY_REFERENCE)]
    Run { config: PathBuf },
    /// Parses and validates a config file without running it.
    #[command(after_long_help = KEY_REFERENCE)]
    Validate { config: PathBuf },
    /// Environment files.
    #[command(subcommand)]
    Env(EnvCommand),
    /// Lattice parabolic Anderson model.
    #[command(subcommand)]
    Pam(PamCommand),
    /// FKPP dual.
    #[command(subcommand)]
    Dual(DualCommand),
    /// Dirichlet Anderson Hamiltonian.
    #[command(subcommand)]
    Spectral(SpectralCommand),
    /// Run summaries.
    #[command(subcommand)]
    Report(ReportCommand),
}

#[derive(Debug, Subcommand)]
pub enum EnvCommand {
    /// Samples a potential; writes CSV if --out ends in .csv, binary otherwise.
    Sample(SampleArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DistArg {
    Rademacher,
    CenteredUniform,
    TwoPoint,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long, value_enum, default_value = "rademacher")]
    pub dist: DistArg,
    /// Upper-atom probability for two_point.
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(short = 'd', long = "dim", default_value_t = 1)]
    pub dim: usize,
    #[arg(short = 'n', long)]
    pub n: usize,
    /// Box side M.
    #[arg(short = 'M', long = "side")]
    pub side: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BackendArg {
    Dense,
    CrankNicolson,
}

#[derive(Debug, Args)]
pub struct FieldArgs {
    /// Binary environment written by `env sample`.
    #[arg(long)]
    pub env: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 0.5)]
    pub width: f64,
}

#[derive(Debug, Subcommand)]
pub enum PamCommand {
    /// Applies the semigroup to a Gaussian bump at the given times.
    Solve {
        #[command(flatten)]
        field: FieldArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        times: Vec<f64>,
        #[arg(long, value_enum, default_value = "dense")]
        backend: BackendArg,
        #[arg(long, default_value_t = 0.25)]
        dt_factor: f64,
    },
}

#[derive(Debug, Subcommand)]
pub enum DualCommand {
    /// Solves the FKPP dual from a Gaussian bump up to time t.
    Solve {
        #[command(flatten)]
        field: FieldArgs,
        #[arg(long)]
        t: f64,
        /// Defaults to 2ν of the environment.
        #[arg(long)]
        kappa: Option<f64>,
    },
}

#[derive(Debug, Subcommand)]
pub enum SpectralCommand {
    /// Principal Dirichlet eigenpair on (-L/2, L/2)^d.
    Eig {
        #[arg(long)]
        env: PathBuf,
        /// Box side L.
        #[arg(short = 'L', long)]
        side: usize,
    },
}

#[derive(Debug, Subcommand)]
pub enum ReportCommand {
    /// Merges summary.json files (or run directories) into one report.
    Merge {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("rsbm: {}", e.to_string().replace('\n', " "));
            e.exit_code()
        }
    }
}

fn load_config(cli: &Cli, path: &Path) -> HarnessResult<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.mc.base_seed = seed;
    }
    if let Some(threads) = cli.threads {
        config.mc.max_threads = Some(threads);
    }
    if let Some(out) = &cli.out {
        config.output.dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn execute(cli: &Cli) -> HarnessResult<i32> {
    match &cli.command {
        Command::Validate { config } => {
            let config = load_config(cli, config)?;
            println!("{}: ok ({}, hash {})", config.experiment.name(), config.output.dir.display(), config.hash());
            Ok(0)
        }
        Command::Run { config } => {
            let config = load_config(cli, config)?;
            let outcome = run_experiment(&config)?;
            for c in &outcome.summary.checks {
                println!(
                    "{:<40} {:>14.6} tol {:<10} {}",
                    c.name,
                    c.statistic,
                    c.tolerance,
                    if c.pass { "PASS" } else { "FAIL" }
                );
            }
            println!("wrote {}", outcome.dir.display());
            Ok(if outcome.summary.passed() { 0 } else { 1 })
        }
        Command::Env(EnvCommand::Sample(args)) => {
            let law = match (args.dist, args.p) {
                (DistArg::Rademacher, _) => PotentialLaw::Rademacher,
                (DistArg::CenteredUniform, _) => PotentialLaw::CenteredUniform,
                (DistArg::TwoPoint, Some(p)) => PotentialLaw::TwoPoint { p },
                (DistArg::TwoPoint, None) => return Err(HarnessError::Config("--p is required for two-point".into())),
            };
            let spec = EnvironmentSpec {
                law,
                lattice: LatticeBox::periodic(args.dim, args.n, args.side).map_err(config_error)?,
                seed: cli.seed.unwrap_or(0),
            };
            let env = sample_environment(&spec).map_err(config_error)?;
            let out = output_file(cli)?;
            let w = BufWriter::new(File::create(&out)?);
            if out.extension().is_some_and(|e| e == "csv") {
                write_environment_csv(&env, w)?;
            } else {
                write_environment_binary(&env, w)?;
            }
            println!("wrote {} ({} sites, nu = {})", out.display(), env.lattice().num_sites(), env.nu());
            Ok(0)
        }
        Command::Pam(PamCommand::Solve {
            field,
            times,
            backend,
            dt_factor,
        }) => {
            let env = read_env(&field.env)?;
            let backend = match backend {
                BackendArg::Dense => SemigroupBackend::dense(),
                BackendArg::CrankNicolson if *dt_factor > 0.0 => SemigroupBackend::crank_nicolson(*dt_factor),
                BackendArg::CrankNicolson => return Err(HarnessError::Config("--dt-factor must be positive".into())),
            };
            let semigroup = Semigroup::new(&env, backend)?;
            let phi = bump(field).sample(*env.lattice());
            let solutions = times.iter().map(|&t| semigroup.apply(&phi, t)).collect::<Result<Vec<_>, _>>()?;
            for (t, s) in times.iter().zip(&solutions) {
                println!("t = {t}: value at origin {}", s.at_origin());
            }
            write_field_path(times, &solutions, BufWriter::new(File::create(output_file(cli)?)?))?;
            Ok(0)
        }
        Command::Dual(DualCommand::Solve { field, t, kappa }) => {
            let env = read_env(&field.env)?;
            let kappa = kappa.unwrap_or(2.0 * env.nu());
            let spec = rsbm_core::dual::DualSpec::new(kappa).map_err(config_error)?;
            let semigroup = Semigroup::new(&env, SemigroupBackend::dense())?;
            let phi = bump(field).sample(*env.lattice());
            let solution = fkpp_solve(&semigroup, &phi, *t, &spec)?;
            println!(
                "U(t, 0) = {} after {} Picard iterations",
                solution.value.at_origin(),
                solution.deltas.len()
            );
            write_field_path(&[*t], &[solution.value], BufWriter::new(File::create(output_file(cli)?)?))?;
            Ok(0)
        }
        Command::Spectral(SpectralCommand::Eig { env, side }) => {
            let env = read_env(env)?;
            let hamiltonian = assemble(&env, *side).map_err(config_error)?;
            let pair = top_eigenpair(&hamiltonian)?;
            println!("lambda1 = {} (residual {:e})", pair.lambda1, pair.residual);
            write_field_path(&[0.0], &[pair.e1], BufWriter::new(File::create(output_file(cli)?)?))?;
            Ok(0)
        }
        Command::Report(ReportCommand::Merge { paths }) => {
            let merged = merge_reports(paths)?;
            match &cli.out {
                Some(out) => write_json(out, &merged)?,
                None => println!("{}", serde_json::to_string_pretty(&merged)?),
            }
            Ok(if merged.all_pass { 0 } else { 1 })
        }
    }
}

fn config_error(e: rsbm_core::Error) -> HarnessError {
    HarnessError::Config(e.to_string())
}

fn output_file(cli: &Cli) -> HarnessResult<PathBuf> {
    cli.out
        .clone()
        .ok_or_else(|| HarnessError::Config("--out <file> is required".into()))
}

fn read_env(path: &Path) -> HarnessResult<Environment> {
    let file = File::open(path).map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
    read_environment_binary(BufReader::new(file))
        .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

fn bump(field: &FieldArgs) -> TestFunction {
    TestFunction::gaussian(field.amplitude, field.width)
}
