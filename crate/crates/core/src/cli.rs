//! Command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::analysis::{solve_reference, ReferenceSolution};
use crate::config::{RawConfig, Settings};
use crate::error::{Error, Result};
use crate::harness::{
    best_per_rule, comparison_configs, run_configs, sweep, write_aggregate_csv, write_csv, SweepTable,
};
use crate::problems::Problem;
use crate::verify::{run_verification, VerifyOptions};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SPS_SAFE_OUT";

#[derive(Parser, Debug)]
#[command(name = "sps-safe", version, about = "Safeguarded Polyak step-size experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic instance file.
    Gen(CommonArgs),
    /// Compute the reference solution of an instance.
    Oracle(CommonArgs),
    /// Run one configuration over all repeats.
    Run(CommonArgs),
    /// Sweep one parameter over a list of values.
    Sweep(CommonArgs),
    /// Compare a family of rules with shared seeds.
    Compare(CommonArgs),
    /// Run the property suite; exits nonzero on any failure.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// Double every step of the descent-inequality run.
        #[arg(long)]
        mutate: bool,
    },
}

#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    /// Configuration file (`key = value` lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (must exist). Defaults to $SPS_SAFE_OUT, then `.`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Instance seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Override any config key, e.g. `--set M=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl CommonArgs {
    /// File values, then `--set` overrides, then the dedicated flags.
    pub fn settings(&self) -> Result<Settings> {
        let mut raw = match &self.config {
            Some(path) => RawConfig::load(path)?,
            None => RawConfig::default(),
        };
        for pair in &self.overrides {
            raw.set_pair(pair)?;
        }
        if let Some(seed) = self.seed {
            raw.set("seed", &seed.to_string())?;
        }
        if let Some(r) = self.repeats {
            raw.set("repeats", &r.to_string())?;
        }
        raw.resolve()
    }

    pub fn out_dir(&self) -> Result<PathBuf> {
        let dir = self
            .out
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."));
        if !dir.is_dir() {
            return Err(Error::io(
                &dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, "output directory does not exist"),
            ));
        }
        Ok(dir)
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

/// Runs a command; `Ok(false)` means verification failed.
pub fn execute(command: &Command) -> Result<bool> {
    let common = match command {
        Command::Gen(c) | Command::Oracle(c) | Command::Run(c) | Command::Sweep(c) | Command::Compare(c) => c,
        Command::Verify { common, .. } => common,
    };
    let settings = common.settings()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(common.jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| match command {
        Command::Gen(c) => gen(&settings, &c.out_dir()?).map(|_| true),
        Command::Oracle(c) => oracle(&settings, &c.out_dir()?).map(|_| true),
        Command::Run(c) => run(&settings, &c.out_dir()?).map(|_| true),
        Command::Sweep(c) => run_sweep(&settings, &c.out_dir()?).map(|_| true),
        Command::Compare(c) => compare(&settings, &c.out_dir()?).map(|_| true),
        Command::Verify { mutate, .. } => verify(&settings, *mutate),
    })
}

fn gen(settings: &Settings, out: &Path) -> Result<()> {
    let problem = settings.experiment.instance.build()?;
    let path = out.join("instance.txt");
    problem.data().write(&path, problem.kind())?;
    println!(
        "instance n={} d={} seed={} kind={} -> {}",
        problem.n(),
        problem.d(),
        problem.data().seed(),
        problem.kind(),
        path.display()
    );
    Ok(())
}

fn start_point(settings: &Settings, problem: &Problem) -> Vec<f64> {
    settings
        .experiment
        .init
        .point(problem.d(), problem.data().seed())
}

fn reference(settings: &Settings, problem: &Problem, x0: &[f64]) -> Result<ReferenceSolution> {
    let r = match &settings.reference {
        Some(path) => ReferenceSolution::read(path)?,
        None => solve_reference(problem, settings.experiment.oracle_iterations, x0)?,
    };
    if r.x_star.len() != problem.d() || r.f_i_star.len() != problem.n() {
        return Err(Error::InvalidConfig("reference solution does not match the instance".into()));
    }
    Ok(r)
}

fn oracle(settings: &Settings, out: &Path) -> Result<()> {
    let problem = settings.experiment.instance.build()?;
    let x0 = start_point(settings, &problem);
    let r = solve_reference(&problem, settings.experiment.oracle_iterations, &x0)?;
    let path = out.join("reference.txt");
    r.write(&path)?;
    println!(
        "f* = {} sigma^2 = {} sigma_hat^2 = {} G = {}{} dist0 = {} iterations = {} -> {}",
        r.f_star,
        r.sigma_sq,
        r.sigma_hat_sq,
        r.lipschitz,
        if r.lipschitz_exact { "" } else { " (estimate)" },
        r.dist0,
        r.iterations,
        path.display()
    );
    Ok(())
}

fn emit(settings: &Settings, table: &SweepTable, out: &Path, stem: &str) -> Result<()> {
    let header = settings.render();
    let per_run = out.join(format!("{stem}.csv"));
    let summary = out.join(format!("{stem}_summary.csv"));
    write_csv(table, &per_run, &header)?;
    write_aggregate_csv(table, &summary, &header)?;
    for e in &table.entries {
        match e.final_subopt() {
            Some((m, s)) => println!("{}: final subopt {m:.6e} ± {s:.2e}", e.config_id),
            None => println!("{}: final f {:.6e}", e.config_id, e.aggregate.f_last.mean.last().unwrap()),
        }
    }
    println!("wrote {} and {}", per_run.display(), summary.display());
    Ok(())
}

fn prepare(settings: &Settings) -> Result<(Problem, Vec<f64>, ReferenceSolution)> {
    let problem = settings.experiment.instance.build()?;
    let x0 = start_point(settings, &problem);
    let r = reference(settings, &problem, &x0)?;
    Ok((problem, x0, r))
}

fn run(settings: &Settings, out: &Path) -> Result<()> {
    let (problem, x0, r) = prepare(settings)?;
    let e = &settings.experiment;
    let table = run_configs(vec![(e.label(), e.clone())], &problem, Some(&r), &x0)?;
    emit(settings, &table, out, "run")
}

fn run_sweep(settings: &Settings, out: &Path) -> Result<()> {
    let (problem, x0, r) = prepare(settings)?;
    let table = sweep(
        &settings.experiment,
        settings.sweep_param,
        &settings.sweep_values,
        &problem,
        Some(&r),
        &x0,
    )?;
    emit(settings, &table, out, "sweep")
}

fn compare(settings: &Settings, out: &Path) -> Result<()> {
    let (problem, x0, r) = prepare(settings)?;
    let configs = comparison_configs(&settings.experiment, settings.compare, &settings.grids);
    let table = run_configs(configs, &problem, Some(&r), &x0)?;
    emit(settings, &table, out, "compare")?;
    println!("best per rule:");
    for e in best_per_rule(&table) {
        if let Some((m, s)) = e.final_subopt() {
            println!("  {}: {m:.6e} ± {s:.2e}", e.config_id);
        }
    }
    Ok(())
}

fn verify(settings: &Settings, mutate: bool) -> Result<bool> {
    let e = &settings.experiment;
    let opts = VerifyOptions {
        seed: e.instance.seed,
        oracle_iterations: e.oracle_iterations,
        epochs: e.epochs,
        mutate,
        ..VerifyOptions::default()
    };
    let report = run_verification(&opts)?;
    println!("{report}");
    Ok(report.passed())
}
