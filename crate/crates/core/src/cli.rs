//! Command-line front end.
//!
//! Every subcommand accepts `--config FILE` (TOML); explicit flags override
//! the file, and documented defaults fill the rest. The effective settings
//! are written to `manifest.toml` in the output directory.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::coupling::{skorokhod_couple, DEFAULT_FINE_FACTOR};
use crate::driver::{LinearYDriver, MeanShiftDriver, SharedDriver, TerminalCondition, ZeroDriver};
use crate::error::{Error, Result};
use crate::experiments::{
    coupling_csv, decompose_error, run_convergence_study, summarize_coupling, write_decomposition,
    CaseId, DecomposeConfig, ExperimentConfig, Problem,
};
use crate::law::DiscreteLaw;
use crate::output::{write_atomic, write_string_atomic};
use crate::solver::{
    solve_fixed_point_variant, solve_meanfield, DriverTime, InitialLaw, LawKind, Scheme,
    SolutionSurface, SolveConfig,
};

pub const OUTPUT_DIR_ENV: &str = "MFBSDE_OUTPUT_DIR";
const DEFAULT_SEED: u64 = 2024;

#[derive(Debug, Parser)]
#[command(
    name = "mfbsde",
    version,
    about = "Mean-field BSDE solver on a recombining binomial tree"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve on the tree; write the surface and the law sequences.
    Solve(SolveArgs),
    /// Monte-Carlo convergence study of E_Y against the exact solution.
    Converge(ConvergeArgs),
    /// Skorokhod coupling diagnostics over a sweep of grid sizes.
    Couple(CoupleArgs),
    /// Dump the laws of Y and Z produced by a solve.
    Laws(LawsArgs),
    /// Split the root error into freezing, self-consistency and discretization terms.
    Decompose(DecomposeArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML file with default settings; flags take precedence.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory [default: ./out].
    #[arg(long, value_name = "DIR", env = OUTPUT_DIR_ENV)]
    pub out: Option<PathBuf>,
    /// Master seed [default: 2024].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads [default: machine parallelism].
    #[arg(long)]
    pub threads: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug, -vvv trace).
    #[arg(short, long, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaseArg {
    Case1,
    Case2,
    Custom,
}

impl From<CaseArg> for CaseId {
    fn from(c: CaseArg) -> Self {
        match c {
            CaseArg::Case1 => CaseId::Case1,
            CaseArg::Case2 => CaseId::Case2,
            CaseArg::Custom => CaseId::Custom,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriverArg {
    /// f = 0
    Zero,
    /// f = y
    LinearY,
    /// f = y + E[Y] + E[Z]
    MeanShift,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminalArg {
    /// g(x) = x
    Identity,
    /// g(x) = min(x^2, K)
    CappedSquare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeArg {
    Explicit,
    FixedPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriverTimeArg {
    /// t_{k+1} capped at t_{n-1}
    Next,
    /// t_k
    Current,
}

#[derive(Debug, Args)]
pub struct ProblemArgs {
    /// Benchmark problem [default: case1].
    #[arg(long, value_enum)]
    pub case: Option<CaseArg>,
    /// Replace the benchmark's generator.
    #[arg(long, value_enum)]
    pub driver: Option<DriverArg>,
    /// Replace the benchmark's terminal condition.
    #[arg(long, value_enum)]
    pub g: Option<TerminalArg>,
    /// Cap K of the capped square [default: 5].
    #[arg(long)]
    pub cap: Option<f64>,
    /// Horizon T [default: 1].
    #[arg(long = "T", value_name = "T")]
    pub horizon: Option<f64>,
    /// Number of time steps [default: 64].
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Backward step [default: explicit].
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeArg>,
    /// Time argument of the generator [default: next].
    #[arg(long, value_enum)]
    pub driver_time: Option<DriverTimeArg>,
}

#[derive(Debug, Args)]
pub struct LawsArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Only dump the laws at this step [default: all steps].
    #[arg(long)]
    pub step: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ConvergeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Benchmark problem [default: case1].
    #[arg(long, value_enum)]
    pub case: Option<CaseArg>,
    /// Cap K of the capped square [default: 5].
    #[arg(long)]
    pub cap: Option<f64>,
    /// Horizon T [default: 1].
    #[arg(long = "T", value_name = "T")]
    pub horizon: Option<f64>,
    /// Evaluation time t [default: 0.3].
    #[arg(long = "t", value_name = "t")]
    pub t_eval: Option<f64>,
    /// Comma-separated grid sizes [default: 8,16,32,64,128,256].
    #[arg(long, value_delimiter = ',')]
    pub n_list: Option<Vec<usize>>,
    /// Monte-Carlo trials per grid size [default: 20000].
    #[arg(long)]
    pub trials: Option<usize>,
    /// Fine-grid points per coarse step [default: 64].
    #[arg(long)]
    pub fine_factor: Option<usize>,
    /// Flag points with stderr/E_Y above this [default: 0.25].
    #[arg(long)]
    pub max_rel_stderr: Option<f64>,
    /// Keep flagged points in the fit.
    #[arg(long)]
    pub keep_noisy: bool,
}

#[derive(Debug, Args)]
pub struct CoupleArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Largest grid size; the sweep is n/8, n/4, n/2, n [default: 256].
    #[arg(long, conflicts_with = "n_list")]
    pub n: Option<usize>,
    /// Explicit comma-separated sweep.
    #[arg(long, value_delimiter = ',')]
    pub n_list: Option<Vec<usize>>,
    /// Coupled paths per grid size [default: 500].
    #[arg(long)]
    pub trials: Option<usize>,
    /// Horizon T [default: 1].
    #[arg(long = "T", value_name = "T")]
    pub horizon: Option<f64>,
    /// Fine-grid points per coarse step [default: 64].
    #[arg(long)]
    pub fine_factor: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Benchmark problem [default: case1].
    #[arg(long, value_enum)]
    pub case: Option<CaseArg>,
    /// Cap K of the capped square [default: 5].
    #[arg(long)]
    pub cap: Option<f64>,
    /// Horizon T [default: 1].
    #[arg(long = "T", value_name = "T")]
    pub horizon: Option<f64>,
    /// Number of time steps [default: 64].
    #[arg(long)]
    pub n: Option<usize>,
    /// Shift of the frozen Z laws [default: 0.01].
    #[arg(long, allow_hyphen_values = true)]
    pub delta: Option<f64>,
}

/// Keys accepted in a `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub case: Option<CaseArg>,
    pub driver: Option<DriverArg>,
    pub g: Option<TerminalArg>,
    pub cap: Option<f64>,
    pub horizon: Option<f64>,
    pub n: Option<usize>,
    pub scheme: Option<SchemeArg>,
    pub driver_time: Option<DriverTimeArg>,
    pub step: Option<usize>,
    pub t_eval: Option<f64>,
    pub n_list: Option<Vec<usize>>,
    pub trials: Option<usize>,
    pub fine_factor: Option<usize>,
    pub max_rel_stderr: Option<f64>,
    pub exclude_noisy: Option<bool>,
    pub delta: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Settings shared by every subcommand after resolution.
struct Session {
    file: FileConfig,
    out: PathBuf,
    seed: u64,
}

impl Session {
    fn open(common: &CommonArgs) -> Result<Self> {
        init_logging(common.verbose);
        let file = match &common.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let threads = common.threads.or(file.threads);
        if let Some(t) = threads {
            if t == 0 {
                return Err(Error::Parameter("--threads must be positive".into()));
            }
            if let Err(e) = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build_global()
            {
                log::debug!("thread pool already configured: {e}");
            }
        }
        let out = common
            .out
            .clone()
            .or_else(|| file.out.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        let seed = common.seed.or(file.seed).unwrap_or(DEFAULT_SEED);
        fs::create_dir_all(&out)?;
        Ok(Self { file, out, seed })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_manifest<S: Serialize>(&self, command: &str, settings: &S) -> Result<()> {
        #[derive(Serialize)]
        struct Manifest<'a, S> {
            command: &'a str,
            version: &'a str,
            seed: u64,
            settings: &'a S,
        }
        let text = toml::to_string(&Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            settings,
        })
        .map_err(|e| Error::Config(e.to_string()))?;
        write_string_atomic(&self.path("manifest.toml"), &text)
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .try_init();
}

#[derive(Debug, Serialize)]
struct ProblemSettings {
    case: CaseArg,
    driver: Option<DriverArg>,
    g: Option<TerminalArg>,
    cap: f64,
    horizon: f64,
    n: usize,
}

impl ProblemSettings {
    fn resolve(args: &ProblemArgs, file: &FileConfig) -> Self {
        Self {
            case: args.case.or(file.case).unwrap_or(CaseArg::Case1),
            driver: args.driver.or(file.driver),
            g: args.g.or(file.g),
            cap: args.cap.or(file.cap).unwrap_or(5.0),
            horizon: args.horizon.or(file.horizon).unwrap_or(1.0),
            n: args.n.or(file.n).unwrap_or(64),
        }
    }

    fn build(&self) -> Result<(SharedDriver, TerminalCondition)> {
        let base = Problem::new(self.case.into(), self.cap, self.horizon)?;
        let driver: SharedDriver = match self.driver {
            None => base.driver,
            Some(DriverArg::Zero) => Arc::new(ZeroDriver),
            Some(DriverArg::LinearY) => Arc::new(LinearYDriver),
            Some(DriverArg::MeanShift) => Arc::new(MeanShiftDriver),
        };
        let terminal = match self.g {
            None => base.terminal,
            Some(TerminalArg::Identity) => TerminalCondition::identity(),
            Some(TerminalArg::CappedSquare) => TerminalCondition::capped_square(self.cap)?,
        };
        Ok((driver, terminal))
    }
}

#[derive(Debug, Serialize)]
struct SolveSettings {
    #[serde(flatten)]
    problem: ProblemSettings,
    scheme: SchemeArg,
    driver_time: DriverTimeArg,
}

impl SolveSettings {
    fn config(&self) -> SolveConfig {
        let mut cfg = SolveConfig::new(self.problem.n, self.problem.horizon);
        cfg.scheme = match self.scheme {
            SchemeArg::Explicit => Scheme::ExplicitInY,
            SchemeArg::FixedPoint => Scheme::FixedPoint,
        };
        cfg.driver_time = match self.driver_time {
            DriverTimeArg::Next => DriverTime::NextClamped,
            DriverTimeArg::Current => DriverTime::Current,
        };
        cfg
    }

    fn solve(&self) -> Result<SolutionSurface> {
        let (driver, terminal) = self.problem.build()?;
        let cfg = self.config();
        let init = InitialLaw::default();
        match cfg.scheme {
            Scheme::ExplicitInY => solve_meanfield(&terminal, driver.as_ref(), &cfg, &init),
            Scheme::FixedPoint => {
                solve_fixed_point_variant(&terminal, driver.as_ref(), &cfg, &init)
            }
        }
    }
}

fn describe_law(law: &DiscreteLaw) -> String {
    if law.len() <= 6 {
        let parts: Vec<String> = law
            .atoms()
            .iter()
            .zip(law.weights())
            .map(|(a, w)| format!("{a}: {w}"))
            .collect();
        format!("{{{}}}", parts.join(", "))
    } else {
        format!(
            "{} atoms, mean {}, variance {}",
            law.len(),
            law.mean(),
            law.variance()
        )
    }
}

fn cmd_solve(args: &SolveArgs) -> Result<()> {
    let session = Session::open(&args.common)?;
    let file = &session.file;
    let settings = SolveSettings {
        problem: ProblemSettings::resolve(&args.problem, file),
        scheme: args.scheme.or(file.scheme).unwrap_or(SchemeArg::Explicit),
        driver_time: args
            .driver_time
            .or(file.driver_time)
            .unwrap_or(DriverTimeArg::Next),
    };
    let surface = settings.solve()?;
    write_atomic(&session.path("surface.csv"), |w| {
        surface.atom(0).write_csv(w)
    })?;
    write_atomic(&session.path("law_y.csv"), |w| {
        surface.write_laws_csv(w, LawKind::Y)
    })?;
    write_atomic(&session.path("law_z.csv"), |w| {
        surface.write_laws_csv(w, LawKind::Z)
    })?;
    session.write_manifest("solve", &settings)?;
    println!("Y0 = {}", surface.root_value(0));
    if let Some(z0) = surface.law_z().get(1) {
        println!("Z0 law = {}", describe_law(z0));
    }
    println!("output: {}", session.out.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct LawsSettings {
    #[serde(flatten)]
    problem: ProblemSettings,
    step: Option<usize>,
}

fn cmd_laws(args: &LawsArgs) -> Result<()> {
    let session = Session::open(&args.common)?;
    let settings = LawsSettings {
        problem: ProblemSettings::resolve(&args.problem, &session.file),
        step: args.step.or(session.file.step),
    };
    let solve = SolveSettings {
        problem: ProblemSettings::resolve(&args.problem, &session.file),
        scheme: SchemeArg::Explicit,
        driver_time: DriverTimeArg::Next,
    };
    let surface = solve.solve()?;
    match settings.step {
        None => {
            write_atomic(&session.path("law_y.csv"), |w| {
                surface.write_laws_csv(w, LawKind::Y)
            })?;
            write_atomic(&session.path("law_z.csv"), |w| {
                surface.write_laws_csv(w, LawKind::Z)
            })?;
        }
        Some(k) => {
            let n = settings.problem.n;
            if k > n {
                return Err(Error::Index {
                    index: k,
                    lo: 0,
                    hi: n,
                });
            }
            let ly = surface.law_y().get(k).expect("law of Y covers every step");
            write_atomic(&session.path(&format!("law_y_step{k}.csv")), |w| {
                ly.write_csv(w)
            })?;
            println!("law Y at step {k} = {}", describe_law(ly));
            match surface.law_z().get(k) {
                Some(lz) => {
                    write_atomic(&session.path(&format!("law_z_step{k}.csv")), |w| {
                        lz.write_csv(w)
                    })?;
                    println!("law Z at step {k} = {}", describe_law(lz));
                }
                None => println!("law Z is undefined at step {k}"),
            }
        }
    }
    session.write_manifest("laws", &settings)?;
    Ok(())
}

fn cmd_converge(args: &ConvergeArgs) -> Result<()> {
    let session = Session::open(&args.common)?;
    let file = &session.file;
    let defaults = ExperimentConfig::default();
    let cfg = ExperimentConfig {
        case: args
            .case
            .or(file.case)
            .map(CaseId::from)
            .unwrap_or(defaults.case),
        cap: args.cap.or(file.cap).unwrap_or(defaults.cap),
        horizon: args.horizon.or(file.horizon).unwrap_or(defaults.horizon),
        t_eval: args.t_eval.or(file.t_eval).unwrap_or(defaults.t_eval),
        n_list: args
            .n_list
            .clone()
            .or_else(|| file.n_list.clone())
            .unwrap_or(defaults.n_list),
        trials: args.trials.or(file.trials).unwrap_or(defaults.trials),
        seed: session.seed,
        fine_factor: args
            .fine_factor
            .or(file.fine_factor)
            .unwrap_or(defaults.fine_factor),
        max_rel_stderr: args
            .max_rel_stderr
            .or(file.max_rel_stderr)
            .unwrap_or(defaults.max_rel_stderr),
        exclude_noisy: if args.keep_noisy {
            false
        } else {
            file.exclude_noisy.unwrap_or(defaults.exclude_noisy)
        },
    };
    let result = run_convergence_study(&cfg)?;
    result.write_artifacts(&session.out)?;
    session.write_manifest("converge", &cfg)?;
    println!("{:>6} {:>14} {:>12} {:>6}", "n", "E_Y", "stderr", "fit");
    for p in &result.points {
        let e = &p.estimate;
        println!(
            "{:>6} {:>14.6e} {:>12.3e} {:>6}",
            e.n,
            e.e_y,
            e.stderr,
            if p.fitted { "yes" } else { "no" }
        );
    }
    println!(
        "slope = {:.4} (r^2 = {:.4})",
        result.fit.slope, result.fit.r_squared
    );
    log::info!("runtime {:.2}s", result.runtime_secs);
    Ok(())
}

#[derive(Debug, Serialize)]
struct CoupleSettings {
    n_list: Vec<usize>,
    trials: usize,
    horizon: f64,
    fine_factor: usize,
}

fn cmd_couple(args: &CoupleArgs) -> Result<()> {
    let session = Session::open(&args.common)?;
    let file = &session.file;
    let n_list = match (&args.n_list, args.n) {
        (Some(list), _) => list.clone(),
        (None, Some(n)) => sweep_below(n),
        (None, None) => file
            .n_list
            .clone()
            .unwrap_or_else(|| sweep_below(file.n.unwrap_or(256))),
    };
    if n_list.is_empty() || n_list.contains(&0) {
        return Err(Error::Parameter("grid sizes must be positive".into()));
    }
    let settings = CoupleSettings {
        n_list,
        trials: args.trials.or(file.trials).unwrap_or(500),
        horizon: args.horizon.or(file.horizon).unwrap_or(1.0),
        fine_factor: args
            .fine_factor
            .or(file.fine_factor)
            .unwrap_or(DEFAULT_FINE_FACTOR),
    };
    let rows = settings
        .n_list
        .iter()
        .map(|&n| {
            summarize_coupling(
                n,
                settings.horizon,
                settings.fine_factor,
                settings.trials,
                session.seed,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    write_string_atomic(
        &session.path("couple.csv"),
        &coupling_csv(&rows, session.seed),
    )?;
    let largest = *settings.n_list.iter().max().expect("non-empty");
    let path = skorokhod_couple(
        largest,
        settings.horizon,
        settings.fine_factor,
        session.seed,
    )?;
    write_atomic(&session.path("path.csv"), |w| path.write_csv(w))?;
    session.write_manifest("couple", &settings)?;
    println!(
        "{:>6} {:>12} {:>12} {:>12} {:>12} {:>12}",
        "n", "sup_error", "lower_bound", "sq_err_T/2", "sqrt(ln/n)", "ln/sqrt(n)"
    );
    for r in &rows {
        println!(
            "{:>6} {:>12.5} {:>12.5} {:>12.5} {:>12.5} {:>12.5}",
            r.n,
            r.mean_sup_error,
            r.mean_lower_bound,
            r.mean_sq_error_mid,
            crate::coupling::lower_bound_reference(r.n),
            crate::coupling::strong_rate_reference(r.n)
        );
    }
    Ok(())
}

fn sweep_below(n: usize) -> Vec<usize> {
    let mut v: Vec<usize> = [n / 8, n / 4, n / 2, n]
        .into_iter()
        .filter(|&k| k > 0)
        .collect();
    v.dedup();
    v
}

fn cmd_decompose(args: &DecomposeArgs) -> Result<()> {
    let session = Session::open(&args.common)?;
    let file = &session.file;
    let defaults = DecomposeConfig::default();
    let cfg = DecomposeConfig {
        case: args
            .case
            .or(file.case)
            .map(CaseId::from)
            .unwrap_or(defaults.case),
        cap: args.cap.or(file.cap).unwrap_or(defaults.cap),
        horizon: args.horizon.or(file.horizon).unwrap_or(defaults.horizon),
        n: args.n.or(file.n).unwrap_or(defaults.n),
        delta: args.delta.or(file.delta).unwrap_or(defaults.delta),
    };
    let d = decompose_error(&cfg)?;
    write_decomposition(&d, &session.path("decompose.csv"))?;
    session.write_manifest("decompose", &cfg)?;
    println!("freezing_gap = {}", d.freezing_gap);
    println!("self_consistency = {}", d.self_consistency);
    println!("perturbation = {}", d.perturbation);
    println!("discretization = {}", d.discretization);
    println!("total = {}", d.total);
    Ok(())
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => 4,
        e if e.is_numeric() => 3,
        _ => 2,
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Converge(a) => cmd_converge(a),
        Command::Couple(a) => cmd_couple(a),
        Command::Laws(a) => cmd_laws(a),
        Command::Decompose(a) => cmd_decompose(a),
    }
}

/// Parses `args` and runs the subcommand; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn main() -> i32 {
    run(std::env::args_os())
}
