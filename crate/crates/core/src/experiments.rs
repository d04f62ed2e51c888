//! Monte-Carlo convergence studies against closed-form solutions.
//!
//! For each grid size `n` the mean-field tree is solved once. Each trial
//! draws a Skorokhod-coupled pair `(B, B^n)`, reads `Y^n` at the node reached
//! by the walk at `⌊t / h⌋` and compares it with the exact `Y_t` at the
//! Brownian value `B_t`:
//!
//! ```text
//! E_Y = (1/M) Σ_m |Y^{n,m}_t - Y^m_t|^2
//! ```
//!
//! The slope of `log E_Y` against `log n` is the empirical rate.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{case1_exact, case2_exact, ExactSolution};
use crate::coupling::{
    couple_with, lower_bound_reference, sample_at, seed_for, strong_rate_reference, trial_rng,
    DEFAULT_FINE_FACTOR,
};
use crate::driver::{
    builtin_case1, builtin_case2, FrozenDriver, LawSequence, SharedDriver, TerminalCondition,
    ZeroDriver,
};
use crate::error::{Error, Result};
use crate::lattice::{Lattice, LatticeParams};
use crate::output::{loglog_svg, write_atomic, write_string_atomic};
use crate::solver::{solve_meanfield, solve_subtree, InitialLaw, SolutionSurface, SolveConfig};

/// Benchmark problem selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseId {
    /// `g(x) = x`, `f = y + E Y + E Z`.
    Case1,
    /// `g(x) = x^2 ∧ K`, `f = y + E Y + E Z`.
    Case2,
    /// `g(x) = x`, `f ≡ 0`: `Y = B`, so `E_Y` is the coupling's own L² error.
    Custom,
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CaseId::Case1 => "case1",
            CaseId::Case2 => "case2",
            CaseId::Custom => "custom",
        })
    }
}

impl FromStr for CaseId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "case1" => Ok(CaseId::Case1),
            "case2" => Ok(CaseId::Case2),
            "custom" => Ok(CaseId::Custom),
            other => Err(Error::Parameter(format!(
                "unknown case '{other}' (expected case1, case2 or custom)"
            ))),
        }
    }
}

/// Exact solution used as the reference of a study.
#[derive(Debug, Clone, Copy)]
pub enum Reference {
    Analytic(ExactSolution),
    /// `Y_t = B_t`, `Z_t = 1`.
    Brownian,
}

impl Reference {
    pub fn y(&self, t: f64, b: f64) -> f64 {
        match self {
            Reference::Analytic(e) => e.y(t, b),
            Reference::Brownian => b,
        }
    }

    pub fn z(&self, t: f64, b: f64) -> Option<f64> {
        match self {
            Reference::Analytic(e) => e.z(t, b),
            Reference::Brownian => Some(1.0),
        }
    }
}

/// Generator, terminal condition and exact solution of a benchmark.
pub struct Problem {
    pub driver: SharedDriver,
    pub terminal: TerminalCondition,
    pub reference: Reference,
}

impl Problem {
    pub fn new(case: CaseId, cap: f64, horizon: f64) -> Result<Self> {
        Ok(match case {
            CaseId::Case1 => {
                let (driver, terminal) = builtin_case1();
                Self {
                    driver,
                    terminal,
                    reference: Reference::Analytic(case1_exact(horizon)?),
                }
            }
            CaseId::Case2 => {
                let (driver, terminal) = builtin_case2(cap)?;
                Self {
                    driver,
                    terminal,
                    reference: Reference::Analytic(case2_exact(horizon, cap)?),
                }
            }
            CaseId::Custom => Self {
                driver: Arc::new(ZeroDriver),
                terminal: TerminalCondition::identity(),
                reference: Reference::Brownian,
            },
        })
    }
}

fn default_n_list() -> Vec<usize> {
    vec![8, 16, 32, 64, 128, 256]
}

/// Settings of a convergence study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub case: CaseId,
    /// Cap `K` of the capped-square terminal condition.
    pub cap: f64,
    pub horizon: f64,
    pub t_eval: f64,
    pub n_list: Vec<usize>,
    /// Monte-Carlo trials `M` per grid size.
    pub trials: usize,
    pub seed: u64,
    pub fine_factor: usize,
    /// Points with `stderr / E_Y` above this are flagged.
    pub max_rel_stderr: f64,
    /// Drop flagged points from the fit.
    pub exclude_noisy: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            case: CaseId::Case1,
            cap: 5.0,
            horizon: 1.0,
            t_eval: 0.3,
            n_list: default_n_list(),
            trials: 20_000,
            seed: 2024,
            fine_factor: DEFAULT_FINE_FACTOR,
            max_rel_stderr: 0.25,
            exclude_noisy: true,
        }
    }
}

impl ExperimentConfig {
    pub fn for_case(case: CaseId) -> Self {
        Self {
            case,
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) {
            return Err(Error::Config(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if !(self.t_eval >= 0.0 && self.t_eval < self.horizon) {
            return Err(Error::Config(format!(
                "t_eval must lie in [0, T), got {} with T = {}",
                self.t_eval, self.horizon
            )));
        }
        if self.n_list.is_empty() || self.n_list[0] == 0 {
            return Err(Error::Config(
                "n_list must be non-empty with positive entries".into(),
            ));
        }
        if self.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("n_list must be strictly increasing".into()));
        }
        if self.trials < 100 {
            return Err(Error::Config(format!(
                "need at least 100 trials, got {}",
                self.trials
            )));
        }
        if self.fine_factor < 8 {
            return Err(Error::Config("fine_factor must be >= 8".into()));
        }
        if self.case == CaseId::Case2 && !(self.cap > 0.0) {
            return Err(Error::Config(format!(
                "cap must be positive, got {}",
                self.cap
            )));
        }
        Ok(())
    }
}

/// Summation over a balanced binary tree; fixed order for any schedule.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        len if len <= 8 => values.iter().sum(),
        len => {
            let (a, b) = values.split_at(len / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// `E_Y` at one grid size.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorEstimate {
    pub n: usize,
    pub e_y: f64,
    pub stderr: f64,
    pub trials: usize,
    /// Grid step the evaluation time was mapped to.
    pub step: usize,
}

impl ErrorEstimate {
    pub fn relative_stderr(&self) -> f64 {
        self.stderr / self.e_y
    }
}

/// Monte-Carlo estimate of `E|Y_t - Y^n_t|^2` over Skorokhod-coupled trials.
pub fn estimate_error(cfg: &ExperimentConfig, n: usize) -> Result<ErrorEstimate> {
    cfg.validate()?;
    let problem = Problem::new(cfg.case, cfg.cap, cfg.horizon)?;
    let solve_cfg = SolveConfig::new(n, cfg.horizon);
    let surface = solve_meanfield(
        &problem.terminal,
        problem.driver.as_ref(),
        &solve_cfg,
        &InitialLaw::default(),
    )?;
    estimate_error_on(cfg, &surface, &problem.reference)
}

/// As [`estimate_error`] with a precomputed surface rooted at `(0, 0)`.
pub fn estimate_error_on(
    cfg: &ExperimentConfig,
    surface: &SolutionSurface,
    reference: &Reference,
) -> Result<ErrorEstimate> {
    let solve_cfg = surface.config();
    let n = solve_cfg.n;
    let step = solve_cfg.step_of_time(cfg.t_eval);
    let snapped = solve_cfg.h() * step as f64;
    if (snapped - cfg.t_eval).abs() > 1e-12 * cfg.horizon {
        log::warn!(
            "n={n}: t={} is off the grid, walk read at t_{step} = {snapped}",
            cfg.t_eval
        );
    }
    let atom = surface.atom(0);
    let seed = seed_for(cfg.seed, n);
    let squared: Vec<f64> = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|trial| -> Result<f64> {
            let mut rng = trial_rng(seed, trial);
            let s = sample_at(n, cfg.horizon, cfg.fine_factor, cfg.t_eval, step, &mut rng)?;
            let approx = atom
                .y_at_displacement(step, s.displacement)
                .ok_or_else(|| Error::Input(format!("walk left the tree at step {step}")))?;
            let exact = reference.y(cfg.t_eval, s.brownian);
            Ok((approx - exact).powi(2))
        })
        .collect::<Result<_>>()?;
    let m = squared.len() as f64;
    let mean = pairwise_sum(&squared) / m;
    let devs: Vec<f64> = squared.iter().map(|v| (v - mean).powi(2)).collect();
    let var = pairwise_sum(&devs) / (m - 1.0);
    Ok(ErrorEstimate {
        n,
        e_y: mean,
        stderr: (var / m).sqrt(),
        trials: squared.len(),
        step,
    })
}

/// Ordinary least squares of `log e` on `log n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl LogLogFit {
    pub fn predict(&self, n: f64) -> f64 {
        (self.intercept + self.slope * n.ln()).exp()
    }
}

pub fn fit_loglog(ns: &[f64], errors: &[f64]) -> Result<LogLogFit> {
    if ns.len() != errors.len() {
        return Err(Error::Input("ns and errors differ in length".into()));
    }
    if ns.len() < 3 {
        return Err(Error::Input(format!(
            "need at least 3 points, got {}",
            ns.len()
        )));
    }
    if let Some(e) = errors.iter().find(|e| !(**e > 0.0)) {
        return Err(Error::Input(format!("errors must be positive, got {e}")));
    }
    if let Some(n) = ns.iter().find(|n| !(**n > 0.0)) {
        return Err(Error::Input(format!(
            "grid sizes must be positive, got {n}"
        )));
    }
    let xs: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Input("grid sizes must not all coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Ok(LogLogFit {
        slope,
        intercept,
        r_squared,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergencePoint {
    pub estimate: ErrorEstimate,
    /// `stderr / E_Y` exceeded the configured limit.
    pub noisy: bool,
    /// Used in the regression.
    pub fitted: bool,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub points: Vec<ConvergencePoint>,
    pub fit: LogLogFit,
    /// `log E_Y - fitted log E_Y` for the fitted points.
    pub residuals: Vec<f64>,
    pub runtime_secs: f64,
}

impl ExperimentResult {
    /// The canonical artifact: header `n,E_Y,stderr,M,seed`.
    pub fn csv(&self) -> String {
        let mut s = String::from("n,E_Y,stderr,M,seed\n");
        for p in &self.points {
            let e = &p.estimate;
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                e.n, e.e_y, e.stderr, e.trials, self.config.seed
            ));
        }
        s
    }

    pub fn svg(&self) -> String {
        let pts: Vec<(f64, f64)> = self
            .points
            .iter()
            .map(|p| (p.estimate.n as f64, p.estimate.e_y))
            .collect();
        loglog_svg(
            &format!("{}: evolution of log(E_Y) w.r.t. log(n)", self.config.case),
            &pts,
            self.fit.slope,
            self.fit.intercept,
        )
    }

    /// Writes `convergence.csv` and `convergence.svg` into `dir`.
    pub fn write_artifacts(&self, dir: &Path) -> Result<()> {
        write_string_atomic(&dir.join("convergence.csv"), &self.csv())?;
        write_string_atomic(&dir.join("convergence.svg"), &self.svg())
    }
}

/// Runs [`estimate_error`] over the grid sizes and fits the log-log slope.
pub fn run_convergence_study(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let start = Instant::now();
    let problem = Problem::new(cfg.case, cfg.cap, cfg.horizon)?;
    let mut points = Vec::with_capacity(cfg.n_list.len());
    for &n in &cfg.n_list {
        let surface = solve_meanfield(
            &problem.terminal,
            problem.driver.as_ref(),
            &SolveConfig::new(n, cfg.horizon),
            &InitialLaw::default(),
        )?;
        let estimate = estimate_error_on(cfg, &surface, &problem.reference)?;
        let noisy = !(estimate.relative_stderr() <= cfg.max_rel_stderr);
        if noisy {
            log::warn!(
                "n={n}: stderr/E_Y = {:.3} exceeds {}",
                estimate.relative_stderr(),
                cfg.max_rel_stderr
            );
        }
        log::info!("n={n}: E_Y={} stderr={}", estimate.e_y, estimate.stderr);
        points.push(ConvergencePoint {
            estimate,
            noisy,
            fitted: !(noisy && cfg.exclude_noisy),
        });
    }
    let (ns, es): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter(|p| p.fitted)
        .map(|p| (p.estimate.n as f64, p.estimate.e_y))
        .unzip();
    let fit = fit_loglog(&ns, &es)?;
    let residuals = ns
        .iter()
        .zip(&es)
        .map(|(n, e)| e.ln() - (fit.intercept + fit.slope * n.ln()))
        .collect();
    Ok(ExperimentResult {
        config: cfg.clone(),
        points,
        fit,
        residuals,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

/// Path averages of the coupling diagnostics at one grid size.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingSummary {
    pub n: usize,
    pub trials: usize,
    pub mean_sup_error: f64,
    pub mean_lower_bound: f64,
    /// `E|B_t - B^n_t|^2` at the step nearest `t = T / 2`.
    pub mean_sq_error_mid: f64,
    /// Smallest `sup_error - lower_bound_statistic` over the paths.
    pub min_slack: f64,
    /// Mesh `h / m` of the fine grid.
    pub fine_dt: f64,
}

/// Simulates `trials` coupled paths with per-trial streams under `seed_for(seed, n)`.
pub fn summarize_coupling(
    n: usize,
    horizon: f64,
    fine_factor: usize,
    trials: usize,
    seed: u64,
) -> Result<CouplingSummary> {
    if trials == 0 {
        return Err(Error::Parameter("need at least one path".into()));
    }
    let stream_seed = seed_for(seed, n);
    let rows: Vec<(f64, f64, f64)> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| -> Result<(f64, f64, f64)> {
            let mut rng = trial_rng(stream_seed, trial);
            let path = couple_with(n, horizon, fine_factor, stream_seed, &mut rng)?;
            Ok((
                path.sup_error(),
                path.lower_bound_statistic(),
                path.error_at_step(n / 2).powi(2),
            ))
        })
        .collect::<Result<_>>()?;
    let m = trials as f64;
    let column =
        |f: fn(&(f64, f64, f64)) -> f64| pairwise_sum(&rows.iter().map(f).collect::<Vec<_>>()) / m;
    Ok(CouplingSummary {
        n,
        trials,
        mean_sup_error: column(|r| r.0),
        mean_lower_bound: column(|r| r.1),
        mean_sq_error_mid: column(|r| r.2),
        min_slack: rows.iter().map(|r| r.0 - r.1).fold(f64::INFINITY, f64::min),
        fine_dt: horizon / (n * fine_factor) as f64,
    })
}

/// CSV with the two reference curves alongside the path averages.
pub fn coupling_csv(rows: &[CouplingSummary], seed: u64) -> String {
    let mut s = String::from(
        "n,trials,mean_sup_error,mean_lower_bound,mean_sq_error_mid,lower_bound_ref,strong_rate_ref,seed\n",
    );
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.n,
            r.trials,
            r.mean_sup_error,
            r.mean_lower_bound,
            r.mean_sq_error_mid,
            lower_bound_reference(r.n),
            strong_rate_reference(r.n),
            seed
        ));
    }
    s
}

/// Settings of an error decomposition at one grid size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecomposeConfig {
    pub case: CaseId,
    pub cap: f64,
    pub horizon: f64,
    pub n: usize,
    /// Shift applied to every frozen law of `Z` (a W_p perturbation of size `|delta|`).
    pub delta: f64,
}

impl Default for DecomposeConfig {
    fn default() -> Self {
        Self {
            case: CaseId::Case1,
            cap: 5.0,
            horizon: 1.0,
            n: 64,
            delta: 0.01,
        }
    }
}

/// Root-value split of the tree error at `(t, x) = (0, 0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decomposition {
    /// `|Y^n - Y^n_{f_n}|` with `f_n` frozen at the exact laws.
    pub freezing_gap: f64,
    /// `|Y^n - Y^n_{f_n}|` with `f_n` frozen at the tree's own laws.
    pub self_consistency: f64,
    /// Root response to shifting every frozen `Z` law by `delta`.
    pub perturbation: f64,
    /// `|Y^n_{f_n} - Y|` with exact laws frozen.
    pub discretization: f64,
    /// `|Y^n - Y|`.
    pub total: f64,
    pub mean_field_root: f64,
    pub exact_root: f64,
}

impl Decomposition {
    /// `total <= freezing_gap + self_consistency + discretization`.
    pub fn triangle_holds(&self, tol: f64) -> bool {
        self.total <= self.freezing_gap + self.self_consistency + self.discretization + tol
    }

    pub fn csv(&self) -> String {
        format!(
            "term,value\nfreezing_gap,{}\nself_consistency,{}\nperturbation,{}\ndiscretization,{}\ntotal,{}\n",
            self.freezing_gap, self.self_consistency, self.perturbation, self.discretization, self.total
        )
    }
}

/// Exact laws `[Y_{t_k}]`, `[Z_{t_k}]` sampled on the tree marginals.
pub fn exact_laws_on_tree(
    reference: &Reference,
    n: usize,
    horizon: f64,
) -> Result<(LawSequence, LawSequence)> {
    let lat = Lattice::build(LatticeParams::new(n, horizon))?;
    let h = horizon / n as f64;
    let mut ly = Vec::with_capacity(n + 1);
    let mut lz = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let t = k as f64 * h;
        let col = lat.column_law(k)?;
        ly.push(col.map(|b| reference.y(t, b))?);
        let z = col.map(|b| reference.z(t, b).unwrap_or(0.0))?;
        lz.push(z);
    }
    Ok((LawSequence::new(0, ly), LawSequence::new(0, lz)))
}

pub fn decompose_error(cfg: &DecomposeConfig) -> Result<Decomposition> {
    let problem = Problem::new(cfg.case, cfg.cap, cfg.horizon)?;
    let solve_cfg = SolveConfig::new(cfg.n, cfg.horizon);
    let g = &problem.terminal;
    let mf = solve_meanfield(
        g,
        problem.driver.as_ref(),
        &solve_cfg,
        &InitialLaw::default(),
    )?;
    let mf_root = mf.root_value(0);

    let (ey, ez) = exact_laws_on_tree(&problem.reference, cfg.n, cfg.horizon)?;
    let frozen_exact = FrozenDriver::freeze(problem.driver.clone(), ey, ez, cfg.n, cfg.horizon)?;
    let exact_tree = solve_subtree(g, &frozen_exact, &solve_cfg, 0, 0.0)?.root_value(0);

    let own = mf.freeze_own_laws(problem.driver.clone())?;
    let own_root = solve_subtree(g, &own, &solve_cfg, 0, 0.0)?.root_value(0);

    let perturbed = FrozenDriver::new(
        problem.driver.clone(),
        mf.law_y().clone(),
        mf.law_z().map(|l| l.shifted(cfg.delta)),
        cfg.n,
        cfg.horizon,
        crate::driver::ZLawClamp::Unclamped,
    )?;
    let perturbed_root = solve_subtree(g, &perturbed, &solve_cfg, 0, 0.0)?.root_value(0);

    let exact_root = problem.reference.y(0.0, 0.0);
    Ok(Decomposition {
        freezing_gap: (mf_root - exact_tree).abs(),
        self_consistency: (mf_root - own_root).abs(),
        perturbation: (perturbed_root - own_root).abs(),
        discretization: (exact_tree - exact_root).abs(),
        total: (mf_root - exact_root).abs(),
        mean_field_root: mf_root,
        exact_root,
    })
}

/// Writes the decomposition table.
pub fn write_decomposition(d: &Decomposition, path: &Path) -> Result<()> {
    write_atomic(path, |w| {
        w.write_all(d.csv().as_bytes())?;
        Ok(())
    })
}
