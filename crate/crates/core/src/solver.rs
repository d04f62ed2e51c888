//! Backward tree scheme for mean-field BSDEs.
//!
//! Node `(i, k)` of a tree holds `Y^n_{t_k}`; `Z[i, k]` holds `Z^n_{t_{k+1}}`,
//! which is already known at `t_k`:
//!
//! ```text
//! Z[i, k] = (Y[i, k+1] - Y[i+1, k+1]) / (2 sqrt h)
//! Y[i, k] = (Y[i, k+1] + Y[i+1, k+1]) / 2
//!         + h/2 * ( f(t, B[i, k], Y[i, k+1],   Z[i, k], [Y_{t_{k+1}}], [Z_{t_{k+1}}])
//!                 + f(t, B[i, k], Y[i+1, k+1], Z[i, k], [Y_{t_{k+1}}], [Z_{t_{k+1}}]) )
//! ```
//!
//! The laws `[Y_{t_{k+1}}]` and `[Z_{t_{k+1}}]` are assembled over every atom
//! of the initial law before any node of column `k` is updated.

use std::io::Write;

use rayon::prelude::*;

use crate::driver::{
    DriverArgs, FrozenDriver, LawSequence, MeanFieldDriver, TerminalCondition, ZLawClamp,
};
use crate::error::{Error, Result};
use crate::lattice::{packed_len, Lattice, LatticeParams};
use crate::law::DiscreteLaw;

/// Form of the `Y` update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    /// Generator evaluated at the two children and averaged.
    #[default]
    ExplicitInY,
    /// `y = E_k[Y_{k+1}] + h f(.., y, ..)` solved by fixed-point iteration.
    FixedPoint,
}

/// Time argument passed to the generator in the update of column `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DriverTime {
    /// `t_{k+1} ∧ t_{n-1}`.
    #[default]
    NextClamped,
    /// `t_k`.
    Current,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveConfig {
    pub n: usize,
    pub horizon: f64,
    pub start_step: usize,
    pub scheme: Scheme,
    pub driver_time: DriverTime,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl SolveConfig {
    pub fn new(n: usize, horizon: f64) -> Self {
        Self {
            n,
            horizon,
            start_step: 0,
            scheme: Scheme::ExplicitInY,
            driver_time: DriverTime::NextClamped,
            tolerance: 1e-12,
            max_iterations: 100,
        }
    }

    pub fn with_start_step(mut self, j0: usize) -> Self {
        self.start_step = j0;
        self
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn h(&self) -> f64 {
        self.horizon / self.n as f64
    }

    /// Grid step `⌊t / h⌋` of a time in `[0, T]`.
    pub fn step_of_time(&self, t: f64) -> usize {
        (((t / self.h()) * (1.0 + 1e-14)).floor() as usize).min(self.n)
    }

    fn validate(&self, lipschitz: Option<f64>) -> Result<()> {
        LatticeParams::new(self.n, self.horizon)
            .rooted_at(self.start_step, 0.0)
            .validate()?;
        if !(self.tolerance > 0.0) || self.max_iterations == 0 {
            return Err(Error::Config(
                "fixed-point tolerance and iteration cap must be positive".into(),
            ));
        }
        if let Some(l) = lipschitz {
            let lh = l * self.h();
            if lh >= 1.0 {
                if self.scheme == Scheme::FixedPoint {
                    return Err(Error::Config(format!(
                        "fixed-point scheme needs L_f h < 1, got L_f h = {lh}"
                    )));
                }
                log::warn!("L_f h = {lh} >= 1; the implicit form would not be a contraction");
            }
        }
        Ok(())
    }

    fn driver_time(&self, k: usize) -> (usize, f64) {
        let step = match self.driver_time {
            DriverTime::NextClamped => (k + 1).min(self.n - 1),
            DriverTime::Current => k,
        };
        (step, step as f64 * self.h())
    }
}

/// Initial law of the forward value at the start step.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialLaw(pub DiscreteLaw);

impl Default for InitialLaw {
    fn default() -> Self {
        Self(DiscreteLaw::dirac(0.0))
    }
}

/// `Y` and `Z` on the tree rooted at one atom of the initial law.
#[derive(Debug, Clone)]
pub struct AtomSurface {
    weight: f64,
    lattice: Lattice,
    y: Vec<f64>,
    z: Vec<f64>,
}

impl AtomSurface {
    fn new(weight: f64, lattice: Lattice) -> Self {
        let depth = lattice.params().depth();
        let y = vec![0.0; packed_len(depth)];
        let z = if depth == 0 {
            Vec::new()
        } else {
            vec![0.0; packed_len(depth - 1)]
        };
        Self {
            weight,
            lattice,
            y,
            z,
        }
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn y(&self, i: usize, step: usize) -> f64 {
        self.y[self.lattice.offset(i, step)]
    }

    /// `Z^n_{t_{step+1}}` at node `(i, step)`, for `step < n`.
    pub fn z(&self, i: usize, step: usize) -> f64 {
        self.z[self.lattice.offset(i, step)]
    }

    pub fn y_column(&self, step: usize) -> &[f64] {
        let o = self.lattice.offset(0, step);
        &self.y[o..o + self.lattice.column_len(step)]
    }

    pub fn z_column(&self, step: usize) -> &[f64] {
        let o = self.lattice.offset(0, step);
        &self.z[o..o + self.lattice.column_len(step)]
    }

    /// `U^n(t_step, x)` for the node reached with net displacement `d`.
    pub fn y_at_displacement(&self, step: usize, d: i64) -> Option<f64> {
        self.lattice
            .node_for_displacement(step, d)
            .map(|i| self.y(i, step))
    }

    /// Symmetric difference quotient of `U^n(t_{step+1}, .)` around the node.
    pub fn z_at_displacement(&self, step: usize, d: i64) -> Option<f64> {
        if step >= self.lattice.n() {
            return None;
        }
        self.lattice
            .node_for_displacement(step, d)
            .map(|i| self.z(i, step))
    }

    fn column_image(&self, values: &[f64], step: usize) -> Vec<(f64, f64)> {
        let probs = self.lattice.column_probs(step).expect("step within tree");
        values
            .iter()
            .zip(probs)
            .map(|(&v, &p)| (v, p * self.weight))
            .collect()
    }

    fn fill_terminal(&mut self, g: &TerminalCondition) {
        let n = self.lattice.n();
        let o = self.lattice.offset(0, n);
        for i in 0..self.lattice.column_len(n) {
            self.y[o + i] = g.eval(self.lattice.value(i, n));
        }
    }

    fn fill_z(&mut self, k: usize) {
        let two_s = 2.0 * self.lattice.sqrt_h();
        let above = self.lattice.offset(0, k + 1);
        let here = self.lattice.offset(0, k);
        for i in 0..self.lattice.column_len(k) {
            self.z[here + i] = (self.y[above + i] - self.y[above + i + 1]) / two_s;
        }
    }

    /// Updates column `k` of `Y`; returns the largest fixed-point iteration count.
    fn update_y(
        &mut self,
        k: usize,
        cfg: &SolveConfig,
        f: &(dyn Fn(f64, f64, f64) -> f64 + Sync),
    ) -> Result<usize> {
        let h = cfg.h();
        let above = self.lattice.offset(0, k + 1);
        let here = self.lattice.offset(0, k);
        let mut worst = 0;
        for i in 0..self.lattice.column_len(k) {
            let x = self.lattice.value(i, k);
            let (yu, yd) = (self.y[above + i], self.y[above + i + 1]);
            let z = self.z[here + i];
            let mean = 0.5 * (yu + yd);
            let value = match cfg.scheme {
                Scheme::ExplicitInY => mean + 0.5 * h * (f(x, yu, z) + f(x, yd, z)),
                Scheme::FixedPoint => {
                    let mut y = mean;
                    let mut it = 0;
                    loop {
                        it += 1;
                        let next = mean + h * f(x, y, z);
                        if !next.is_finite() {
                            return Err(Error::NonFinite { step: k, node: i });
                        }
                        let done = (next - y).abs() <= cfg.tolerance * f64::max(1.0, next.abs());
                        y = next;
                        if done {
                            break;
                        }
                        if it >= cfg.max_iterations {
                            return Err(Error::NoConvergence {
                                step: k,
                                node: i,
                                iterations: it,
                            });
                        }
                    }
                    worst = worst.max(it);
                    y
                }
            };
            if !value.is_finite() {
                return Err(Error::NonFinite { step: k, node: i });
            }
            self.y[here + i] = value;
        }
        Ok(worst)
    }

    /// Writes `step,node,B,P,Y,Z`; `Z` is empty on the terminal column.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "step,node,B,P,Y,Z")?;
        let lat = &self.lattice;
        for step in lat.start_step()..=lat.n() {
            for i in 0..lat.column_len(step) {
                let z = if step < lat.n() {
                    self.z(i, step).to_string()
                } else {
                    String::new()
                };
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    step,
                    i,
                    lat.value(i, step),
                    lat.prob(i, step),
                    self.y(i, step),
                    z
                )?;
            }
        }
        Ok(())
    }
}

/// Surfaces of every atom plus the laws `[Y_{t_k}]` (steps `j0..=n`) and
/// `[Z_{t_k}]` (steps `j0+1..=n`).
#[derive(Debug, Clone)]
pub struct SolutionSurface {
    config: SolveConfig,
    atoms: Vec<AtomSurface>,
    law_y: LawSequence,
    law_z: LawSequence,
    iterations: usize,
}

impl SolutionSurface {
    pub fn config(&self) -> &SolveConfig {
        &self.config
    }

    pub fn atoms(&self) -> &[AtomSurface] {
        &self.atoms
    }

    pub fn atom(&self, a: usize) -> &AtomSurface {
        &self.atoms[a]
    }

    pub fn law_y(&self) -> &LawSequence {
        &self.law_y
    }

    pub fn law_z(&self) -> &LawSequence {
        &self.law_z
    }

    /// Largest fixed-point iteration count over all nodes (0 for the explicit scheme).
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// `Y` at the root of atom `a`.
    pub fn root_value(&self, a: usize) -> f64 {
        let s = &self.atoms[a];
        s.y(0, s.lattice.start_step())
    }

    /// Freezes `base` with this solution's own laws, in the indexing the
    /// mean-field sweep itself used.
    pub fn freeze_own_laws(&self, base: crate::driver::SharedDriver) -> Result<FrozenDriver> {
        FrozenDriver::new(
            base,
            self.law_y.clone(),
            self.law_z.clone(),
            self.config.n,
            self.config.horizon,
            ZLawClamp::Unclamped,
        )
    }

    /// Writes `step,atom,weight` rows for the `Y` and `Z` law sequences.
    pub fn write_laws_csv<W: Write>(&self, mut out: W, which: LawKind) -> Result<()> {
        let seq = match which {
            LawKind::Y => &self.law_y,
            LawKind::Z => &self.law_z,
        };
        writeln!(out, "step,atom,weight")?;
        for (step, law) in seq.iter() {
            for (a, w) in law.atoms().iter().zip(law.weights()) {
                writeln!(out, "{step},{a},{w}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LawKind {
    Y,
    Z,
}

fn assemble(
    atoms: &[AtomSurface],
    pick: impl Fn(&AtomSurface) -> Vec<(f64, f64)>,
) -> Result<DiscreteLaw> {
    let (values, weights): (Vec<f64>, Vec<f64>) = atoms.iter().flat_map(&pick).unzip();
    DiscreteLaw::new(values, weights)
}

fn build_atoms(cfg: &SolveConfig, xi: &InitialLaw) -> Result<Vec<AtomSurface>> {
    xi.0.atoms()
        .iter()
        .zip(xi.0.weights())
        .map(|(&a, &w)| {
            let params = LatticeParams::new(cfg.n, cfg.horizon).rooted_at(cfg.start_step, a);
            Ok(AtomSurface::new(w, Lattice::build(params)?))
        })
        .collect()
}

/// Where the law arguments of the generator come from during a sweep.
enum LawSource<'a> {
    /// Assembled from the trees being solved.
    MeanField(&'a dyn MeanFieldDriver),
    /// Read from a frozen generator.
    Frozen(&'a FrozenDriver),
}

fn sweep(
    g: &TerminalCondition,
    source: LawSource<'_>,
    cfg: &SolveConfig,
    mut atoms: Vec<AtomSurface>,
) -> Result<SolutionSurface> {
    let n = cfg.n;
    let j0 = cfg.start_step;
    atoms.par_iter_mut().for_each(|a| a.fill_terminal(g));

    // laws are collected from step n downwards and reversed at the end
    let mut law_y = vec![assemble(&atoms, |a| a.column_image(a.y_column(n), n))?];
    let mut law_z = Vec::with_capacity(n - j0);
    let mut iterations = 0;

    for k in (j0..n).rev() {
        atoms.par_iter_mut().for_each(|a| a.fill_z(k));
        law_z.push(assemble(&atoms, |a| a.column_image(a.z_column(k), k))?);
        let ly = law_y.last().unwrap();
        let lz = law_z.last().unwrap();
        let (t_step, time) = cfg.driver_time(k);

        let results: Vec<Result<usize>> = match source {
            LawSource::MeanField(driver) => {
                let f = |x: f64, y: f64, z: f64| {
                    driver.eval(&DriverArgs {
                        step: t_step,
                        time,
                        x,
                        y,
                        z,
                        law_y: ly,
                        law_z: lz,
                    })
                };
                atoms
                    .par_iter_mut()
                    .map(|a| a.update_y(k, cfg, &f))
                    .collect()
            }
            LawSource::Frozen(frozen) => {
                let f =
                    |x: f64, y: f64, z: f64| frozen.eval_with_time(k + 1, t_step, time, x, y, z);
                atoms
                    .par_iter_mut()
                    .map(|a| a.update_y(k, cfg, &f))
                    .collect()
            }
        };
        for r in results {
            iterations = iterations.max(r?);
        }
        law_y.push(assemble(&atoms, |a| a.column_image(a.y_column(k), k))?);
    }
    law_y.reverse();
    law_z.reverse();
    Ok(SolutionSurface {
        config: cfg.clone(),
        atoms,
        law_y: LawSequence::new(j0, law_y),
        law_z: LawSequence::new(j0 + 1, law_z),
        iterations,
    })
}

/// Solves the mean-field scheme from the start step with initial law `xi`,
/// one tree per atom of `xi`.
pub fn solve_meanfield(
    g: &TerminalCondition,
    f: &dyn MeanFieldDriver,
    cfg: &SolveConfig,
    xi: &InitialLaw,
) -> Result<SolutionSurface> {
    cfg.validate(f.lipschitz())?;
    let atoms = build_atoms(cfg, xi)?;
    sweep(g, LawSource::MeanField(f), cfg, atoms)
}

/// Same as [`solve_meanfield`] with the fixed-point form of the `Y` update.
pub fn solve_fixed_point_variant(
    g: &TerminalCondition,
    f: &dyn MeanFieldDriver,
    cfg: &SolveConfig,
    xi: &InitialLaw,
) -> Result<SolutionSurface> {
    let cfg = cfg.clone().with_scheme(Scheme::FixedPoint);
    solve_meanfield(g, f, &cfg, xi)
}

/// Solves the frozen scheme on the subtree rooted at `(step, x)`, reading the
/// law arguments from `frozen`.
pub fn solve_subtree(
    g: &TerminalCondition,
    frozen: &FrozenDriver,
    cfg: &SolveConfig,
    step: usize,
    x: f64,
) -> Result<SolutionSurface> {
    if frozen.n() != cfg.n || (frozen.h() - cfg.h()).abs() > 1e-15 * cfg.h() {
        return Err(Error::Config(
            "frozen driver and solve config disagree on the grid".into(),
        ));
    }
    if step < frozen.first_step() || step > cfg.n {
        return Err(Error::Index {
            index: step,
            lo: frozen.first_step(),
            hi: cfg.n,
        });
    }
    let cfg = cfg.clone().with_start_step(step);
    cfg.validate(frozen.base().lipschitz())?;
    let atoms = build_atoms(&cfg, &InitialLaw(DiscreteLaw::dirac(x)))?;
    sweep(g, LawSource::Frozen(frozen), &cfg, atoms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::{builtin_case1, FnDriver, LinearYDriver, ZeroDriver};
    use std::sync::Arc;

    #[test]
    fn zero_driver_is_martingale_identity() {
        let g = TerminalCondition::identity();
        for n in [1, 2, 5, 33] {
            let sol = solve_meanfield(
                &g,
                &ZeroDriver,
                &SolveConfig::new(n, 1.0),
                &InitialLaw::default(),
            )
            .unwrap();
            let s = sol.atom(0);
            for k in 0..=n {
                for i in 0..=k {
                    assert_eq!(s.y(i, k), s.lattice().value(i, k));
                    if k < n {
                        assert_eq!(s.z(i, k), 1.0);
                    }
                }
            }
        }
    }

    #[test]
    fn linear_y_two_steps() {
        let g = TerminalCondition::identity();
        let sol = solve_meanfield(
            &g,
            &LinearYDriver,
            &SolveConfig::new(2, 1.0),
            &InitialLaw::default(),
        )
        .unwrap();
        let s = sol.atom(0);
        let r = 0.5f64.sqrt();
        assert!(s.y(0, 0).abs() < 1e-15);
        assert!((s.y(0, 1) - 1.5 * r).abs() < 1e-15);
        assert!((s.y(1, 1) + 1.5 * r).abs() < 1e-15);
    }

    #[test]
    fn terminal_and_z_identities() {
        let (f, g) = builtin_case1();
        let sol = solve_meanfield(
            &g,
            f.as_ref(),
            &SolveConfig::new(12, 1.0),
            &InitialLaw::default(),
        )
        .unwrap();
        let s = sol.atom(0);
        let lat = s.lattice();
        for i in 0..=12 {
            assert_eq!(s.y(i, 12), lat.value(i, 12));
        }
        for k in 0..12 {
            for i in 0..=k {
                assert_eq!(
                    s.z(i, k),
                    (s.y(i, k + 1) - s.y(i + 1, k + 1)) / (2.0 * lat.sqrt_h())
                );
            }
        }
    }

    #[test]
    fn law_sequences_cover_expected_steps() {
        let (f, g) = builtin_case1();
        let cfg = SolveConfig::new(8, 1.0).with_start_step(3);
        let sol = solve_meanfield(&g, f.as_ref(), &cfg, &InitialLaw::default()).unwrap();
        assert_eq!(sol.law_y().first_step(), 3);
        assert_eq!(sol.law_y().last_step(), Some(8));
        assert_eq!(sol.law_z().first_step(), 4);
        assert_eq!(sol.law_z().last_step(), Some(8));
        assert_eq!(sol.law_y().get(3).unwrap().len(), 1);
    }

    #[test]
    fn fixed_point_solves_one_step_by_hand() {
        // g ≡ 1, f = y, h = 1/4: y = 1 + y/4
        let g = TerminalCondition::new("one", |_| 1.0);
        let sol = solve_fixed_point_variant(
            &g,
            &LinearYDriver,
            &SolveConfig::new(4, 1.0),
            &InitialLaw::default(),
        )
        .unwrap();
        let s = sol.atom(0);
        for i in 0..=3 {
            assert!((s.y(i, 3) - 4.0 / 3.0).abs() < 1e-11);
        }
        assert!(sol.iterations() > 1);
    }

    #[test]
    fn fixed_point_matches_explicit_for_zero_driver() {
        let g = TerminalCondition::capped_square(2.0).unwrap();
        let cfg = SolveConfig::new(10, 1.0);
        let a = solve_meanfield(&g, &ZeroDriver, &cfg, &InitialLaw::default()).unwrap();
        let b = solve_fixed_point_variant(&g, &ZeroDriver, &cfg, &InitialLaw::default()).unwrap();
        assert_eq!(a.atom(0).y, b.atom(0).y);
        assert_eq!(b.iterations(), 1);
    }

    #[test]
    fn fixed_point_rejects_large_step() {
        let g = TerminalCondition::identity();
        let err = solve_fixed_point_variant(
            &g,
            &LinearYDriver,
            &SolveConfig::new(1, 1.0),
            &InitialLaw::default(),
        );
        assert!(matches!(err, Err(Error::Config(_))));
        // the explicit form only warns
        assert!(solve_meanfield(
            &g,
            &LinearYDriver,
            &SolveConfig::new(1, 1.0),
            &InitialLaw::default()
        )
        .is_ok());
    }

    #[test]
    fn fixed_point_non_convergence() {
        let g = TerminalCondition::identity();
        let wild = FnDriver::new(|a: &DriverArgs<'_>| 50.0 * a.y.sin());
        let mut cfg = SolveConfig::new(4, 1.0).with_scheme(Scheme::FixedPoint);
        cfg.max_iterations = 3;
        let r = solve_meanfield(&g, &wild, &cfg, &InitialLaw::default());
        assert!(matches!(r, Err(Error::NoConvergence { .. })));
    }

    #[test]
    fn non_finite_output_names_node() {
        let g = TerminalCondition::identity();
        let bad = FnDriver::new(|a: &DriverArgs<'_>| if a.x > 0.5 { f64::NAN } else { 0.0 });
        let r = solve_meanfield(&g, &bad, &SolveConfig::new(4, 1.0), &InitialLaw::default());
        match r {
            Err(Error::NonFinite { step, node }) => {
                assert_eq!((step, node), (3, 0));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn subtree_one_step_by_hand() {
        let (f, g) = builtin_case1();
        let n = 6;
        let seq = LawSequence::constant(0, n, DiscreteLaw::dirac(0.0));
        let frozen = FrozenDriver::freeze(f, seq.clone(), seq, n, 1.0).unwrap();
        let c = 0.4;
        let sol = solve_subtree(&g, &frozen, &SolveConfig::new(n, 1.0), n - 1, c).unwrap();
        let h = 1.0 / n as f64;
        assert!((sol.root_value(0) - (1.0 + h) * c).abs() < 1e-14);
        assert!(solve_subtree(&g, &frozen, &SolveConfig::new(n, 1.0), n + 1, c).is_err());
        assert!(solve_subtree(&g, &frozen, &SolveConfig::new(n + 1, 1.0), 0, c).is_err());
    }

    #[test]
    fn subtree_reproduces_meanfield_with_own_laws() {
        let (f, g) = builtin_case1();
        let cfg = SolveConfig::new(16, 1.0);
        let xi = InitialLaw(DiscreteLaw::new(vec![-0.5, 0.25], vec![0.3, 0.7]).unwrap());
        let mf = solve_meanfield(&g, f.as_ref(), &cfg, &xi).unwrap();
        let frozen = mf.freeze_own_laws(f.clone()).unwrap();
        for (a, atom) in mf.atoms().iter().enumerate() {
            let x = atom.lattice().value(0, 0);
            let sub = solve_subtree(&g, &frozen, &cfg, 0, x).unwrap();
            assert_eq!(sub.atom(0).y, mf.atom(a).y);
            assert_eq!(sub.atom(0).z, mf.atom(a).z);
        }
    }

    #[test]
    fn multi_atom_laws_are_mixtures() {
        let g = TerminalCondition::identity();
        let xi = InitialLaw(DiscreteLaw::new(vec![0.0, 1.0], vec![0.5, 0.5]).unwrap());
        let sol = solve_meanfield(&g, &ZeroDriver, &SolveConfig::new(3, 1.0), &xi).unwrap();
        let root = sol.law_y().get(0).unwrap();
        assert_eq!(root.atoms(), &[0.0, 1.0]);
        for (_, law) in sol.law_y().iter() {
            assert!((law.mean() - 0.5).abs() < 1e-12);
        }
        let free: Arc<dyn MeanFieldDriver> = Arc::new(ZeroDriver);
        assert!(sol.freeze_own_laws(free).is_ok());
    }

    #[test]
    fn driver_time_modes() {
        let seen = std::sync::Mutex::new(Vec::new());
        let probe = FnDriver::new(|a: &DriverArgs<'_>| {
            seen.lock().unwrap().push(a.step);
            0.0
        });
        let g = TerminalCondition::identity();
        solve_meanfield(
            &g,
            &probe,
            &SolveConfig::new(3, 1.0),
            &InitialLaw::default(),
        )
        .unwrap();
        let mut steps = seen.lock().unwrap().clone();
        steps.dedup();
        assert_eq!(steps, vec![2, 1]);
        seen.lock().unwrap().clear();
        let mut cfg = SolveConfig::new(3, 1.0);
        cfg.driver_time = DriverTime::Current;
        solve_meanfield(&g, &probe, &cfg, &InitialLaw::default()).unwrap();
        let mut steps = seen.lock().unwrap().clone();
        steps.dedup();
        assert_eq!(steps, vec![2, 1, 0]);
    }

    #[test]
    fn csv_dump_has_blank_terminal_z() {
        let g = TerminalCondition::identity();
        let sol = solve_meanfield(
            &g,
            &ZeroDriver,
            &SolveConfig::new(1, 1.0),
            &InitialLaw::default(),
        )
        .unwrap();
        let mut buf = Vec::new();
        sol.atom(0).write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "step,node,B,P,Y,Z\n0,0,0,1,0,1\n1,0,1,0.5,1,\n1,1,-1,0.5,-1,\n"
        );
    }
}
