//! Mean-field generators, terminal conditions and the frozen generator.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::law::DiscreteLaw;

/// Arguments of one generator evaluation.
#[derive(Debug, Clone, Copy)]
pub struct DriverArgs<'a> {
    /// Grid index of `time`.
    pub step: usize,
    pub time: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub law_y: &'a DiscreteLaw,
    pub law_z: &'a DiscreteLaw,
}

/// A generator `f(t, x, y, z, μ_Y, μ_Z)`.
///
/// Implementations must be deterministic and safe to call concurrently.
pub trait MeanFieldDriver: Send + Sync {
    fn eval(&self, args: &DriverArgs<'_>) -> f64;

    /// Declared Lipschitz constant in `(y, z, μ, ν)`, if known.
    fn lipschitz(&self) -> Option<f64> {
        None
    }

    /// Declared Hölder exponents `(α, ε)`, metadata only.
    fn holder_exponents(&self) -> Option<(f64, f64)> {
        None
    }

    fn name(&self) -> &str {
        "custom"
    }
}

/// `f ≡ 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroDriver;

impl MeanFieldDriver for ZeroDriver {
    fn eval(&self, _: &DriverArgs<'_>) -> f64 {
        0.0
    }

    fn name(&self) -> &str {
        "zero"
    }
}

/// `f = y`, independent of the laws.
#[derive(Debug, Clone, Copy, Default)]
pub struct LinearYDriver;

impl MeanFieldDriver for LinearYDriver {
    fn eval(&self, a: &DriverArgs<'_>) -> f64 {
        a.y
    }

    fn lipschitz(&self) -> Option<f64> {
        Some(1.0)
    }

    fn name(&self) -> &str {
        "linear-y"
    }
}

/// `f = y + E[Y_t] + E[Z_t]`, the benchmark generator.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanShiftDriver;

impl MeanFieldDriver for MeanShiftDriver {
    fn eval(&self, a: &DriverArgs<'_>) -> f64 {
        a.y + a.law_y.mean() + a.law_z.mean()
    }

    fn lipschitz(&self) -> Option<f64> {
        Some(1.0)
    }

    fn name(&self) -> &str {
        "mean-shift"
    }
}

/// Adapter for closures.
pub struct FnDriver<F> {
    f: F,
    lipschitz: Option<f64>,
}

impl<F> FnDriver<F>
where
    F: Fn(&DriverArgs<'_>) -> f64 + Send + Sync,
{
    pub fn new(f: F) -> Self {
        Self { f, lipschitz: None }
    }

    pub fn with_lipschitz(mut self, l: f64) -> Result<Self> {
        if !(l > 0.0) {
            return Err(Error::Parameter(format!(
                "Lipschitz constant must be > 0, got {l}"
            )));
        }
        self.lipschitz = Some(l);
        Ok(self)
    }
}

impl<F> MeanFieldDriver for FnDriver<F>
where
    F: Fn(&DriverArgs<'_>) -> f64 + Send + Sync,
{
    fn eval(&self, args: &DriverArgs<'_>) -> f64 {
        (self.f)(args)
    }

    fn lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }
}

/// Terminal condition `g`.
#[derive(Clone)]
pub struct TerminalCondition {
    g: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    name: String,
    holder: Option<(f64, f64)>,
}

impl fmt::Debug for TerminalCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TerminalCondition")
            .field("name", &self.name)
            .field("holder", &self.holder)
            .finish()
    }
}

impl TerminalCondition {
    pub fn new(name: impl Into<String>, g: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            g: Arc::new(g),
            name: name.into(),
            holder: None,
        }
    }

    /// Attaches Hölder data `(ε, |g|_ε)`.
    pub fn with_holder(mut self, epsilon: f64, constant: f64) -> Self {
        self.holder = Some((epsilon, constant));
        self
    }

    pub fn identity() -> Self {
        Self::new("identity", |x| x).with_holder(1.0, 1.0)
    }

    /// `g(x) = x^2 ∧ K`.
    pub fn capped_square(cap: f64) -> Result<Self> {
        if !(cap > 0.0) || !cap.is_finite() {
            return Err(Error::Parameter(format!(
                "cap K must be positive, got {cap}"
            )));
        }
        Ok(
            Self::new(format!("square-cap-{cap}"), move |x| (x * x).min(cap))
                .with_holder(1.0, 2.0 * cap.sqrt()),
        )
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.g)(x)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn holder(&self) -> Option<(f64, f64)> {
        self.holder
    }
}

pub type SharedDriver = Arc<dyn MeanFieldDriver>;

/// Generator `y + E Y + E Z` with `g(x) = x`.
pub fn builtin_case1() -> (SharedDriver, TerminalCondition) {
    (Arc::new(MeanShiftDriver), TerminalCondition::identity())
}

/// Generator `y + E Y + E Z` with `g(x) = x^2 ∧ K`.
pub fn builtin_case2(cap: f64) -> Result<(SharedDriver, TerminalCondition)> {
    Ok((
        Arc::new(MeanShiftDriver),
        TerminalCondition::capped_square(cap)?,
    ))
}

/// Laws indexed by grid step, starting at `first_step`.
#[derive(Debug, Clone, PartialEq)]
pub struct LawSequence {
    first_step: usize,
    laws: Vec<DiscreteLaw>,
}

impl LawSequence {
    pub fn new(first_step: usize, laws: Vec<DiscreteLaw>) -> Self {
        Self { first_step, laws }
    }

    /// Constant sequence over `first..=last`.
    pub fn constant(first: usize, last: usize, law: DiscreteLaw) -> Self {
        Self::new(first, vec![law; last + 1 - first])
    }

    pub fn first_step(&self) -> usize {
        self.first_step
    }

    /// Last covered step; `None` when empty.
    pub fn last_step(&self) -> Option<usize> {
        (!self.laws.is_empty()).then(|| self.first_step + self.laws.len() - 1)
    }

    pub fn get(&self, step: usize) -> Option<&DiscreteLaw> {
        step.checked_sub(self.first_step)
            .and_then(|i| self.laws.get(i))
    }

    pub fn covers(&self, first: usize, last: usize) -> bool {
        self.first_step <= first && self.last_step().is_some_and(|l| l >= last)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &DiscreteLaw)> {
        self.laws
            .iter()
            .enumerate()
            .map(move |(i, l)| (self.first_step + i, l))
    }

    pub fn map(&self, f: impl Fn(&DiscreteLaw) -> DiscreteLaw) -> Self {
        Self::new(self.first_step, self.laws.iter().map(f).collect())
    }

    pub fn push(&mut self, law: DiscreteLaw) {
        self.laws.push(law);
    }
}

/// How the frozen generator indexes the law of `Z` near the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZLawClamp {
    /// `[Z_{t_k ∧ t_{n-1}}]`: for laws of a continuous-time solution, whose
    /// `Z` lives on `[t, T)`.
    #[default]
    HorizonClamped,
    /// `[Z_{t_k}]`: for the tree's own laws, where `[Z_{t_n}]` exists and
    /// is what the mean-field step at `t_{n-1}` reads.
    Unclamped,
}

/// The generator with its law arguments fixed to given sequences:
/// `f_n(t_k, x, y, z) = f(t_k ∧ t_{n-1}, x, y, z, [Y_{t_k}], [Z_{t_k ∧ t_{n-1}}])`.
pub struct FrozenDriver {
    base: SharedDriver,
    law_y: LawSequence,
    law_z: LawSequence,
    n: usize,
    h: f64,
    clamp: ZLawClamp,
}

impl fmt::Debug for FrozenDriver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FrozenDriver")
            .field("base", &self.base.name())
            .field("n", &self.n)
            .field("clamp", &self.clamp)
            .finish()
    }
}

impl FrozenDriver {
    /// Freezes `base`; the sequences must cover every step from
    /// `law_y.first_step() + 1` to `n` (after clamping for `Z`).
    pub fn new(
        base: SharedDriver,
        law_y: LawSequence,
        law_z: LawSequence,
        n: usize,
        horizon: f64,
        clamp: ZLawClamp,
    ) -> Result<Self> {
        if n == 0 || !(horizon > 0.0) {
            return Err(Error::Parameter(
                "frozen driver needs n >= 1 and T > 0".into(),
            ));
        }
        let first = law_y.first_step();
        if !law_y.covers(first, n) {
            return Err(Error::Parameter(format!(
                "law_Y sequence covers {:?}..={:?}, need {first}..={n}",
                law_y.first_step(),
                law_y.last_step()
            )));
        }
        let frozen = Self {
            base,
            law_y,
            law_z,
            n,
            h: horizon / n as f64,
            clamp,
        };
        let z_first = frozen.z_index((first + 1).min(n));
        let z_last = frozen.z_index(n);
        if !frozen.law_z.covers(z_first, z_last) {
            return Err(Error::Parameter(format!(
                "law_Z sequence covers {:?}..={:?}, need {z_first}..={z_last}",
                frozen.law_z.first_step(),
                frozen.law_z.last_step()
            )));
        }
        Ok(frozen)
    }

    /// Freezing with the horizon clamp of the continuous-time construction.
    pub fn freeze(
        base: SharedDriver,
        law_y: LawSequence,
        law_z: LawSequence,
        n: usize,
        horizon: f64,
    ) -> Result<Self> {
        Self::new(base, law_y, law_z, n, horizon, ZLawClamp::HorizonClamped)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// First step whose subtree may be solved with these laws.
    pub fn first_step(&self) -> usize {
        self.law_y.first_step()
    }

    pub fn base(&self) -> &SharedDriver {
        &self.base
    }

    pub fn law_y(&self) -> &LawSequence {
        &self.law_y
    }

    pub fn law_z(&self) -> &LawSequence {
        &self.law_z
    }

    fn z_index(&self, k: usize) -> usize {
        match self.clamp {
            ZLawClamp::HorizonClamped => k.min(self.n - 1),
            ZLawClamp::Unclamped => k,
        }
    }

    /// Evaluates at grid index `k` with time `t_k ∧ t_{n-1}`.
    pub fn eval(&self, k: usize, x: f64, y: f64, z: f64) -> f64 {
        let tk = k.min(self.n - 1);
        self.eval_with_time(k, tk, tk as f64 * self.h, x, y, z)
    }

    /// Evaluates the laws of index `k` but with an explicit time argument.
    pub fn eval_with_time(&self, k: usize, step: usize, time: f64, x: f64, y: f64, z: f64) -> f64 {
        let law_y = self
            .law_y
            .get(k)
            .expect("law_Y coverage checked at construction");
        let law_z = self
            .law_z
            .get(self.z_index(k))
            .expect("law_Z coverage checked at construction");
        self.base.eval(&DriverArgs {
            step,
            time,
            x,
            y,
            z,
            law_y,
            law_z,
        })
    }
}
