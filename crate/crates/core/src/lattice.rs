//! Recombining binomial tree for the scaled Rademacher walk.
//!
//! The tree rooted at step `j0` with value `x` holds, for every step
//! `j0 <= j <= n`, the `j - j0 + 1` reachable walk values together with their
//! probabilities. Node `i` of column `j` is the state reached after `i` down
//! moves and `j - j0 - i` up moves, so column entries are ordered from the
//! highest value to the lowest.
//!
//! # Layout
//!
//! Columns are packed back to back in one flat vector. With `c = j - j0` the
//! local column index, node `(i, j)` lives at offset `c (c + 1) / 2 + i`, which
//! is the upper triangle of the `(d + 1) x (d + 1)` matrix (with `d = n - j0`)
//! stored column by column.
//!
//! # Exactness
//!
//! Node values are `x + s * m` with `m` the integer net displacement. The step
//! `s` is `sqrt(T / n)` rounded to a dyadic grid coarse enough that `s * m` is
//! exactly representable for every `|m| <= 2 (n + 1)`. With `x = 0` this makes
//! differences and midpoints of neighbouring nodes exact, so the tree
//! identities hold bit for bit. The rounding moves `s` by a relative amount of
//! at most `2^-(52 - log2(2n + 3))`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::law::DiscreteLaw;

/// Parameters of a tree: step count, horizon, root step and root value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeParams {
    pub n: usize,
    pub horizon: f64,
    pub start_step: usize,
    pub start_value: f64,
}

impl LatticeParams {
    pub fn new(n: usize, horizon: f64) -> Self {
        Self {
            n,
            horizon,
            start_step: 0,
            start_value: 0.0,
        }
    }

    pub fn rooted_at(mut self, start_step: usize, start_value: f64) -> Self {
        self.start_step = start_step;
        self.start_value = start_value;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Parameter("step count n must be at least 1".into()));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::Parameter(format!(
                "horizon T must be positive and finite, got {}",
                self.horizon
            )));
        }
        if self.start_step > self.n {
            return Err(Error::Parameter(format!(
                "start step {} exceeds n = {}",
                self.start_step, self.n
            )));
        }
        if !self.start_value.is_finite() {
            return Err(Error::Parameter("start value must be finite".into()));
        }
        Ok(())
    }

    /// Time step `h = T / n`.
    pub fn h(&self) -> f64 {
        self.horizon / self.n as f64
    }

    pub fn depth(&self) -> usize {
        self.n - self.start_step
    }

    /// Grid time `t_k = k h`.
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.h()
    }
}

/// Rounds `sqrt_h` so that `sqrt_h * m` is exact for all `|m| <= 2 (n + 1)`.
pub fn dyadic_step(sqrt_h: f64, n: usize) -> f64 {
    let max_multiple = 2 * (n as u64 + 1);
    let spare_bits = 64 - max_multiple.leading_zeros() as i32;
    let exponent = sqrt_h.log2().floor() as i32;
    let unit = 2f64.powi(exponent - (52 - spare_bits));
    (sqrt_h / unit).round() * unit
}

/// Probabilities of the successive tree columns, produced by the Pascal
/// recurrence `p'[i] = (p[i] + p[i - 1]) / 2`.
#[derive(Debug, Clone)]
pub struct PascalColumns {
    current: Vec<f64>,
}

impl PascalColumns {
    pub fn new() -> Self {
        Self { current: vec![1.0] }
    }

    pub fn column(&self) -> &[f64] {
        &self.current
    }

    pub fn advance(&mut self) {
        let c = self.current.len();
        let mut next = Vec::with_capacity(c + 1);
        next.push(self.current[0] / 2.0);
        for i in 1..c {
            next.push((self.current[i] + self.current[i - 1]) / 2.0);
        }
        next.push(self.current[c - 1] / 2.0);
        self.current = next;
    }
}

impl Default for PascalColumns {
    fn default() -> Self {
        Self::new()
    }
}

/// Immutable binomial tree of walk values and node probabilities.
#[derive(Debug, Clone)]
pub struct Lattice {
    params: LatticeParams,
    step: f64,
    values: Vec<f64>,
    probs: Vec<f64>,
}

#[inline]
fn column_offset(c: usize) -> usize {
    c * (c + 1) / 2
}

/// Number of entries in a packed tree of depth `d`.
pub fn packed_len(depth: usize) -> usize {
    (depth + 1) * (depth + 2) / 2
}

impl Lattice {
    pub fn build(params: LatticeParams) -> Result<Self> {
        params.validate()?;
        let depth = params.depth();
        let step = dyadic_step(params.h().sqrt(), params.n);
        let len = packed_len(depth);
        let mut values = Vec::with_capacity(len);
        let mut probs = Vec::with_capacity(len);
        let mut pascal = PascalColumns::new();
        for c in 0..=depth {
            for i in 0..=c {
                let displacement = c as i64 - 2 * i as i64;
                values.push(params.start_value + step * displacement as f64);
            }
            probs.extend_from_slice(pascal.column());
            if c < depth {
                pascal.advance();
            }
        }
        Ok(Self {
            params,
            step,
            values,
            probs,
        })
    }

    pub fn params(&self) -> &LatticeParams {
        &self.params
    }

    pub fn n(&self) -> usize {
        self.params.n
    }

    pub fn start_step(&self) -> usize {
        self.params.start_step
    }

    pub fn h(&self) -> f64 {
        self.params.h()
    }

    /// Walk increment, `sqrt(h)` on the dyadic grid.
    pub fn sqrt_h(&self) -> f64 {
        self.step
    }

    /// Number of populated nodes in column `step`.
    pub fn column_len(&self, step: usize) -> usize {
        step - self.params.start_step + 1
    }

    fn check_step(&self, step: usize) -> Result<usize> {
        if step < self.params.start_step || step > self.params.n {
            return Err(Error::Index {
                index: step,
                lo: self.params.start_step,
                hi: self.params.n,
            });
        }
        Ok(step - self.params.start_step)
    }

    /// Flat offset of node `(i, step)`; panics on an unpopulated node.
    #[inline]
    pub fn offset(&self, i: usize, step: usize) -> usize {
        let c = step - self.params.start_step;
        debug_assert!(i <= c);
        column_offset(c) + i
    }

    pub fn value(&self, i: usize, step: usize) -> f64 {
        self.values[self.offset(i, step)]
    }

    pub fn prob(&self, i: usize, step: usize) -> f64 {
        self.probs[self.offset(i, step)]
    }

    pub fn column_values(&self, step: usize) -> Result<&[f64]> {
        let c = self.check_step(step)?;
        let o = column_offset(c);
        Ok(&self.values[o..o + c + 1])
    }

    pub fn column_probs(&self, step: usize) -> Result<&[f64]> {
        let c = self.check_step(step)?;
        let o = column_offset(c);
        Ok(&self.probs[o..o + c + 1])
    }

    /// Law of the walk at `step`.
    pub fn column_law(&self, step: usize) -> Result<DiscreteLaw> {
        DiscreteLaw::new(
            self.column_values(step)?.to_vec(),
            self.column_probs(step)?.to_vec(),
        )
    }

    /// Node index at `step` for a walk whose integer net displacement from
    /// the root is `displacement` (ups minus downs).
    pub fn node_for_displacement(&self, step: usize, displacement: i64) -> Option<usize> {
        let c = self.check_step(step).ok()? as i64;
        let downs2 = c - displacement;
        if displacement.abs() > c || downs2 % 2 != 0 {
            return None;
        }
        Some((downs2 / 2) as usize)
    }

    /// Writes `step,node_index,value,probability` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "step,node_index,value,probability")?;
        for step in self.params.start_step..=self.params.n {
            for i in 0..self.column_len(step) {
                writeln!(
                    out,
                    "{},{},{},{}",
                    step,
                    i,
                    self.value(i, step),
                    self.prob(i, step)
                )?;
            }
        }
        Ok(())
    }
}
