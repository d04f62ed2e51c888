//! Finitely supported probability laws on the real line.

use std::io::Write;

use crate::error::{Error, Result};

/// Relative tolerance under which two atoms are treated as the same point.
pub const MERGE_TOLERANCE: f64 = 1e-12;

/// A probability measure with finitely many atoms, kept sorted and merged.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteLaw {
    atoms: Vec<f64>,
    weights: Vec<f64>,
    mean: f64,
}

impl DiscreteLaw {
    /// Sorts the atoms, merges near-duplicates and renormalises the weights.
    pub fn new(atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if atoms.len() != weights.len() {
            return Err(Error::Construction(format!(
                "{} atoms but {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        if atoms.is_empty() {
            return Err(Error::Construction("empty support".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::Construction(format!("invalid weight {w}")));
        }
        if let Some(a) = atoms.iter().find(|a| !a.is_finite()) {
            return Err(Error::Construction(format!("non-finite atom {a}")));
        }
        let mut pairs: Vec<(f64, f64)> = atoms.into_iter().zip(weights).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut atoms = Vec::with_capacity(pairs.len());
        let mut weights: Vec<f64> = Vec::with_capacity(pairs.len());
        for (a, w) in pairs {
            match atoms.last() {
                Some(&last) if (a - last) <= MERGE_TOLERANCE * f64::max(1.0, f64::abs(last)) => {
                    *weights.last_mut().unwrap() += w;
                }
                _ => {
                    atoms.push(a);
                    weights.push(w);
                }
            }
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Construction("weights sum to zero".into()));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        // atoms that carried no mass only clutter the support
        if weights.contains(&0.0) {
            let (a, w): (Vec<f64>, Vec<f64>) = atoms
                .into_iter()
                .zip(weights)
                .filter(|(_, w)| *w > 0.0)
                .unzip();
            atoms = a;
            weights = w;
        }
        let mean = atoms.iter().zip(&weights).map(|(a, w)| a * w).sum();
        Ok(Self {
            atoms,
            weights,
            mean,
        })
    }

    pub fn dirac(at: f64) -> Self {
        Self {
            atoms: vec![at],
            weights: vec![1.0],
            mean: at,
        }
    }

    /// Uniform law over the samples.
    pub fn empirical(samples: &[f64]) -> Result<Self> {
        let w = vec![1.0; samples.len()];
        Self::new(samples.to_vec(), w)
    }

    /// Mixture `sum_k weight_k * law_k`.
    pub fn mixture(components: &[(f64, &DiscreteLaw)]) -> Result<Self> {
        let size = components.iter().map(|(_, l)| l.len()).sum();
        let mut atoms = Vec::with_capacity(size);
        let mut weights = Vec::with_capacity(size);
        for (w, law) in components {
            atoms.extend_from_slice(&law.atoms);
            weights.extend(law.weights.iter().map(|p| p * w));
        }
        Self::new(atoms, weights)
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Absolute moment `sum w_i |a_i|^p`.
    pub fn moment(&self, p: f64) -> f64 {
        self.atoms
            .iter()
            .zip(&self.weights)
            .map(|(a, w)| w * a.abs().powf(p))
            .sum()
    }

    pub fn variance(&self) -> f64 {
        self.atoms
            .iter()
            .zip(&self.weights)
            .map(|(a, w)| w * (a - self.mean).powi(2))
            .sum()
    }

    /// Image law under `f`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            self.atoms.iter().map(|&a| f(a)).collect(),
            self.weights.clone(),
        )
    }

    /// Translation by `delta`; at distance exactly `|delta|` in every W_p.
    pub fn shifted(&self, delta: f64) -> Self {
        Self {
            atoms: self.atoms.iter().map(|a| a + delta).collect(),
            weights: self.weights.clone(),
            mean: self.mean + delta,
        }
    }

    /// Reduces the support to at most `budget` atoms by grouping atoms into
    /// equal-mass quantile bins, each replaced by its conditional mean.
    /// The mean is preserved.
    pub fn coarsen(&self, budget: usize) -> Result<Self> {
        if budget == 0 {
            return Err(Error::Parameter("atom budget must be positive".into()));
        }
        if self.len() <= budget {
            return Ok(self.clone());
        }
        let mut bin_mass = vec![0.0; budget];
        let mut bin_moment = vec![0.0; budget];
        let mut cum = 0.0;
        for (a, w) in self.atoms.iter().zip(&self.weights) {
            let mid = cum + w / 2.0;
            cum += w;
            let b = ((mid * budget as f64) as usize).min(budget - 1);
            bin_mass[b] += w;
            bin_moment[b] += w * a;
        }
        let (atoms, weights): (Vec<f64>, Vec<f64>) = bin_mass
            .iter()
            .zip(&bin_moment)
            .filter(|(m, _)| **m > 0.0)
            .map(|(m, s)| (s / m, *m))
            .unzip();
        Self::new(atoms, weights)
    }

    /// Writes `atom,weight` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "atom,weight")?;
        for (a, w) in self.atoms.iter().zip(&self.weights) {
            writeln!(out, "{a},{w}")?;
        }
        Ok(())
    }
}

/// Cumulative weights with the last entry pinned to exactly one.
fn cumulative(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cum: Vec<f64> = weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect();
    *cum.last_mut().unwrap() = 1.0;
    cum
}

/// Wasserstein-p distance between two discrete laws on the line.
///
/// Sweeps the merged breakpoints of both cumulative distribution functions;
/// on each slice of `[0, 1]` both quantile functions are constant, so the
/// integral of `|F_a^-1 - F_b^-1|^p` is a finite sum.
pub fn wasserstein(a: &DiscreteLaw, b: &DiscreteLaw, p: f64) -> Result<f64> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::Parameter(format!(
            "Wasserstein order must be >= 1, got {p}"
        )));
    }
    let fa = cumulative(&a.weights);
    let fb = cumulative(&b.weights);
    let (mut i, mut j) = (0, 0);
    let mut prev = 0.0;
    let mut total = 0.0;
    while i < fa.len() && j < fb.len() {
        let next = fa[i].min(fb[j]);
        let d = (a.atoms[i] - b.atoms[j]).abs();
        if next > prev {
            total += (next - prev) * if p == 1.0 { d } else { d.powf(p) };
            prev = next;
        }
        if fa[i] <= next {
            i += 1;
        }
        if fb[j] <= next {
            j += 1;
        }
    }
    Ok(if p == 1.0 { total } else { total.powf(1.0 / p) })
}
