//! Skorokhod-embedding coupling of Brownian motion with the scaled walk.
//!
//! A Brownian path is simulated on a fine grid of mesh `h / m`. Starting from
//! the last embedding time, the next one is the first fine time at which the
//! path has moved by at least `sqrt h`; the walk then steps by `±sqrt h` in
//! the direction of that displacement. By symmetry and the strong Markov
//! property of the fine random walk, the walk increments are i.i.d.
//! Rademacher; only the coupling quality depends on the fine grid, through
//! an overshoot of order `sqrt(h / m)` per crossing.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::lattice::dyadic_step;

pub const DEFAULT_FINE_FACTOR: usize = 64;

/// Generator for trial `trial` under `master_seed`; streams never overlap.
pub fn trial_rng(master_seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(trial);
    rng
}

/// Mixes a grid size into a seed so that studies over several `n` use
/// unrelated streams.
pub fn seed_for(master_seed: u64, n: usize) -> u64 {
    master_seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn check(n: usize, horizon: f64, fine_factor: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Parameter("n must be at least 1".into()));
    }
    if !(horizon > 0.0) {
        return Err(Error::Parameter(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    if fine_factor < 8 {
        return Err(Error::Parameter(format!(
            "fine factor must be >= 8, got {fine_factor}"
        )));
    }
    Ok(())
}

/// Fine-grid Brownian motion with on-line detection of embedding times.
struct Embedder<'r, R: Rng> {
    rng: &'r mut R,
    fine_sd: f64,
    level: f64,
    b: f64,
    anchor: f64,
    index: usize,
    displacement: i64,
    crossings: usize,
}

impl<'r, R: Rng> Embedder<'r, R> {
    fn new(rng: &'r mut R, h: f64, fine_factor: usize, level: f64) -> Self {
        Self {
            rng,
            fine_sd: (h / fine_factor as f64).sqrt(),
            level,
            b: 0.0,
            anchor: 0.0,
            index: 0,
            displacement: 0,
            crossings: 0,
        }
    }

    /// Advances one fine step; returns the walk sign if a crossing occurred.
    ///
    /// Between grid points the path is a Brownian bridge, which hits a
    /// barrier `c` outside `(b0, b1)` with probability
    /// `exp(-2 (c - b0) (c - b1) / dt)`. Testing that event makes the
    /// crossing times exact exit times of the band, so they carry no
    /// overshoot drift. The path is then restarted from the barrier level.
    fn step(&mut self) -> Option<i64> {
        let g: f64 = self.rng.sample(StandardNormal);
        let b0 = self.b;
        let b1 = b0 + self.fine_sd * g;
        self.b = b1;
        self.index += 1;
        let hi = self.anchor + self.level;
        let lo = self.anchor - self.level;
        let sign = if b1 >= hi {
            1
        } else if b1 <= lo {
            -1
        } else {
            let var2 = 2.0 * self.fine_sd * self.fine_sd;
            let p_up = (-2.0 * (hi - b0) * (hi - b1) / var2 * 2.0).exp();
            let p_down = (-2.0 * (b0 - lo) * (b1 - lo) / var2 * 2.0).exp();
            if p_up + p_down < 1e-18 {
                return None;
            }
            let u: f64 = self.rng.random();
            if u < p_up {
                1
            } else if u < p_up + p_down {
                -1
            } else {
                return None;
            }
        };
        self.displacement += sign;
        self.crossings += 1;
        self.anchor = self.displacement as f64 * self.level;
        Some(sign)
    }
}

/// A Brownian path and its embedded walk on one probability space.
#[derive(Debug, Clone)]
pub struct CoupledPath {
    n: usize,
    horizon: f64,
    fine_factor: usize,
    step: f64,
    brownian: Vec<f64>,
    displacement: Vec<i64>,
    crossing_index: Vec<usize>,
    seed: u64,
    extension: usize,
}

impl CoupledPath {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn fine_factor(&self) -> usize {
        self.fine_factor
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Fine mesh `h / m`.
    pub fn fine_dt(&self) -> f64 {
        self.horizon / (self.n * self.fine_factor) as f64
    }

    /// Walk increment `sqrt h`.
    pub fn sqrt_h(&self) -> f64 {
        self.step
    }

    /// Brownian values on the fine grid; may run past `T` when the embedding
    /// needed more time than the horizon.
    pub fn brownian(&self) -> &[f64] {
        &self.brownian
    }

    /// Brownian values on `[0, T]`.
    pub fn brownian_on_horizon(&self) -> &[f64] {
        &self.brownian[..=self.n * self.fine_factor]
    }

    /// Walk values `B^n_{t_k}`, `k = 0..=n`.
    pub fn walk(&self) -> Vec<f64> {
        self.displacement
            .iter()
            .map(|&d| d as f64 * self.step)
            .collect()
    }

    pub fn displacement(&self) -> &[i64] {
        &self.displacement
    }

    /// Fine indices of the embedding times `τ_1, ..., τ_n`.
    pub fn crossing_index(&self) -> &[usize] {
        &self.crossing_index
    }

    /// Fine steps simulated past `T` to complete the `n` crossings.
    pub fn extension(&self) -> usize {
        self.extension
    }

    /// Walk value at fine index `i` of `[0, T]` (piecewise constant, right-continuous).
    pub fn walk_at_fine(&self, i: usize) -> f64 {
        self.displacement[(i / self.fine_factor).min(self.n)] as f64 * self.step
    }

    /// `sup_t |W_t - W^n_t|` over the fine grid, including the left limits at
    /// the coarse jump times.
    pub fn sup_error(&self) -> f64 {
        let w = self.brownian_on_horizon();
        let mut sup = 0.0f64;
        for (i, &b) in w.iter().enumerate() {
            sup = sup.max((b - self.walk_at_fine(i)).abs());
            if i > 0 && i % self.fine_factor == 0 {
                let before = self.displacement[i / self.fine_factor - 1] as f64 * self.step;
                sup = sup.max((b - before).abs());
            }
        }
        sup
    }

    pub fn lower_bound_statistic(&self) -> f64 {
        lower_bound_statistic(self.brownian_on_horizon(), self.fine_factor, self.n)
    }

    /// `B_{t_k} - B^n_{t_k}`.
    pub fn error_at_step(&self, k: usize) -> f64 {
        self.brownian[k * self.fine_factor] - self.displacement[k] as f64 * self.step
    }

    /// Writes `fine_time,brownian,walk` rows over `[0, T]`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "fine_time,brownian,walk")?;
        let dt = self.fine_dt();
        for (i, b) in self.brownian_on_horizon().iter().enumerate() {
            writeln!(out, "{},{},{}", i as f64 * dt, b, self.walk_at_fine(i))?;
        }
        Ok(())
    }
}

/// `½ max_k |W_{t_k} - W_{t_{k-1}}|` for a path sampled with
/// `points_per_step` fine intervals per coarse step.
pub fn lower_bound_statistic(brownian: &[f64], points_per_step: usize, n: usize) -> f64 {
    assert!(
        brownian.len() > n * points_per_step,
        "path must cover [0, T]"
    );
    (1..=n)
        .map(|k| (brownian[k * points_per_step] - brownian[(k - 1) * points_per_step]).abs())
        .fold(0.0, f64::max)
        / 2.0
}

/// Couples a Brownian path on `[0, T]` with `n` walk steps.
pub fn skorokhod_couple(
    n: usize,
    horizon: f64,
    fine_factor: usize,
    seed: u64,
) -> Result<CoupledPath> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    couple_with(n, horizon, fine_factor, seed, &mut rng)
}

/// As [`skorokhod_couple`], drawing from a caller-supplied generator;
/// `seed` is recorded only.
pub fn couple_with<R: Rng>(
    n: usize,
    horizon: f64,
    fine_factor: usize,
    seed: u64,
    rng: &mut R,
) -> Result<CoupledPath> {
    check(n, horizon, fine_factor)?;
    let h = horizon / n as f64;
    let step = dyadic_step(h.sqrt(), n);
    let fine_len = n * fine_factor;
    let mut brownian = Vec::with_capacity(fine_len + 1);
    brownian.push(0.0);
    let mut displacement = Vec::with_capacity(n + 1);
    displacement.push(0);
    let mut crossing_index = Vec::with_capacity(n);
    let mut e = Embedder::new(rng, h, fine_factor, step);
    while e.index < fine_len || e.crossings < n {
        let crossed = e.step();
        brownian.push(e.b);
        if crossed.is_some() && e.crossings <= n {
            displacement.push(e.displacement);
            crossing_index.push(e.index);
        }
    }
    let extension = e.index - fine_len;
    if extension > 0 {
        log::debug!("coupling n={n} seed={seed}: extended by {extension} fine steps");
    }
    Ok(CoupledPath {
        n,
        horizon,
        fine_factor,
        step,
        brownian,
        displacement,
        crossing_index,
        seed,
        extension,
    })
}

/// Brownian value at time `t` and walk displacement at step `⌊t / h⌋`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddedSample {
    pub brownian: f64,
    pub step: usize,
    pub displacement: i64,
}

/// Streams one coupled pair up to time `t` without storing the path.
///
/// `B_t` between fine grid points is drawn from the Brownian bridge, so it
/// is exact for any `t`.
pub fn sample_at<R: Rng>(
    n: usize,
    horizon: f64,
    fine_factor: usize,
    t: f64,
    step: usize,
    rng: &mut R,
) -> Result<EmbeddedSample> {
    check(n, horizon, fine_factor)?;
    if !(0.0..=horizon).contains(&t) {
        return Err(Error::Parameter(format!("time {t} outside [0, {horizon}]")));
    }
    let h = horizon / n as f64;
    let level = dyadic_step(h.sqrt(), n);
    let dt = h / fine_factor as f64;
    let pos = t / dt;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    let mut e = Embedder::new(rng, h, fine_factor, level);
    let mut walk = if step == 0 { Some(0) } else { None };
    let mut b_lo = 0.0;
    let mut b_hi = None;
    while walk.is_none() || (frac > 0.0 && b_hi.is_none()) || e.index < lo {
        e.step();
        if e.crossings == step && walk.is_none() {
            walk = Some(e.displacement);
        }
        if e.index == lo {
            b_lo = e.b;
        }
        if e.index == lo + 1 {
            b_hi = Some(e.b);
        }
    }
    let brownian = match b_hi {
        Some(hi) if frac > 0.0 => {
            let g: f64 = e.rng.sample(StandardNormal);
            let mean = b_lo + frac * (hi - b_lo);
            mean + (frac * (1.0 - frac) * dt).sqrt() * g
        }
        _ => b_lo,
    };
    Ok(EmbeddedSample {
        brownian,
        step,
        displacement: walk.unwrap(),
    })
}

/// Reference curve `sqrt(log(n + 1) / n)` for the lower bound.
pub fn lower_bound_reference(n: usize) -> f64 {
    ((n as f64 + 1.0).ln() / n as f64).sqrt()
}

/// Reference curve `log(n + 1) / sqrt n` of the strong coupling rate.
pub fn strong_rate_reference(n: usize) -> f64 {
    (n as f64 + 1.0).ln() / (n as f64).sqrt()
}
