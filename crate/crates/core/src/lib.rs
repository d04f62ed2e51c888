//! Random-walk tree solver for mean-field (McKean–Vlasov) backward SDEs.
//!
//! The Brownian driver is replaced by the scaled Rademacher walk
//! `B^n_{t_k} = sqrt(h) (ζ_1 + ... + ζ_k)` on a recombining binomial tree.
//! Because the tree carries the exact law of the walk, the laws of `Y^n` and
//! `Z^n` entering the generator are computed exactly during the backward
//! sweep. Around the solver sit closed-form benchmark solutions, a
//! Skorokhod-embedding coupling of the walk with Brownian motion and a
//! Monte-Carlo harness measuring empirical convergence rates.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod cli;
pub mod coupling;
pub mod driver;
pub mod error;
pub mod experiments;
pub mod lattice;
pub mod law;
pub mod modulus;
pub mod output;
pub mod quadrature;
pub mod solver;

pub use driver::{
    builtin_case1, builtin_case2, DriverArgs, FrozenDriver, LawSequence, MeanFieldDriver,
    TerminalCondition, ZLawClamp,
};
pub use error::{Error, Result};
pub use lattice::{Lattice, LatticeParams};
pub use law::{wasserstein, DiscreteLaw};
pub use solver::{
    solve_fixed_point_variant, solve_meanfield, solve_subtree, InitialLaw, SolutionSurface,
    SolveConfig,
};
