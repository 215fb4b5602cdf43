//! Equilibrium portfolio strategies for nonlinear law-dependent preferences.
//!
//! A preference here is a functional `g` on probability laws of terminal
//! wealth. Nonlinear `g` (betweenness certainty equivalents, weighted
//! utility, mean-variance, rank-dependent utility) breaks the tower property,
//! so dynamically optimal behavior is defined through intra-personal
//! equilibrium: no time-`t` self can improve `g` to first order by a
//! vanishing-window perturbation of the strategy.
//!
//! The crate provides:
//!
//! - [`laws`]: probability laws, Gauss-Hermite quadrature, root finding;
//! - [`preferences`]: the preference families, their measure derivatives and
//!   concavity certificates;
//! - [`market`]: deterministic market coefficient curves, a recombining
//!   binomial lattice for a random market price of risk, wealth simulation;
//! - [`closedform`]: the deterministic-coefficient equilibrium engine built
//!   on the certainty-equivalent functions `H`, `G` and the cumulative
//!   integral of `1/G^2`;
//! - [`qbsde`]: the coupled quadratic backward system on the lattice for
//!   weighted utility under a random market price of risk, solved by Picard
//!   iteration, with the equilibrium strategy extracted from its martingale
//!   integrands;
//! - [`verify`]: first-order-condition residuals, adjoint processes and
//!   direct perturbation tests that certify (or reject) equilibrium claims;
//! - [`config`], [`report`], [`acceptance`]: batch front end plumbing.
//!
//! ```
//! use eqlaw::market::MarketModel;
//! use eqlaw::preferences::Preference;
//! use eqlaw::{closedform, verify};
//!
//! // Constant market price of risk 0.4; power certainty equivalent.
//! let model = MarketModel::scalar(1.0, 64, 0.08, 0.2)?;
//! let pref = Preference::crra_dirac(-0.5)?;
//! let sol = closedform::solve_equilibrium_crra(&pref, &model)?;
//! assert!((sol.pi.value_at(0)[0] - 0.4 / (0.2 * 1.5)).abs() < 1e-9);
//!
//! // The solution survives its own first-order-condition audit.
//! let residual = verify::foc_residual_crra(&pref, &model, &sol.pi)?;
//! assert!(residual.sup_norm < 1e-9);
//! # Ok::<(), eqlaw::Error>(())
//! ```

pub mod acceptance;
pub mod cli;
pub mod closedform;
pub mod config;
pub mod error;
pub mod laws;
pub mod market;
pub mod preferences;
pub mod qbsde;
pub mod report;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
