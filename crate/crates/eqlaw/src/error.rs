//! Crate-wide error type.

use std::fmt;

#[derive(Debug, Clone)]
pub enum Error {
    /// A constructor or operation was given an argument outside its domain.
    InvalidParameter(String),
    /// Quadrature order outside the supported range.
    QuadratureOrder { order: usize },
    /// An integrand or root-function returned a non-finite value.
    NonFiniteEvaluation { at: f64 },
    /// Root bracketing failed: no sign change on the supplied interval.
    NoSignChange {
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },
    /// Bracket expansion exhausted its step budget without a sign change.
    BracketExpansionFailed { x0: f64, steps: usize },
    /// A probability law lies outside the preference's admissible set.
    LawOutsideDomain(String),
    /// Volatility matrix not invertible at a grid point.
    SingularSigma { t_index: usize },
    /// The cumulative risk-premium budget exceeds what the preference's
    /// risk-tolerance integral can absorb.
    Infeasible { required: f64, reachable: f64 },
    /// Picard iteration on the lattice backward system stopped making progress.
    /// The iteration is only guaranteed to contract when the conditional
    /// oscillation V(Theta) of the cumulative squared market price of risk is
    /// small (V(Theta) < 1/(4 B^2) for a driver-dependent constant B).
    PicardDiverged {
        v_theta: f64,
        iterations: usize,
        last_deltas: Vec<f64>,
    },
    /// Iteration budget exhausted before reaching tolerance.
    MaxIterations { iterations: usize, last_delta: f64 },
    /// A solution handle was used before its solver converged.
    Unconverged,
    /// The requested operation is not defined for this preference family.
    UnsupportedPreference(String),
    /// A perturbation window does not fit inside the remaining horizon.
    WindowOverflow {
        t_index: usize,
        eps: f64,
        horizon: f64,
    },
    /// Config file problem with line/key context.
    Config {
        line: usize,
        key: String,
        msg: String,
    },
    /// I/O error while reading config or writing artifacts.
    Io(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::QuadratureOrder { order } => {
                write!(
                    f,
                    "quadrature order {order} outside supported range 2..=256"
                )
            }
            Error::NonFiniteEvaluation { at } => {
                write!(f, "non-finite function value at abscissa {at}")
            }
            Error::NoSignChange { lo, hi, f_lo, f_hi } => write!(
                f,
                "no sign change on bracket [{lo}, {hi}]: f(lo)={f_lo}, f(hi)={f_hi}"
            ),
            Error::BracketExpansionFailed { x0, steps } => write!(
                f,
                "bracket expansion from {x0} found no sign change after {steps} doublings"
            ),
            Error::LawOutsideDomain(msg) => write!(f, "law outside preference domain: {msg}"),
            Error::SingularSigma { t_index } => {
                write!(f, "volatility matrix singular at grid index {t_index}")
            }
            Error::Infeasible {
                required,
                reachable,
            } => write!(
                f,
                "infeasible: cumulative |kappa|^2 budget {required} exceeds the \
                 reachable risk-tolerance integral {reachable}"
            ),
            Error::PicardDiverged {
                v_theta,
                iterations,
                ..
            } => write!(
                f,
                "Picard iteration diverged after {iterations} iterations \
                 (V(Theta) = {v_theta}); convergence requires the smallness \
                 condition V(Theta) < 1/(4 B^2)"
            ),
            Error::MaxIterations {
                iterations,
                last_delta,
            } => write!(
                f,
                "no convergence within {iterations} iterations (last delta {last_delta})"
            ),
            Error::Unconverged => write!(f, "solution not converged"),
            Error::UnsupportedPreference(msg) => {
                write!(f, "operation undefined for this preference family: {msg}")
            }
            Error::WindowOverflow {
                t_index,
                eps,
                horizon,
            } => write!(
                f,
                "perturbation window eps={eps} at index {t_index} exceeds horizon {horizon}"
            ),
            Error::Config { line, key, msg } => {
                write!(f, "config error at line {line}, key `{key}`: {msg}")
            }
            Error::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
