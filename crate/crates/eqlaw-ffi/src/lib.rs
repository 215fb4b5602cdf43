//! C ABI over the eqlaw library: opaque handles, integer status codes, and
//! a thread-local last-error message. Every pointer argument is checked for
//! null; handles must be released with the matching `_free` function.

use eqlaw::closedform::{solve_equilibrium_cara, solve_equilibrium_crra, solve_equilibrium_mv};
use eqlaw::error::Error;
use eqlaw::laws::Law;
use eqlaw::market::{Lattice, MarketModel, StrategyCurve, StrategyMode};
use eqlaw::preferences::{self, Preference};
use eqlaw::qbsde;
use eqlaw::verify::{self, GainMode, Verdict};
use std::cell::RefCell;
use std::ffi::{c_char, c_int, CString};
use std::slice;

/// Status code returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EqlawStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// The risk-premium budget exceeds what the preference can absorb.
    Infeasible = 3,
    /// The lattice Picard iteration failed to contract.
    Diverged = 4,
    NumericError = 5,
    Unsupported = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).unwrap());
}

fn status_of(err: &Error) -> EqlawStatus {
    match err {
        Error::Infeasible { .. } => EqlawStatus::Infeasible,
        Error::PicardDiverged { .. } | Error::MaxIterations { .. } => EqlawStatus::Diverged,
        Error::UnsupportedPreference(_) => EqlawStatus::Unsupported,
        Error::InvalidParameter(_) | Error::QuadratureOrder { .. } | Error::Config { .. } => {
            EqlawStatus::InvalidArgument
        }
        _ => EqlawStatus::NumericError,
    }
}

fn fail(err: &Error) -> EqlawStatus {
    set_error(&err.to_string());
    status_of(err)
}

/// Library version as a static C string.
#[no_mangle]
pub extern "C" fn eqlaw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn eqlaw_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

// ---------------------------------------------------------------------------
// Preference handles
// ---------------------------------------------------------------------------

/// Opaque preference handle.
pub struct EqlawPreference {
    inner: Preference,
}

unsafe fn pref_from_parts(
    values: *const f64,
    weights: *const f64,
    n: usize,
    build: impl FnOnce(Vec<(f64, f64)>) -> eqlaw::Result<Preference>,
) -> *mut EqlawPreference {
    if values.is_null() || (weights.is_null() && n > 1) || n == 0 {
        set_error("null or empty atom arrays");
        return std::ptr::null_mut();
    }
    let vals = slice::from_raw_parts(values, n);
    let atoms: Vec<(f64, f64)> = if weights.is_null() {
        vals.iter().map(|&v| (v, 1.0)).collect()
    } else {
        vals.iter()
            .copied()
            .zip(slice::from_raw_parts(weights, n).iter().copied())
            .collect()
    };
    match build(atoms) {
        Ok(inner) => Box::into_raw(Box::new(EqlawPreference { inner })),
        Err(e) => {
            set_error(&e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// Mixed power certainty equivalent with exponents in `(-1/eps0, 1-eps0)`.
/// Pass `eps0 <= 0` for the default band parameter 0.05.
///
/// # Safety
/// `gammas` and `weights` must point to `n` readable doubles (weights may be
/// null when `n == 1`).
#[no_mangle]
pub unsafe extern "C" fn eqlaw_pref_mixed_crra(
    gammas: *const f64,
    weights: *const f64,
    n: usize,
    eps0: f64,
) -> *mut EqlawPreference {
    pref_from_parts(gammas, weights, n, |atoms| {
        let band = if eps0 > 0.0 {
            eps0
        } else {
            preferences::DEFAULT_EPS0
        };
        Ok(Preference::MixedCrra(preferences::MixedCrra::with_band(
            atoms, band,
        )?))
    })
}

/// Exponential certainty equivalent with a finite mixture of absolute risk
/// aversions.
///
/// # Safety
/// `rhos` and `weights` must point to `n` readable doubles (weights may be
/// null when `n == 1`).
#[no_mangle]
pub unsafe extern "C" fn eqlaw_pref_cara(
    rhos: *const f64,
    weights: *const f64,
    n: usize,
) -> *mut EqlawPreference {
    pref_from_parts(rhos, weights, n, Preference::cara)
}

#[no_mangle]
pub extern "C" fn eqlaw_pref_weighted_utility(gamma: f64, rho: f64) -> *mut EqlawPreference {
    match Preference::weighted_utility(gamma, rho) {
        Ok(inner) => Box::into_raw(Box::new(EqlawPreference { inner })),
        Err(e) => {
            set_error(&e.to_string());
            std::ptr::null_mut()
        }
    }
}

#[no_mangle]
pub extern "C" fn eqlaw_pref_mean_variance(gamma_mv: f64) -> *mut EqlawPreference {
    match Preference::mean_variance(gamma_mv) {
        Ok(inner) => Box::into_raw(Box::new(EqlawPreference { inner })),
        Err(e) => {
            set_error(&e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// # Safety
/// `pref` must come from an `eqlaw_pref_*` constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn eqlaw_pref_free(pref: *mut EqlawPreference) {
    if !pref.is_null() {
        drop(Box::from_raw(pref));
    }
}

/// Preference value of a discrete law given as parallel point/weight arrays.
///
/// # Safety
/// `points` and `weights` must point to `n` readable doubles; `out` must be
/// a writable double.
#[no_mangle]
pub unsafe extern "C" fn eqlaw_pref_evaluate_discrete(
    pref: *const EqlawPreference,
    points: *const f64,
    weights: *const f64,
    n: usize,
    out: *mut f64,
) -> EqlawStatus {
    if pref.is_null() || points.is_null() || weights.is_null() || out.is_null() || n == 0 {
        set_error("null pointer or empty law");
        return EqlawStatus::NullPointer;
    }
    let pts: Vec<(f64, f64)> = slice::from_raw_parts(points, n)
        .iter()
        .copied()
        .zip(slice::from_raw_parts(weights, n).iter().copied())
        .collect();
    let law = match Law::discrete(pts) {
        Ok(l) => l,
        Err(e) => return fail(&e),
    };
    match preferences::evaluate(&(*pref).inner, &law) {
        Ok(v) => {
            *out = v;
            EqlawStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

// ---------------------------------------------------------------------------
// Market handles
// ---------------------------------------------------------------------------

/// Opaque single-stock market handle with piecewise-constant coefficients.
pub struct EqlawMarket {
    inner: MarketModel,
}

#[no_mangle]
pub extern "C" fn eqlaw_market_scalar(
    horizon: f64,
    n_steps: usize,
    theta: f64,
    sigma: f64,
) -> *mut EqlawMarket {
    match MarketModel::scalar(horizon, n_steps, theta, sigma) {
        Ok(inner) => Box::into_raw(Box::new(EqlawMarket { inner })),
        Err(e) => {
            set_error(&e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// Per-step coefficient curves, one entry per step.
///
/// # Safety
/// `theta` and `sigma` must point to `n_steps` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn eqlaw_market_scalar_curves(
    horizon: f64,
    theta: *const f64,
    sigma: *const f64,
    n_steps: usize,
) -> *mut EqlawMarket {
    if theta.is_null() || sigma.is_null() || n_steps == 0 {
        set_error("null coefficient curves");
        return std::ptr::null_mut();
    }
    let t = slice::from_raw_parts(theta, n_steps).to_vec();
    let s = slice::from_raw_parts(sigma, n_steps).to_vec();
    match MarketModel::scalar_curves(horizon, t, s) {
        Ok(inner) => Box::into_raw(Box::new(EqlawMarket { inner })),
        Err(e) => {
            set_error(&e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// # Safety
/// `market` must come from an `eqlaw_market_*` constructor and not be freed
/// twice.
#[no_mangle]
pub unsafe extern "C" fn eqlaw_market_free(market: *mut EqlawMarket) {
    if !market.is_null() {
        drop(Box::from_raw(market));
    }
}

// ---------------------------------------------------------------------------
// Closed-form equilibrium and verification
// ---------------------------------------------------------------------------

fn solve_for(
    pref: &Preference,
    market: &MarketModel,
) -> eqlaw::Result<eqlaw::closedform::EquilibriumSolution> {
    match pref {
        Preference::MixedCrra(_) | Preference::WeightedUtility { .. } => {
            solve_equilibrium_crra(pref, market)
        }
        Preference::Cara(_) => solve_equilibrium_cara(pref, market),
        Preference::MeanVariance { gamma_mv } => solve_equilibrium_mv(*gamma_mv, market),
        other => Err(Error::UnsupportedPreference(format!(
            "no closed-form equilibrium for {}",
            other.family_name()
        ))),
    }
}

fn natural_mode(pref: &Preference) -> StrategyMode {
    match pref {
        Preference::Cara(_) | Preference::MeanVariance { .. } => StrategyMode::Dollar,
        _ => StrategyMode::Proportion,
    }
}

/// Solve the deterministic-coefficient equilibrium for the preference and
/// write the per-step position into `pi_out` (length `n_steps`) and the
/// cumulative variance into `big_a_out` (length `n_steps + 1`, may be null).
///
/// # Safety
/// Output buffers must be writable with the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn eqlaw_solve_equilibrium(
    pref: *const EqlawPreference,
    market: *const EqlawMarket,
    pi_out: *mut f64,
    big_a_out: *mut f64,
) -> EqlawStatus {
    if pref.is_null() || market.is_null() || pi_out.is_null() {
        set_error("null pointer");
        return EqlawStatus::NullPointer;
    }
    let model = &(*market).inner;
    match solve_for(&(*pref).inner, model) {
        Ok(sol) => {
            let pi = slice::from_raw_parts_mut(pi_out, model.n_steps());
            for (i, slot) in pi.iter_mut().enumerate() {
                *slot = sol.pi.value_at(i)[0];
            }
            if !big_a_out.is_null() {
                let big_a = slice::from_raw_parts_mut(big_a_out, model.n_steps() + 1);
                big_a.copy_from_slice(&sol.big_a);
            }
            EqlawStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Sup-norm of the first-order-condition residual of a per-step strategy.
///
/// # Safety
/// `pi` must point to `n_steps` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eqlaw_foc_residual(
    pref: *const EqlawPreference,
    market: *const EqlawMarket,
    pi: *const f64,
    n_steps: usize,
    out: *mut f64,
) -> EqlawStatus {
    if pref.is_null() || market.is_null() || pi.is_null() || out.is_null() {
        set_error("null pointer");
        return EqlawStatus::NullPointer;
    }
    let model = &(*market).inner;
    let values: Vec<Vec<f64>> = slice::from_raw_parts(pi, n_steps)
        .iter()
        .map(|&v| vec![v])
        .collect();
    let prefr = &(*pref).inner;
    let strategy = match StrategyCurve::new(natural_mode(prefr), values) {
        Ok(s) => s,
        Err(e) => return fail(&e),
    };
    let curve = match prefr {
        Preference::Cara(_) => verify::foc_residual_cara(prefr, model, &strategy),
        _ => verify::foc_residual_crra(prefr, model, &strategy),
    };
    match curve {
        Ok(c) => {
            *out = c.sup_norm;
            EqlawStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Analytic shrinking-window perturbation test at one `(t_index, phi)` cell:
/// writes the verdict (0 consistent, 1 violated, 2 inconclusive) and the
/// extrapolated gain limit.
///
/// # Safety
/// `pi` must point to `n_steps` readable doubles; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn eqlaw_perturbation_verdict(
    pref: *const EqlawPreference,
    market: *const EqlawMarket,
    pi: *const f64,
    n_steps: usize,
    t_index: usize,
    phi: f64,
    verdict_out: *mut c_int,
    limit_out: *mut f64,
) -> EqlawStatus {
    if pref.is_null() || market.is_null() || pi.is_null() || verdict_out.is_null() {
        set_error("null pointer");
        return EqlawStatus::NullPointer;
    }
    let model = &(*market).inner;
    let prefr = &(*pref).inner;
    let values: Vec<Vec<f64>> = slice::from_raw_parts(pi, n_steps)
        .iter()
        .map(|&v| vec![v])
        .collect();
    let strategy = match StrategyCurve::new(natural_mode(prefr), values) {
        Ok(s) => s,
        Err(e) => return fail(&e),
    };
    if t_index >= model.n_steps() {
        set_error("t_index outside the grid");
        return EqlawStatus::InvalidArgument;
    }
    let remaining = model.horizon() - model.grid()[t_index];
    let eps = verify::default_eps_grid(remaining);
    match verify::perturbation_test(
        prefr,
        model,
        &strategy,
        t_index,
        &[phi],
        &eps,
        GainMode::Analytic,
        0,
        None,
    ) {
        Ok(rep) => {
            *verdict_out = match rep.verdict {
                Verdict::EquilibriumConsistent => 0,
                Verdict::Violated => 1,
                Verdict::Inconclusive => 2,
            };
            if !limit_out.is_null() {
                *limit_out = rep.extrapolated_limit;
            }
            EqlawStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

// ---------------------------------------------------------------------------
// Lattice / weighted utility
// ---------------------------------------------------------------------------

/// Opaque lattice handle.
pub struct EqlawLattice {
    inner: Lattice,
}

#[no_mangle]
pub extern "C" fn eqlaw_lattice_new(
    horizon: f64,
    steps: usize,
    sigma: f64,
    kappa0: f64,
    eta: f64,
    s: f64,
) -> *mut EqlawLattice {
    match Lattice::new(horizon, steps, sigma, kappa0, eta, s) {
        Ok(inner) => Box::into_raw(Box::new(EqlawLattice { inner })),
        Err(e) => {
            set_error(&e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// # Safety
/// `lattice` must come from `eqlaw_lattice_new` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn eqlaw_lattice_free(lattice: *mut EqlawLattice) {
    if !lattice.is_null() {
        drop(Box::from_raw(lattice));
    }
}

/// Opaque weighted-utility lattice solution.
pub struct EqlawWuSolution {
    lattice: Lattice,
    coeffs: qbsde::WuCoefficients,
    sol: qbsde::QbsdeSolution,
    strategy: eqlaw::market::AdaptedStrategy,
}

/// Solve the weighted-utility backward system on the lattice by Picard
/// iteration and keep the solution behind an opaque handle.
///
/// # Safety
/// `lattice` must be a live handle from `eqlaw_lattice_new`.
#[no_mangle]
pub unsafe extern "C" fn eqlaw_solve_wu(
    gamma: f64,
    rho: f64,
    lattice: *const EqlawLattice,
    tol: f64,
    max_iter: usize,
) -> *mut EqlawWuSolution {
    if lattice.is_null() {
        set_error("null lattice");
        return std::ptr::null_mut();
    }
    let lat = (*lattice).inner.clone();
    let run = || -> eqlaw::Result<EqlawWuSolution> {
        let coeffs = qbsde::build_coefficients(gamma, rho)?;
        let sol = qbsde::solve_picard(&coeffs, &lat, tol, max_iter)?;
        let strategy = qbsde::extract_strategy(&coeffs, &lat, &sol)?;
        Ok(EqlawWuSolution {
            lattice: lat.clone(),
            coeffs,
            sol,
            strategy,
        })
    };
    match run() {
        Ok(h) => Box::into_raw(Box::new(h)),
        Err(e) => {
            set_error(&e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// # Safety
/// `sol` must come from `eqlaw_solve_wu` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn eqlaw_wu_solution_free(sol: *mut EqlawWuSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// # Safety
/// `sol` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn eqlaw_wu_v_theta(sol: *const EqlawWuSolution) -> f64 {
    if sol.is_null() {
        return f64::NAN;
    }
    (*sol).sol.v_theta
}

/// # Safety
/// `sol` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn eqlaw_wu_bmo_norm(sol: *const EqlawWuSolution) -> f64 {
    if sol.is_null() {
        return f64::NAN;
    }
    (*sol).sol.bmo_norm_z
}

/// # Safety
/// `sol` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn eqlaw_wu_iterations(sol: *const EqlawWuSolution) -> usize {
    if sol.is_null() {
        return 0;
    }
    (*sol).sol.iterations
}

/// Strategy at a lattice node; NaN on bad indices.
///
/// # Safety
/// `sol` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn eqlaw_wu_strategy_at(
    sol: *const EqlawWuSolution,
    level: usize,
    node: usize,
) -> f64 {
    if sol.is_null() {
        return f64::NAN;
    }
    let s = &*sol;
    if level >= s.lattice.n_steps() || node > level {
        return f64::NAN;
    }
    s.strategy.value(level, node)
}

/// Log-moment field `Ybar_i` at a node (`which` selects 1 or 2); NaN on bad
/// indices.
///
/// # Safety
/// `sol` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn eqlaw_wu_ybar_at(
    sol: *const EqlawWuSolution,
    which: c_int,
    level: usize,
    node: usize,
) -> f64 {
    if sol.is_null() {
        return f64::NAN;
    }
    let s = &*sol;
    if level > s.lattice.n_steps() || node > level {
        return f64::NAN;
    }
    match which {
        1 => s.sol.ybar1[level][node],
        2 => s.sol.ybar2[level][node],
        _ => f64::NAN,
    }
}

/// Sup-node first-order-condition residual of the extracted strategy.
///
/// # Safety
/// `sol` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eqlaw_wu_foc_residual(
    sol: *const EqlawWuSolution,
    out: *mut f64,
) -> EqlawStatus {
    if sol.is_null() || out.is_null() {
        set_error("null pointer");
        return EqlawStatus::NullPointer;
    }
    let s = &*sol;
    match qbsde::foc_residual_wu(&s.coeffs, &s.lattice, &s.strategy) {
        Ok(v) => {
            *out = v;
            EqlawStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CStr;

    #[test]
    fn version_and_error_strings() {
        let v = unsafe { CStr::from_ptr(eqlaw_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
        let e = unsafe { CStr::from_ptr(eqlaw_last_error()) };
        assert_eq!(e.to_str().unwrap(), "");
    }

    #[test]
    fn merton_through_the_c_surface() {
        unsafe {
            let gammas = [-0.5];
            let pref = eqlaw_pref_mixed_crra(gammas.as_ptr(), std::ptr::null(), 1, 0.0);
            assert!(!pref.is_null());
            let market = eqlaw_market_scalar(1.0, 16, 0.08, 0.2);
            assert!(!market.is_null());
            let mut pi = [0.0; 16];
            let mut big_a = [0.0; 17];
            let status = eqlaw_solve_equilibrium(pref, market, pi.as_mut_ptr(), big_a.as_mut_ptr());
            assert_eq!(status, EqlawStatus::Ok);
            for v in pi {
                assert!((v - 0.4 / (0.2 * 1.5)).abs() < 1e-10);
            }
            assert_eq!(big_a[16], 0.0);
            assert!(big_a[0] > 0.0);

            let mut resid = f64::NAN;
            let status = eqlaw_foc_residual(pref, market, pi.as_ptr(), 16, &mut resid);
            assert_eq!(status, EqlawStatus::Ok);
            assert!(resid < 1e-9);

            let mut verdict = -1;
            let mut limit = f64::NAN;
            let status = eqlaw_perturbation_verdict(
                pref,
                market,
                pi.as_ptr(),
                16,
                8,
                1.0,
                &mut verdict,
                &mut limit,
            );
            assert_eq!(status, EqlawStatus::Ok);
            assert_eq!(verdict, 0);
            assert!(limit <= 1e-6);

            eqlaw_market_free(market);
            eqlaw_pref_free(pref);
        }
    }

    #[test]
    fn invalid_parameters_set_the_error_message() {
        unsafe {
            let pref = eqlaw_pref_weighted_utility(0.5, 0.7);
            assert!(pref.is_null());
            let msg = CStr::from_ptr(eqlaw_last_error()).to_str().unwrap();
            assert!(msg.contains("gamma"), "message: {msg}");
            let market = eqlaw_market_scalar(-1.0, 4, 0.08, 0.2);
            assert!(market.is_null());
        }
    }

    #[test]
    fn wu_lattice_round_trip() {
        unsafe {
            let lattice = eqlaw_lattice_new(1.0, 48, 0.2, 0.4, 0.0, 1.0);
            assert!(!lattice.is_null());
            let sol = eqlaw_solve_wu(-0.5, 0.25, lattice, 1e-11, 30);
            assert!(!sol.is_null());
            assert_eq!(eqlaw_wu_v_theta(sol), 0.0);
            assert!(eqlaw_wu_bmo_norm(sol) < 1e-12);
            assert!(eqlaw_wu_iterations(sol) <= 2);
            let pi = eqlaw_wu_strategy_at(sol, 10, 3);
            assert!((pi - 0.4 / (0.2 * 1.25)).abs() < 1e-9);
            assert!(eqlaw_wu_strategy_at(sol, 10, 11).is_nan());
            assert!(eqlaw_wu_ybar_at(sol, 1, 48, 0).abs() < 1e-14);
            let mut resid = f64::NAN;
            assert_eq!(eqlaw_wu_foc_residual(sol, &mut resid), EqlawStatus::Ok);
            assert!(resid < 1e-4);
            eqlaw_wu_solution_free(sol);
            eqlaw_lattice_free(lattice);
        }
    }

    #[test]
    fn evaluate_discrete_and_infeasible_status() {
        unsafe {
            let pref = eqlaw_pref_mean_variance(2.0);
            let pts = [1.0, 2.0];
            let w = [0.5, 0.5];
            let mut out = f64::NAN;
            let status = eqlaw_pref_evaluate_discrete(pref, pts.as_ptr(), w.as_ptr(), 2, &mut out);
            assert_eq!(status, EqlawStatus::Ok);
            // mean 1.5, variance 0.25 -> 1.5 - 0.25 = 1.25
            assert!((out - 1.25).abs() < 1e-12);
            let status =
                eqlaw_pref_evaluate_discrete(pref, std::ptr::null(), w.as_ptr(), 2, &mut out);
            assert_eq!(status, EqlawStatus::NullPointer);
            eqlaw_pref_free(pref);
        }
    }
}
