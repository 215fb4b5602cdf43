//! Preference functionals on laws of terminal wealth.
//!
//! Six families are implemented:
//!
//! - `mixed_crra`: the certainty equivalent `g` implicitly defined by
//!   `E[F(X / g)] = 0` with `F` a finite mixture of power/log utilities;
//! - `cara`: the certainty equivalent defined by `E[F(X - g)] = 0` with `F`
//!   a finite mixture of exponential utilities;
//! - `weighted_utility`: `g = E[X^{1-rho+gamma}] / ((1-rho) E[X^gamma])`,
//!   reported in utility scale;
//! - `mean_variance`: `g = E[X] - (gamma/2) Var[X]`;
//! - `rdu`: rank-dependent utility with a probability distortion, evaluated
//!   exactly on discrete laws by layer summation;
//! - `expected_utility`: plain linear `g = E[U_gamma(X)]`.
//!
//! Each family exposes its measure derivative `grad`, the pointwise
//! derivative `grad_x` of that derivative, and the `(m0, m1)` certificate
//! pair that bounds `g(law1) - g(law0)` by the linearization around `law0`.

use crate::error::{Error, Result};
use crate::laws::{self, Law, QuadratureRule};

/// Default band parameter for mixed power exponents: every exponent must lie
/// in `(-1/eps0, 1 - eps0)`.
pub const DEFAULT_EPS0: f64 = 0.05;

// ---------------------------------------------------------------------------
// Family parameter blocks
// ---------------------------------------------------------------------------

/// Finite mixture of CRRA utilities `U_gamma` generating the implicit
/// betweenness certainty equivalent on (0, inf).
#[derive(Debug, Clone)]
pub struct MixedCrra {
    atoms: Vec<(f64, f64)>, // (gamma, weight)
    eps0: f64,
}

impl MixedCrra {
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        Self::with_band(atoms, DEFAULT_EPS0)
    }

    pub fn with_band(atoms: Vec<(f64, f64)>, eps0: f64) -> Result<Self> {
        if !(eps0 > 0.0 && eps0 < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "eps0 {eps0} must lie in (0, 1)"
            )));
        }
        validate_mixture_weights(&atoms)?;
        for &(g, _) in &atoms {
            if !(g > -1.0 / eps0 && g < 1.0 - eps0) {
                return Err(Error::InvalidParameter(format!(
                    "exponent {g} outside the admissible band ({}, {})",
                    -1.0 / eps0,
                    1.0 - eps0
                )));
            }
        }
        Ok(MixedCrra { atoms, eps0 })
    }

    pub fn dirac(gamma: f64) -> Result<Self> {
        Self::new(vec![(gamma, 1.0)])
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn eps0(&self) -> f64 {
        self.eps0
    }

    /// F(x) = sum_i w_i U_{gamma_i}(x), x > 0.
    pub fn f(&self, x: f64) -> f64 {
        self.atoms
            .iter()
            .map(|&(g, w)| w * power_utility(x, g))
            .sum()
    }

    /// F'(x) = sum_i w_i x^{gamma_i - 1}.
    pub fn f_prime(&self, x: f64) -> f64 {
        self.atoms.iter().map(|&(g, w)| w * x.powf(g - 1.0)).sum()
    }

    /// F''(x) = sum_i w_i (gamma_i - 1) x^{gamma_i - 2}.
    pub fn f_double_prime(&self, x: f64) -> f64 {
        self.atoms
            .iter()
            .map(|&(g, w)| w * (g - 1.0) * x.powf(g - 2.0))
            .sum()
    }
}

/// Finite mixture of CARA utilities `1 - e^{-rho x}` generating the implicit
/// translation-invariant certainty equivalent on the real line.
#[derive(Debug, Clone)]
pub struct CaraMix {
    atoms: Vec<(f64, f64)>, // (rho, weight)
}

impl CaraMix {
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        validate_mixture_weights(&atoms)?;
        for &(r, _) in &atoms {
            if r <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "absolute risk aversion {r} must be strictly positive"
                )));
            }
        }
        Ok(CaraMix { atoms })
    }

    pub fn dirac(rho: f64) -> Result<Self> {
        Self::new(vec![(rho, 1.0)])
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn rho_bounds(&self) -> (f64, f64) {
        let lo = self
            .atoms
            .iter()
            .map(|&(r, _)| r)
            .fold(f64::INFINITY, f64::min);
        let hi = self.atoms.iter().map(|&(r, _)| r).fold(0.0_f64, f64::max);
        (lo, hi)
    }

    pub fn f(&self, x: f64) -> f64 {
        self.atoms
            .iter()
            .map(|&(r, w)| w * (1.0 - (-r * x).exp()))
            .sum()
    }

    pub fn f_prime(&self, x: f64) -> f64 {
        self.atoms
            .iter()
            .map(|&(r, w)| w * r * (-r * x).exp())
            .sum()
    }

    pub fn f_double_prime(&self, x: f64) -> f64 {
        self.atoms
            .iter()
            .map(|&(r, w)| -w * r * r * (-r * x).exp())
            .sum()
    }
}

/// Probability distortion for rank-dependent utility. The time argument is
/// carried for time-dependent distortions; the built-in families are constant
/// in time.
#[derive(Debug, Clone)]
pub enum Distortion {
    Identity,
    /// w(p) = p^theta, theta > 0.
    Power {
        theta: f64,
    },
}

impl Distortion {
    pub fn w(&self, _t: f64, p: f64) -> f64 {
        match self {
            Distortion::Identity => p,
            Distortion::Power { theta } => p.powf(*theta),
        }
    }

    /// Partial derivative of the distortion in its probability argument.
    pub fn w_p(&self, _t: f64, p: f64) -> f64 {
        match self {
            Distortion::Identity => 1.0,
            Distortion::Power { theta } => theta * p.powf(theta - 1.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Rdu {
    /// CRRA exponent of the utility function, < 1.
    pub alpha: f64,
    pub distortion: Distortion,
}

impl Rdu {
    pub fn new(alpha: f64, distortion: Distortion) -> Result<Self> {
        if alpha >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "rdu utility exponent {alpha} must be < 1"
            )));
        }
        Ok(Rdu { alpha, distortion })
    }

    pub fn utility(&self, x: f64) -> f64 {
        power_utility(x, self.alpha)
    }

    pub fn utility_prime(&self, x: f64) -> f64 {
        x.powf(self.alpha - 1.0)
    }
}

// ---------------------------------------------------------------------------
// Preference
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum Preference {
    MixedCrra(MixedCrra),
    Cara(CaraMix),
    WeightedUtility { gamma: f64, rho: f64 },
    MeanVariance { gamma_mv: f64 },
    Rdu(Rdu),
    ExpectedUtility { gamma: f64 },
}

/// Unit of a preference value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueScale {
    /// Wealth units; `g(dirac(x)) = x`.
    CertaintyEquivalent,
    /// Utility units of the family's representation.
    Utility,
}

#[derive(Debug, Clone, Copy)]
pub struct PreferenceValue {
    pub value: f64,
    pub scale: ValueScale,
}

#[derive(Debug, Clone, Copy)]
pub struct Certificate {
    pub m0: f64,
    pub m1: f64,
}

impl Preference {
    pub fn mixed_crra(atoms: Vec<(f64, f64)>) -> Result<Self> {
        Ok(Preference::MixedCrra(MixedCrra::new(atoms)?))
    }

    pub fn crra_dirac(gamma: f64) -> Result<Self> {
        Ok(Preference::MixedCrra(MixedCrra::dirac(gamma)?))
    }

    pub fn cara(atoms: Vec<(f64, f64)>) -> Result<Self> {
        Ok(Preference::Cara(CaraMix::new(atoms)?))
    }

    pub fn cara_dirac(rho: f64) -> Result<Self> {
        Ok(Preference::Cara(CaraMix::dirac(rho)?))
    }

    pub fn weighted_utility(gamma: f64, rho: f64) -> Result<Self> {
        if !(-1.0 < gamma && gamma <= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "weighted utility needs -1 < gamma <= 0, got {gamma}"
            )));
        }
        if !(gamma <= rho && rho < gamma + 1.0) {
            return Err(Error::InvalidParameter(format!(
                "weighted utility needs gamma <= rho < gamma + 1, got rho {rho}"
            )));
        }
        Ok(Preference::WeightedUtility { gamma, rho })
    }

    pub fn mean_variance(gamma_mv: f64) -> Result<Self> {
        if gamma_mv <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "mean-variance risk aversion {gamma_mv} must be > 0"
            )));
        }
        Ok(Preference::MeanVariance { gamma_mv })
    }

    pub fn rdu(alpha: f64, distortion: Distortion) -> Result<Self> {
        Ok(Preference::Rdu(Rdu::new(alpha, distortion)?))
    }

    pub fn expected_utility(gamma: f64) -> Result<Self> {
        if gamma >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "eu exponent {gamma} must be < 1"
            )));
        }
        Ok(Preference::ExpectedUtility { gamma })
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            Preference::MixedCrra(_) => "mixed_crra",
            Preference::Cara(_) => "cara",
            Preference::WeightedUtility { .. } => "weighted_utility",
            Preference::MeanVariance { .. } => "mean_variance",
            Preference::Rdu(_) => "rdu",
            Preference::ExpectedUtility { .. } => "expected_utility",
        }
    }

    pub fn value_scale(&self) -> ValueScale {
        match self {
            Preference::MixedCrra(_) | Preference::Cara(_) => ValueScale::CertaintyEquivalent,
            _ => ValueScale::Utility,
        }
    }

    /// Check that `law` lies in the family's admissible set. Moment
    /// requirements are probed at quadrature precision, not symbolically.
    pub fn law_in_domain(&self, law: &Law, rule: &QuadratureRule) -> Result<()> {
        match self {
            Preference::MixedCrra(mix) => {
                require_positive(law)?;
                let probe = law.expect_with(rule, |x| x + x.powf(-1.0 / mix.eps0))?;
                if !probe.is_finite() {
                    return Err(Error::LawOutsideDomain(
                        "moments x and x^{-1/eps0} must be finite".into(),
                    ));
                }
                Ok(())
            }
            Preference::Cara(cara) => {
                let (_, rho_hi) = cara.rho_bounds();
                let probe = law.expect_with(rule, |x| (-rho_hi * x).exp())?;
                if !probe.is_finite() {
                    return Err(Error::LawOutsideDomain(
                        "exponential moment e^{-rho X} must be finite".into(),
                    ));
                }
                Ok(())
            }
            Preference::WeightedUtility { gamma, rho } => {
                require_positive(law)?;
                let r2 = 1.0 - rho + gamma;
                let probe = law.expect_with(rule, |x| x.powf(*gamma) + x.powf(r2))?;
                if !probe.is_finite() {
                    return Err(Error::LawOutsideDomain(
                        "moments x^gamma and x^{1-rho+gamma} must be finite".into(),
                    ));
                }
                Ok(())
            }
            Preference::MeanVariance { .. } => {
                let probe = law.expect_with(rule, |x| x * x)?;
                if !probe.is_finite() {
                    return Err(Error::LawOutsideDomain(
                        "second moment must be finite".into(),
                    ));
                }
                Ok(())
            }
            Preference::Rdu(_) => {
                require_positive(law)?;
                if !law.is_discrete() {
                    return Err(Error::LawOutsideDomain(
                        "rdu evaluation is exact on discrete laws only; discretize first".into(),
                    ));
                }
                Ok(())
            }
            Preference::ExpectedUtility { .. } => {
                require_positive(law)?;
                Ok(())
            }
        }
    }
}

fn require_positive(law: &Law) -> Result<()> {
    if law.is_positive() {
        Ok(())
    } else {
        Err(Error::LawOutsideDomain(
            "law must be supported on (0, inf)".into(),
        ))
    }
}

fn validate_mixture_weights(atoms: &[(f64, f64)]) -> Result<()> {
    if atoms.is_empty() {
        return Err(Error::InvalidParameter(
            "mixture needs at least one atom".into(),
        ));
    }
    let mut total = 0.0;
    for &(_, w) in atoms {
        if w <= 0.0 || !w.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "mixture weight {w} must be > 0"
            )));
        }
        total += w;
    }
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "mixture weights sum to {total}, expected 1 within 1e-12"
        )));
    }
    Ok(())
}

/// CRRA utility: `(x^g - 1)/g` for `g != 0`, `log x` for `g = 0`.
pub fn power_utility(x: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        x.ln()
    } else {
        (x.powf(gamma) - 1.0) / gamma
    }
}

// ---------------------------------------------------------------------------
// evaluate / grad / grad_x / certificate
// ---------------------------------------------------------------------------

const ROOT_TOL: f64 = 1e-13;

/// Preference value of a law at the default quadrature order.
pub fn evaluate(pref: &Preference, law: &Law) -> Result<f64> {
    evaluate_with(pref, law, laws::default_rule())
}

pub fn evaluate_scaled(pref: &Preference, law: &Law) -> Result<PreferenceValue> {
    Ok(PreferenceValue {
        value: evaluate(pref, law)?,
        scale: pref.value_scale(),
    })
}

pub fn evaluate_with(pref: &Preference, law: &Law, rule: &QuadratureRule) -> Result<f64> {
    pref.law_in_domain(law, rule)?;
    match pref {
        Preference::MixedCrra(mix) => {
            let anchor = law.expect_with(rule, |x| x.ln())?.exp();
            laws::solve_with_expansion(
                |z| law.expect_with(rule, |x| mix.f(x / z)).unwrap_or(f64::NAN),
                anchor,
                0.0,
                ROOT_TOL,
            )
        }
        Preference::Cara(cara) => {
            let anchor = law.mean()?;
            laws::solve_with_expansion(
                |z| law.expect_with(rule, |x| cara.f(x - z)).unwrap_or(f64::NAN),
                anchor,
                f64::NEG_INFINITY,
                ROOT_TOL,
            )
        }
        Preference::WeightedUtility { gamma, rho } => {
            let r2 = 1.0 - rho + gamma;
            let num = law.expect_with(rule, |x| x.powf(r2))?;
            let den = law.expect_with(rule, |x| x.powf(*gamma))?;
            if den <= 0.0 {
                return Err(Error::LawOutsideDomain(format!(
                    "E[x^gamma] = {den} not positive"
                )));
            }
            Ok(num / ((1.0 - rho) * den))
        }
        Preference::MeanVariance { gamma_mv } => {
            let m = law.expect_with(rule, |x| x)?;
            let m2 = law.expect_with(rule, |x| x * x)?;
            Ok(m - 0.5 * gamma_mv * (m2 - m * m))
        }
        Preference::Rdu(rdu) => evaluate_rdu(rdu, law, 0.0),
        Preference::ExpectedUtility { gamma } => {
            law.expect_with(rule, |x| power_utility(x, *gamma))
        }
    }
}

/// Convert a weighted-utility value from utility scale to wealth units.
pub fn wu_certainty_equivalent(rho: f64, utility_value: f64) -> f64 {
    ((1.0 - rho) * utility_value).powf(1.0 / (1.0 - rho))
}

fn evaluate_rdu(rdu: &Rdu, law: &Law, t: f64) -> Result<f64> {
    let pts = sorted_points(law)?;
    // Layer sum over utility levels: g = sum_i u_i [w(P_i) - w(P_{i+1})]
    // with P_i the tail probability at and above the i-th sorted point.
    let mut tail = 1.0;
    let mut g = 0.0;
    for &(x, w) in &pts {
        let next_tail = (tail - w).max(0.0);
        g += rdu.utility(x) * (rdu.distortion.w(t, tail) - rdu.distortion.w(t, next_tail));
        tail = next_tail;
    }
    Ok(g)
}

fn sorted_points(law: &Law) -> Result<Vec<(f64, f64)>> {
    match law.kind() {
        laws::LawKind::Discrete(pts) => {
            let mut v = pts.clone();
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
            Ok(v)
        }
        _ => Err(Error::LawOutsideDomain("discrete law required".into())),
    }
}

/// Measure derivative `grad g(law, x)` of the preference functional.
pub fn grad(pref: &Preference, law: &Law, x: f64) -> Result<f64> {
    grad_with(pref, law, x, laws::default_rule())
}

pub fn grad_with(pref: &Preference, law: &Law, x: f64, rule: &QuadratureRule) -> Result<f64> {
    match pref {
        Preference::MixedCrra(mix) => {
            let g = evaluate_with(pref, law, rule)?;
            let den = law.expect_with(rule, |y| y * mix.f_prime(y / g))?;
            if den <= 0.0 {
                return Err(Error::LawOutsideDomain(format!(
                    "gradient denominator E[y F'(y/g)] = {den} not positive"
                )));
            }
            Ok(mix.f(x / g) * g * g / den)
        }
        Preference::Cara(cara) => {
            let g = evaluate_with(pref, law, rule)?;
            let den = law.expect_with(rule, |y| cara.f_prime(y - g))?;
            if den <= 0.0 {
                return Err(Error::LawOutsideDomain(format!(
                    "gradient denominator E[F'(y-g)] = {den} not positive"
                )));
            }
            Ok(cara.f(x - g) / den)
        }
        Preference::WeightedUtility { gamma, rho } => {
            let r2 = 1.0 - rho + gamma;
            let m1 = law.expect_with(rule, |y| y.powf(*gamma))?;
            let m2 = law.expect_with(rule, |y| y.powf(r2))?;
            if m1 <= 0.0 {
                return Err(Error::LawOutsideDomain(format!(
                    "E[x^gamma] = {m1} not positive"
                )));
            }
            Ok((x.powf(r2) * m1 - x.powf(*gamma) * m2) / ((1.0 - rho) * m1 * m1))
        }
        Preference::MeanVariance { gamma_mv } => {
            let m = law.expect_with(rule, |y| y)?;
            Ok(x - 0.5 * gamma_mv * x * x + gamma_mv * m * x)
        }
        Preference::Rdu(rdu) => grad_rdu(rdu, law, x, 0.0),
        Preference::ExpectedUtility { gamma } => Ok(power_utility(x, *gamma)),
    }
}

/// Layer integral of the distorted tail, anchored at the lowest utility
/// level of the law's support (the anchor shifts `grad` by a constant, which
/// cancels in every pairing against a difference of probability laws).
fn grad_rdu(rdu: &Rdu, law: &Law, x: f64, t: f64) -> Result<f64> {
    let pts = sorted_points(law)?;
    let ux = rdu.utility(x);
    let u0 = rdu.utility(pts[0].0);
    let mut acc = 0.0;
    // Tail probability strictly above the current utility level.
    let mut tail = 1.0;
    let mut lo = u0;
    for (i, &(p, w)) in pts.iter().enumerate() {
        let _ = p;
        tail -= w;
        let hi = if i + 1 < pts.len() {
            rdu.utility(pts[i + 1].0)
        } else {
            f64::INFINITY
        };
        // Layer [lo, hi) has distorted density w_p(tail).
        if ux <= lo {
            break;
        }
        let upper = ux.min(hi);
        acc += rdu.distortion.w_p(t, tail.max(0.0)) * (upper - lo);
        if !hi.is_finite() {
            break;
        }
        lo = hi;
    }
    if ux < u0 {
        acc = rdu.distortion.w_p(t, 1.0) * (ux - u0);
    }
    Ok(acc)
}

/// Pointwise derivative in `x` of the measure derivative.
pub fn grad_x(pref: &Preference, law: &Law, x: f64) -> Result<f64> {
    grad_x_with(pref, law, x, laws::default_rule())
}

pub fn grad_x_with(pref: &Preference, law: &Law, x: f64, rule: &QuadratureRule) -> Result<f64> {
    match pref {
        Preference::MixedCrra(mix) => {
            let g = evaluate_with(pref, law, rule)?;
            let den = law.expect_with(rule, |y| y * mix.f_prime(y / g))?;
            if den <= 0.0 {
                return Err(Error::LawOutsideDomain(format!(
                    "gradient denominator E[y F'(y/g)] = {den} not positive"
                )));
            }
            Ok(mix.f_prime(x / g) * g / den)
        }
        Preference::Cara(cara) => {
            let g = evaluate_with(pref, law, rule)?;
            let den = law.expect_with(rule, |y| cara.f_prime(y - g))?;
            if den <= 0.0 {
                return Err(Error::LawOutsideDomain(format!(
                    "gradient denominator E[F'(y-g)] = {den} not positive"
                )));
            }
            Ok(cara.f_prime(x - g) / den)
        }
        Preference::WeightedUtility { gamma, rho } => {
            let r1 = *gamma;
            let r2 = 1.0 - rho + gamma;
            let m1 = law.expect_with(rule, |y| y.powf(r1))?;
            let m2 = law.expect_with(rule, |y| y.powf(r2))?;
            if m1 <= 0.0 {
                return Err(Error::LawOutsideDomain(format!(
                    "E[x^gamma] = {m1} not positive"
                )));
            }
            Ok((r2 * x.powf(r2 - 1.0) * m1 - r1 * x.powf(r1 - 1.0) * m2) / ((1.0 - rho) * m1 * m1))
        }
        Preference::MeanVariance { gamma_mv } => {
            let m = law.expect_with(rule, |y| y)?;
            Ok(1.0 - gamma_mv * x + gamma_mv * m)
        }
        Preference::Rdu(rdu) => {
            let pts = sorted_points(law)?;
            let tail: f64 = pts.iter().filter(|&&(p, _)| p > x).map(|&(_, w)| w).sum();
            Ok(rdu.distortion.w_p(0.0, tail) * rdu.utility_prime(x))
        }
        Preference::ExpectedUtility { gamma } => Ok(x.powf(gamma - 1.0)),
    }
}

/// Certificate pair `(m0, m1)` such that
/// `g(law1) - g(law0) <= m1 * <grad g(law0, .), law1 - law0> + m0`.
pub fn certificate(pref: &Preference, law0: &Law, law1: &Law) -> Result<Certificate> {
    certificate_with(pref, law0, law1, laws::default_rule())
}

pub fn certificate_with(
    pref: &Preference,
    law0: &Law,
    law1: &Law,
    rule: &QuadratureRule,
) -> Result<Certificate> {
    match pref {
        Preference::MixedCrra(mix) => {
            let g0 = evaluate_with(pref, law0, rule)?;
            let g1 = evaluate_with(pref, law1, rule)?;
            let d0 = law0.expect_with(rule, |x| x * mix.f_prime(x / g0))?;
            let d1 = law1.expect_with(rule, |x| x * mix.f_prime(x / g0))?;
            if d0 <= 0.0 || d1 <= 0.0 {
                return Err(Error::LawOutsideDomain(
                    "certificate denominators must be positive".into(),
                ));
            }
            Ok(Certificate {
                m0: 0.0,
                m1: (g1 / g0) * (d0 / d1),
            })
        }
        Preference::Cara(cara) => {
            let g0 = evaluate_with(pref, law0, rule)?;
            let d0 = law0.expect_with(rule, |x| cara.f_prime(x - g0))?;
            let d1 = law1.expect_with(rule, |x| cara.f_prime(x - g0))?;
            if d0 <= 0.0 || d1 <= 0.0 {
                return Err(Error::LawOutsideDomain(
                    "certificate denominators must be positive".into(),
                ));
            }
            Ok(Certificate {
                m0: 0.0,
                m1: d0 / d1,
            })
        }
        Preference::WeightedUtility { gamma, .. } => {
            let d0 = law0.expect_with(rule, |x| x.powf(*gamma))?;
            let d1 = law1.expect_with(rule, |x| x.powf(*gamma))?;
            if d0 <= 0.0 || d1 <= 0.0 {
                return Err(Error::LawOutsideDomain(
                    "certificate denominators must be positive".into(),
                ));
            }
            Ok(Certificate {
                m0: 0.0,
                m1: d0 / d1,
            })
        }
        Preference::MeanVariance { gamma_mv } => {
            let dm = law1.expect_with(rule, |x| x)? - law0.expect_with(rule, |x| x)?;
            Ok(Certificate {
                m0: 0.5 * gamma_mv * dm * dm,
                m1: 1.0,
            })
        }
        Preference::ExpectedUtility { .. } => Ok(Certificate { m0: 0.0, m1: 1.0 }),
        Preference::Rdu(_) => Err(Error::UnsupportedPreference(
            "rdu carries no concavity certificate; its verification is out of scope".into(),
        )),
    }
}

/// Pair `grad g(law, .)` against the signed measure `law1 - law0`.
pub fn pair_gradient(pref: &Preference, law: &Law, law1: &Law, law0: &Law) -> Result<f64> {
    let mut acc = 0.0;
    for (sign, side) in [(1.0, law1), (-1.0, law0)] {
        match side.kind() {
            laws::LawKind::Discrete(pts) => {
                for &(x, w) in pts {
                    acc += sign * w * grad(pref, law, x)?;
                }
            }
            _ => {
                return Err(Error::InvalidParameter(
                    "gradient pairing requires discrete laws".into(),
                ))
            }
        }
    }
    Ok(acc)
}

/// Compare the finite-difference derivative of `s -> g(s law1 + (1-s) law0)`
/// against the gradient pairing at `grid` interior points; returns the
/// maximum absolute discrepancy.
pub fn check_gradient_fd(pref: &Preference, law0: &Law, law1: &Law, grid: usize) -> Result<f64> {
    if !law0.is_discrete() || !law1.is_discrete() {
        return Err(Error::InvalidParameter(
            "check_gradient_fd requires discrete laws".into(),
        ));
    }
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for k in 1..=grid {
        let s = k as f64 / (grid as f64 + 1.0);
        let up = evaluate(pref, &laws::mixture(law1, law0, s + h)?)?;
        let dn = evaluate(pref, &laws::mixture(law1, law0, s - h)?)?;
        let fd = (up - dn) / (2.0 * h);
        let mid = laws::mixture(law1, law0, s)?;
        let paired = pair_gradient(pref, &mid, law1, law0)?;
        worst = worst.max((fd - paired).abs());
    }
    Ok(worst)
}
