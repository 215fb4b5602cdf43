//! Probability laws on an interval plus the quadrature and root-finding
//! primitives the rest of the crate is built on.
//!
//! A [`Law`] is either a weighted discrete point set or an analytic
//! log-normal/normal descriptor. Expectations against analytic laws go
//! through probabilists' Gauss-Hermite quadrature; discrete laws are summed
//! exactly. Analytic laws are never discretized implicitly — use
//! [`Law::sample_discretize`] when a discrete stand-in is wanted.

use crate::error::{Error, Result};
use std::sync::OnceLock;

pub const DEFAULT_QUAD_ORDER: usize = 64;
pub const DEFAULT_ROOT_TOL: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Gauss-Hermite quadrature (probabilists' normalization)
// ---------------------------------------------------------------------------

/// Quadrature rule for expectations against the standard normal law:
/// `E[f(Z)] ~ sum_i w_i f(x_i)` with `sum w_i = 1` and nodes symmetric
/// about zero.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    order: usize,
}

impl QuadratureRule {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Expectation of `f` under the standard normal law.
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        let mut acc = 0.0;
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(x);
        }
        acc
    }

    /// Like [`integrate`](Self::integrate) but reports the abscissa of the
    /// first non-finite integrand value instead of propagating NaN.
    pub fn try_integrate(&self, mut f: impl FnMut(f64) -> f64) -> Result<f64> {
        let mut acc = 0.0;
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            let v = f(x);
            if !v.is_finite() {
                return Err(Error::NonFiniteEvaluation { at: x });
            }
            acc += w * v;
        }
        Ok(acc)
    }
}

/// Build the `order`-point probabilists' Gauss-Hermite rule.
///
/// Exact for polynomial moments of the standard normal up to degree
/// `2*order - 1`. Roots are found by Newton iteration on the orthonormal
/// (physicists') Hermite recurrence, then rescaled by `sqrt(2)`.
pub fn gauss_hermite(order: usize) -> Result<QuadratureRule> {
    if !(2..=256).contains(&order) {
        return Err(Error::QuadratureOrder { order });
    }
    let n = order;
    let mut nodes = vec![0.0_f64; n];
    let mut weights = vec![0.0_f64; n];

    // Orthonormal Hermite value at x along with its degree-(n-1) companion.
    let eval = |x: f64| -> (f64, f64) {
        let mut p_prev = 0.0_f64;
        let mut p = std::f64::consts::PI.powf(-0.25);
        for k in 0..n {
            let kf = k as f64;
            let p_next = x * (2.0 / (kf + 1.0)).sqrt() * p - (kf / (kf + 1.0)).sqrt() * p_prev;
            p_prev = p;
            p = p_next;
        }
        (p, p_prev)
    };

    let m = n.div_ceil(2);
    let mut x = 0.0_f64;
    for i in 0..m {
        // Stroud-Secrest style initial guesses, largest root first.
        x = match i {
            0 => {
                let a = (2.0 * n as f64 + 1.0).sqrt();
                a - 1.85575 * a.powf(-1.0 / 6.0)
            }
            1 => x - 1.14 * (n as f64).powf(0.426) / x,
            2 => 1.86 * x - 0.86 * nodes[0],
            3 => 1.91 * x - 0.91 * nodes[1],
            _ => 2.0 * x - nodes[i - 2],
        };
        for _ in 0..100 {
            let (p, p_lower) = eval(x);
            let dp = (2.0 * n as f64).sqrt() * p_lower;
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 * (1.0 + x.abs()) {
                break;
            }
        }
        let (_, p_lower) = eval(x);
        nodes[i] = x;
        weights[i] = 1.0 / (n as f64 * p_lower * p_lower);
    }
    // Mirror to the other half; the weight pattern is symmetric.
    for i in 0..m {
        nodes[n - 1 - i] = -nodes[i];
        weights[n - 1 - i] = weights[i];
    }
    if n % 2 == 1 {
        nodes[m - 1] = 0.0;
    }
    nodes.reverse();
    weights.reverse();

    // Rescale physicists' -> probabilists' and renormalize the weights so
    // they sum to one exactly (kills O(eps) drift at high order).
    let sqrt2 = std::f64::consts::SQRT_2;
    for node in nodes.iter_mut() {
        *node *= sqrt2;
    }
    let total: f64 = weights.iter().sum::<f64>() * std::f64::consts::PI.sqrt().recip();
    for w in weights.iter_mut() {
        *w *= std::f64::consts::PI.sqrt().recip() / total;
    }

    Ok(QuadratureRule {
        nodes,
        weights,
        order: n,
    })
}

/// Shared default rule (order 64), built once.
pub fn default_rule() -> &'static QuadratureRule {
    static RULE: OnceLock<QuadratureRule> = OnceLock::new();
    RULE.get_or_init(|| gauss_hermite(DEFAULT_QUAD_ORDER).expect("default order is valid"))
}

// ---------------------------------------------------------------------------
// Law
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Support {
    /// The positive half-line (0, inf).
    Positive,
    /// The whole real line.
    Real,
}

#[derive(Debug, Clone)]
pub enum LawKind {
    /// Weighted point set; weights strictly positive, summing to one.
    Discrete(Vec<(f64, f64)>),
    /// log X ~ N(mean_log, var_log).
    LogNormal { mean_log: f64, var_log: f64 },
    /// X ~ N(mean, var).
    Normal { mean: f64, var: f64 },
}

#[derive(Debug, Clone)]
pub struct Law {
    support: Support,
    kind: LawKind,
}

impl Law {
    pub fn discrete(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidParameter(
                "discrete law needs at least one point".into(),
            ));
        }
        let mut total = 0.0;
        let mut positive = true;
        for &(x, w) in &points {
            if !x.is_finite() || !w.is_finite() {
                return Err(Error::InvalidParameter("non-finite point or weight".into()));
            }
            if w <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "discrete weight {w} at point {x} must be strictly positive"
                )));
            }
            if x <= 0.0 {
                positive = false;
            }
            total += w;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "discrete weights sum to {total}, expected 1 within 1e-12"
            )));
        }
        Ok(Law {
            support: if positive {
                Support::Positive
            } else {
                Support::Real
            },
            kind: LawKind::Discrete(points),
        })
    }

    /// Point mass at `x`.
    pub fn dirac(x: f64) -> Self {
        Law {
            support: if x > 0.0 {
                Support::Positive
            } else {
                Support::Real
            },
            kind: LawKind::Discrete(vec![(x, 1.0)]),
        }
    }

    pub fn lognormal(mean_log: f64, var_log: f64) -> Result<Self> {
        if !mean_log.is_finite() || !var_log.is_finite() || var_log < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "lognormal requires finite mean_log and var_log >= 0, got ({mean_log}, {var_log})"
            )));
        }
        Ok(Law {
            support: Support::Positive,
            kind: LawKind::LogNormal { mean_log, var_log },
        })
    }

    pub fn normal(mean: f64, var: f64) -> Result<Self> {
        if !mean.is_finite() || !var.is_finite() || var < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "normal requires finite mean and var >= 0, got ({mean}, {var})"
            )));
        }
        Ok(Law {
            support: Support::Real,
            kind: LawKind::Normal { mean, var },
        })
    }

    pub fn support(&self) -> Support {
        self.support
    }

    pub fn kind(&self) -> &LawKind {
        &self.kind
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.kind, LawKind::Discrete(_))
    }

    /// All mass strictly on (0, inf)?
    pub fn is_positive(&self) -> bool {
        match &self.kind {
            LawKind::Discrete(pts) => pts.iter().all(|&(x, _)| x > 0.0),
            LawKind::LogNormal { .. } => true,
            LawKind::Normal { var, mean } => *var == 0.0 && *mean > 0.0,
        }
    }

    /// Expectation of `f` with an explicit quadrature rule for analytic kinds.
    pub fn expect_with(&self, rule: &QuadratureRule, mut f: impl FnMut(f64) -> f64) -> Result<f64> {
        match &self.kind {
            LawKind::Discrete(pts) => {
                let mut acc = 0.0;
                for &(x, w) in pts {
                    let v = f(x);
                    if !v.is_finite() {
                        return Err(Error::NonFiniteEvaluation { at: x });
                    }
                    acc += w * v;
                }
                Ok(acc)
            }
            LawKind::LogNormal { mean_log, var_log } => {
                let s = var_log.sqrt();
                rule.try_integrate(|z| f((mean_log + s * z).exp()))
            }
            LawKind::Normal { mean, var } => {
                let s = var.sqrt();
                rule.try_integrate(|z| f(mean + s * z))
            }
        }
    }

    /// Expectation of `f` at the default quadrature order.
    pub fn expect(&self, f: impl FnMut(f64) -> f64) -> Result<f64> {
        self.expect_with(default_rule(), f)
    }

    pub fn mean(&self) -> Result<f64> {
        match &self.kind {
            LawKind::Discrete(_) => self.expect(|x| x),
            LawKind::LogNormal { mean_log, var_log } => Ok((mean_log + 0.5 * var_log).exp()),
            LawKind::Normal { mean, .. } => Ok(*mean),
        }
    }

    pub fn variance(&self) -> Result<f64> {
        match &self.kind {
            LawKind::Discrete(_) => {
                let m = self.mean()?;
                self.expect(|x| (x - m) * (x - m))
            }
            LawKind::LogNormal { mean_log, var_log } => {
                let m2 = (2.0 * mean_log + 2.0 * var_log).exp();
                let m = (mean_log + 0.5 * var_log).exp();
                Ok(m2 - m * m)
            }
            LawKind::Normal { var, .. } => Ok(*var),
        }
    }

    /// Law of `lambda * X`, `lambda > 0`.
    pub fn scale(&self, lambda: f64) -> Result<Law> {
        if lambda <= 0.0 || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "scale factor {lambda} must be > 0"
            )));
        }
        let kind = match &self.kind {
            LawKind::Discrete(pts) => {
                LawKind::Discrete(pts.iter().map(|&(x, w)| (lambda * x, w)).collect())
            }
            LawKind::LogNormal { mean_log, var_log } => LawKind::LogNormal {
                mean_log: mean_log + lambda.ln(),
                var_log: *var_log,
            },
            LawKind::Normal { mean, var } => LawKind::Normal {
                mean: lambda * mean,
                var: lambda * lambda * var,
            },
        };
        Ok(Law {
            support: self.support,
            kind,
        })
    }

    /// Law of `X + c`. Not available for the log-normal kind (the shifted law
    /// leaves the family); discretize first.
    pub fn shift(&self, c: f64) -> Result<Law> {
        match &self.kind {
            LawKind::Discrete(pts) => Law::discrete(pts.iter().map(|&(x, w)| (x + c, w)).collect()),
            LawKind::Normal { mean, var } => Law::normal(mean + c, *var),
            LawKind::LogNormal { .. } => Err(Error::InvalidParameter(
                "shift of a log-normal law leaves the family; discretize explicitly".into(),
            )),
        }
    }

    /// Explicit conversion of an analytic law to a weighted point set on the
    /// Gauss-Hermite nodes of the given order. Discrete laws pass through.
    pub fn sample_discretize(&self, order: usize) -> Result<Law> {
        match &self.kind {
            LawKind::Discrete(_) => Ok(self.clone()),
            LawKind::LogNormal { mean_log, var_log } => {
                let rule = gauss_hermite(order)?;
                let s = var_log.sqrt();
                let pts = rule
                    .nodes()
                    .iter()
                    .zip(rule.weights())
                    .map(|(&z, &w)| ((mean_log + s * z).exp(), w))
                    .collect();
                Law::discrete(pts)
            }
            LawKind::Normal { mean, var } => {
                let rule = gauss_hermite(order)?;
                let s = var.sqrt();
                let pts = rule
                    .nodes()
                    .iter()
                    .zip(rule.weights())
                    .map(|(&z, &w)| (mean + s * z, w))
                    .collect();
                Law::discrete(pts)
            }
        }
    }
}

/// Convex combination `s * a + (1 - s) * b` of two discrete laws.
pub fn mixture(a: &Law, b: &Law, s: f64) -> Result<Law> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::InvalidParameter(format!(
            "mixture weight {s} outside [0, 1]"
        )));
    }
    let (pa, pb) = match (&a.kind, &b.kind) {
        (LawKind::Discrete(pa), LawKind::Discrete(pb)) => (pa, pb),
        _ => {
            return Err(Error::InvalidParameter(
                "mixture requires discrete laws; discretize analytic laws first".into(),
            ))
        }
    };
    if s == 0.0 {
        return Ok(b.clone());
    }
    if s == 1.0 {
        return Ok(a.clone());
    }
    let mut pts = Vec::with_capacity(pa.len() + pb.len());
    pts.extend(pa.iter().map(|&(x, w)| (x, s * w)));
    pts.extend(pb.iter().map(|&(x, w)| (x, (1.0 - s) * w)));
    Law::discrete(pts)
}

// ---------------------------------------------------------------------------
// Root finding
// ---------------------------------------------------------------------------

/// Find the root of a strictly monotone `f` on `[lo, hi]` by Brent's method.
///
/// Stops when `|f| <= tol` or the bracket width drops below
/// `tol * max(1, |z|)`. The bracket must straddle the root.
pub fn solve_monotone_root(
    mut f: impl FnMut(f64) -> f64,
    bracket: (f64, f64),
    tol: f64,
) -> Result<f64> {
    let (mut a, mut b) = bracket;
    if a > b {
        std::mem::swap(&mut a, &mut b);
    }
    let mut fa = f(a);
    let mut fb = f(b);
    if !fa.is_finite() {
        return Err(Error::NonFiniteEvaluation { at: a });
    }
    if !fb.is_finite() {
        return Err(Error::NonFiniteEvaluation { at: b });
    }
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::NoSignChange {
            lo: a,
            hi: b,
            f_lo: fa,
            f_hi: fb,
        });
    }

    // Brent: inverse quadratic / secant steps guarded by bisection.
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if fb.abs() > fc.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let xtol = 0.5 * tol * b.abs().max(1.0);
        let xm = 0.5 * (c - b);
        if fb.abs() <= tol || xm.abs() <= xtol {
            return Ok(b);
        }
        if e.abs() >= xtol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q) = if a == c {
                (2.0 * xm * s, 1.0 - s)
            } else {
                let q0 = fa / fc;
                let r = fb / fc;
                (
                    s * (2.0 * xm * q0 * (q0 - r) - (b - a) * (r - 1.0)),
                    (q0 - 1.0) * (r - 1.0) * (s - 1.0),
                )
            };
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            if 2.0 * p < (3.0 * xm * q - (xtol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > xtol {
            d
        } else {
            xtol * xm.signum()
        };
        fb = f(b);
        if !fb.is_finite() {
            return Err(Error::NonFiniteEvaluation { at: b });
        }
        if fb == 0.0 {
            return Ok(b);
        }
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
    }
    Ok(b)
}

/// Expand a bracket geometrically (factor 2, up to 60 steps) around `x0`
/// until `f` changes sign, then solve. `floor` bounds the domain from below
/// (use 0 for functions defined on the positive half-line, -inf otherwise).
pub fn solve_with_expansion(
    mut f: impl FnMut(f64) -> f64,
    x0: f64,
    floor: f64,
    tol: f64,
) -> Result<f64> {
    let bounded = floor.is_finite();
    if bounded && x0 <= floor {
        return Err(Error::InvalidParameter(format!(
            "expansion start {x0} must lie above the domain floor {floor}"
        )));
    }
    let scale = x0.abs().max(1.0);
    let mut lo = if bounded {
        floor + 0.5 * (x0 - floor)
    } else {
        x0 - 0.5 * scale
    };
    let mut hi = x0 + 0.5 * scale;
    let mut f_lo = f(lo);
    let mut f_hi = f(hi);
    if !f_lo.is_finite() {
        return Err(Error::NonFiniteEvaluation { at: lo });
    }
    if !f_hi.is_finite() {
        return Err(Error::NonFiniteEvaluation { at: hi });
    }
    for _ in 0..60 {
        if f_lo.signum() != f_hi.signum() || f_lo == 0.0 || f_hi == 0.0 {
            return solve_monotone_root(f, (lo, hi), tol);
        }
        lo = if bounded {
            floor + 0.5 * (lo - floor)
        } else {
            x0 - 2.0 * (x0 - lo)
        };
        hi = x0 + 2.0 * (hi - x0);
        f_lo = f(lo);
        f_hi = f(hi);
        if !f_lo.is_finite() {
            return Err(Error::NonFiniteEvaluation { at: lo });
        }
        if !f_hi.is_finite() {
            return Err(Error::NonFiniteEvaluation { at: hi });
        }
    }
    Err(Error::BracketExpansionFailed { x0, steps: 60 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_rule_is_plus_minus_one() {
        let rule = gauss_hermite(2).unwrap();
        assert!((rule.nodes()[0] + 1.0).abs() < 1e-14);
        assert!((rule.nodes()[1] - 1.0).abs() < 1e-14);
        assert!((rule.weights()[0] - 0.5).abs() < 1e-14);
        assert!((rule.weights()[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn order_bounds_enforced() {
        assert!(gauss_hermite(1).is_err());
        assert!(gauss_hermite(257).is_err());
        assert!(gauss_hermite(256).is_ok());
    }

    #[test]
    fn second_moment_exact_at_order_64() {
        let rule = gauss_hermite(64).unwrap();
        assert!((rule.integrate(|x| x * x) - 1.0).abs() < 1e-12);
        assert!(rule.integrate(|x| x).abs() < 1e-13);
        let w: f64 = rule.weights().iter().sum();
        assert!((w - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mgf_matches_closed_form() {
        // E[e^{0.3 Z}] = e^{0.045}
        let rule = gauss_hermite(64).unwrap();
        let got = rule.integrate(|x| (0.3 * x).exp());
        assert!((got - 0.045_f64.exp()).abs() < 1e-10);
    }

    #[test]
    fn polynomial_exactness_high_degree() {
        // E[Z^10] = 9!! = 945 must be exact for order >= 6.
        let rule = gauss_hermite(8).unwrap();
        assert!((rule.integrate(|x| x.powi(10)) - 945.0).abs() < 1e-9);
    }

    #[test]
    fn discrete_expectations_are_exact_sums() {
        let law = Law::discrete(vec![(1.0, 0.5), (3.0, 0.5)]).unwrap();
        assert_eq!(law.expect(|x| x).unwrap(), 2.0);
    }

    #[test]
    fn lognormal_moment_formula() {
        // E[X^g] = e^{g^2 y / 2} for X lognormal(0, y).
        let law = Law::lognormal(0.0, 0.16).unwrap();
        let g = -0.5;
        let got = law.expect(|x| x.powf(g)).unwrap();
        assert!((got - (g * g * 0.16_f64 / 2.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn degenerate_lognormal_is_dirac_at_one() {
        let law = Law::lognormal(0.0, 0.0).unwrap();
        let got = law.expect(|x| x.sin() + 3.0 * x).unwrap();
        assert!((got - (1.0_f64.sin() + 3.0)).abs() < 1e-14);
    }

    #[test]
    fn quadrature_convergence_under_order_doubling() {
        // Doubling the order moves lognormal moments by < 1e-10.
        for &(g, y) in &[(2.0, 4.0), (-2.0, 4.0), (1.5, 1.0), (-0.7, 0.25)] {
            let law = Law::lognormal(0.0, y).unwrap();
            let lo = law
                .expect_with(&gauss_hermite(64).unwrap(), |x: f64| x.powf(g))
                .unwrap();
            let hi = law
                .expect_with(&gauss_hermite(128).unwrap(), |x: f64| x.powf(g))
                .unwrap();
            assert!(
                (lo - hi).abs() / hi.abs().max(1.0) < 1e-10,
                "order doubling moved moment g={g} y={y}: {lo} vs {hi}"
            );
        }
    }

    #[test]
    fn mixture_definition() {
        let a = Law::discrete(vec![(1.0, 1.0)]).unwrap();
        let b = Law::discrete(vec![(2.0, 1.0)]).unwrap();
        let m = mixture(&a, &b, 0.25).unwrap();
        match m.kind() {
            LawKind::Discrete(pts) => {
                assert_eq!(pts.as_slice(), &[(1.0, 0.25), (2.0, 0.75)]);
            }
            _ => panic!("expected discrete"),
        }
        // Degenerate endpoints pass the inputs through untouched.
        assert_eq!(mixture(&a, &b, 0.0).unwrap().expect(|x| x).unwrap(), 2.0);
        assert_eq!(mixture(&a, &b, 1.0).unwrap().expect(|x| x).unwrap(), 1.0);
    }

    #[test]
    fn mixture_rejects_analytic_inputs() {
        let a = Law::lognormal(0.0, 1.0).unwrap();
        let b = Law::dirac(1.0);
        assert!(mixture(&a, &b, 0.5).is_err());
    }

    #[test]
    fn invalid_discrete_weights_rejected() {
        assert!(Law::discrete(vec![(1.0, 0.6), (2.0, 0.6)]).is_err());
        assert!(Law::discrete(vec![(1.0, -0.5), (2.0, 1.5)]).is_err());
        assert!(Law::discrete(vec![]).is_err());
    }

    #[test]
    fn root_solver_simple_cases() {
        let z = solve_monotone_root(|z| z - 1.0, (0.0, 2.0), 1e-12).unwrap();
        assert!((z - 1.0).abs() < 1e-12);
        let z = solve_monotone_root(|z: f64| z.ln(), (0.5, 2.0), 1e-12).unwrap();
        assert!((z - 1.0).abs() < 1e-12);
        assert!(solve_monotone_root(|z| z + 10.0, (0.0, 1.0), 1e-12).is_err());
    }

    #[test]
    fn root_solver_certainty_equivalent_cross_check() {
        // Root of E[U_{-1}(X / z)] for X lognormal(0, 0.04) is e^{-0.02}.
        let law = Law::lognormal(0.0, 0.04).unwrap();
        let f = |z: f64| law.expect(|x| ((x / z).powf(-1.0) - 1.0) / -1.0).unwrap();
        let z = solve_with_expansion(f, 1.0, 0.0, 1e-12).unwrap();
        assert!((z - (-0.02_f64).exp()).abs() < 1e-11);
    }

    #[test]
    fn non_finite_integrand_reports_the_abscissa() {
        let law = Law::discrete(vec![(1.0, 0.5), (4.0, 0.5)]).unwrap();
        match law.expect(|x| if x > 2.0 { f64::NAN } else { x }) {
            Err(crate::error::Error::NonFiniteEvaluation { at }) => assert_eq!(at, 4.0),
            other => panic!("expected non-finite report, got {other:?}"),
        }
        let law = Law::lognormal(0.0, 1.0).unwrap();
        assert!(law.expect(|x| (x - 1.0).ln()).is_err());
    }

    #[test]
    fn sample_discretize_preserves_moments() {
        let law = Law::lognormal(0.1, 0.3).unwrap();
        let disc = law.sample_discretize(64).unwrap();
        assert!(disc.is_discrete());
        let m_exact = law.mean().unwrap();
        let m_disc = disc.mean().unwrap();
        assert!((m_exact - m_disc).abs() < 1e-10);
    }

    #[test]
    fn randomized_monotone_roots_hit_tolerance() {
        // 100 randomized strictly monotone functions, residual below tol.
        let rng = crate::rng::CounterRng::new(7);
        for i in 0..100u64 {
            let a = 0.5 + 2.0 * rng.uniform(i, 0, 0);
            let b = -1.0 + 2.0 * rng.uniform(i, 1, 0);
            let c = 0.1 + rng.uniform(i, 2, 0);
            let f = move |z: f64| a * (z - b) + c * (z - b).powi(3);
            let z = solve_with_expansion(
                f,
                5.0 * rng.uniform(i, 3, 0) - 2.5,
                f64::NEG_INFINITY,
                1e-12,
            )
            .unwrap();
            assert!(f(z).abs() < 1e-9, "residual too large at i={i}: {}", f(z));
        }
    }
}
