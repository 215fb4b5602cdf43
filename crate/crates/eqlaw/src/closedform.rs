//! Deterministic-coefficient equilibrium engine.
//!
//! For a betweenness certainty equivalent the whole equilibrium problem
//! reduces to three scalar functions of the cumulative strategy variance `y`:
//!
//! - `H(y)`: certainty equivalent of the unit log-normal (CRRA form) or the
//!   centered Gaussian (CARA form) at variance `y`;
//! - `G(y)`: the risk-tolerance ratio built from `H` and the first two
//!   derivatives of the generator `F`;
//! - `Gcal(x) = integral_0^x G(y)^{-2} dy`, whose inverse maps the remaining
//!   squared-market-price-of-risk budget into the equilibrium's cumulative
//!   variance `A(t)`.
//!
//! The equilibrium strategy is `pi_t = (sigma')^{-1} kappa(t) G(A(t))` with
//! `A(t) = Gcal^{-1}(integral_t^T |kappa|^2 ds)`, equivalently the unique
//! solution of the backward ODE `A'(t) = -|kappa(t)|^2 G(A(t))^2, A(T) = 0`.
//! Both routes are computed and stored so they can certify each other.

use crate::error::{Error, Result};
use crate::laws::{self, QuadratureRule};
use crate::market::{norm_sq, MarketModel, StrategyCurve, StrategyMode};
use crate::preferences::{CaraMix, Distortion, MixedCrra, Preference, Rdu};

// ---------------------------------------------------------------------------
// Betweenness families seen through their generator F
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum BetweennessKind {
    MixedCrra(MixedCrra),
    Cara(CaraMix),
    /// Weighted utility as the betweenness generator `F(x) = x^{r2} - x^{r1}`
    /// with `r1 = gamma`, `r2 = 1 - rho + gamma`.
    WeightedUtility {
        gamma: f64,
        rho: f64,
    },
}

impl BetweennessKind {
    fn from_preference(pref: &Preference) -> Result<Self> {
        match pref {
            Preference::MixedCrra(m) => Ok(BetweennessKind::MixedCrra(m.clone())),
            Preference::Cara(c) => Ok(BetweennessKind::Cara(c.clone())),
            Preference::WeightedUtility { gamma, rho } => Ok(BetweennessKind::WeightedUtility {
                gamma: *gamma,
                rho: *rho,
            }),
            other => Err(Error::UnsupportedPreference(format!(
                "{} has no betweenness generator",
                other.family_name()
            ))),
        }
    }

    fn is_cara(&self) -> bool {
        matches!(self, BetweennessKind::Cara(_))
    }

    fn f(&self, x: f64) -> f64 {
        match self {
            BetweennessKind::MixedCrra(m) => m.f(x),
            BetweennessKind::Cara(c) => c.f(x),
            BetweennessKind::WeightedUtility { gamma, rho } => {
                let r2 = 1.0 - rho + gamma;
                x.powf(r2) - x.powf(*gamma)
            }
        }
    }

    fn f_prime(&self, x: f64) -> f64 {
        match self {
            BetweennessKind::MixedCrra(m) => m.f_prime(x),
            BetweennessKind::Cara(c) => c.f_prime(x),
            BetweennessKind::WeightedUtility { gamma, rho } => {
                let r2 = 1.0 - rho + gamma;
                r2 * x.powf(r2 - 1.0) - gamma * x.powf(gamma - 1.0)
            }
        }
    }

    fn f_double_prime(&self, x: f64) -> f64 {
        match self {
            BetweennessKind::MixedCrra(m) => m.f_double_prime(x),
            BetweennessKind::Cara(c) => c.f_double_prime(x),
            BetweennessKind::WeightedUtility { gamma, rho } => {
                let r2 = 1.0 - rho + gamma;
                r2 * (r2 - 1.0) * x.powf(r2 - 2.0) - gamma * (gamma - 1.0) * x.powf(gamma - 2.0)
            }
        }
    }

    /// Hard bounds on `G` implied by the family's parameters. A positive
    /// lower bound makes `Gcal` grow at least linearly, so the feasibility
    /// condition `Gcal(inf) > budget` holds for every finite budget.
    fn g_bounds(&self) -> (f64, f64) {
        match self {
            BetweennessKind::MixedCrra(m) => {
                let g_min = m
                    .atoms()
                    .iter()
                    .map(|&(g, _)| g)
                    .fold(f64::INFINITY, f64::min);
                let g_max = m
                    .atoms()
                    .iter()
                    .map(|&(g, _)| g)
                    .fold(f64::NEG_INFINITY, f64::max);
                (1.0 / (1.0 - g_min), 1.0 / (1.0 - g_max))
            }
            BetweennessKind::Cara(c) => {
                let (lo, hi) = c.rho_bounds();
                (1.0 / hi, 1.0 / lo)
            }
            BetweennessKind::WeightedUtility { gamma, rho } => {
                let g = 1.0 / (rho - 2.0 * gamma);
                (g, g)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// CertaintyFunctions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct FeasibilityRecord {
    /// Total budget `integral_0^T |kappa|^2 ds` the solve must absorb.
    pub required: f64,
    /// Family bounds on G backing the unconditional-feasibility argument.
    pub g_lower: f64,
    pub g_upper: f64,
    /// `Gcal^{-1}(required)`: the cumulative variance at time zero.
    pub y_star: f64,
    pub feasible: bool,
}

/// Tabulated `H`, `G` and the cumulative integral of `1/G^2` for one
/// betweenness preference. All caches are built at construction; reads are
/// thread-safe.
#[derive(Debug, Clone)]
pub struct CertaintyFunctions {
    kind: BetweennessKind,
    rule: QuadratureRule,
    grid: Vec<f64>,
    h_tab: Vec<f64>,
    h_slopes: Vec<f64>,
    g_tab: Vec<f64>,
    g_slopes: Vec<f64>,
    gcal_tab: Vec<f64>,
}

const GCAL_CELLS: usize = 400;
const ROOT_TOL: f64 = 1e-13;

// 4-point Gauss-Legendre on [-1, 1].
const GL4_NODES: [f64; 4] = [
    -0.8611363115940526,
    -0.3399810435848563,
    0.3399810435848563,
    0.8611363115940526,
];
const GL4_WEIGHTS: [f64; 4] = [
    0.3478548451374538,
    0.6521451548625461,
    0.6521451548625461,
    0.3478548451374538,
];

impl CertaintyFunctions {
    /// Build tables covering cumulative variances up to `y_max`.
    pub fn new(pref: &Preference, quad_order: usize, y_max: f64) -> Result<Self> {
        let kind = BetweennessKind::from_preference(pref)?;
        Self::build(kind, quad_order, y_max)
    }

    /// Build tables sized for a market whose squared-market-price-of-risk
    /// budget is `budget`; the covered range is guaranteed to contain
    /// `Gcal^{-1}(budget)`.
    pub fn for_budget(pref: &Preference, quad_order: usize, budget: f64) -> Result<Self> {
        let kind = BetweennessKind::from_preference(pref)?;
        let (_, g_upper) = kind.g_bounds();
        let y_max = (4.0 * budget)
            .max(1.05 * budget * g_upper * g_upper)
            .max(1e-4);
        Self::build(kind, quad_order, y_max)
    }

    fn build(kind: BetweennessKind, quad_order: usize, y_max: f64) -> Result<Self> {
        if !(y_max > 0.0 && y_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "y_max {y_max} must be > 0"
            )));
        }
        let rule = laws::gauss_hermite(quad_order)?;
        let mut cf = CertaintyFunctions {
            kind,
            rule,
            grid: Vec::new(),
            h_tab: Vec::new(),
            h_slopes: Vec::new(),
            g_tab: Vec::new(),
            g_slopes: Vec::new(),
            gcal_tab: Vec::new(),
        };
        // Graded grid, denser near zero where G varies fastest.
        cf.grid = (0..=GCAL_CELLS)
            .map(|i| y_max * (i as f64 / GCAL_CELLS as f64).powf(1.6))
            .collect();
        cf.h_tab = cf
            .grid
            .iter()
            .map(|&y| cf.h_analytic(y))
            .collect::<Result<_>>()?;
        cf.g_tab = cf
            .grid
            .iter()
            .map(|&y| cf.g_analytic(y))
            .collect::<Result<_>>()?;
        if let Some(&bad) = cf.g_tab.iter().find(|&&g| g <= 0.0 || g.is_nan()) {
            return Err(Error::InvalidParameter(format!(
                "risk-tolerance ratio left the positive cone: G = {bad}"
            )));
        }
        cf.h_slopes = pchip_slopes(&cf.grid, &cf.h_tab);
        cf.g_slopes = pchip_slopes(&cf.grid, &cf.g_tab);
        // Prefix integrals of 1/G^2, one Gauss-Legendre panel per cell with
        // direct G evaluations (table accuracy is independent of the
        // interpolants above).
        let mut gcal = Vec::with_capacity(cf.grid.len());
        gcal.push(0.0);
        for i in 1..cf.grid.len() {
            let inc = cf.integrate_inv_g_sq(cf.grid[i - 1], cf.grid[i])?;
            if inc <= 0.0 || inc.is_nan() {
                return Err(Error::InvalidParameter(format!(
                    "cumulative 1/G^2 integral stalled on cell {i} (increment {inc})"
                )));
            }
            let prev = gcal[i - 1];
            gcal.push(prev + inc);
        }
        cf.gcal_tab = gcal;
        Ok(cf)
    }

    fn integrate_inv_g_sq(&self, a: f64, b: f64) -> Result<f64> {
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        let mut acc = 0.0;
        for (&z, &w) in GL4_NODES.iter().zip(&GL4_WEIGHTS) {
            let g = self.g_analytic(mid + half * z)?;
            acc += w / (g * g);
        }
        Ok(acc * half)
    }

    pub fn is_cara(&self) -> bool {
        self.kind.is_cara()
    }

    pub fn quadrature(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn y_max(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    pub fn g_bounds(&self) -> (f64, f64) {
        self.kind.g_bounds()
    }

    // -- H ------------------------------------------------------------------

    /// `H(y)` through the generic route: Gauss-Hermite expectation of the
    /// generator and monotone root-finding.
    pub fn eval_h(&self, y: f64) -> Result<f64> {
        if y < 0.0 {
            return Err(Error::InvalidParameter(format!("y {y} must be >= 0")));
        }
        let s = y.sqrt();
        if self.kind.is_cara() {
            let f = |hc: f64| self.rule.integrate(|z| self.kind.f(s * z - hc));
            laws::solve_with_expansion(f, 0.0, f64::NEG_INFINITY, ROOT_TOL)
        } else {
            let f = |hc: f64| self.rule.integrate(|z| self.kind.f((s * z).exp() / hc));
            laws::solve_with_expansion(f, 1.0, 0.0, ROOT_TOL)
        }
    }

    /// `H(y)` through the family's closed moment forms (no xi-quadrature).
    pub fn eval_h_analytic(&self, y: f64) -> Result<f64> {
        if y < 0.0 {
            return Err(Error::InvalidParameter(format!("y {y} must be >= 0")));
        }
        self.h_analytic(y)
    }

    fn h_analytic(&self, y: f64) -> Result<f64> {
        match &self.kind {
            BetweennessKind::MixedCrra(m) => {
                // sum_i w_i (e^{g_i^2 y / 2} H^{-g_i} - 1)/g_i = 0,
                // the g = 0 atom contributing -log H.
                let atoms = m.atoms().to_vec();
                let f = move |h: f64| -> f64 {
                    atoms
                        .iter()
                        .map(|&(g, w)| {
                            if g == 0.0 {
                                -w * h.ln()
                            } else {
                                w * ((0.5 * g * g * y).exp() * h.powf(-g) - 1.0) / g
                            }
                        })
                        .sum()
                };
                let mean_g: f64 = m.atoms().iter().map(|&(g, w)| w * g).sum();
                laws::solve_with_expansion(f, (0.5 * mean_g * y).exp(), 0.0, ROOT_TOL)
            }
            BetweennessKind::Cara(c) => {
                // sum_i w_i e^{r_i H + r_i^2 y / 2} = 1.
                let atoms = c.atoms().to_vec();
                let f = move |h: f64| -> f64 {
                    atoms
                        .iter()
                        .map(|&(r, w)| w * (r * h + 0.5 * r * r * y).exp())
                        .sum::<f64>()
                        - 1.0
                };
                let mean_r: f64 = c.atoms().iter().map(|&(r, w)| w * r).sum();
                laws::solve_with_expansion(f, -0.5 * mean_r * y, f64::NEG_INFINITY, ROOT_TOL)
            }
            BetweennessKind::WeightedUtility { gamma, rho } => {
                Ok((0.5 * (1.0 - rho + 2.0 * gamma) * y).exp())
            }
        }
    }

    // -- G ------------------------------------------------------------------

    /// `G(y)` through the generic route: the ratio of Gauss-Hermite
    /// integrals of `F'` and `F''` against the unit log-normal (CRRA form)
    /// or the centered Gaussian (CARA form), at `H = eval_h(y)`.
    pub fn eval_g(&self, y: f64) -> Result<f64> {
        let h = self.eval_h(y)?;
        let s = y.sqrt();
        let (num, den) = if self.kind.is_cara() {
            (
                self.rule.try_integrate(|z| self.kind.f_prime(s * z - h))?,
                self.rule
                    .try_integrate(|z| -self.kind.f_double_prime(s * z - h))?,
            )
        } else {
            (
                h * self.rule.try_integrate(|z| {
                    let x = (s * z).exp();
                    x * self.kind.f_prime(x / h)
                })?,
                self.rule.try_integrate(|z| {
                    let x = (s * z).exp();
                    -x * x * self.kind.f_double_prime(x / h)
                })?,
            )
        };
        if den <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "curvature integral {den} not positive at y = {y}"
            )));
        }
        Ok(num / den)
    }

    /// `G(y)` through the closed mixture forms.
    pub fn eval_g_analytic(&self, y: f64) -> Result<f64> {
        if y < 0.0 {
            return Err(Error::InvalidParameter(format!("y {y} must be >= 0")));
        }
        self.g_analytic(y)
    }

    /// The mixed-power closed form
    /// `G(y) = sum w H^{-g} e^{g^2 y/2} / sum w (1-g) H^{-g} e^{g^2 y/2}`.
    pub fn eval_g_mixed_crra(&self, y: f64) -> Result<f64> {
        match &self.kind {
            BetweennessKind::MixedCrra(_) => self.g_analytic(y),
            _ => Err(Error::UnsupportedPreference(
                "mixed-power G formula requires a mixed_crra preference".into(),
            )),
        }
    }

    fn g_analytic(&self, y: f64) -> Result<f64> {
        let h = self.h_analytic(y)?;
        match &self.kind {
            BetweennessKind::MixedCrra(m) => {
                let mut num = 0.0;
                let mut den = 0.0;
                for &(g, w) in m.atoms() {
                    let u = w * h.powf(-g) * (0.5 * g * g * y).exp();
                    num += u;
                    den += (1.0 - g) * u;
                }
                Ok(num / den)
            }
            BetweennessKind::Cara(c) => {
                let mut num = 0.0;
                let mut den = 0.0;
                for &(r, w) in c.atoms() {
                    let m = w * (r * h + 0.5 * r * r * y).exp();
                    num += r * m;
                    den += r * r * m;
                }
                Ok(num / den)
            }
            BetweennessKind::WeightedUtility { gamma, rho } => Ok(1.0 / (rho - 2.0 * gamma)),
        }
    }

    /// Interpolated `H` from the construction table (monotone cubic).
    pub fn h_interp(&self, y: f64) -> f64 {
        pchip_eval(&self.grid, &self.h_tab, &self.h_slopes, y)
    }

    /// Interpolated `G` from the construction table (monotone cubic).
    pub fn g_interp(&self, y: f64) -> f64 {
        pchip_eval(&self.grid, &self.g_tab, &self.g_slopes, y)
    }

    // -- Gcal ----------------------------------------------------------------

    /// `Gcal(x) = integral_0^x G(y)^{-2} dy` for `x` inside the table range.
    pub fn gcal(&self, x: f64) -> Result<f64> {
        if x < 0.0 {
            return Err(Error::InvalidParameter(format!("x {x} must be >= 0")));
        }
        if x > self.y_max() * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "x {x} beyond tabulated range {}",
                self.y_max()
            )));
        }
        let x = x.min(self.y_max());
        let i = match self.grid.binary_search_by(|v| v.total_cmp(&x)) {
            Ok(i) => return Ok(self.gcal_tab[i]),
            Err(i) => i - 1,
        };
        Ok(self.gcal_tab[i] + self.integrate_inv_g_sq(self.grid[i], x)?)
    }

    /// Inverse of `Gcal`: the cumulative variance absorbing a given
    /// squared-market-price-of-risk budget.
    pub fn gcal_inverse(&self, target: f64) -> Result<f64> {
        if target < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "target {target} must be >= 0"
            )));
        }
        if target == 0.0 {
            return Ok(0.0);
        }
        let last = *self.gcal_tab.last().unwrap();
        if target > last {
            return Err(Error::Infeasible {
                required: target,
                reachable: last,
            });
        }
        let cell = match self.gcal_tab.binary_search_by(|v| v.total_cmp(&target)) {
            Ok(i) => return Ok(self.grid[i]),
            Err(i) => i - 1,
        };
        let (lo, hi) = (self.grid[cell], self.grid[cell + 1]);
        // Newton on Gcal(x) - target with derivative 1/G^2, bisection fallback.
        let mut x = 0.5 * (lo + hi);
        let mut lo_b = lo;
        let mut hi_b = hi;
        for _ in 0..60 {
            let f = self.gcal_tab[cell] + self.integrate_inv_g_sq(lo, x)? - target;
            if f > 0.0 {
                hi_b = x;
            } else {
                lo_b = x;
            }
            let g = self.g_analytic(x)?;
            let step = f * g * g;
            let mut next = x - step;
            if !(next > lo_b && next < hi_b) {
                next = 0.5 * (lo_b + hi_b);
            }
            if (next - x).abs() <= 1e-14 * x.abs().max(1.0) {
                return Ok(next);
            }
            x = next;
        }
        Ok(x)
    }

    /// Feasibility of a total budget, with the G bounds that justify it.
    pub fn feasibility(&self, required: f64) -> Result<FeasibilityRecord> {
        let (g_lower, g_upper) = self.kind.g_bounds();
        let y_star = self.gcal_inverse(required)?;
        Ok(FeasibilityRecord {
            required,
            g_lower,
            g_upper,
            y_star,
            feasible: true,
        })
    }
}

// Fritsch-Carlson monotone cubic Hermite interpolation.
fn pchip_slopes(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let mut deltas = Vec::with_capacity(n - 1);
    for i in 0..n - 1 {
        deltas.push((ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]));
    }
    let mut d = vec![0.0; n];
    d[0] = deltas[0];
    d[n - 1] = deltas[n - 2];
    for i in 1..n - 1 {
        if deltas[i - 1] * deltas[i] <= 0.0 {
            d[i] = 0.0;
        } else {
            let w1 = 2.0 * (xs[i + 1] - xs[i]) + (xs[i] - xs[i - 1]);
            let w2 = (xs[i + 1] - xs[i]) + 2.0 * (xs[i] - xs[i - 1]);
            d[i] = (w1 + w2) / (w1 / deltas[i - 1] + w2 / deltas[i]);
        }
    }
    d
}

fn pchip_eval(xs: &[f64], ys: &[f64], ds: &[f64], x: f64) -> f64 {
    let n = xs.len();
    let x = x.clamp(xs[0], xs[n - 1]);
    let i = match xs.binary_search_by(|v| v.total_cmp(&x)) {
        Ok(i) => return ys[i],
        Err(i) => (i - 1).min(n - 2),
    };
    let h = xs[i + 1] - xs[i];
    let t = (x - xs[i]) / h;
    let t2 = t * t;
    let t3 = t2 * t;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + t;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    h00 * ys[i] + h10 * h * ds[i] + h01 * ys[i + 1] + h11 * h * ds[i + 1]
}

// ---------------------------------------------------------------------------
// Equilibrium solutions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct EquilibriumSolution {
    /// Grid times, length `n_steps + 1`.
    pub t_grid: Vec<f64>,
    /// Volatility loadings `a_t = sigma(t)' pi_t`, one vector per step.
    pub a: Vec<Vec<f64>>,
    /// Discrete cumulative variance: `big_a[n] = sum_{m >= n} |a_m|^2 dt`.
    pub big_a: Vec<f64>,
    /// `A(t)` from the inverse of `Gcal` applied to the budget tail.
    pub big_a_gcal: Vec<f64>,
    /// `A(t)` from the backward Runge-Kutta integration of the ODE.
    pub big_a_ode: Vec<f64>,
    pub pi: StrategyCurve,
    pub feasibility: FeasibilityRecord,
}

impl EquilibriumSolution {
    pub fn strategy(&self) -> &StrategyCurve {
        &self.pi
    }
}

/// ODE route: integrate `A' = -|kappa|^2 G(A)^2` backward from `A(T) = 0`
/// with classical fourth-order Runge-Kutta, `substeps` stages per grid step.
fn integrate_big_a_ode(
    kappa_sq: &[f64],
    dt: f64,
    substeps: usize,
    g: &dyn Fn(f64) -> Result<f64>,
) -> Result<Vec<f64>> {
    let n = kappa_sq.len();
    let mut out = vec![0.0; n + 1];
    let h = dt / substeps as f64;
    let mut a = 0.0;
    for step in (0..n).rev() {
        let k2 = kappa_sq[step];
        let f = |v: f64| -> Result<f64> {
            let gg = g(v)?;
            Ok(k2 * gg * gg)
        };
        for _ in 0..substeps {
            let k1 = f(a)?;
            let k2v = f(a + 0.5 * h * k1)?;
            let k3v = f(a + 0.5 * h * k2v)?;
            let k4v = f(a + h * k3v)?;
            a += h / 6.0 * (k1 + 2.0 * k2v + 2.0 * k3v + k4v);
        }
        out[step] = a;
    }
    Ok(out)
}

pub const ODE_SUBSTEPS: usize = 4;

fn solve_betweenness(
    pref: &Preference,
    model: &MarketModel,
    mode: StrategyMode,
    quad_order: usize,
) -> Result<EquilibriumSolution> {
    let n = model.n_steps();
    let dt = model.dt();
    let tail = model.kappa_sq_tail()?;
    let budget = tail[0];
    let cf = CertaintyFunctions::for_budget(pref, quad_order, budget)?;
    let feasibility = cf.feasibility(budget)?;

    let big_a_gcal: Vec<f64> = tail
        .iter()
        .map(|&t| cf.gcal_inverse(t))
        .collect::<Result<_>>()?;
    let kappa_sq: Vec<f64> = (0..n).map(|i| model.kappa_sq(i)).collect::<Result<_>>()?;
    let g_fn = |y: f64| cf.eval_g_analytic(y);
    let big_a_ode = integrate_big_a_ode(&kappa_sq, dt, ODE_SUBSTEPS, &g_fn)?;

    // Per-step strategy as the exact fixed point of the discrete system
    // a_n = kappa_n G(A_n), A_n = A_{n+1} + |a_n|^2 dt, so the first-order
    // residual of the emitted curve vanishes at root tolerance.
    let mut a_vals: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut big_a = vec![0.0; n + 1];
    for step in (0..n).rev() {
        let kappa = model.kappa(step)?;
        let ksq = norm_sq(&kappa);
        let a_next = big_a[step + 1];
        let mut g = cf.eval_g_analytic(a_next)?;
        for _ in 0..200 {
            let g_new = cf.eval_g_analytic(a_next + g * g * ksq * dt)?;
            if (g_new - g).abs() <= 1e-15 * g.abs().max(1.0) {
                g = g_new;
                break;
            }
            g = g_new;
        }
        let a_step: Vec<f64> = kappa.iter().map(|&k| k * g).collect();
        big_a[step] = a_next + norm_sq(&a_step) * dt;
        a_vals[step] = a_step;
    }

    let mut pi_vals = Vec::with_capacity(n);
    for (step, a_step) in a_vals.iter().enumerate() {
        let sigma_t = model.sigma_at(step).transpose();
        let pi = sigma_t
            .solve(a_step)
            .ok_or(Error::SingularSigma { t_index: step })?;
        pi_vals.push(pi);
    }

    Ok(EquilibriumSolution {
        t_grid: model.grid(),
        a: a_vals,
        big_a,
        big_a_gcal,
        big_a_ode,
        pi: StrategyCurve::new(mode, pi_vals)?,
        feasibility,
    })
}

/// Equilibrium proportion strategy for a positive-support betweenness
/// preference (mixed power certainty equivalent or weighted utility).
pub fn solve_equilibrium_crra(
    pref: &Preference,
    model: &MarketModel,
) -> Result<EquilibriumSolution> {
    match pref {
        Preference::MixedCrra(_) | Preference::WeightedUtility { .. } => solve_betweenness(
            pref,
            model,
            StrategyMode::Proportion,
            laws::DEFAULT_QUAD_ORDER,
        ),
        other => Err(Error::UnsupportedPreference(format!(
            "solve_equilibrium_crra expects a positive-support betweenness family, got {}",
            other.family_name()
        ))),
    }
}

/// Equilibrium dollar-amount strategy for a CARA betweenness preference.
pub fn solve_equilibrium_cara(
    pref: &Preference,
    model: &MarketModel,
) -> Result<EquilibriumSolution> {
    match pref {
        Preference::Cara(_) => {
            solve_betweenness(pref, model, StrategyMode::Dollar, laws::DEFAULT_QUAD_ORDER)
        }
        other => Err(Error::UnsupportedPreference(format!(
            "solve_equilibrium_cara expects a cara preference, got {}",
            other.family_name()
        ))),
    }
}

/// Equilibrium dollar-amount strategy for the mean-variance preference with
/// deterministic coefficients: `pi_t = (sigma')^{-1} kappa(t) / gamma_mv`.
/// This is the constant-risk-tolerance case `G = 1/gamma_mv`, so the
/// cumulative-variance bookkeeping is filled through the same identities.
pub fn solve_equilibrium_mv(gamma_mv: f64, model: &MarketModel) -> Result<EquilibriumSolution> {
    if gamma_mv <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "mean-variance risk aversion {gamma_mv} must be > 0"
        )));
    }
    let n = model.n_steps();
    let dt = model.dt();
    let g = 1.0 / gamma_mv;
    let tail = model.kappa_sq_tail()?;
    let mut a_vals = Vec::with_capacity(n);
    let mut pi_vals = Vec::with_capacity(n);
    for step in 0..n {
        let kappa = model.kappa(step)?;
        let a_step: Vec<f64> = kappa.iter().map(|&k| k * g).collect();
        let sigma_t = model.sigma_at(step).transpose();
        pi_vals.push(
            sigma_t
                .solve(&a_step)
                .ok_or(Error::SingularSigma { t_index: step })?,
        );
        a_vals.push(a_step);
    }
    let mut big_a = vec![0.0; n + 1];
    for step in (0..n).rev() {
        big_a[step] = big_a[step + 1] + norm_sq(&a_vals[step]) * dt;
    }
    let big_a_gcal: Vec<f64> = tail.iter().map(|&t| g * g * t).collect();
    Ok(EquilibriumSolution {
        t_grid: model.grid(),
        a: a_vals,
        big_a: big_a.clone(),
        big_a_gcal: big_a_gcal.clone(),
        big_a_ode: big_a_gcal,
        pi: StrategyCurve::new(StrategyMode::Dollar, pi_vals)?,
        feasibility: FeasibilityRecord {
            required: tail[0],
            g_lower: g,
            g_upper: g,
            y_star: g * g * tail[0],
            feasible: true,
        },
    })
}

// ---------------------------------------------------------------------------
// Rank-dependent utility candidate
// ---------------------------------------------------------------------------

/// Candidate curves for the rank-dependent-utility equilibrium: the
/// effective exposure multiplier `lambda(t)` and the distorted cumulative
/// variance `Lambda(t)`. The pair solves
/// `Lambda'(t) = -|kappa(t)|^2 lambda(t)^2, Lambda(T) = 0` with
/// `lambda = sqrt(Lambda) h(t, sqrt(Lambda)) / h_x(t, sqrt(Lambda))` and
/// `h(t, x) = E[w_p(t, N(xi)) e^{x xi}]`.
///
/// No equilibrium verification is attached: the preference is non-concave,
/// so the first-order condition alone does not certify an equilibrium.
#[derive(Debug, Clone)]
pub struct RduCandidate {
    pub t_grid: Vec<f64>,
    pub big_lambda: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Always true: the output is a candidate, not a verified equilibrium.
    pub candidate: bool,
}

/// Cumulative standard normal distribution (Hart/West rational scheme,
/// double-precision accurate).
pub fn normal_cdf(x: f64) -> f64 {
    let z = x.abs();
    if z > 37.0 {
        return if x > 0.0 { 1.0 } else { 0.0 };
    }
    let e = (-z * z / 2.0).exp();
    let cdf = if z < 7.071067811865475 {
        let num = (((((3.52624965998911e-2 * z + 0.700383064443688) * z + 6.37396220353165) * z
            + 33.912866078383)
            * z
            + 112.079291497871)
            * z
            + 221.213596169931)
            * z
            + 220.206867912376;
        let den = ((((((8.83883476483184e-2 * z + 1.75566716318264) * z + 16.064177579207) * z
            + 86.7807322029461)
            * z
            + 296.564248779674)
            * z
            + 637.333633378831)
            * z
            + 793.826512519948)
            * z
            + 440.413735824752;
        e * num / den
    } else {
        let b = z + 0.65;
        let b = z + 4.0 / b;
        let b = z + 3.0 / b;
        let b = z + 2.0 / b;
        let b = z + 1.0 / b;
        e / (b * 2.506628274631001)
    };
    if x > 0.0 {
        1.0 - cdf
    } else {
        cdf
    }
}

struct DistortionMoments<'a> {
    rule: &'a QuadratureRule,
    distortion: &'a Distortion,
}

impl DistortionMoments<'_> {
    /// Returns (h, h_x, h_xx) = E[w_p e^{x xi} (1, xi, xi^2)].
    fn moments(&self, t: f64, x: f64) -> (f64, f64, f64) {
        let mut h = 0.0;
        let mut hx = 0.0;
        let mut hxx = 0.0;
        for (&z, &w) in self.rule.nodes().iter().zip(self.rule.weights()) {
            let wp = self.distortion.w_p(t, normal_cdf(z));
            let e = w * wp * (x * z).exp();
            h += e;
            hx += e * z;
            hxx += e * z * z;
        }
        (h, hx, hxx)
    }

    /// The exposure multiplier `lambda(t, x) = x h / h_x` with the removable
    /// `x -> 0` singularity resolved by its one-sided limit `h / h_xx`, and a
    /// bridge across the thin layer where `h_x` changes sign for distortions
    /// whose `E[w_p xi]` is nonzero.
    fn lambda(&self, t: f64, big_lambda: f64) -> Result<f64> {
        let x = big_lambda.max(0.0).sqrt();
        let (h, hx, hxx) = self.moments(t, x);
        if h <= 0.0 || hxx <= 0.0 {
            return Err(Error::InvalidParameter(
                "degenerate distortion: h or its curvature is not positive".into(),
            ));
        }
        let (_, hx0, hxx0) = self.moments(t, 0.0);
        let delta = if hx0.abs() < 1e-12 * hxx0 { 0.0 } else { hx0 };
        if delta == 0.0 {
            // No sign-change layer; the ratio extends continuously to x = 0.
            if x < 1e-12 {
                return Ok(h / hxx);
            }
            if hx.abs() < 1e-300 {
                return Err(Error::InvalidParameter(
                    "degenerate distortion: h_x vanishes away from the origin".into(),
                ));
            }
            return Ok(x * h / hx);
        }
        // h_x(t, 0) != 0: h_x crosses zero near x* ~ |delta| / h_xx. Below
        // twice that width the raw ratio sits on the trivial branch (or at
        // the pole); continue with the limiting outer-branch value instead.
        let x_star = (delta.abs() / hxx0).max(1e-12);
        if x <= 2.0 * x_star || hx <= 0.5 * hxx * x_star {
            return Ok(h / hxx);
        }
        Ok(x * h / hx)
    }
}

/// Solve the candidate ODE backward from `Lambda(T) = 0`.
pub fn solve_rdu_candidate(pref: &Preference, model: &MarketModel) -> Result<RduCandidate> {
    let rdu: &Rdu = match pref {
        Preference::Rdu(r) => r,
        other => {
            return Err(Error::UnsupportedPreference(format!(
                "solve_rdu_candidate expects an rdu preference, got {}",
                other.family_name()
            )))
        }
    };
    let n = model.n_steps();
    let dt = model.dt();
    let rule = laws::gauss_hermite(laws::DEFAULT_QUAD_ORDER)?;
    let mom = DistortionMoments {
        rule: &rule,
        distortion: &rdu.distortion,
    };
    let grid = model.grid();

    let mut big_lambda = vec![0.0; n + 1];
    let mut lambda = vec![0.0; n + 1];
    lambda[n] = mom.lambda(grid[n], 0.0)?;
    let substeps = ODE_SUBSTEPS;
    let h = dt / substeps as f64;
    let mut state = 0.0_f64;
    for step in (0..n).rev() {
        let ksq = model.kappa_sq(step)?;
        let f = |t: f64, v: f64| -> Result<f64> {
            let l = mom.lambda(t, v)?;
            Ok(ksq * l * l)
        };
        // Backward in t means forward in tau = T - t.
        for sub in 0..substeps {
            let t_right = grid[step + 1] - sub as f64 * h;
            let k1 = f(t_right, state)?;
            let k2 = f(t_right - 0.5 * h, state + 0.5 * h * k1)?;
            let k3 = f(t_right - 0.5 * h, state + 0.5 * h * k2)?;
            let k4 = f(t_right - h, state + h * k3)?;
            state += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        big_lambda[step] = state;
        lambda[step] = mom.lambda(grid[step], state)?;
    }
    Ok(RduCandidate {
        t_grid: grid,
        big_lambda,
        lambda,
        candidate: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::Mat;
    use crate::preferences::Preference;

    fn crra(atoms: Vec<(f64, f64)>) -> Preference {
        Preference::mixed_crra(atoms).unwrap()
    }

    #[test]
    fn h_at_zero() {
        let cf = CertaintyFunctions::new(&crra(vec![(-1.0, 0.5), (0.5, 0.5)]), 64, 1.0).unwrap();
        assert!((cf.eval_h(0.0).unwrap() - 1.0).abs() < 1e-10);
        let cara = Preference::cara(vec![(0.5, 0.5), (2.0, 0.5)]).unwrap();
        let cf = CertaintyFunctions::new(&cara, 64, 1.0).unwrap();
        assert!(cf.eval_h(0.0).unwrap().abs() < 1e-10);
    }

    #[test]
    fn h_dirac_closed_forms() {
        // Power: H(y) = e^{g y / 2}; exponential: H(y) = -r y / 2.
        let cf = CertaintyFunctions::new(&crra(vec![(-0.5, 1.0)]), 64, 1.0).unwrap();
        let got = cf.eval_h(0.16).unwrap();
        assert!((got - (-0.04_f64).exp()).abs() < 1e-11, "{got}");
        assert!((cf.eval_h_analytic(0.16).unwrap() - got).abs() < 1e-11);

        let cara = Preference::cara_dirac(2.0).unwrap();
        let cf = CertaintyFunctions::new(&cara, 64, 1.0).unwrap();
        assert!((cf.eval_h(0.25).unwrap() + 0.25).abs() < 1e-11);
    }

    #[test]
    fn g_at_zero_is_curvature_ratio() {
        let mix = MixedCrra::new(vec![(-1.0, 0.5), (0.5, 0.5)]).unwrap();
        let pref = Preference::MixedCrra(mix.clone());
        let cf = CertaintyFunctions::new(&pref, 64, 1.0).unwrap();
        let want = -mix.f_prime(1.0) / mix.f_double_prime(1.0);
        assert!((cf.eval_g(0.0).unwrap() - want).abs() < 1e-11);
        // Two-atom plug-in at y = 0: (0.5 + 0.5) / (0.5 * 2 + 0.5 * 0.5).
        assert!((cf.eval_g_mixed_crra(0.0).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn g_dirac_values_all_y() {
        let cf = CertaintyFunctions::new(&crra(vec![(-0.5, 1.0)]), 64, 2.0).unwrap();
        for &y in &[0.0, 0.1, 0.5, 1.7] {
            assert!((cf.eval_g(y).unwrap() - 1.0 / 1.5).abs() < 1e-10, "y={y}");
        }
        let cara = Preference::cara_dirac(2.0).unwrap();
        let cf = CertaintyFunctions::new(&cara, 64, 2.0).unwrap();
        for &y in &[0.0, 0.3, 1.2] {
            assert!((cf.eval_g(y).unwrap() - 0.5).abs() < 1e-10, "y={y}");
        }
    }

    #[test]
    fn generic_and_analytic_h_routes_agree() {
        let prefs = [
            crra(vec![(-1.0, 0.5), (0.5, 0.5)]),
            crra(vec![(-2.0, 0.3), (-0.5, 0.4), (0.3, 0.3)]),
            Preference::cara(vec![(0.5, 0.4), (2.5, 0.6)]).unwrap(),
            Preference::weighted_utility(-0.5, 0.25).unwrap(),
        ];
        for pref in &prefs {
            let cf = CertaintyFunctions::new(pref, 96, 2.0).unwrap();
            for &y in &[0.0, 0.04, 0.3, 1.1, 1.9] {
                let generic = cf.eval_h(y).unwrap();
                let closed = cf.eval_h_analytic(y).unwrap();
                assert!(
                    (generic - closed).abs() < 1e-10 * (1.0 + closed.abs()),
                    "{} y={y}: {generic} vs {closed}",
                    pref.family_name()
                );
            }
        }
    }

    #[test]
    fn generic_and_mixture_g_routes_agree() {
        let prefs = [
            crra(vec![(-1.0, 0.5), (0.5, 0.5)]),
            crra(vec![(-2.0, 0.3), (-0.5, 0.4), (0.3, 0.3)]),
            Preference::cara(vec![(0.5, 0.4), (2.5, 0.6)]).unwrap(),
        ];
        for pref in &prefs {
            let cf = CertaintyFunctions::new(pref, 96, 2.0).unwrap();
            for &y in &[0.0, 0.05, 0.2, 0.8, 1.9] {
                let generic = cf.eval_g(y).unwrap();
                let closed = cf.eval_g_analytic(y).unwrap();
                assert!(
                    (generic - closed).abs() < 1e-9,
                    "{} y={y}: {generic} vs {closed}",
                    pref.family_name()
                );
            }
        }
    }

    #[test]
    fn weighted_utility_generator_collapses() {
        let pref = Preference::weighted_utility(-0.5, 0.25).unwrap();
        let cf = CertaintyFunctions::new(&pref, 64, 1.0).unwrap();
        for &y in &[0.0, 0.3, 0.9] {
            assert!((cf.eval_g(y).unwrap() - 1.0 / 1.25).abs() < 1e-10);
            let want_h = (0.5 * (1.0 - 0.25 + 2.0 * -0.5) * y).exp();
            assert!((cf.eval_h(y).unwrap() - want_h).abs() < 1e-10);
        }
    }

    #[test]
    fn interpolants_track_direct_evaluation() {
        let pref = crra(vec![(-1.5, 0.4), (0.4, 0.6)]);
        let cf = CertaintyFunctions::new(&pref, 64, 1.5).unwrap();
        for i in 0..40 {
            let y = 1.5 * (i as f64 + 0.37) / 40.0;
            assert!((cf.h_interp(y) - cf.eval_h_analytic(y).unwrap()).abs() < 1e-9);
            assert!((cf.g_interp(y) - cf.eval_g_analytic(y).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn gcal_constant_g_and_inverse_roundtrip() {
        // Dirac g = 0.5 has constant G = 2, so Gcal^{-1}(y) = 4 y.
        let cf = CertaintyFunctions::new(&crra(vec![(0.5, 1.0)]), 64, 4.0).unwrap();
        assert_eq!(cf.gcal_inverse(0.0).unwrap(), 0.0);
        assert!((cf.gcal_inverse(0.36).unwrap() - 1.44).abs() < 1e-10);
        // Round trip on a mixture.
        let cf = CertaintyFunctions::new(&crra(vec![(-1.0, 0.5), (0.5, 0.5)]), 64, 4.0).unwrap();
        for &x in &[0.01, 0.3, 1.1, 3.0] {
            let y = cf.gcal(x).unwrap();
            assert!((cf.gcal_inverse(y).unwrap() - x).abs() < 1e-9, "x={x}");
        }
    }

    #[test]
    fn gcal_inverse_reports_infeasible_beyond_table() {
        let cf = CertaintyFunctions::new(&crra(vec![(0.5, 1.0)]), 64, 0.1).unwrap();
        match cf.gcal_inverse(10.0) {
            Err(Error::Infeasible {
                required,
                reachable,
            }) => {
                assert_eq!(required, 10.0);
                assert!(reachable < 10.0);
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn merton_recovery_dirac_power() {
        let model = MarketModel::scalar(1.0, 64, 0.08, 0.2).unwrap();
        let sol = solve_equilibrium_crra(&crra(vec![(-0.5, 1.0)]), &model).unwrap();
        for step in 0..64 {
            let pi = sol.pi.value_at(step)[0];
            assert!((pi - 0.4 / (0.2 * 1.5)).abs() < 1e-10, "step {step}: {pi}");
        }
        assert_eq!(sol.pi.mode(), StrategyMode::Proportion);
    }

    #[test]
    fn zero_risk_premium_means_no_investment() {
        let model = MarketModel::scalar(1.0, 16, 0.0, 0.2).unwrap();
        let sol = solve_equilibrium_crra(&crra(vec![(-0.5, 1.0)]), &model).unwrap();
        assert!(sol.pi.values().iter().all(|v| v[0] == 0.0));
        assert!(sol.big_a.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn ode_and_gcal_routes_agree_on_mixture() {
        let model = MarketModel::scalar(1.0, 64, 0.08, 0.2).unwrap();
        let sol = solve_equilibrium_crra(&crra(vec![(-1.0, 0.5), (0.5, 0.5)]), &model).unwrap();
        for i in 0..=64 {
            assert!(
                (sol.big_a_gcal[i] - sol.big_a_ode[i]).abs() < 1e-8,
                "i={i}: {} vs {}",
                sol.big_a_gcal[i],
                sol.big_a_ode[i]
            );
        }
    }

    #[test]
    fn discrete_strategy_identities() {
        let model = MarketModel::scalar(2.0, 32, 0.06, 0.25).unwrap();
        let pref = crra(vec![(-1.5, 0.3), (0.2, 0.7)]);
        let sol = solve_equilibrium_crra(&pref, &model).unwrap();
        let cf = CertaintyFunctions::for_budget(&pref, 64, 10.0).unwrap();
        let dt = model.dt();
        let mut tail = 0.0;
        for step in (0..32).rev() {
            tail += norm_sq(&sol.a[step]) * dt;
            // big_a is the exact tail integral of the emitted loadings.
            assert!((sol.big_a[step] - tail).abs() < 1e-14);
            // a_n = kappa_n G(A_n) at root tolerance.
            let g = cf.eval_g_analytic(sol.big_a[step]).unwrap();
            let kappa = model.kappa(step).unwrap();
            for (ai, ki) in sol.a[step].iter().zip(&kappa) {
                assert!((ai - ki * g).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn single_step_grid_solves() {
        let model = MarketModel::scalar(0.25, 1, 0.08, 0.2).unwrap();
        let sol = solve_equilibrium_crra(&crra(vec![(-0.5, 1.0)]), &model).unwrap();
        assert!((sol.pi.value_at(0)[0] - 0.4 / (0.2 * 1.5)).abs() < 1e-10);
        assert_eq!(sol.big_a[1], 0.0);
        assert!((sol.big_a_gcal[0] - sol.big_a_ode[0]).abs() < 1e-10);
    }

    #[test]
    fn cara_merton_recovery_and_mixture_band() {
        let model = MarketModel::scalar(1.0, 32, 0.08, 0.2).unwrap();
        let sol = solve_equilibrium_cara(&Preference::cara_dirac(2.0).unwrap(), &model).unwrap();
        for step in 0..32 {
            assert!((sol.pi.value_at(step)[0] - 1.0).abs() < 1e-10);
        }
        assert_eq!(sol.pi.mode(), StrategyMode::Dollar);

        let mix = Preference::cara(vec![(0.5, 0.5), (2.0, 0.5)]).unwrap();
        let sol = solve_equilibrium_cara(&mix, &model).unwrap();
        for step in 0..32 {
            let pi = sol.pi.value_at(step)[0];
            assert!((0.4 / (0.2 * 2.0) - 1e-12..=0.4 / (0.2 * 0.5) + 1e-12).contains(&pi));
        }
    }

    #[test]
    fn mean_variance_strategy() {
        let model = MarketModel::scalar(1.0, 16, 0.08, 0.2).unwrap();
        let sol = solve_equilibrium_mv(2.0, &model).unwrap();
        for step in 0..16 {
            assert!((sol.pi.value_at(step)[0] - 1.0).abs() < 1e-12);
        }
        let sol4 = solve_equilibrium_mv(4.0, &model).unwrap();
        for step in 0..16 {
            assert!((sol4.pi.value_at(step)[0] - 0.5 * sol.pi.value_at(step)[0]).abs() < 1e-12);
        }
        let zero = MarketModel::scalar(1.0, 16, 0.0, 0.2).unwrap();
        let sol0 = solve_equilibrium_mv(2.0, &zero).unwrap();
        assert!(sol0.pi.values().iter().all(|v| v[0] == 0.0));
        assert!(solve_equilibrium_mv(-1.0, &model).is_err());
    }

    #[test]
    fn weighted_utility_equilibrium_through_generator() {
        let model = MarketModel::scalar(1.0, 32, 0.08, 0.2).unwrap();
        let pref = Preference::weighted_utility(-0.5, 0.25).unwrap();
        let sol = solve_equilibrium_crra(&pref, &model).unwrap();
        for step in 0..32 {
            assert!((sol.pi.value_at(step)[0] - 0.4 / (0.2 * 1.25)).abs() < 1e-10);
        }
    }

    #[test]
    fn multi_asset_strategy_inverts_sigma_transpose() {
        let model = MarketModel::constant(
            1.0,
            16,
            vec![0.08, 0.03],
            Mat::from_rows(&[vec![0.2, 0.05], vec![0.0, 0.1]]).unwrap(),
        )
        .unwrap();
        let sol = solve_equilibrium_crra(&crra(vec![(-0.5, 1.0)]), &model).unwrap();
        // sigma' pi = kappa G must hold componentwise.
        for step in 0..16 {
            let a = model.sigma_at(step).tr_matvec(sol.pi.value_at(step));
            let kappa = model.kappa(step).unwrap();
            for (ai, ki) in a.iter().zip(&kappa) {
                assert!((ai - ki / 1.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn equilibrium_value_identity_along_ansatz() {
        // g(conditional law at t) = x_t e^{int a.kappa - A/2} H(A).
        let model = MarketModel::scalar(1.0, 16, 0.08, 0.2).unwrap();
        let pref = crra(vec![(-1.0, 0.5), (0.5, 0.5)]);
        let sol = solve_equilibrium_crra(&pref, &model).unwrap();
        let cf = CertaintyFunctions::for_budget(&pref, 64, 1.0).unwrap();
        let dt = model.dt();
        for &t_index in &[0usize, 5, 11, 16] {
            let x_t = 1.3;
            let law =
                crate::market::conditional_terminal_law(&model, &sol.pi, t_index, x_t).unwrap();
            let lhs = crate::preferences::evaluate(&pref, &law).unwrap();
            let mut drift = 0.0;
            for step in t_index..16 {
                drift += crate::market::dot(&sol.a[step], &model.kappa(step).unwrap()) * dt;
            }
            let a_t = sol.big_a[t_index];
            let rhs = x_t * (drift - 0.5 * a_t).exp() * cf.eval_h_analytic(a_t).unwrap();
            assert!((lhs - rhs).abs() < 1e-8, "t={t_index}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn normal_cdf_reference_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.0) - 0.8413447460685429).abs() < 1e-14);
        assert!((normal_cdf(-2.5) - 0.006209665325776132).abs() < 1e-15);
        assert!((normal_cdf(8.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn rdu_identity_distortion_collapses() {
        let model = MarketModel::scalar(1.0, 64, 0.08, 0.2).unwrap();
        let pref = Preference::rdu(0.5, Distortion::Identity).unwrap();
        let cand = solve_rdu_candidate(&pref, &model).unwrap();
        assert!(cand.candidate);
        let tail = model.kappa_sq_tail().unwrap();
        for i in 0..=64 {
            assert!(
                (cand.lambda[i] - 1.0).abs() < 1e-9,
                "lambda[{i}] = {}",
                cand.lambda[i]
            );
            assert!((cand.big_lambda[i] - tail[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn rdu_zero_kappa_is_flat() {
        let model = MarketModel::scalar(1.0, 16, 0.0, 0.2).unwrap();
        let pref = Preference::rdu(0.5, Distortion::Identity).unwrap();
        let cand = solve_rdu_candidate(&pref, &model).unwrap();
        assert!(cand.big_lambda.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rdu_power_distortion_continuity_toward_identity() {
        let model = MarketModel::scalar(1.0, 32, 0.08, 0.2).unwrap();
        let mut prev_gap = f64::INFINITY;
        for &theta in &[0.90, 0.925, 0.95, 0.975, 0.99] {
            let pref = Preference::rdu(0.5, Distortion::Power { theta }).unwrap();
            let cand = solve_rdu_candidate(&pref, &model).unwrap();
            // Interior lambda approaches 1 monotonically as theta -> 1.
            let gap = (cand.lambda[8] - 1.0).abs();
            assert!(
                gap < prev_gap + 1e-12,
                "theta={theta}: gap {gap} prev {prev_gap}"
            );
            prev_gap = gap;
        }
        assert!(prev_gap < 0.02);
    }
}
