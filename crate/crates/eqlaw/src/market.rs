//! Market coefficient models, wealth dynamics and path simulation.
//!
//! Two coefficient models are provided: deterministic per-step curves for
//! `theta` and `sigma` (the closed-form engine's setting) and a recombining
//! binomial lattice carrying a bounded random market price of risk (the
//! weighted-utility solver's setting). The interest rate is identically zero
//! throughout.

use crate::error::{Error, Result};
use crate::laws::Law;
use crate::rng::CounterRng;

// ---------------------------------------------------------------------------
// Small dense matrices (d is the number of stocks, typically 1..4)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    n: usize,
    a: Vec<f64>, // row-major
}

impl Mat {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidParameter(
                "matrix must be square and non-empty".into(),
            ));
        }
        let mut a = Vec::with_capacity(n * n);
        for r in rows {
            for &v in r {
                if !v.is_finite() {
                    return Err(Error::InvalidParameter("non-finite matrix entry".into()));
                }
                a.push(v);
            }
        }
        Ok(Mat { n, a })
    }

    pub fn diag(d: &[f64]) -> Self {
        let n = d.len();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = d[i];
        }
        Mat { n, a }
    }

    pub fn scalar(v: f64) -> Self {
        Mat { n: 1, a: vec![v] }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    pub fn transpose(&self) -> Mat {
        let n = self.n;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[j * n + i] = self.a[i * n + j];
            }
        }
        Mat { n, a }
    }

    #[allow(clippy::needless_range_loop)]
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += self.a[i * n + j] * v[j];
            }
            out[i] = acc;
        }
        out
    }

    /// Transposed product `M^T v` without materializing the transpose.
    #[allow(clippy::needless_range_loop)]
    pub fn tr_matvec(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n];
        for j in 0..n {
            let mut acc = 0.0;
            for i in 0..n {
                acc += self.a[i * n + j] * v[i];
            }
            out[j] = acc;
        }
        out
    }

    /// Solve `M x = b` by LU with partial pivoting.
    #[allow(clippy::needless_range_loop)]
    pub fn solve(&self, b: &[f64]) -> Option<Vec<f64>> {
        let n = self.n;
        let mut lu = self.a.clone();
        let mut x: Vec<f64> = b.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        for col in 0..n {
            let mut pivot = col;
            let mut best = lu[perm[col] * n + col].abs();
            for row in col + 1..n {
                let v = lu[perm[row] * n + col].abs();
                if v > best {
                    best = v;
                    pivot = row;
                }
            }
            if best < 1e-300 {
                return None;
            }
            perm.swap(col, pivot);
            let p = perm[col];
            for row in col + 1..n {
                let r = perm[row];
                let f = lu[r * n + col] / lu[p * n + col];
                lu[r * n + col] = f;
                for j in col + 1..n {
                    lu[r * n + j] -= f * lu[p * n + j];
                }
            }
        }
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut acc = x[perm[i]];
            for j in 0..i {
                acc -= lu[perm[i] * n + j] * y[j];
            }
            y[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = y[i];
            for j in i + 1..n {
                acc -= lu[perm[i] * n + j] * x[j];
            }
            x[i] = acc / lu[perm[i] * n + i];
        }
        if x.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some(x)
    }

    /// Eigenvalue range of the symmetric positive matrix `M M^T` by cyclic
    /// Jacobi rotations; used for the ellipticity band check.
    pub fn gram_eigen_range(&self) -> (f64, f64) {
        let n = self.n;
        let mut s = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += self.a[i * n + k] * self.a[j * n + k];
                }
                s[i * n + j] = acc;
            }
        }
        for _sweep in 0..64 {
            let mut off = 0.0;
            for i in 0..n {
                for j in i + 1..n {
                    off += s[i * n + j] * s[i * n + j];
                }
            }
            if off < 1e-28 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = s[p * n + q];
                    if apq.abs() < 1e-30 {
                        continue;
                    }
                    let app = s[p * n + p];
                    let aqq = s[q * n + q];
                    let phi = 0.5 * f64::atan2(2.0 * apq, aqq - app);
                    let (c, sn) = (phi.cos(), phi.sin());
                    for k in 0..n {
                        let skp = s[k * n + p];
                        let skq = s[k * n + q];
                        s[k * n + p] = c * skp - sn * skq;
                        s[k * n + q] = sn * skp + c * skq;
                    }
                    for k in 0..n {
                        let spk = s[p * n + k];
                        let sqk = s[q * n + k];
                        s[p * n + k] = c * spk - sn * sqk;
                        s[q * n + k] = sn * spk + c * sqk;
                    }
                }
            }
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            lo = lo.min(s[i * n + i]);
            hi = hi.max(s[i * n + i]);
        }
        (lo, hi)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

// ---------------------------------------------------------------------------
// Deterministic market model
// ---------------------------------------------------------------------------

/// Deterministic market coefficients on a uniform grid: per-step drift
/// vectors `theta` and invertible volatility matrices `sigma`, constant on
/// each step. `k` counts Brownian components orthogonal to the stocks.
#[derive(Debug, Clone)]
pub struct MarketModel {
    horizon: f64,
    theta: Vec<Vec<f64>>,
    sigma: Vec<Mat>,
    d: usize,
    k: usize,
    c1: f64,
    c2: f64,
}

impl MarketModel {
    pub fn from_curves(
        horizon: f64,
        theta: Vec<Vec<f64>>,
        sigma: Vec<Mat>,
        k: usize,
        ellipticity: Option<(f64, f64)>,
    ) -> Result<Self> {
        if horizon <= 0.0 || !horizon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "horizon {horizon} must be > 0"
            )));
        }
        if theta.is_empty() || theta.len() != sigma.len() {
            return Err(Error::InvalidParameter(
                "theta and sigma curves must be non-empty and equally long".into(),
            ));
        }
        let d = theta[0].len();
        let mut obs_lo = f64::INFINITY;
        let mut obs_hi: f64 = 0.0;
        for (i, (th, sg)) in theta.iter().zip(&sigma).enumerate() {
            if th.len() != d || sg.size() != d {
                return Err(Error::InvalidParameter(format!(
                    "dimension mismatch at step {i}"
                )));
            }
            if th.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "non-finite theta at step {i}"
                )));
            }
            let (lo, hi) = sg.gram_eigen_range();
            obs_lo = obs_lo.min(lo);
            obs_hi = obs_hi.max(hi);
        }
        let (c1, c2) = ellipticity.unwrap_or((obs_lo, obs_hi));
        if !(c1 > 0.0 && c2 >= c1) {
            return Err(Error::InvalidParameter(format!(
                "ellipticity band ({c1}, {c2}) must satisfy 0 < c1 <= c2"
            )));
        }
        if obs_lo < c1 - 1e-12 || obs_hi > c2 + 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "sigma spectrum [{obs_lo}, {obs_hi}] leaves the declared band [{c1}, {c2}]"
            )));
        }
        Ok(MarketModel {
            horizon,
            theta,
            sigma,
            d,
            k,
            c1,
            c2,
        })
    }

    /// Constant coefficients on `n_steps` uniform steps.
    pub fn constant(horizon: f64, n_steps: usize, theta: Vec<f64>, sigma: Mat) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::InvalidParameter("n_steps must be >= 1".into()));
        }
        let thetas = vec![theta; n_steps];
        let sigmas = vec![sigma; n_steps];
        Self::from_curves(horizon, thetas, sigmas, 0, None)
    }

    /// One-stock convenience constructor.
    pub fn scalar(horizon: f64, n_steps: usize, theta: f64, sigma: f64) -> Result<Self> {
        Self::constant(horizon, n_steps, vec![theta], Mat::scalar(sigma))
    }

    /// One-stock model with per-step curves.
    pub fn scalar_curves(horizon: f64, theta: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        let thetas = theta.into_iter().map(|v| vec![v]).collect();
        let sigmas = sigma.into_iter().map(Mat::scalar).collect();
        Self::from_curves(horizon, thetas, sigmas, 0, None)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.theta.len()
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps() as f64
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn orthogonal_components(&self) -> usize {
        self.k
    }

    pub fn ellipticity(&self) -> (f64, f64) {
        (self.c1, self.c2)
    }

    pub fn theta_at(&self, t_index: usize) -> &[f64] {
        &self.theta[t_index]
    }

    pub fn sigma_at(&self, t_index: usize) -> &Mat {
        &self.sigma[t_index]
    }

    /// Grid times `t_0 = 0, ..., t_N = T`.
    pub fn grid(&self) -> Vec<f64> {
        let dt = self.dt();
        (0..=self.n_steps()).map(|i| i as f64 * dt).collect()
    }

    /// Market price of risk `kappa(t) = sigma(t)^{-1} theta(t)`.
    pub fn kappa(&self, t_index: usize) -> Result<Vec<f64>> {
        self.sigma[t_index]
            .solve(&self.theta[t_index])
            .ok_or(Error::SingularSigma { t_index })
    }

    pub fn kappa_sq(&self, t_index: usize) -> Result<f64> {
        Ok(norm_sq(&self.kappa(t_index)?))
    }

    /// Tail sums `integral_t^T |kappa|^2 ds` at every grid point (length
    /// `n_steps + 1`, last entry zero). Exact for the piecewise-constant
    /// coefficient curves.
    pub fn kappa_sq_tail(&self) -> Result<Vec<f64>> {
        let n = self.n_steps();
        let dt = self.dt();
        let mut tail = vec![0.0; n + 1];
        for i in (0..n).rev() {
            tail[i] = tail[i + 1] + self.kappa_sq(i)? * dt;
        }
        Ok(tail)
    }
}

// ---------------------------------------------------------------------------
// Strategies
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyMode {
    /// `pi` is the fraction of wealth in each stock.
    Proportion,
    /// `pi` is the dollar amount in each stock.
    Dollar,
}

/// Deterministic strategy, constant on each grid step.
///
/// Perturbations accumulate in a separate bump field, so adding `phi` and
/// then `-phi` on the same window cancels exactly (the bumps sum to zero
/// before they ever touch the base values).
#[derive(Debug, Clone)]
pub struct StrategyCurve {
    mode: StrategyMode,
    base: Vec<Vec<f64>>,
    bump: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
}

impl StrategyCurve {
    pub fn new(mode: StrategyMode, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParameter(
                "strategy needs at least one step".into(),
            ));
        }
        let d = values[0].len();
        for v in &values {
            if v.len() != d || v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidParameter(
                    "strategy values must be finite".into(),
                ));
            }
        }
        let bump = vec![vec![0.0; d]; values.len()];
        Ok(StrategyCurve {
            mode,
            base: values.clone(),
            bump,
            values,
        })
    }

    pub fn constant(mode: StrategyMode, n_steps: usize, value: Vec<f64>) -> Result<Self> {
        Self::new(mode, vec![value; n_steps])
    }

    pub fn mode(&self) -> StrategyMode {
        self.mode
    }

    pub fn n_steps(&self) -> usize {
        self.values.len()
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn value_at(&self, t_index: usize) -> &[f64] {
        &self.values[t_index]
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// Add `phi` on the step window `[t_index, t_index + eps_steps)`.
    pub fn perturb(&self, t_index: usize, eps_steps: usize, phi: &[f64]) -> Result<StrategyCurve> {
        if phi.len() != self.dim() {
            return Err(Error::InvalidParameter("phi dimension mismatch".into()));
        }
        if t_index + eps_steps > self.n_steps() {
            return Err(Error::WindowOverflow {
                t_index,
                eps: eps_steps as f64,
                horizon: self.n_steps() as f64,
            });
        }
        if phi.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidParameter("phi must be finite".into()));
        }
        let mut out = self.clone();
        for step in t_index..t_index + eps_steps {
            for (c, p) in phi.iter().enumerate() {
                out.bump[step][c] += p;
                out.values[step][c] = out.base[step][c] + out.bump[step][c];
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct WealthPaths {
    /// `data[path][grid_index]`, including the initial point.
    pub data: Vec<Vec<f64>>,
    pub times: Vec<f64>,
    pub seed: u64,
    pub mode: StrategyMode,
}

impl WealthPaths {
    pub fn terminal(&self) -> Vec<f64> {
        self.data.iter().map(|p| *p.last().unwrap()).collect()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SimOptions {
    /// Pair path 2m+1 with the sign-flipped Gaussian increments of path 2m.
    pub antithetic: bool,
}

fn spawn_over_paths(n_paths: usize, fill: impl Fn(usize) -> Vec<f64> + Sync) -> Vec<Vec<f64>> {
    let workers = std::thread::available_parallelism()
        .map(|v| v.get())
        .unwrap_or(1)
        .min(8);
    if workers <= 1 || n_paths < 256 {
        return (0..n_paths).map(&fill).collect();
    }
    let mut out: Vec<Vec<f64>> = vec![Vec::new(); n_paths];
    let chunk = n_paths.div_ceil(workers);
    std::thread::scope(|scope| {
        for (w, slot) in out.chunks_mut(chunk).enumerate() {
            let fill = &fill;
            scope.spawn(move || {
                for (i, s) in slot.iter_mut().enumerate() {
                    *s = fill(w * chunk + i);
                }
            });
        }
    });
    out
}

/// Simulate the proportional-investment wealth equation by the exact
/// per-step log scheme: `log X` advances by
/// `(pi' theta - |sigma' pi|^2 / 2) dt + (sigma' pi) . dW`. Wealth stays
/// strictly positive on every path and the result is reproducible from the
/// seed alone.
pub fn simulate_proportion(
    model: &MarketModel,
    strategy: &StrategyCurve,
    x0: f64,
    paths: usize,
    seed: u64,
) -> Result<WealthPaths> {
    simulate_proportion_opts(model, strategy, x0, paths, seed, SimOptions::default())
}

pub fn simulate_proportion_opts(
    model: &MarketModel,
    strategy: &StrategyCurve,
    x0: f64,
    paths: usize,
    seed: u64,
    opts: SimOptions,
) -> Result<WealthPaths> {
    if strategy.mode() != StrategyMode::Proportion {
        return Err(Error::InvalidParameter(
            "strategy mode must be proportion".into(),
        ));
    }
    if x0 <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "x0 {x0} must be > 0 in proportion mode"
        )));
    }
    check_shapes(model, strategy)?;
    let n = model.n_steps();
    let d = model.dim();
    let dt = model.dt();
    let sqrt_dt = dt.sqrt();
    let rng = CounterRng::new(seed);

    // Per-step drift and diffusion loadings are path-independent.
    let mut drift = vec![0.0; n];
    let mut loading = vec![vec![0.0; d]; n];
    for i in 0..n {
        let pi = strategy.value_at(i);
        let a = model.sigma_at(i).tr_matvec(pi);
        drift[i] = (dot(pi, model.theta_at(i)) - 0.5 * norm_sq(&a)) * dt;
        loading[i] = a;
    }

    let data = spawn_over_paths(paths, |p| {
        let (draw_path, flip) = antithetic_key(p, opts.antithetic);
        let mut log_x = x0.ln();
        let mut out = Vec::with_capacity(n + 1);
        out.push(x0);
        for i in 0..n {
            let mut diffusion = 0.0;
            for (c, l) in loading[i].iter().enumerate() {
                let z = flip * rng.standard_normal(draw_path, i as u64, c as u64);
                diffusion += l * z * sqrt_dt;
            }
            log_x += drift[i] + diffusion;
            out.push(log_x.exp());
        }
        out
    });
    Ok(WealthPaths {
        data,
        times: model.grid(),
        seed,
        mode: StrategyMode::Proportion,
    })
}

/// Simulate the dollar-amount wealth equation by the exact per-step
/// arithmetic scheme: `X` advances by `pi' theta dt + (sigma' pi) . dW`.
pub fn simulate_dollar(
    model: &MarketModel,
    strategy: &StrategyCurve,
    x0: f64,
    paths: usize,
    seed: u64,
) -> Result<WealthPaths> {
    simulate_dollar_opts(model, strategy, x0, paths, seed, SimOptions::default())
}

pub fn simulate_dollar_opts(
    model: &MarketModel,
    strategy: &StrategyCurve,
    x0: f64,
    paths: usize,
    seed: u64,
    opts: SimOptions,
) -> Result<WealthPaths> {
    if strategy.mode() != StrategyMode::Dollar {
        return Err(Error::InvalidParameter(
            "strategy mode must be dollar".into(),
        ));
    }
    check_shapes(model, strategy)?;
    let n = model.n_steps();
    let d = model.dim();
    let dt = model.dt();
    let sqrt_dt = dt.sqrt();
    let rng = CounterRng::new(seed);

    let mut drift = vec![0.0; n];
    let mut loading = vec![vec![0.0; d]; n];
    for i in 0..n {
        let pi = strategy.value_at(i);
        drift[i] = dot(pi, model.theta_at(i)) * dt;
        loading[i] = model.sigma_at(i).tr_matvec(pi);
    }

    let data = spawn_over_paths(paths, |p| {
        let (draw_path, flip) = antithetic_key(p, opts.antithetic);
        let mut x = x0;
        let mut out = Vec::with_capacity(n + 1);
        out.push(x0);
        for i in 0..n {
            let mut diffusion = 0.0;
            for (c, l) in loading[i].iter().enumerate() {
                let z = flip * rng.standard_normal(draw_path, i as u64, c as u64);
                diffusion += l * z * sqrt_dt;
            }
            x += drift[i] + diffusion;
            out.push(x);
        }
        out
    });
    Ok(WealthPaths {
        data,
        times: model.grid(),
        seed,
        mode: StrategyMode::Dollar,
    })
}

fn antithetic_key(p: usize, antithetic: bool) -> (u64, f64) {
    if antithetic {
        ((p / 2) as u64, if p.is_multiple_of(2) { 1.0 } else { -1.0 })
    } else {
        (p as u64, 1.0)
    }
}

fn check_shapes(model: &MarketModel, strategy: &StrategyCurve) -> Result<()> {
    if strategy.n_steps() != model.n_steps() || strategy.dim() != model.dim() {
        return Err(Error::InvalidParameter(format!(
            "strategy shape ({} steps, dim {}) does not match market ({} steps, dim {})",
            strategy.n_steps(),
            strategy.dim(),
            model.n_steps(),
            model.dim()
        )));
    }
    Ok(())
}

/// Conditional law of terminal wealth given `X_t = x_t` for a deterministic
/// proportion strategy: log-normal with
/// `mean_log = log x_t + integral_t^T (a' kappa - |a|^2 / 2) ds` and
/// `var_log = integral_t^T |a|^2 ds`, where `a_s = sigma(s)' pi_s`.
pub fn conditional_terminal_law(
    model: &MarketModel,
    strategy: &StrategyCurve,
    t_index: usize,
    x_t: f64,
) -> Result<Law> {
    if strategy.mode() != StrategyMode::Proportion {
        return Err(Error::InvalidParameter(
            "conditional law requires proportion mode".into(),
        ));
    }
    if x_t <= 0.0 {
        return Err(Error::InvalidParameter(format!("x_t {x_t} must be > 0")));
    }
    check_shapes(model, strategy)?;
    if t_index > model.n_steps() {
        return Err(Error::InvalidParameter(format!(
            "t_index {t_index} out of grid"
        )));
    }
    let dt = model.dt();
    let mut mean_log = x_t.ln();
    let mut var_log = 0.0;
    for i in t_index..model.n_steps() {
        let pi = strategy.value_at(i);
        let a = model.sigma_at(i).tr_matvec(pi);
        let kappa = model.kappa(i)?;
        mean_log += (dot(&a, &kappa) - 0.5 * norm_sq(&a)) * dt;
        var_log += norm_sq(&a) * dt;
    }
    Law::lognormal(mean_log, var_log)
}

/// Conditional law of terminal wealth for a deterministic dollar strategy:
/// normal with mean `x_t + integral pi' theta` and variance
/// `integral |sigma' pi|^2`.
pub fn conditional_terminal_law_dollar(
    model: &MarketModel,
    strategy: &StrategyCurve,
    t_index: usize,
    x_t: f64,
) -> Result<Law> {
    if strategy.mode() != StrategyMode::Dollar {
        return Err(Error::InvalidParameter(
            "dollar conditional law requires dollar mode".into(),
        ));
    }
    check_shapes(model, strategy)?;
    if t_index > model.n_steps() {
        return Err(Error::InvalidParameter(format!(
            "t_index {t_index} out of grid"
        )));
    }
    let dt = model.dt();
    let mut mean = x_t;
    let mut var = 0.0;
    for i in t_index..model.n_steps() {
        let pi = strategy.value_at(i);
        mean += dot(pi, model.theta_at(i)) * dt;
        var += norm_sq(&model.sigma_at(i).tr_matvec(pi)) * dt;
    }
    Law::normal(mean, var)
}

// ---------------------------------------------------------------------------
// Recombining binomial lattice for a random market price of risk
// ---------------------------------------------------------------------------

/// Recombining binomial discretization of the Brownian filtration with a
/// node-indexed market price of risk
/// `kappa(node) = kappa0 (1 + eta tanh(s W_node))`, which stays inside the
/// declared bound `kappa0 (1 + |eta|)` by construction. Up/down transition
/// probabilities are 1/2. One stock, no orthogonal components.
#[derive(Debug, Clone)]
pub struct Lattice {
    horizon: f64,
    n_steps: usize,
    dt: f64,
    sigma: f64,
    kappa0: f64,
    eta: f64,
    s_mod: f64,
    kappa_field: Vec<Vec<f64>>,
    kappa_bound: f64,
}

impl Lattice {
    pub fn new(
        horizon: f64,
        n_steps: usize,
        sigma: f64,
        kappa0: f64,
        eta: f64,
        s_mod: f64,
    ) -> Result<Self> {
        if horizon <= 0.0 || n_steps == 0 {
            return Err(Error::InvalidParameter(
                "lattice needs horizon > 0 and steps >= 1".into(),
            ));
        }
        if sigma <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "lattice sigma {sigma} must be > 0"
            )));
        }
        if !(0.0..=1.0).contains(&eta.abs()) || !eta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "lattice eta {eta} must be in [-1, 1]"
            )));
        }
        if s_mod < 0.0 || !s_mod.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "lattice s {s_mod} must be >= 0"
            )));
        }
        let dt = horizon / n_steps as f64;
        let sqrt_dt = dt.sqrt();
        let mut kappa_field = Vec::with_capacity(n_steps + 1);
        for level in 0..=n_steps {
            let mut row = Vec::with_capacity(level + 1);
            for j in 0..=level {
                let w = (2.0 * j as f64 - level as f64) * sqrt_dt;
                row.push(kappa0 * (1.0 + eta * (s_mod * w).tanh()));
            }
            kappa_field.push(row);
        }
        Ok(Lattice {
            horizon,
            n_steps,
            dt,
            sigma,
            kappa0,
            eta,
            s_mod,
            kappa_field,
            kappa_bound: kappa0.abs() * (1.0 + eta.abs()),
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn kappa0(&self) -> f64 {
        self.kappa0
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn s_mod(&self) -> f64 {
        self.s_mod
    }

    pub fn kappa_bound(&self) -> f64 {
        self.kappa_bound
    }

    /// Brownian value at node `(level, j)` with `j` up-moves.
    pub fn w_value(&self, level: usize, j: usize) -> f64 {
        (2.0 * j as f64 - level as f64) * self.dt.sqrt()
    }

    pub fn kappa(&self, level: usize, j: usize) -> f64 {
        self.kappa_field[level][j]
    }

    pub fn kappa_field(&self) -> &[Vec<f64>] {
        &self.kappa_field
    }

    /// Allocate a node-indexed field over levels `0..=n_steps`.
    pub fn node_field(&self) -> Vec<Vec<f64>> {
        (0..=self.n_steps)
            .map(|level| vec![0.0; level + 1])
            .collect()
    }
}

/// Lattice-adapted strategy: one proportional position per node, applied on
/// the step leaving that node.
#[derive(Debug, Clone)]
pub struct AdaptedStrategy {
    values: Vec<Vec<f64>>,
}

impl AdaptedStrategy {
    pub fn from_field(lattice: &Lattice, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() < lattice.n_steps() {
            return Err(Error::InvalidParameter(
                "strategy field too short for lattice".into(),
            ));
        }
        for (level, row) in values.iter().enumerate().take(lattice.n_steps()) {
            if row.len() != level + 1 {
                return Err(Error::InvalidParameter(format!(
                    "strategy level {level} has {} nodes, expected {}",
                    row.len(),
                    level + 1
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter("non-finite strategy value".into()));
            }
        }
        Ok(AdaptedStrategy { values })
    }

    pub fn constant(lattice: &Lattice, value: f64) -> Self {
        AdaptedStrategy {
            values: (0..lattice.n_steps())
                .map(|level| vec![value; level + 1])
                .collect(),
        }
    }

    pub fn value(&self, level: usize, j: usize) -> f64 {
        self.values[level][j]
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn n_levels(&self) -> usize {
        self.values.len()
    }

    /// Add `phi` at every node of levels `[t_level, t_level + eps_steps)`.
    pub fn perturb(&self, t_level: usize, eps_steps: usize, phi: f64) -> Result<AdaptedStrategy> {
        if t_level + eps_steps > self.values.len() {
            return Err(Error::WindowOverflow {
                t_index: t_level,
                eps: eps_steps as f64,
                horizon: self.values.len() as f64,
            });
        }
        let mut values = self.values.clone();
        for row in values.iter_mut().skip(t_level).take(eps_steps) {
            for v in row.iter_mut() {
                *v += phi;
            }
        }
        Ok(AdaptedStrategy { values })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kappa_is_sigma_inverse_theta() {
        let m = MarketModel::scalar(1.0, 4, 0.08, 0.2).unwrap();
        assert!((m.kappa(0).unwrap()[0] - 0.4).abs() < 1e-15);

        let m = MarketModel::constant(1.0, 4, vec![0.08, 0.03], Mat::diag(&[0.2, 0.1])).unwrap();
        let k = m.kappa(0).unwrap();
        assert!((k[0] - 0.4).abs() < 1e-14);
        assert!((k[1] - 0.3).abs() < 1e-14);
    }

    #[test]
    fn singular_sigma_is_rejected() {
        let m = MarketModel::from_curves(
            1.0,
            vec![vec![0.08, 0.03]; 2],
            vec![Mat::from_rows(&[vec![0.2, 0.1], vec![0.2, 0.1]]).unwrap(); 2],
            0,
            Some((1e-6, 1.0)),
        );
        // Either the ellipticity band or the solve itself reports the defect.
        if let Ok(model) = m {
            assert!(model.kappa(0).is_err())
        }
    }

    #[test]
    fn ellipticity_band_is_validated() {
        assert!(MarketModel::from_curves(
            1.0,
            vec![vec![0.08]; 2],
            vec![Mat::scalar(0.2); 2],
            0,
            Some((0.05, 1.0)),
        )
        .is_err());
        assert!(MarketModel::from_curves(
            1.0,
            vec![vec![0.08]; 2],
            vec![Mat::scalar(0.2); 2],
            0,
            Some((0.01, 1.0)),
        )
        .is_ok());
    }

    #[test]
    fn zero_strategy_keeps_wealth_constant() {
        let m = MarketModel::scalar(1.0, 16, 0.08, 0.2).unwrap();
        let s = StrategyCurve::constant(StrategyMode::Proportion, 16, vec![0.0]).unwrap();
        let paths = simulate_proportion(&m, &s, 1.5, 32, 7).unwrap();
        for p in &paths.data {
            for &x in p {
                assert_eq!(x, 1.5);
            }
        }
        let s = StrategyCurve::constant(StrategyMode::Dollar, 16, vec![0.0]).unwrap();
        let paths = simulate_dollar(&m, &s, -0.3, 8, 7).unwrap();
        for p in &paths.data {
            for &x in p {
                assert_eq!(x, -0.3);
            }
        }
    }

    #[test]
    fn one_step_log_scheme_is_exact() {
        let m = MarketModel::scalar(0.5, 1, 0.08, 0.2).unwrap();
        let s = StrategyCurve::constant(StrategyMode::Proportion, 1, vec![0.7]).unwrap();
        let paths = simulate_proportion(&m, &s, 2.0, 3, 99).unwrap();
        let rng = CounterRng::new(99);
        for (p, path) in paths.data.iter().enumerate() {
            let z = rng.standard_normal(p as u64, 0, 0);
            let a = 0.2 * 0.7;
            let want = 2.0 * ((0.7 * 0.08 - 0.5 * a * a) * 0.5 + a * z * 0.5_f64.sqrt()).exp();
            assert!((path[1] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn proportion_mean_matches_lognormal_identity() {
        // E[X_T] = x0 e^{integral pi' theta} for deterministic pi.
        let m = MarketModel::scalar(1.0, 16, 0.08, 0.2).unwrap();
        let s = StrategyCurve::constant(StrategyMode::Proportion, 16, vec![0.6]).unwrap();
        let n_paths = 200_000;
        let paths = simulate_proportion(&m, &s, 1.0, n_paths, 2024).unwrap();
        let terminal = paths.terminal();
        let mean: f64 = terminal.iter().sum::<f64>() / n_paths as f64;
        let var: f64 = terminal
            .iter()
            .map(|x| (x - mean) * (x - mean))
            .sum::<f64>()
            / n_paths as f64;
        let se = (var / n_paths as f64).sqrt();
        let want = (0.6_f64 * 0.08).exp();
        assert!(
            (mean - want).abs() < 3.0 * se,
            "mean {mean} vs {want}, se {se}"
        );
        // Positivity is structural in proportion mode.
        assert!(paths.data.iter().all(|p| p.iter().all(|&x| x > 0.0)));
    }

    #[test]
    fn dollar_terminal_moments_are_gaussian() {
        let m = MarketModel::scalar(1.0, 8, 0.08, 0.2).unwrap();
        let s = StrategyCurve::constant(StrategyMode::Dollar, 8, vec![1.3]).unwrap();
        let n_paths = 200_000;
        let paths = simulate_dollar(&m, &s, 0.5, n_paths, 5).unwrap();
        let terminal = paths.terminal();
        let mean: f64 = terminal.iter().sum::<f64>() / n_paths as f64;
        let var: f64 = terminal
            .iter()
            .map(|x| (x - mean) * (x - mean))
            .sum::<f64>()
            / n_paths as f64;
        let want_mean = 0.5 + 1.3 * 0.08;
        let want_var = (0.2 * 1.3_f64).powi(2);
        let se_mean = (want_var / n_paths as f64).sqrt();
        assert!((mean - want_mean).abs() < 4.0 * se_mean);
        assert!((var - want_var).abs() / want_var < 0.02);
    }

    #[test]
    fn different_seeds_same_moments_different_paths() {
        let m = MarketModel::scalar(1.0, 8, 0.08, 0.2).unwrap();
        let s = StrategyCurve::constant(StrategyMode::Proportion, 8, vec![0.5]).unwrap();
        let a = simulate_proportion(&m, &s, 1.0, 50_000, 1).unwrap();
        let b = simulate_proportion(&m, &s, 1.0, 50_000, 2).unwrap();
        assert_ne!(a.data[0], b.data[0]);
        let ma: f64 = a.terminal().iter().sum::<f64>() / 50_000.0;
        let mb: f64 = b.terminal().iter().sum::<f64>() / 50_000.0;
        assert!((ma - mb).abs() < 0.01);
        // Identical seed reproduces bit-exactly.
        let c = simulate_proportion(&m, &s, 1.0, 50_000, 1).unwrap();
        assert_eq!(a.data, c.data);
    }

    #[test]
    fn perturb_window_and_inverse() {
        let s = StrategyCurve::constant(StrategyMode::Proportion, 20, vec![0.5]).unwrap();
        let p = s.perturb(10, 2, &[0.1]).unwrap();
        for i in 0..20 {
            let want = if (10..12).contains(&i) { 0.6 } else { 0.5 };
            assert_eq!(p.value_at(i)[0], want);
        }
        // phi = 0 and an empty window change nothing.
        assert_eq!(s.perturb(3, 4, &[0.0]).unwrap().values(), s.values());
        assert_eq!(s.perturb(3, 0, &[9.9]).unwrap().values(), s.values());
        // Applying -phi after phi restores the original exactly.
        let back = p.perturb(10, 2, &[-0.1]).unwrap();
        assert_eq!(back.values(), s.values());
        assert!(s.perturb(19, 2, &[0.1]).is_err());
    }

    #[test]
    fn conditional_law_terminal_cases() {
        let m = MarketModel::scalar(1.0, 10, 0.08, 0.2).unwrap();
        let s = StrategyCurve::constant(StrategyMode::Proportion, 10, vec![0.5]).unwrap();
        // t = T collapses to the point mass at x_t.
        let law = conditional_terminal_law(&m, &s, 10, 2.0).unwrap();
        assert!((law.expect(|x| x).unwrap() - 2.0).abs() < 1e-14);
        // Constant coefficients: var_log = |a|^2 (T - t).
        let law = conditional_terminal_law(&m, &s, 5, 1.0).unwrap();
        match law.kind() {
            crate::laws::LawKind::LogNormal { var_log, .. } => {
                assert!((var_log - (0.1_f64 * 0.1) * 0.5).abs() < 1e-14);
            }
            _ => panic!("expected lognormal"),
        }
    }

    #[test]
    fn simulated_conditional_law_matches_analytic() {
        let rng = CounterRng::new(31);
        for trial in 0..3u64 {
            let n = 16;
            let theta: Vec<f64> = (0..n)
                .map(|i| 0.04 + 0.08 * rng.uniform(trial, i as u64, 0))
                .collect();
            let sigma: Vec<f64> = (0..n)
                .map(|i| 0.15 + 0.2 * rng.uniform(trial, i as u64, 1))
                .collect();
            let pi: Vec<Vec<f64>> = (0..n)
                .map(|i| vec![0.2 + 0.8 * rng.uniform(trial, i as u64, 2)])
                .collect();
            let m = MarketModel::scalar_curves(1.0, theta, sigma).unwrap();
            let s = StrategyCurve::new(StrategyMode::Proportion, pi).unwrap();
            let n_paths = 100_000;
            let paths = simulate_proportion(&m, &s, 1.0, n_paths, 7 + trial).unwrap();
            let logs: Vec<f64> = paths.terminal().iter().map(|x| x.ln()).collect();
            let mean: f64 = logs.iter().sum::<f64>() / n_paths as f64;
            let var: f64 =
                logs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n_paths as f64;
            let law = conditional_terminal_law(&m, &s, 0, 1.0).unwrap();
            match law.kind() {
                crate::laws::LawKind::LogNormal { mean_log, var_log } => {
                    let se_mean = (var / n_paths as f64).sqrt();
                    let se_var = var * (2.0 / n_paths as f64).sqrt();
                    assert!((mean - mean_log).abs() < 4.0 * se_mean, "trial {trial}");
                    assert!((var - var_log).abs() < 4.0 * se_var, "trial {trial}");
                }
                _ => panic!("expected lognormal"),
            }
        }
    }

    #[test]
    fn lattice_shape_and_bound() {
        let lat = Lattice::new(1.0, 64, 0.2, 0.4, 0.3, 1.5).unwrap();
        for level in 0..=64 {
            assert_eq!(lat.kappa_field()[level].len(), level + 1);
        }
        let bound = lat.kappa_bound();
        let sup = lat
            .kappa_field()
            .iter()
            .flat_map(|row| row.iter())
            .fold(0.0_f64, |m, &k| m.max(k.abs()));
        assert!(sup <= bound + 1e-15);
        // eta = 0 collapses to the constant field.
        let flat = Lattice::new(1.0, 8, 0.2, 0.4, 0.0, 1.5).unwrap();
        assert!(flat
            .kappa_field()
            .iter()
            .flatten()
            .all(|&k| (k - 0.4).abs() < 1e-15));
    }

    #[test]
    fn adapted_strategy_perturbation() {
        let lat = Lattice::new(1.0, 4, 0.2, 0.4, 0.0, 0.0).unwrap();
        let s = AdaptedStrategy::constant(&lat, 1.0);
        let p = s.perturb(1, 2, 0.25).unwrap();
        assert_eq!(p.value(0, 0), 1.0);
        assert_eq!(p.value(1, 1), 1.25);
        assert_eq!(p.value(2, 0), 1.25);
        assert_eq!(p.value(3, 3), 1.0);
        assert!(s.perturb(3, 2, 0.1).is_err());
    }
}
