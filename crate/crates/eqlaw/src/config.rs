//! Run configuration: a sectioned plain-text `key = value` format.
//!
//! ```text
//! [preference]
//! family = mixed_crra
//! gammas = [-0.5]
//! weights = [1.0]
//!
//! [market]
//! horizon = 1.0
//! grid = 256
//! theta = [0.08]
//! sigma = [0.2]
//! ```
//!
//! Sections: `preference`, `market`, `lattice`, `solver`, `verify`,
//! `output`. Unknown sections and unknown keys are rejected with the line
//! number. `--override section.key=value` replaces entries before
//! validation. The full schema is documented in `docs/config-schema.md`.

use crate::error::{Error, Result};
use crate::laws;
use crate::market::{Lattice, MarketModel, Mat};
use crate::preferences::{Distortion, Preference};
use std::collections::BTreeMap;

#[derive(Debug, Clone)]
struct Entry {
    line: usize,
    value: String,
    consumed: bool,
}

#[derive(Debug, Clone, Default)]
struct RawConfig {
    // section -> key -> entry
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
}

const KNOWN_SECTIONS: [&str; 6] = [
    "preference",
    "market",
    "lattice",
    "solver",
    "verify",
    "output",
];

impl RawConfig {
    fn parse(text: &str) -> Result<Self> {
        let mut raw = RawConfig::default();
        let mut section = String::new();
        for (idx, line_raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match line_raw.find('#') {
                Some(pos) => &line_raw[..pos],
                None => line_raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or(Error::Config {
                    line: line_no,
                    key: line.to_string(),
                    msg: "unterminated section header".into(),
                })?;
                let name = name.trim().to_string();
                if !KNOWN_SECTIONS.contains(&name.as_str()) {
                    return Err(Error::Config {
                        line: line_no,
                        key: name,
                        msg: format!("unknown section; expected one of {KNOWN_SECTIONS:?}"),
                    });
                }
                section = name;
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(Error::Config {
                line: line_no,
                key: line.to_string(),
                msg: "expected `key = value`".into(),
            })?;
            if section.is_empty() {
                return Err(Error::Config {
                    line: line_no,
                    key: key.trim().to_string(),
                    msg: "key appears before any [section] header".into(),
                });
            }
            let key = key.trim().to_string();
            let prior = raw.sections.entry(section.clone()).or_default().insert(
                key.clone(),
                Entry {
                    line: line_no,
                    value: value.trim().to_string(),
                    consumed: false,
                },
            );
            if prior.is_some() {
                return Err(Error::Config {
                    line: line_no,
                    key,
                    msg: "duplicate key in section".into(),
                });
            }
        }
        Ok(raw)
    }

    fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (path, value) = assignment.split_once('=').ok_or(Error::Config {
            line: 0,
            key: assignment.to_string(),
            msg: "override must look like section.key=value".into(),
        })?;
        let (section, key) = path.trim().split_once('.').ok_or(Error::Config {
            line: 0,
            key: path.to_string(),
            msg: "override path must be section.key".into(),
        })?;
        if !KNOWN_SECTIONS.contains(&section) {
            return Err(Error::Config {
                line: 0,
                key: section.to_string(),
                msg: "unknown section in override".into(),
            });
        }
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(
                key.trim().to_string(),
                Entry {
                    line: 0,
                    value: value.trim().to_string(),
                    consumed: false,
                },
            );
        Ok(())
    }

    fn reader(&mut self, section: &str) -> SectionReader<'_> {
        SectionReader {
            name: section.to_string(),
            entries: self.sections.get_mut(section),
        }
    }

    fn check_consumed(&self) -> Result<()> {
        for (section, entries) in &self.sections {
            for (key, entry) in entries {
                if !entry.consumed {
                    return Err(Error::Config {
                        line: entry.line,
                        key: format!("{section}.{key}"),
                        msg: "unknown key".into(),
                    });
                }
            }
        }
        Ok(())
    }
}

struct SectionReader<'a> {
    name: String,
    entries: Option<&'a mut BTreeMap<String, Entry>>,
}

impl SectionReader<'_> {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        let entries = self.entries.as_mut()?;
        let entry = entries.get_mut(key)?;
        entry.consumed = true;
        Some((entry.line, entry.value.clone()))
    }

    fn err(&self, line: usize, key: &str, msg: impl Into<String>) -> Error {
        Error::Config {
            line,
            key: format!("{}.{key}", self.name),
            msg: msg.into(),
        }
    }

    fn missing(&self, key: &str) -> Error {
        Error::Config {
            line: 0,
            key: format!("{}.{key}", self.name),
            msg: "required key missing".into(),
        }
    }

    fn f64_opt(&mut self, key: &str) -> Result<Option<f64>> {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse::<f64>()
                .map(Some)
                .map_err(|_| self.err(line, key, format!("`{v}` is not a number"))),
        }
    }

    fn f64_req(&mut self, key: &str) -> Result<f64> {
        self.f64_opt(key)?.ok_or_else(|| self.missing(key))
    }

    fn usize_opt(&mut self, key: &str) -> Result<Option<usize>> {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse::<usize>()
                .map(Some)
                .map_err(|_| self.err(line, key, format!("`{v}` is not a non-negative integer"))),
        }
    }

    fn u64_opt(&mut self, key: &str) -> Result<Option<u64>> {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse::<u64>()
                .map(Some)
                .map_err(|_| self.err(line, key, format!("`{v}` is not a non-negative integer"))),
        }
    }

    fn string_opt(&mut self, key: &str) -> Result<Option<String>> {
        Ok(self.take(key).map(|(_, v)| v.trim_matches('"').to_string()))
    }

    fn string_req(&mut self, key: &str) -> Result<String> {
        self.string_opt(key)?.ok_or_else(|| self.missing(key))
    }

    fn vec_f64_opt(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => {
                let inner = v
                    .strip_prefix('[')
                    .and_then(|s| s.strip_suffix(']'))
                    .ok_or_else(|| self.err(line, key, "expected [v1, v2, ...]"))?;
                let mut out = Vec::new();
                for tok in inner.split(',') {
                    let tok = tok.trim();
                    if tok.is_empty() {
                        continue;
                    }
                    out.push(
                        tok.parse::<f64>()
                            .map_err(|_| self.err(line, key, format!("`{tok}` is not a number")))?,
                    );
                }
                if out.is_empty() {
                    return Err(self.err(line, key, "list must not be empty"));
                }
                Ok(Some(out))
            }
        }
    }

    fn vec_f64_req(&mut self, key: &str) -> Result<Vec<f64>> {
        self.vec_f64_opt(key)?.ok_or_else(|| self.missing(key))
    }

    fn vec_string_opt(&mut self, key: &str) -> Result<Option<Vec<String>>> {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => {
                let inner = v
                    .strip_prefix('[')
                    .and_then(|s| s.strip_suffix(']'))
                    .ok_or_else(|| self.err(line, key, "expected [a, b, ...]"))?;
                Ok(Some(
                    inner
                        .split(',')
                        .map(|t| t.trim().trim_matches('"').to_string())
                        .filter(|t| !t.is_empty())
                        .collect(),
                ))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Typed configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub quadrature_order: usize,
    pub root_tol: f64,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
}

#[derive(Debug, Clone)]
pub struct VerifyConfig {
    /// Interior evaluation times as fractions of the horizon.
    pub t_fracs: Vec<f64>,
    /// Scalar multiples applied to each coordinate direction.
    pub phi_scales: Vec<f64>,
    /// Window widths as fractions of the remaining horizon, decreasing.
    pub eps_fracs: Vec<f64>,
    /// 0 selects analytic mode; otherwise the Monte Carlo path count.
    pub paths: usize,
    pub seed: u64,
    pub tol_gain: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct OutputConfig {
    pub dir: String,
    pub formats: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct LatticeConfig {
    pub steps: usize,
    pub kappa0: f64,
    pub eta: f64,
    pub s: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub preference: Preference,
    pub horizon: f64,
    pub grid: usize,
    pub theta: Vec<f64>,
    pub sigma_diag: Vec<f64>,
    pub theta_curve: Option<Vec<f64>>,
    pub sigma_curve: Option<Vec<f64>>,
    pub lattice: Option<LatticeConfig>,
    pub solver: SolverConfig,
    pub verify: VerifyConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_file(path: &str, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("cannot read config {path}: {e}")))?;
        Self::from_str(&text, overrides)
    }

    pub fn from_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut raw = RawConfig::parse(text)?;
        for o in overrides {
            raw.apply_override(o)?;
        }
        Self::build(raw)
    }

    fn build(mut raw: RawConfig) -> Result<Self> {
        // [preference]
        let preference = {
            let mut r = raw.reader("preference");
            let family = r.string_req("family")?;
            match family.as_str() {
                "mixed_crra" => {
                    let gammas = r.vec_f64_req("gammas")?;
                    let weights = r
                        .vec_f64_opt("weights")?
                        .unwrap_or_else(|| vec![1.0 / gammas.len() as f64; gammas.len()]);
                    if weights.len() != gammas.len() {
                        return Err(Error::Config {
                            line: 0,
                            key: "preference.weights".into(),
                            msg: "weights and gammas must have equal length".into(),
                        });
                    }
                    let atoms = gammas.into_iter().zip(weights).collect();
                    match r.f64_opt("eps0")? {
                        Some(eps0) => Preference::MixedCrra(
                            crate::preferences::MixedCrra::with_band(atoms, eps0)?,
                        ),
                        None => Preference::mixed_crra(atoms)?,
                    }
                }
                "cara" => {
                    let rhos = r.vec_f64_req("rhos")?;
                    let weights = r
                        .vec_f64_opt("weights")?
                        .unwrap_or_else(|| vec![1.0 / rhos.len() as f64; rhos.len()]);
                    if weights.len() != rhos.len() {
                        return Err(Error::Config {
                            line: 0,
                            key: "preference.weights".into(),
                            msg: "weights and rhos must have equal length".into(),
                        });
                    }
                    Preference::cara(rhos.into_iter().zip(weights).collect())?
                }
                "weighted_utility" => {
                    Preference::weighted_utility(r.f64_req("gamma")?, r.f64_req("rho")?)?
                }
                "mean_variance" => Preference::mean_variance(r.f64_req("gamma_mv")?)?,
                "rdu" => {
                    let alpha = r.f64_req("alpha")?;
                    let distortion = match r.string_opt("distortion")?.as_deref() {
                        None | Some("identity") => Distortion::Identity,
                        Some("power") => Distortion::Power {
                            theta: r.f64_req("distortion_theta")?,
                        },
                        Some(other) => {
                            return Err(Error::Config {
                                line: 0,
                                key: "preference.distortion".into(),
                                msg: format!("unknown distortion `{other}`"),
                            })
                        }
                    };
                    Preference::rdu(alpha, distortion)?
                }
                "expected_utility" => Preference::expected_utility(r.f64_req("gamma")?)?,
                other => {
                    return Err(Error::Config {
                        line: 0,
                        key: "preference.family".into(),
                        msg: format!("unknown family `{other}`"),
                    })
                }
            }
        };

        // [market]
        let (horizon, grid, theta, sigma_diag, theta_curve, sigma_curve) = {
            let mut r = raw.reader("market");
            let horizon = r.f64_opt("horizon")?.unwrap_or(1.0);
            let grid = r.usize_opt("grid")?.unwrap_or(256);
            let theta = r.vec_f64_opt("theta")?.unwrap_or_else(|| vec![0.08]);
            let sigma = r.vec_f64_opt("sigma")?.unwrap_or_else(|| vec![0.2]);
            let theta_curve = r.vec_f64_opt("theta_curve")?;
            let sigma_curve = r.vec_f64_opt("sigma_curve")?;
            if sigma.len() != theta.len() {
                return Err(Error::Config {
                    line: 0,
                    key: "market.sigma".into(),
                    msg: "sigma and theta must have equal length (diagonal model)".into(),
                });
            }
            (horizon, grid, theta, sigma, theta_curve, sigma_curve)
        };

        // [lattice]
        let lattice = {
            let mut r = raw.reader("lattice");
            match r.f64_opt("kappa0")? {
                None => {
                    // Consume nothing else; leftover keys in an unused
                    // lattice section will be flagged as unknown.
                    None
                }
                Some(kappa0) => Some(LatticeConfig {
                    steps: r.usize_opt("steps")?.unwrap_or(512),
                    kappa0,
                    eta: r.f64_opt("eta")?.unwrap_or(0.0),
                    s: r.f64_opt("s")?.unwrap_or(1.0),
                    sigma: r.f64_opt("sigma")?.unwrap_or(0.2),
                }),
            }
        };

        // [solver]
        let solver = {
            let mut r = raw.reader("solver");
            SolverConfig {
                quadrature_order: r
                    .usize_opt("quadrature_order")?
                    .unwrap_or(laws::DEFAULT_QUAD_ORDER),
                root_tol: r.f64_opt("root_tol")?.unwrap_or(laws::DEFAULT_ROOT_TOL),
                picard_tol: r.f64_opt("picard_tol")?.unwrap_or(1e-11),
                picard_max_iter: r.usize_opt("picard_max_iter")?.unwrap_or(60),
            }
        };

        // [verify]
        let verify = {
            let mut r = raw.reader("verify");
            VerifyConfig {
                t_fracs: r
                    .vec_f64_opt("t_fracs")?
                    .unwrap_or_else(|| vec![0.1, 0.3, 0.5, 0.7, 0.9]),
                phi_scales: r
                    .vec_f64_opt("phi_scales")?
                    .unwrap_or_else(|| vec![1.0, -1.0, 2.0, -2.0]),
                eps_fracs: r
                    .vec_f64_opt("eps_fracs")?
                    .unwrap_or_else(|| (3..=8).map(|k| (0.5_f64).powi(k)).collect()),
                paths: r.usize_opt("paths")?.unwrap_or(0),
                seed: r.u64_opt("seed")?.unwrap_or(42),
                tol_gain: r.f64_opt("tol_gain")?,
            }
        };

        // [output]
        let output = {
            let mut r = raw.reader("output");
            OutputConfig {
                dir: r.string_opt("dir")?.unwrap_or_else(|| "out".into()),
                formats: r
                    .vec_string_opt("formats")?
                    .unwrap_or_else(|| vec!["csv".into(), "json".into()]),
            }
        };

        raw.check_consumed()?;

        let cfg = RunConfig {
            preference,
            horizon,
            grid,
            theta,
            sigma_diag,
            theta_curve,
            sigma_curve,
            lattice,
            solver,
            verify,
            output,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.horizon <= 0.0 {
            return Err(Error::InvalidParameter("market.horizon must be > 0".into()));
        }
        if self.grid == 0 {
            return Err(Error::InvalidParameter("market.grid must be >= 1".into()));
        }
        if !(2..=256).contains(&self.solver.quadrature_order) {
            return Err(Error::QuadratureOrder {
                order: self.solver.quadrature_order,
            });
        }
        for &f in &self.verify.t_fracs {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::InvalidParameter(format!(
                    "verify.t_fracs entry {f} must lie in [0, 1)"
                )));
            }
        }
        if self.verify.eps_fracs.len() < 2 || self.verify.eps_fracs.windows(2).any(|w| w[1] >= w[0])
        {
            return Err(Error::InvalidParameter(
                "verify.eps_fracs must be strictly decreasing with >= 2 entries".into(),
            ));
        }
        Ok(())
    }

    /// Build the deterministic market model from the config.
    pub fn build_market(&self) -> Result<MarketModel> {
        match (&self.theta_curve, &self.sigma_curve) {
            (Some(tc), Some(sc)) => {
                if tc.len() != sc.len() {
                    return Err(Error::InvalidParameter(
                        "theta_curve and sigma_curve must have equal length".into(),
                    ));
                }
                MarketModel::scalar_curves(self.horizon, tc.clone(), sc.clone())
            }
            (None, None) => MarketModel::constant(
                self.horizon,
                self.grid,
                self.theta.clone(),
                Mat::diag(&self.sigma_diag),
            ),
            _ => Err(Error::InvalidParameter(
                "theta_curve and sigma_curve must be given together".into(),
            )),
        }
    }

    pub fn build_lattice(&self) -> Result<Lattice> {
        let lc = self.lattice.as_ref().ok_or_else(|| {
            Error::InvalidParameter("config has no [lattice] section with kappa0".into())
        })?;
        Lattice::new(self.horizon, lc.steps, lc.sigma, lc.kappa0, lc.eta, lc.s)
    }

    /// Verification time indices on the market grid.
    pub fn verify_t_indices(&self, n_steps: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .verify
            .t_fracs
            .iter()
            .map(|f| ((f * n_steps as f64).round() as usize).min(n_steps.saturating_sub(1)))
            .collect();
        out.dedup();
        out
    }

    /// Canonical text round-trip of the configuration.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        s.push_str("[preference]\n");
        match &self.preference {
            Preference::MixedCrra(m) => {
                s.push_str("family = mixed_crra\n");
                let gammas: Vec<f64> = m.atoms().iter().map(|a| a.0).collect();
                let weights: Vec<f64> = m.atoms().iter().map(|a| a.1).collect();
                s.push_str(&format!("gammas = {}\n", fmt_list(&gammas)));
                s.push_str(&format!("weights = {}\n", fmt_list(&weights)));
                s.push_str(&format!("eps0 = {}\n", fmt_f64(m.eps0())));
            }
            Preference::Cara(c) => {
                s.push_str("family = cara\n");
                let rhos: Vec<f64> = c.atoms().iter().map(|a| a.0).collect();
                let weights: Vec<f64> = c.atoms().iter().map(|a| a.1).collect();
                s.push_str(&format!("rhos = {}\n", fmt_list(&rhos)));
                s.push_str(&format!("weights = {}\n", fmt_list(&weights)));
            }
            Preference::WeightedUtility { gamma, rho } => {
                s.push_str("family = weighted_utility\n");
                s.push_str(&format!("gamma = {}\n", fmt_f64(*gamma)));
                s.push_str(&format!("rho = {}\n", fmt_f64(*rho)));
            }
            Preference::MeanVariance { gamma_mv } => {
                s.push_str("family = mean_variance\n");
                s.push_str(&format!("gamma_mv = {}\n", fmt_f64(*gamma_mv)));
            }
            Preference::Rdu(rdu) => {
                s.push_str("family = rdu\n");
                s.push_str(&format!("alpha = {}\n", fmt_f64(rdu.alpha)));
                match &rdu.distortion {
                    Distortion::Identity => s.push_str("distortion = identity\n"),
                    Distortion::Power { theta } => {
                        s.push_str("distortion = power\n");
                        s.push_str(&format!("distortion_theta = {}\n", fmt_f64(*theta)));
                    }
                }
            }
            Preference::ExpectedUtility { gamma } => {
                s.push_str("family = expected_utility\n");
                s.push_str(&format!("gamma = {}\n", fmt_f64(*gamma)));
            }
        }
        s.push_str("\n[market]\n");
        s.push_str(&format!("horizon = {}\n", fmt_f64(self.horizon)));
        s.push_str(&format!("grid = {}\n", self.grid));
        s.push_str(&format!("theta = {}\n", fmt_list(&self.theta)));
        s.push_str(&format!("sigma = {}\n", fmt_list(&self.sigma_diag)));
        if let Some(tc) = &self.theta_curve {
            s.push_str(&format!("theta_curve = {}\n", fmt_list(tc)));
        }
        if let Some(sc) = &self.sigma_curve {
            s.push_str(&format!("sigma_curve = {}\n", fmt_list(sc)));
        }
        if let Some(lc) = &self.lattice {
            s.push_str("\n[lattice]\n");
            s.push_str(&format!("steps = {}\n", lc.steps));
            s.push_str(&format!("kappa0 = {}\n", fmt_f64(lc.kappa0)));
            s.push_str(&format!("eta = {}\n", fmt_f64(lc.eta)));
            s.push_str(&format!("s = {}\n", fmt_f64(lc.s)));
            s.push_str(&format!("sigma = {}\n", fmt_f64(lc.sigma)));
        }
        s.push_str("\n[solver]\n");
        s.push_str(&format!(
            "quadrature_order = {}\n",
            self.solver.quadrature_order
        ));
        s.push_str(&format!("root_tol = {}\n", fmt_f64(self.solver.root_tol)));
        s.push_str(&format!(
            "picard_tol = {}\n",
            fmt_f64(self.solver.picard_tol)
        ));
        s.push_str(&format!(
            "picard_max_iter = {}\n",
            self.solver.picard_max_iter
        ));
        s.push_str("\n[verify]\n");
        s.push_str(&format!("t_fracs = {}\n", fmt_list(&self.verify.t_fracs)));
        s.push_str(&format!(
            "phi_scales = {}\n",
            fmt_list(&self.verify.phi_scales)
        ));
        s.push_str(&format!(
            "eps_fracs = {}\n",
            fmt_list(&self.verify.eps_fracs)
        ));
        s.push_str(&format!("paths = {}\n", self.verify.paths));
        s.push_str(&format!("seed = {}\n", self.verify.seed));
        if let Some(t) = self.verify.tol_gain {
            s.push_str(&format!("tol_gain = {}\n", fmt_f64(t)));
        }
        s.push_str("\n[output]\n");
        s.push_str(&format!("dir = {}\n", self.output.dir));
        s.push_str(&format!("formats = [{}]\n", self.output.formats.join(", ")));
        s
    }
}

/// 17 significant digits, round-trip exact.
pub fn fmt_f64(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        // Integral values print plainly so configs stay readable.
        format!("{v:.1}")
    } else {
        format!("{v:.16e}")
    }
}

fn fmt_list(vs: &[f64]) -> String {
    let inner: Vec<String> = vs.iter().map(|&v| fmt_f64(v)).collect();
    format!("[{}]", inner.join(", "))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
# example configuration
[preference]
family = mixed_crra
gammas = [-0.5, 0.3]
weights = [0.6, 0.4]

[market]
horizon = 1.0
grid = 64
theta = [0.08]
sigma = [0.2]

[solver]
quadrature_order = 64

[verify]
t_fracs = [0.25, 0.5]
paths = 0
seed = 7

[output]
dir = out
"#;

    #[test]
    fn parses_and_builds() {
        let cfg = RunConfig::from_str(SAMPLE, &[]).unwrap();
        assert_eq!(cfg.grid, 64);
        assert_eq!(cfg.verify.seed, 7);
        let market = cfg.build_market().unwrap();
        assert_eq!(market.n_steps(), 64);
        assert!((market.kappa(0).unwrap()[0] - 0.4).abs() < 1e-14);
        assert!(matches!(cfg.preference, Preference::MixedCrra(_)));
    }

    #[test]
    fn unknown_key_is_rejected_with_location() {
        let bad = SAMPLE.replace("dir = out", "dir = out\ntypo_key = 3");
        match RunConfig::from_str(&bad, &[]) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "output.typo_key"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_section_and_family_rejected() {
        let bad = format!("{SAMPLE}\n[mystery]\nx = 1\n");
        assert!(matches!(
            RunConfig::from_str(&bad, &[]),
            Err(Error::Config { .. })
        ));
        let bad = SAMPLE.replace("family = mixed_crra", "family = quadratic");
        assert!(RunConfig::from_str(&bad, &[]).is_err());
    }

    #[test]
    fn module_constraints_revalidated_at_load() {
        let bad = SAMPLE.replace("gammas = [-0.5, 0.3]", "gammas = [-0.5, 1.4]");
        assert!(RunConfig::from_str(&bad, &[]).is_err());
        let bad = SAMPLE.replace("weights = [0.6, 0.4]", "weights = [0.6, 0.6]");
        assert!(RunConfig::from_str(&bad, &[]).is_err());
    }

    #[test]
    fn overrides_replace_values() {
        let cfg = RunConfig::from_str(SAMPLE, &["market.grid=128".into(), "verify.seed=9".into()])
            .unwrap();
        assert_eq!(cfg.grid, 128);
        assert_eq!(cfg.verify.seed, 9);
        assert!(RunConfig::from_str(SAMPLE, &["bad-override".into()]).is_err());
    }

    #[test]
    fn echo_round_trips() {
        let cfg = RunConfig::from_str(
            SAMPLE,
            &["lattice.kappa0=0.4".into(), "lattice.steps=32".into()],
        )
        .unwrap();
        let echo = cfg.echo();
        let again = RunConfig::from_str(&echo, &[]).unwrap();
        assert_eq!(cfg.grid, again.grid);
        assert_eq!(cfg.verify.t_fracs, again.verify.t_fracs);
        assert_eq!(cfg.horizon, again.horizon);
        assert_eq!(
            cfg.lattice.as_ref().unwrap().steps,
            again.lattice.as_ref().unwrap().steps
        );
        // Echo of the echo is byte-identical.
        assert_eq!(echo, again.echo());
    }

    #[test]
    fn rdu_and_other_families_parse() {
        let text = SAMPLE.replace(
            "family = mixed_crra\ngammas = [-0.5, 0.3]\nweights = [0.6, 0.4]",
            "family = rdu\nalpha = 0.5\ndistortion = power\ndistortion_theta = 0.9",
        );
        let cfg = RunConfig::from_str(&text, &[]).unwrap();
        assert!(matches!(cfg.preference, Preference::Rdu(_)));

        let text = SAMPLE.replace(
            "family = mixed_crra\ngammas = [-0.5, 0.3]\nweights = [0.6, 0.4]",
            "family = weighted_utility\ngamma = -0.5\nrho = 0.25",
        );
        let cfg = RunConfig::from_str(&text, &[]).unwrap();
        assert!(matches!(cfg.preference, Preference::WeightedUtility { .. }));
    }
}
