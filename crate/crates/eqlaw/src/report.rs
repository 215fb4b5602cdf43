//! Structured run reports and CSV artifacts.
//!
//! Every float is printed with 17 significant digits so repeated runs with
//! the same config and seed produce byte-identical files.

use crate::closedform::{EquilibriumSolution, RduCandidate};
use crate::config::fmt_f64;
use crate::error::{Error, Result};
use crate::market::{AdaptedStrategy, Lattice, StrategyCurve, StrategyMode, WealthPaths};
use crate::qbsde::QbsdeSolution;
use crate::verify::PerturbationReport;
use std::fmt::Write as _;
use std::path::Path;

// ---------------------------------------------------------------------------
// Minimal JSON value tree
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum Json {
    Null,
    Bool(bool),
    Int(i64),
    Num(f64),
    Str(String),
    Arr(Vec<Json>),
    Obj(Vec<(String, Json)>),
}

impl Json {
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.write(&mut out, 0);
        out.push('\n');
        out
    }

    fn write(&self, out: &mut String, indent: usize) {
        match self {
            Json::Null => out.push_str("null"),
            Json::Bool(b) => {
                let _ = write!(out, "{b}");
            }
            Json::Int(i) => {
                let _ = write!(out, "{i}");
            }
            Json::Num(v) => {
                if v.is_finite() {
                    out.push_str(&fmt_f64(*v));
                } else {
                    out.push_str("null");
                }
            }
            Json::Str(s) => {
                out.push('"');
                for c in s.chars() {
                    match c {
                        '"' => out.push_str("\\\""),
                        '\\' => out.push_str("\\\\"),
                        '\n' => out.push_str("\\n"),
                        '\r' => out.push_str("\\r"),
                        '\t' => out.push_str("\\t"),
                        c if (c as u32) < 0x20 => {
                            let _ = write!(out, "\\u{:04x}", c as u32);
                        }
                        c => out.push(c),
                    }
                }
                out.push('"');
            }
            Json::Arr(items) => {
                if items.is_empty() {
                    out.push_str("[]");
                    return;
                }
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push('\n');
                    out.push_str(&"  ".repeat(indent + 1));
                    item.write(out, indent + 1);
                }
                out.push('\n');
                out.push_str(&"  ".repeat(indent));
                out.push(']');
            }
            Json::Obj(fields) => {
                if fields.is_empty() {
                    out.push_str("{}");
                    return;
                }
                out.push('{');
                for (i, (k, v)) in fields.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push('\n');
                    out.push_str(&"  ".repeat(indent + 1));
                    let _ = write!(out, "\"{k}\": ");
                    v.write(out, indent + 1);
                }
                out.push('\n');
                out.push_str(&"  ".repeat(indent));
                out.push('}');
            }
        }
    }

    pub fn num_list(values: &[f64]) -> Json {
        Json::Arr(values.iter().map(|&v| Json::Num(v)).collect())
    }
}

// ---------------------------------------------------------------------------
// Run report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub subcommand: String,
    pub seed: u64,
    pub config_echo: String,
    pub tasks: Vec<(String, String)>,
    pub verdicts: Vec<(String, String)>,
    pub feasibility: Option<Json>,
    pub diagnostics: Vec<(String, Json)>,
    pub artifacts: Vec<String>,
    pub timings_ms: Vec<(String, f64)>,
}

impl RunReport {
    pub fn new(subcommand: &str, seed: u64, config_echo: String) -> Self {
        RunReport {
            subcommand: subcommand.to_string(),
            seed,
            config_echo,
            ..Default::default()
        }
    }

    pub fn task(&mut self, name: &str, status: impl Into<String>) {
        self.tasks.push((name.to_string(), status.into()));
    }

    pub fn to_json(&self) -> Json {
        Json::Obj(vec![
            ("tool".into(), Json::Str("eqlaw".into())),
            (
                "version".into(),
                Json::Str(env!("CARGO_PKG_VERSION").into()),
            ),
            ("subcommand".into(), Json::Str(self.subcommand.clone())),
            ("seed".into(), Json::Int(self.seed as i64)),
            (
                "tasks".into(),
                Json::Arr(
                    self.tasks
                        .iter()
                        .map(|(n, s)| {
                            Json::Obj(vec![
                                ("name".into(), Json::Str(n.clone())),
                                ("status".into(), Json::Str(s.clone())),
                            ])
                        })
                        .collect(),
                ),
            ),
            (
                "verdicts".into(),
                Json::Arr(
                    self.verdicts
                        .iter()
                        .map(|(n, v)| {
                            Json::Obj(vec![
                                ("cell".into(), Json::Str(n.clone())),
                                ("verdict".into(), Json::Str(v.clone())),
                            ])
                        })
                        .collect(),
                ),
            ),
            (
                "feasibility".into(),
                self.feasibility.clone().unwrap_or(Json::Null),
            ),
            ("diagnostics".into(), Json::Obj(self.diagnostics.clone())),
            (
                "artifacts".into(),
                Json::Arr(
                    self.artifacts
                        .iter()
                        .map(|a| Json::Str(a.clone()))
                        .collect(),
                ),
            ),
            (
                "timings_ms".into(),
                Json::Obj(
                    self.timings_ms
                        .iter()
                        .map(|(n, v)| (n.clone(), Json::Num(*v)))
                        .collect(),
                ),
            ),
            ("config_echo".into(), Json::Str(self.config_echo.clone())),
        ])
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json().render())
            .map_err(|e| Error::Io(format!("cannot write report {}: {e}", path.display())))
    }
}

pub fn feasibility_json(f: &crate::closedform::FeasibilityRecord) -> Json {
    Json::Obj(vec![
        ("required".into(), Json::Num(f.required)),
        ("g_lower".into(), Json::Num(f.g_lower)),
        ("g_upper".into(), Json::Num(f.g_upper)),
        ("y_star".into(), Json::Num(f.y_star)),
        ("feasible".into(), Json::Bool(f.feasible)),
    ])
}

// ---------------------------------------------------------------------------
// CSV artifacts
// ---------------------------------------------------------------------------

fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content)
        .map_err(|e| Error::Io(format!("cannot write {}: {e}", path.display())))
}

/// Strategy curve with the cumulative-variance diagnostics:
/// `t, A, a_1.., pi_1..` per step.
pub fn write_strategy_csv(path: &Path, sol: &EquilibriumSolution) -> Result<()> {
    let d = sol.pi.dim();
    let mut s = String::from("t,A");
    for j in 0..d {
        let _ = write!(s, ",a_{}", j + 1);
    }
    for j in 0..d {
        let _ = write!(s, ",pi_{}", j + 1);
    }
    s.push('\n');
    for step in 0..sol.pi.n_steps() {
        let _ = write!(
            s,
            "{},{}",
            fmt_f64(sol.t_grid[step]),
            fmt_f64(sol.big_a[step])
        );
        for v in &sol.a[step] {
            let _ = write!(s, ",{}", fmt_f64(*v));
        }
        for v in sol.pi.value_at(step) {
            let _ = write!(s, ",{}", fmt_f64(*v));
        }
        s.push('\n');
    }
    write_file(path, &s)
}

/// Read back the `pi_*` columns of a strategy CSV.
pub fn read_strategy_csv(path: &Path, mode: StrategyMode) -> Result<StrategyCurve> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Io(format!("{}: empty strategy file", path.display())))?;
    let cols: Vec<&str> = header.split(',').collect();
    let pi_cols: Vec<usize> = cols
        .iter()
        .enumerate()
        .filter(|(_, c)| c.starts_with("pi_"))
        .map(|(i, _)| i)
        .collect();
    if pi_cols.is_empty() {
        return Err(Error::Io(format!("{}: no pi_* columns", path.display())));
    }
    let mut values = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let mut row = Vec::with_capacity(pi_cols.len());
        for &c in &pi_cols {
            let raw = fields.get(c).ok_or_else(|| {
                Error::Io(format!("{}: row {} too short", path.display(), idx + 2))
            })?;
            row.push(raw.parse::<f64>().map_err(|_| {
                Error::Io(format!(
                    "{}: bad number `{raw}` in row {}",
                    path.display(),
                    idx + 2
                ))
            })?);
        }
        values.push(row);
    }
    StrategyCurve::new(mode, values)
}

/// Lattice solution fields keyed by `(level, node_index)`.
pub fn write_lattice_csv(
    path: &Path,
    lattice: &Lattice,
    sol: &QbsdeSolution,
    strategy: &AdaptedStrategy,
) -> Result<()> {
    let mut s = String::from("level,node_index,kappa,ybar1,ybar2,zbar1,zbar2,pi\n");
    for level in 0..lattice.n_steps() {
        for j in 0..=level {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                level,
                j,
                fmt_f64(lattice.kappa(level, j)),
                fmt_f64(sol.ybar1[level][j]),
                fmt_f64(sol.ybar2[level][j]),
                fmt_f64(sol.zbar1[level][j]),
                fmt_f64(sol.zbar2[level][j]),
                fmt_f64(strategy.value(level, j)),
            );
        }
    }
    write_file(path, &s)
}

/// Simulated wealth paths: `path_id, t, X`.
pub fn write_wealth_csv(path: &Path, paths: &WealthPaths) -> Result<()> {
    let mut s = String::from("path_id,t,X\n");
    for (pid, row) in paths.data.iter().enumerate() {
        for (t, x) in paths.times.iter().zip(row) {
            let _ = writeln!(s, "{},{},{}", pid, fmt_f64(*t), fmt_f64(*x));
        }
    }
    write_file(path, &s)
}

/// Perturbation gain table: `t, phi, eps, gain, std_err`.
pub fn write_perturbation_csv(path: &Path, reports: &[PerturbationReport]) -> Result<()> {
    let mut s = String::from("t_index,phi,eps,gain,std_err\n");
    for rep in reports {
        let phi = rep
            .phi
            .iter()
            .map(|&v| fmt_f64(v))
            .collect::<Vec<_>>()
            .join(";");
        for ((eps, gain), se) in rep.eps_grid.iter().zip(&rep.gain).zip(&rep.std_err) {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                rep.t_index,
                phi,
                fmt_f64(*eps),
                fmt_f64(*gain),
                fmt_f64(*se)
            );
        }
    }
    write_file(path, &s)
}

/// Verdict summary table for a perturbation basket.
pub fn write_verdict_csv(path: &Path, reports: &[PerturbationReport]) -> Result<()> {
    let mut s =
        String::from("t_index,phi,extrapolated_limit,richardson_residual,tol_gain,verdict\n");
    for rep in reports {
        let phi = rep
            .phi
            .iter()
            .map(|&v| fmt_f64(v))
            .collect::<Vec<_>>()
            .join(";");
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            rep.t_index,
            phi,
            fmt_f64(rep.extrapolated_limit),
            fmt_f64(rep.richardson_residual),
            fmt_f64(rep.tol_gain),
            rep.verdict
        );
    }
    write_file(path, &s)
}

/// Candidate curves for the rank-dependent preference: `t, Lambda, lambda`.
pub fn write_rdu_csv(path: &Path, cand: &RduCandidate) -> Result<()> {
    let mut s = String::from("t,Lambda,lambda,candidate\n");
    for i in 0..cand.t_grid.len() {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            fmt_f64(cand.t_grid[i]),
            fmt_f64(cand.big_lambda[i]),
            fmt_f64(cand.lambda[i]),
            cand.candidate
        );
    }
    write_file(path, &s)
}

/// Static vector-graphic plot of the strategy and cumulative-variance
/// curves (first coordinate only for multi-asset strategies).
pub fn write_strategy_svg(path: &Path, sol: &EquilibriumSolution) -> Result<()> {
    const W: f64 = 640.0;
    const H: f64 = 360.0;
    const PAD: f64 = 40.0;
    let n = sol.pi.n_steps();
    let pi: Vec<f64> = (0..n).map(|i| sol.pi.value_at(i)[0]).collect();
    let t_max = *sol.t_grid.last().unwrap();
    let series: [(&str, &[f64], &str); 2] =
        [("pi", &pi, "#1f6f43"), ("A", &sol.big_a[..n], "#28506e")];
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (_, data, _) in &series {
        for &v in *data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if hi - lo <= 0.0 || !(hi - lo).is_finite() {
        hi = lo + 1.0;
    }
    let x_of = |t: f64| PAD + (W - 2.0 * PAD) * t / t_max;
    let y_of = |v: f64| H - PAD - (H - 2.0 * PAD) * (v - lo) / (hi - lo);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\">"
    );
    let _ = writeln!(
        s,
        "  <rect width=\"{W}\" height=\"{H}\" fill=\"white\" stroke=\"#cccccc\"/>"
    );
    for (name, data, color) in &series {
        let mut points = String::new();
        for (i, &v) in data.iter().enumerate() {
            let _ = write!(points, "{:.2},{:.2} ", x_of(sol.t_grid[i]), y_of(v));
        }
        let _ = writeln!(
            s,
            "  <polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" \
             points=\"{points}\"/>"
        );
        let _ = writeln!(
            s,
            "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" fill=\"{color}\">{name}</text>",
            x_of(sol.t_grid[0]) + 4.0,
            y_of(data[0]) - 4.0
        );
    }
    let _ = writeln!(
        s,
        "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" fill=\"#444444\">t in [0, {t_max}]</text>",
        PAD,
        H - PAD / 3.0
    );
    let _ = writeln!(s, "</svg>");
    write_file(path, &s)
}

pub fn perturbation_json(rep: &PerturbationReport) -> Json {
    Json::Obj(vec![
        ("t_index".into(), Json::Int(rep.t_index as i64)),
        ("phi".into(), Json::num_list(&rep.phi)),
        ("eps".into(), Json::num_list(&rep.eps_grid)),
        ("gain".into(), Json::num_list(&rep.gain)),
        ("std_err".into(), Json::num_list(&rep.std_err)),
        (
            "extrapolated_limit".into(),
            Json::Num(rep.extrapolated_limit),
        ),
        (
            "richardson_residual".into(),
            Json::Num(rep.richardson_residual),
        ),
        ("tol_gain".into(), Json::Num(rep.tol_gain)),
        ("verdict".into(), Json::Str(rep.verdict.to_string())),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closedform::solve_equilibrium_crra;
    use crate::market::MarketModel;
    use crate::preferences::Preference;

    #[test]
    fn strategy_csv_round_trip() {
        let model = MarketModel::scalar(1.0, 8, 0.08, 0.2).unwrap();
        let pref = Preference::crra_dirac(-0.5).unwrap();
        let sol = solve_equilibrium_crra(&pref, &model).unwrap();
        let dir = std::env::temp_dir().join("eqlaw_report_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("strategy.csv");
        write_strategy_csv(&path, &sol).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t,A,a_1,pi_1\n"));
        let back = read_strategy_csv(&path, StrategyMode::Proportion).unwrap();
        assert_eq!(back.n_steps(), 8);
        for step in 0..8 {
            assert_eq!(back.value_at(step)[0], sol.pi.value_at(step)[0]);
        }
        // Identical content on rewrite.
        let again_path = dir.join("strategy2.csv");
        write_strategy_csv(&again_path, &sol).unwrap();
        assert_eq!(text, std::fs::read_to_string(&again_path).unwrap());
    }

    #[test]
    fn strategy_csv_reader_rejects_defects() {
        let dir = std::env::temp_dir().join("eqlaw_report_test3");
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("missing.csv");
        let _ = std::fs::remove_file(&p);
        assert!(read_strategy_csv(&p, StrategyMode::Proportion).is_err());
        let p = dir.join("no_pi.csv");
        std::fs::write(&p, "t,A\n0.0,1.0\n").unwrap();
        assert!(read_strategy_csv(&p, StrategyMode::Proportion).is_err());
        let p = dir.join("bad_number.csv");
        std::fs::write(&p, "t,A,pi_1\n0.0,1.0,oops\n").unwrap();
        assert!(read_strategy_csv(&p, StrategyMode::Proportion).is_err());
    }

    #[test]
    fn wealth_csv_and_svg_emission() {
        let model = MarketModel::scalar(1.0, 4, 0.08, 0.2).unwrap();
        let strat =
            crate::market::StrategyCurve::constant(StrategyMode::Proportion, 4, vec![0.5]).unwrap();
        let paths = crate::market::simulate_proportion(&model, &strat, 1.0, 3, 9).unwrap();
        let dir = std::env::temp_dir().join("eqlaw_report_test2");
        std::fs::create_dir_all(&dir).unwrap();
        let wp = dir.join("wealth.csv");
        write_wealth_csv(&wp, &paths).unwrap();
        let text = std::fs::read_to_string(&wp).unwrap();
        assert!(text.starts_with("path_id,t,X\n"));
        assert_eq!(text.lines().count(), 1 + 3 * 5);

        let pref = Preference::crra_dirac(-0.5).unwrap();
        let sol = solve_equilibrium_crra(&pref, &model).unwrap();
        let sp = dir.join("strategy.svg");
        write_strategy_svg(&sp, &sol).unwrap();
        let svg = std::fs::read_to_string(&sp).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("polyline"));
    }

    #[test]
    fn json_rendering_escapes_and_formats() {
        let j = Json::Obj(vec![
            ("name".into(), Json::Str("line\nbreak \"q\"".into())),
            ("value".into(), Json::Num(1.0 / 3.0)),
            ("flag".into(), Json::Bool(true)),
            ("items".into(), Json::num_list(&[1.0, 2.5])),
        ]);
        let text = j.render();
        assert!(text.contains("\\n"));
        assert!(text.contains("\\\"q\\\""));
        assert!(text.contains("3.3333333333333331e-1"));
    }
}
