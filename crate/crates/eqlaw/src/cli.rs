//! Batch front end: parse a config, dispatch solves and verifications, emit
//! CSV artifacts and a structured JSON report.
//!
//! Exit status: 0 on success (including a `verify` run whose verdict is
//! `violated` — the report carries the verdict), 2 when a solve is
//! infeasible or the lattice iteration diverges, 1 on any other error.

use crate::closedform;
use crate::config::RunConfig;
use crate::error::Error;
use crate::market::StrategyMode;
use crate::preferences::Preference;
use crate::qbsde;
use crate::report::{self, Json, RunReport};
use crate::verify::{self, GainMode};
use std::path::{Path, PathBuf};

const USAGE: &str = "\
eqlaw - equilibrium portfolio strategies for law-dependent preferences

usage: eqlaw <subcommand> [options]

subcommands:
  solve-crra    closed-form equilibrium for a mixed power certainty
                equivalent or weighted utility (proportion strategy)
  solve-cara    closed-form equilibrium for an exponential certainty
                equivalent (dollar strategy)
  solve-mv      mean-variance equilibrium (dollar strategy)
  solve-rdu     rank-dependent candidate curves (no verification)
  solve-wu      weighted utility on the random-coefficient lattice
  verify        first-order-condition residual and perturbation report
                for a saved strategy
  selftest      run the acceptance suite

options:
  --config PATH            configuration file (required except selftest)
  --seed N                 override verify.seed
  --out DIR                override output.dir
  --grid N                 override market.grid
  --quadrature-order N     override solver.quadrature_order
  --override KEY=VALUE     raw section.key=value override (repeatable)
  --strategy PATH          strategy CSV for `verify` (default <out>/strategy.csv)
";

struct Args {
    subcommand: String,
    config: Option<String>,
    overrides: Vec<String>,
    strategy: Option<String>,
}

fn parse_args(argv: &[String]) -> Result<Args, String> {
    let mut it = argv.iter();
    let subcommand = it.next().ok_or_else(|| USAGE.to_string())?.clone();
    let mut args = Args {
        subcommand,
        config: None,
        overrides: Vec::new(),
        strategy: None,
    };
    while let Some(flag) = it.next() {
        let mut value = |name: &str| -> Result<String, String> {
            it.next().cloned().ok_or(format!("{name} expects a value"))
        };
        match flag.as_str() {
            "--config" => args.config = Some(value("--config")?),
            "--seed" => args
                .overrides
                .push(format!("verify.seed={}", value("--seed")?)),
            "--out" => args
                .overrides
                .push(format!("output.dir={}", value("--out")?)),
            "--grid" => args
                .overrides
                .push(format!("market.grid={}", value("--grid")?)),
            "--quadrature-order" => args.overrides.push(format!(
                "solver.quadrature_order={}",
                value("--quadrature-order")?
            )),
            "--override" => args.overrides.push(value("--override")?),
            "--strategy" => args.strategy = Some(value("--strategy")?),
            "--help" | "-h" => return Err(USAGE.to_string()),
            other => return Err(format!("unknown flag `{other}`\n\n{USAGE}")),
        }
    }
    Ok(args)
}

fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Infeasible { .. } | Error::PicardDiverged { .. } => 2,
        _ => 1,
    }
}

pub fn run(argv: &[String]) -> i32 {
    let args = match parse_args(argv) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("{msg}");
            return 1;
        }
    };
    if args.subcommand == "selftest" {
        let outcomes = crate::acceptance::run_all();
        let mut ok = true;
        for outcome in &outcomes {
            println!("{}", outcome.line());
            ok &= outcome.passed;
        }
        return if ok { 0 } else { 1 };
    }
    let config_path = match &args.config {
        Some(p) => p.clone(),
        None => {
            eprintln!("--config is required for `{}`\n\n{USAGE}", args.subcommand);
            return 1;
        }
    };
    let cfg = match RunConfig::from_file(&config_path, &args.overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let out_dir = PathBuf::from(&cfg.output.dir);
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        eprintln!("error: cannot create output dir {}: {e}", out_dir.display());
        return 1;
    }
    let result = match args.subcommand.as_str() {
        "solve-crra" => solve_closed_form(&cfg, &out_dir, Family::Crra),
        "solve-cara" => solve_closed_form(&cfg, &out_dir, Family::Cara),
        "solve-mv" => solve_closed_form(&cfg, &out_dir, Family::Mv),
        "solve-rdu" => solve_rdu(&cfg, &out_dir),
        "solve-wu" => solve_wu(&cfg, &out_dir),
        "verify" => run_verify(&cfg, &out_dir, args.strategy.as_deref()),
        other => {
            eprintln!("unknown subcommand `{other}`\n\n{USAGE}");
            return 1;
        }
    };
    match result {
        Ok(report) => {
            let path = out_dir.join("report.json");
            if let Err(e) = report.write_to(&path) {
                eprintln!("error: {e}");
                return 1;
            }
            println!("report: {}", path.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

enum Family {
    Crra,
    Cara,
    Mv,
}

fn solve_closed_form(cfg: &RunConfig, out_dir: &Path, family: Family) -> crate::Result<RunReport> {
    let model = cfg.build_market()?;
    let (name, sol) = match family {
        Family::Crra => match &cfg.preference {
            Preference::MixedCrra(_) | Preference::WeightedUtility { .. } => (
                "solve-crra",
                closedform::solve_equilibrium_crra(&cfg.preference, &model)?,
            ),
            other => {
                return Err(Error::UnsupportedPreference(format!(
                    "solve-crra needs a mixed_crra or weighted_utility preference, config has {}",
                    other.family_name()
                )))
            }
        },
        Family::Cara => match &cfg.preference {
            Preference::Cara(_) => (
                "solve-cara",
                closedform::solve_equilibrium_cara(&cfg.preference, &model)?,
            ),
            other => {
                return Err(Error::UnsupportedPreference(format!(
                    "solve-cara needs a cara preference, config has {}",
                    other.family_name()
                )))
            }
        },
        Family::Mv => match &cfg.preference {
            Preference::MeanVariance { gamma_mv } => (
                "solve-mv",
                closedform::solve_equilibrium_mv(*gamma_mv, &model)?,
            ),
            other => {
                return Err(Error::UnsupportedPreference(format!(
                    "solve-mv needs a mean_variance preference, config has {}",
                    other.family_name()
                )))
            }
        },
    };
    let mut report = RunReport::new(name, cfg.verify.seed, cfg.echo());
    let strategy_path = out_dir.join("strategy.csv");
    report::write_strategy_csv(&strategy_path, &sol)?;
    report.artifacts.push(strategy_path.display().to_string());
    if cfg.output.formats.iter().any(|f| f == "svg") {
        let svg_path = out_dir.join("strategy.svg");
        report::write_strategy_svg(&svg_path, &sol)?;
        report.artifacts.push(svg_path.display().to_string());
    }
    report.feasibility = Some(report::feasibility_json(&sol.feasibility));
    report.task(name, "ok");
    report.diagnostics.push((
        "big_a_route_gap".into(),
        Json::Num(
            sol.big_a_gcal
                .iter()
                .zip(&sol.big_a_ode)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0_f64, f64::max),
        ),
    ));
    Ok(report)
}

fn solve_rdu(cfg: &RunConfig, out_dir: &Path) -> crate::Result<RunReport> {
    if !matches!(cfg.preference, Preference::Rdu(_)) {
        return Err(Error::UnsupportedPreference(
            "solve-rdu needs an rdu preference in the config".into(),
        ));
    }
    let model = cfg.build_market()?;
    let cand = closedform::solve_rdu_candidate(&cfg.preference, &model)?;
    let mut report = RunReport::new("solve-rdu", cfg.verify.seed, cfg.echo());
    let path = out_dir.join("rdu_candidate.csv");
    report::write_rdu_csv(&path, &cand)?;
    report.artifacts.push(path.display().to_string());
    report.task(
        "solve-rdu",
        "ok (CANDIDATE: first-order curves only, no equilibrium verification)",
    );
    Ok(report)
}

fn solve_wu(cfg: &RunConfig, out_dir: &Path) -> crate::Result<RunReport> {
    let (gamma, rho) = match &cfg.preference {
        Preference::WeightedUtility { gamma, rho } => (*gamma, *rho),
        other => {
            return Err(Error::UnsupportedPreference(format!(
                "solve-wu needs a weighted_utility preference, config has {}",
                other.family_name()
            )))
        }
    };
    let lattice = cfg.build_lattice()?;
    let coeffs = qbsde::build_coefficients(gamma, rho)?;
    let sol = qbsde::solve_picard(
        &coeffs,
        &lattice,
        cfg.solver.picard_tol,
        cfg.solver.picard_max_iter,
    )?;
    let strategy = qbsde::extract_strategy(&coeffs, &lattice, &sol)?;
    let foc = qbsde::foc_residual_wu(&coeffs, &lattice, &strategy)?;
    let mut report = RunReport::new("solve-wu", cfg.verify.seed, cfg.echo());
    let path = out_dir.join("lattice.csv");
    report::write_lattice_csv(&path, &lattice, &sol, &strategy)?;
    report.artifacts.push(path.display().to_string());
    report.task("solve-wu", "ok");
    report
        .diagnostics
        .push(("v_theta".into(), Json::Num(sol.v_theta)));
    report
        .diagnostics
        .push(("bmo_norm_z".into(), Json::Num(sol.bmo_norm_z)));
    report
        .diagnostics
        .push(("iterations".into(), Json::Int(sol.iterations as i64)));
    report.diagnostics.push((
        "contraction_history".into(),
        Json::num_list(&sol.contraction_history),
    ));
    report
        .diagnostics
        .push(("foc_residual".into(), Json::Num(foc)));
    Ok(report)
}

fn run_verify(
    cfg: &RunConfig,
    out_dir: &Path,
    strategy_path: Option<&str>,
) -> crate::Result<RunReport> {
    let model = cfg.build_market()?;
    let mode = match &cfg.preference {
        Preference::MixedCrra(_)
        | Preference::WeightedUtility { .. }
        | Preference::ExpectedUtility { .. } => StrategyMode::Proportion,
        Preference::Cara(_) | Preference::MeanVariance { .. } => StrategyMode::Dollar,
        Preference::Rdu(_) => {
            return Err(Error::UnsupportedPreference(
                "the rank-dependent candidate carries no equilibrium verification".into(),
            ))
        }
    };
    let default_path = out_dir.join("strategy.csv");
    let path = strategy_path.map(PathBuf::from).unwrap_or(default_path);
    let strategy = report::read_strategy_csv(&path, mode)?;
    if strategy.n_steps() != model.n_steps() {
        return Err(Error::InvalidParameter(format!(
            "strategy file has {} steps, market grid has {}",
            strategy.n_steps(),
            model.n_steps()
        )));
    }
    let mut report = RunReport::new("verify", cfg.verify.seed, cfg.echo());

    // FOC residual where the family supports it.
    match &cfg.preference {
        Preference::MixedCrra(_) | Preference::WeightedUtility { .. } => {
            let r = verify::foc_residual_crra(&cfg.preference, &model, &strategy)?;
            report
                .diagnostics
                .push(("foc_sup_residual".into(), Json::Num(r.sup_norm)));
        }
        Preference::Cara(_) => {
            let r = verify::foc_residual_cara(&cfg.preference, &model, &strategy)?;
            report
                .diagnostics
                .push(("foc_sup_residual".into(), Json::Num(r.sup_norm)));
        }
        _ => {}
    }

    let t_indices = cfg.verify_t_indices(model.n_steps());
    let mode_sel = if cfg.verify.paths == 0 {
        GainMode::Analytic
    } else {
        GainMode::MonteCarlo {
            paths: cfg.verify.paths,
        }
    };
    let mut reports = Vec::new();
    for &t_index in &t_indices {
        let remaining = model.horizon() - model.grid()[t_index];
        let eps: Vec<f64> = cfg.verify.eps_fracs.iter().map(|f| f * remaining).collect();
        for j in 0..model.dim() {
            for &scale in &cfg.verify.phi_scales {
                let mut phi = vec![0.0; model.dim()];
                phi[j] = scale;
                reports.push(verify::perturbation_test(
                    &cfg.preference,
                    &model,
                    &strategy,
                    t_index,
                    &phi,
                    &eps,
                    mode_sel,
                    cfg.verify.seed,
                    cfg.verify.tol_gain,
                )?);
            }
        }
    }
    let gains_path = out_dir.join("perturbation.csv");
    report::write_perturbation_csv(&gains_path, &reports)?;
    let verdict_path = out_dir.join("verdicts.csv");
    report::write_verdict_csv(&verdict_path, &reports)?;
    report.artifacts.push(gains_path.display().to_string());
    report.artifacts.push(verdict_path.display().to_string());
    for rep in &reports {
        report.verdicts.push((
            format!("t_index={} phi={:?}", rep.t_index, rep.phi),
            rep.verdict.to_string(),
        ));
    }
    let worst =
        report
            .verdicts
            .iter()
            .map(|(_, v)| v.as_str())
            .fold("equilibrium_consistent", |acc, v| {
                if v == "violated" || acc == "violated" {
                    "violated"
                } else if v == "inconclusive" || acc == "inconclusive" {
                    "inconclusive"
                } else {
                    acc
                }
            });
    report.task("verify", format!("ok (overall: {worst})"));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    fn temp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("eqlaw_cli_{tag}"));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn write_config(dir: &Path, body: &str) -> String {
        let path = dir.join("run.cfg");
        std::fs::write(&path, body).unwrap();
        path.display().to_string()
    }

    const CRRA_CFG: &str = r#"
[preference]
family = mixed_crra
gammas = [-0.5]
weights = [1.0]

[market]
horizon = 1.0
grid = 32
theta = [0.08]
sigma = [0.2]

[verify]
t_fracs = [0.25, 0.75]
seed = 7

[output]
dir = OUT
"#;

    #[test]
    fn solve_crra_emits_constant_merton_column() {
        let dir = temp_dir("solve_crra");
        let cfg_text = CRRA_CFG.replace("OUT", &dir.join("out").display().to_string());
        let cfg_path = write_config(&dir, &cfg_text);
        assert_eq!(run(&args(&["solve-crra", "--config", &cfg_path])), 0);
        let strategy = std::fs::read_to_string(dir.join("out/strategy.csv")).unwrap();
        let first_row = strategy.lines().nth(1).unwrap();
        let pi: f64 = first_row.split(',').next_back().unwrap().parse().unwrap();
        assert!((pi - 0.4 / (0.2 * 1.5)).abs() < 1e-10);
        // Byte-identical on a repeated run with the same config and seed.
        let again = temp_dir("solve_crra_again");
        let cfg_text2 = CRRA_CFG.replace("OUT", &again.join("out").display().to_string());
        let cfg_path2 = write_config(&again, &cfg_text2);
        assert_eq!(run(&args(&["solve-crra", "--config", &cfg_path2])), 0);
        let strategy2 = std::fs::read_to_string(again.join("out/strategy.csv")).unwrap();
        assert_eq!(strategy, strategy2);
        let report = std::fs::read_to_string(dir.join("out/report.json")).unwrap();
        assert!(report.contains("\"feasible\": true"));
    }

    #[test]
    fn repeated_runs_produce_identical_reports() {
        let dir = temp_dir("report_determinism");
        let cfg_text = CRRA_CFG.replace("OUT", &dir.join("out").display().to_string());
        let cfg_path = write_config(&dir, &cfg_text);
        assert_eq!(run(&args(&["solve-crra", "--config", &cfg_path])), 0);
        let first = std::fs::read_to_string(dir.join("out/report.json")).unwrap();
        assert_eq!(run(&args(&["solve-crra", "--config", &cfg_path])), 0);
        let second = std::fs::read_to_string(dir.join("out/report.json")).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn verify_runs_in_monte_carlo_mode() {
        let dir = temp_dir("verify_mc");
        let cfg_text = CRRA_CFG
            .replace("OUT", &dir.join("out").display().to_string())
            .replace("grid = 32", "grid = 8")
            .replace(
                "t_fracs = [0.25, 0.75]\nseed = 7",
                "t_fracs = [0.5]\nphi_scales = [1.0]\neps_fracs = [0.25, 0.125, 0.0625]\npaths = 4000\nseed = 7",
            );
        let cfg_path = write_config(&dir, &cfg_text);
        assert_eq!(run(&args(&["solve-crra", "--config", &cfg_path])), 0);
        assert_eq!(run(&args(&["verify", "--config", &cfg_path])), 0);
        let gains = std::fs::read_to_string(dir.join("out/perturbation.csv")).unwrap();
        // Monte Carlo mode reports nonzero standard errors.
        let se: f64 = gains.lines().nth(1).unwrap().split(',').next_back().unwrap().parse().unwrap();
        assert!(se > 0.0, "gains:\n{gains}");
        let verdicts = std::fs::read_to_string(dir.join("out/verdicts.csv")).unwrap();
        assert!(verdicts.contains("equilibrium_consistent"), "verdicts:\n{verdicts}");
    }

    #[test]
    fn verify_flags_tampered_strategy_but_exits_zero() {
        let dir = temp_dir("verify_tamper");
        let cfg_text = CRRA_CFG.replace("OUT", &dir.join("out").display().to_string());
        let cfg_path = write_config(&dir, &cfg_text);
        assert_eq!(run(&args(&["solve-crra", "--config", &cfg_path])), 0);
        // Tamper: double every position.
        let strategy_path = dir.join("out/strategy.csv");
        let text = std::fs::read_to_string(&strategy_path).unwrap();
        let mut lines: Vec<String> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 {
                lines.push(line.to_string());
                continue;
            }
            let mut cols: Vec<String> = line.split(',').map(|s| s.to_string()).collect();
            let pi: f64 = cols.last().unwrap().parse().unwrap();
            *cols.last_mut().unwrap() = format!("{}", pi * 2.0);
            lines.push(cols.join(","));
        }
        std::fs::write(&strategy_path, lines.join("\n") + "\n").unwrap();
        assert_eq!(run(&args(&["verify", "--config", &cfg_path])), 0);
        let verdicts = std::fs::read_to_string(dir.join("out/verdicts.csv")).unwrap();
        assert!(verdicts.contains("violated"), "verdicts:\n{verdicts}");
    }

    #[test]
    fn verify_accepts_explicit_strategy_path() {
        let dir = temp_dir("verify_explicit");
        let cfg_text = CRRA_CFG.replace("OUT", &dir.join("out").display().to_string());
        let cfg_path = write_config(&dir, &cfg_text);
        assert_eq!(run(&args(&["solve-crra", "--config", &cfg_path])), 0);
        let copied = dir.join("elsewhere.csv");
        std::fs::copy(dir.join("out/strategy.csv"), &copied).unwrap();
        assert_eq!(
            run(&args(&[
                "verify",
                "--config",
                &cfg_path,
                "--strategy",
                &copied.display().to_string()
            ])),
            0
        );
        let verdicts = std::fs::read_to_string(dir.join("out/verdicts.csv")).unwrap();
        assert!(!verdicts.contains("violated"));
    }

    #[test]
    fn solve_wu_flat_lattice_diagnostics() {
        let dir = temp_dir("solve_wu");
        let cfg_text = format!(
            r#"
[preference]
family = weighted_utility
gamma = -0.5
rho = 0.25

[market]
horizon = 1.0
grid = 32

[lattice]
steps = 64
kappa0 = 0.4
eta = 0.0
s = 1.0
sigma = 0.2

[output]
dir = {}
"#,
            dir.join("out").display()
        );
        let cfg_path = write_config(&dir, &cfg_text);
        assert_eq!(run(&args(&["solve-wu", "--config", &cfg_path])), 0);
        let report = std::fs::read_to_string(dir.join("out/report.json")).unwrap();
        assert!(report.contains("\"v_theta\": 0.0"));
        let lattice = std::fs::read_to_string(dir.join("out/lattice.csv")).unwrap();
        let row = lattice.lines().nth(1).unwrap();
        let pi: f64 = row.split(',').next_back().unwrap().parse().unwrap();
        assert!((pi - 0.4 / (0.2 * 1.25)).abs() < 1e-9);
    }

    #[test]
    fn diverging_lattice_solve_exits_two() {
        let dir = temp_dir("solve_wu_diverge");
        let cfg_text = format!(
            r#"
[preference]
family = weighted_utility
gamma = -0.05
rho = -0.04

[market]
horizon = 1.0

[lattice]
steps = 64
kappa0 = 1.0
eta = 1.0
s = 3.0
sigma = 0.2

[output]
dir = {}
"#,
            dir.join("out").display()
        );
        let cfg_path = write_config(&dir, &cfg_text);
        assert_eq!(run(&args(&["solve-wu", "--config", &cfg_path])), 2);
    }

    #[test]
    fn config_errors_exit_one_and_overrides_apply() {
        let dir = temp_dir("config_err");
        let cfg_path = write_config(&dir, "[preference]\nfamily = unknown_family\n");
        assert_eq!(run(&args(&["solve-crra", "--config", &cfg_path])), 1);
        assert_eq!(run(&args(&["no-such-command"])), 1);
        assert_eq!(run(&args(&[])), 1);

        let dir2 = temp_dir("override_grid");
        let cfg_text = CRRA_CFG.replace("OUT", &dir2.join("out").display().to_string());
        let cfg_path = write_config(&dir2, &cfg_text);
        assert_eq!(
            run(&args(&["solve-crra", "--config", &cfg_path, "--grid", "8"])),
            0
        );
        let strategy = std::fs::read_to_string(dir2.join("out/strategy.csv")).unwrap();
        assert_eq!(strategy.lines().count(), 9); // header + 8 steps
    }
}
