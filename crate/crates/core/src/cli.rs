//! Batch experiment runner behind the `qbsde` binary.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::bmo::{bmo_norm, uniform_partition};
use crate::config::{shape_terminal, ExperimentConfig, SCHEMA_VERSION};
use crate::error::{BsdeError, Result};
use crate::model::{generator, BsdeSolution, Classification};
use crate::report::{check_scenario, run_acceptance, theorem_matrix, AcceptanceRow};
use crate::solver::{picard_solve, solve_truncated, sweep_m};
use crate::stability::{
    diag_stability_from, empirical_stability_constant, perturb_and_solve, DiagStability, Perturbation, StabilityRow,
};
use crate::tree::BinomialTree;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "qbsde", version, about = "Quadratic BSDE solver and theorem-check runner")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the configured problem and write a summary.
    Solve(CommonArgs),
    /// Evaluate every applicable hypothesis checker.
    Check(CommonArgs),
    /// Solve the localized problem for each M in `sweep.M_list`.
    Sweep(CommonArgs),
    /// Perturb the terminal condition (and generator) and measure the stability ratio.
    Stability(CommonArgs),
    /// Acceptance suite plus the theorem-versus-empirical matrix of the configured problem.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Offset of the probe grids.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Defaults to the built-in Tevzadze configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Exit code for an error: 2 for input problems, 3 for numerical failures.
pub fn exit_code(err: &BsdeError) -> i32 {
    if err.is_config() {
        EXIT_CONFIG
    } else {
        EXIT_SOLVER
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("qbsde: {e}");
            exit_code(&e)
        }
    }
}

type Runner = fn(&ExperimentConfig, &Path) -> Result<()>;

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Report(a) => {
            set_threads(a.threads)?;
            let mut cfg = match &a.config {
                Some(p) => ExperimentConfig::load(p)?,
                None => ExperimentConfig::default(),
            };
            if let Some(s) = a.seed {
                cfg.probes.seed = s;
            }
            for row in run_report(&cfg, &a.out)? {
                println!("{}", row.summary_line());
            }
            Ok(())
        }
        cmd => {
            let (a, f): (CommonArgs, Runner) = match cmd {
                Command::Solve(a) => (a, run_solve),
                Command::Check(a) => (a, run_check),
                Command::Sweep(a) => (a, run_sweep),
                Command::Stability(a) => (a, run_stability),
                Command::Report(_) => unreachable!("handled above"),
            };
            set_threads(a.threads)?;
            let mut cfg = ExperimentConfig::load(&a.config)?;
            if let Some(s) = a.seed {
                cfg.probes.seed = s;
            }
            f(&cfg, &a.out)
        }
    }
}

fn set_threads(threads: Option<usize>) -> Result<()> {
    match threads {
        None => Ok(()),
        Some(0) => Err(BsdeError::Config("--threads must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| BsdeError::Config(format!("cannot configure {n} threads: {e}"))),
    }
}

fn write_json(out: &Path, name: &str, command: &str, body: impl Serialize) -> Result<()> {
    fs::create_dir_all(out)?;
    let mut value = json!({ "schema": SCHEMA_VERSION, "command": command });
    if let serde_json::Value::Object(extra) = serde_json::to_value(body)? {
        value.as_object_mut().expect("object").extend(extra);
    }
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    fs::write(out.join(name), text)?;
    Ok(())
}

fn write_csv<I, R>(out: &Path, name: &str, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join(name))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn solve(
    cfg: &ExperimentConfig,
    problem: &crate::model::QuadraticBsdeProblem,
    tree: &BinomialTree,
) -> Result<BsdeSolution> {
    match cfg.truncation {
        Some(m) => solve_truncated(problem, m, tree, &cfg.solver),
        None => picard_solve(problem, tree, &cfg.solver),
    }
}

/// Writes `solve.json` (Y_0, sup norms, BMO norm, iterations) and, with `dump_nodes`, `nodes.csv`.
pub fn run_solve(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let scenario = cfg.scenario()?;
    let p = &scenario.problem;
    let tree = cfg.tree(p)?;
    let sol = solve(cfg, p, &tree)?;
    let bmo = bmo_norm(&sol.z, &tree)?;
    write_json(
        out,
        "solve.json",
        "solve",
        json!({
            "problem": p.name,
            "classification": p.classification.name(),
            "tree": { "layout": format!("{:?}", tree.kind()).to_lowercase(), "steps": tree.steps(), "nodes": tree.total_nodes() },
            "scheme": sol.scheme,
            "truncation": sol.truncation,
            "y0": sol.y0(),
            "y_sup": sol.y_sup(),
            "z_sup": sol.z_sup,
            "bmo": bmo,
            "iterations": sol.picard_iterations,
            "residual": sol.residual,
            "expected": p.expected,
        }),
    )?;
    if cfg.dump_nodes {
        let (d, k) = (p.dims.d, p.dims.k);
        let mut header = vec!["level".to_string(), "node".to_string(), "t".to_string()];
        header.extend((0..d).map(|i| format!("y{i}")));
        header.extend((0..d).flat_map(|i| (0..k).map(move |j| format!("z{i}_{j}"))));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let rows = sol.y.iter().map(|(n, node, y)| {
            let mut r = vec![n.to_string(), node.to_string(), tree.time(n).to_string()];
            r.extend(y.iter().map(f64::to_string));
            if sol.z.defined(n) {
                r.extend(sol.z.at(n, node).iter().map(f64::to_string));
            } else {
                r.extend(std::iter::repeat_n(String::new(), d * k));
            }
            r
        });
        write_csv(out, "nodes.csv", &header, rows)?;
    }
    Ok(())
}

/// Writes `check.json` with every verdict and `check.csv` with one row per hypothesis.
pub fn run_check(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let scenario = cfg.scenario()?;
    let verdicts = check_scenario(&scenario, cfg)?;
    let rows: Vec<[String; 6]> = verdicts
        .iter()
        .flat_map(|v| {
            v.hypotheses.iter().map(|h| {
                [
                    v.theorem.clone(),
                    h.name.clone(),
                    h.holds.to_string(),
                    h.margin.to_string(),
                    h.sampled.to_string(),
                    h.gates_bounds.to_string(),
                ]
            })
        })
        .collect();
    write_csv(
        out,
        "check.csv",
        &["theorem", "hypothesis", "holds", "margin", "sampled", "gates_bounds"],
        rows,
    )?;
    write_json(
        out,
        "check.json",
        "check",
        json!({ "problem": scenario.problem.name, "verdicts": verdicts }),
    )
}

/// Writes `sweep.json` and `sweep.csv`, one row per radius.
pub fn run_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let scenario = cfg.scenario()?;
    let p = &scenario.problem;
    let tree = cfg.tree(p)?;
    let table = sweep_m(p, &cfg.sweep.m_list, &tree, &cfg.solver)?;
    let rows = table.rows.iter().map(|r| {
        [
            r.radius.to_string(),
            r.z_sup.to_string(),
            r.bmo_norm.to_string(),
            r.y_sup.to_string(),
            r.y0_norm.to_string(),
            r.truncation_inactive.to_string(),
        ]
    });
    write_csv(
        out,
        "sweep.csv",
        &["M", "z_sup", "bmo_norm", "y_sup", "y0_norm", "truncation_inactive"],
        rows,
    )?;
    write_json(out, "sweep.json", "sweep", json!({ "problem": p.name, "table": table }))
}

#[derive(Serialize)]
struct DiagRow {
    epsilon: f64,
    #[serde(flatten)]
    report: DiagStability,
}

/// Writes `stability.csv` (epsilon, dY_S2p, dZ_Hp, dxi_L2p, dfint_L2p, ratio) and `stability.json`
/// with the empirical constant; diagonal problems also get the sup/BMO analogue.
pub fn run_stability(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let scenario = cfg.scenario()?;
    let p = &scenario.problem;
    let tree = cfg.tree(p)?;
    let (d, k) = (p.dims.d, p.dims.k);
    let s = &cfg.stability;
    let direction = Perturbation {
        terminal: s.terminal.map(|shape| shape_terminal(shape, 1.0, d, k)),
        generator: s
            .generator_shift
            .map(|c| generator(move |_, _, _, out: &mut [f64]| out.fill(c))),
    };
    if direction.terminal.is_none() && direction.generator.is_none() {
        return Err(BsdeError::Config(
            "stability needs a terminal shape or a generator shift".into(),
        ));
    }
    let rows = perturb_and_solve(p, &direction, &s.epsilons, s.p, &tree, &cfg.solver)?;
    let constant = empirical_stability_constant(&rows).ok();
    let diagonal = if matches!(p.classification, Classification::Diagonal(_)) {
        let base = picard_solve(p, &tree, &cfg.solver)?;
        let partition = uniform_partition(tree.steps(), 4.min(tree.steps()));
        let mut eps = s.epsilons.clone();
        eps.sort_by(f64::total_cmp);
        let mut out = Vec::new();
        for e in eps {
            let q = direction.apply(p, e);
            let sol = picard_solve(&q, &tree, &cfg.solver)?;
            out.push(DiagRow {
                epsilon: e,
                report: diag_stability_from(p, &base, &q, &sol, &tree, Some(&partition))?,
            });
        }
        Some(out)
    } else {
        None
    };
    write_csv(
        out,
        "stability.csv",
        &StabilityRow::CSV_HEADER,
        rows.iter().map(|r| r.csv_record()),
    )?;
    write_json(
        out,
        "stability.json",
        "stability",
        json!({ "problem": p.name, "p": s.p, "rows": rows, "constant": constant, "diagonal": diagonal }),
    )
}

/// Writes `report.json`, `acceptance.csv` and `matrix.csv`; returns the acceptance rows with timings.
pub fn run_report(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<AcceptanceRow>> {
    let scenario = cfg.scenario()?;
    let matrix = theorem_matrix(&scenario, cfg)?;
    let acceptance = if cfg.report.acceptance {
        run_acceptance()
    } else {
        Vec::new()
    };
    write_csv(
        out,
        "acceptance.csv",
        &AcceptanceRow::CSV_HEADER,
        acceptance.iter().map(|r| r.csv_record()),
    )?;
    let rows = matrix.rows.iter().map(|r| {
        [
            r.theorem.clone(),
            r.bound.clone(),
            r.predicted.to_string(),
            r.empirical.to_string(),
            r.ratio.to_string(),
            r.flagged.to_string(),
        ]
    });
    write_csv(
        out,
        "matrix.csv",
        &["theorem", "bound", "predicted", "empirical", "ratio", "flagged"],
        rows,
    )?;
    write_json(
        out,
        "report.json",
        "report",
        json!({ "acceptance": acceptance, "matrix": matrix }),
    )?;
    Ok(acceptance)
}
