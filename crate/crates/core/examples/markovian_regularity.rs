// Markovian BSDEs driven by a forward SDE: Lyapunov check, M-sweep and a Hölder fit of `v(t, x)`.

use qbsde::hypotheses::check_lyapunov;
use qbsde::probes::ProbeConfig;
use qbsde::scenarios::{line_grid, regularity_probe, MarkovianSpec};
use qbsde::solver::sweep_m;
use qbsde::{BinomialTree, SolverConfig};

pub fn run() -> qbsde::Result<()> {
    let sc = MarkovianSpec::default().build()?;
    let p = &sc.problem;
    println!(
        "ellipticity {:?}, Hölder constant of G {:.4}",
        sc.ellipticity, sc.holder_constant
    );
    if let Some(f) = &sc.lyapunov {
        let r = check_lyapunov(f, p.generator.as_ref(), 1, 1, p.dims.horizon, &ProbeConfig::checker());
        println!("Lyapunov |y|^2: min slack {:.4}, pass {}", r.min_slack, r.pass);
    }
    let tree = BinomialTree::for_problem(p)?;
    let table = sweep_m(p, &[0.5, 1.0, 2.0, 4.0], &tree, &SolverConfig::default())?;
    for row in &table.rows {
        println!("M = {:<4} z_sup {:.6}", row.radius, row.z_sup);
    }
    let probe = regularity_probe(p, &[0, 4, 8], &line_grid(&[0.0], 0.5, 5), 1.0, &SolverConfig::default())?;
    println!(
        "fitted constant {:.4} (median ratio {:.4}) over {} starts",
        probe.constant, probe.median_ratio, probe.starts
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> qbsde::Result<()> {
    run()
}
