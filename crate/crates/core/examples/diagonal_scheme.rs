// Diagonal quadratic systems: hypothesis check and the per-iterate bounds of the diagonal scheme.

use qbsde::hypotheses::check_diagonal;
use qbsde::probes::ProbeConfig;
use qbsde::scenarios::make_diagonal;
use qbsde::solver::diagonal_global_scheme;
use qbsde::{BinomialTree, SolverConfig};

pub fn run() -> qbsde::Result<()> {
    let problem = make_diagonal(2, 1.0, 0.05, &[0.1, 0.1], 1.0, 16)?;
    let verdict = check_diagonal(&problem, None, &ProbeConfig::checker())?;
    println!(
        "relation {:.4}, predicted BMO {:.4}, |Y| {:.4}",
        verdict.predicted["relation"], verdict.predicted["bmo"], verdict.predicted["y_sup"]
    );
    let tree = BinomialTree::for_problem(&problem)?;
    let (sol, trace) = diagonal_global_scheme(&problem, &tree, &SolverConfig::default())?;
    for it in &trace {
        println!(
            "iteration {:>2}: |Y| {:.5} BMO {:.5} change {:.2e}",
            it.iteration, it.y_sup, it.bmo, it.change
        );
    }
    println!("Y_0 = {:?}", sol.y0());
    Ok(())
}

#[allow(dead_code)]
fn main() -> qbsde::Result<()> {
    run()
}
