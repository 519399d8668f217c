// Solve a two-dimensional quadratic BSDE and compare it with the a-priori (HQ) bounds.

use qbsde::hypotheses::{check_hq, compare, diagnostics};
use qbsde::probes::ProbeConfig;
use qbsde::scenarios::make_tevzadze;
use qbsde::{picard_solve, BinomialTree, SolverConfig};

pub fn run() -> qbsde::Result<()> {
    let problem = make_tevzadze(2, 2, 1.0, 0.125, 1.0, 16)?;
    let tree = BinomialTree::for_problem(&problem)?;
    let sol = picard_solve(&problem, &tree, &SolverConfig::default())?;
    println!(
        "Y_0 = {:?}, |Z|_sup = {:.4}, {} iterations",
        sol.y0(),
        sol.z_sup,
        sol.picard_iterations
    );

    let measured = diagnostics(&sol, &tree)?;
    let verdict = check_hq(&problem, 2.0, &ProbeConfig::checker())?;
    for h in &verdict.hypotheses {
        println!("  {:<45} holds={} margin={:.4}", h.name, h.holds, h.margin);
    }
    for row in compare(&verdict, &measured, 0.10) {
        println!(
            "  {:<8} predicted {:.5} measured {:.5} ratio {:.3}",
            row.bound, row.predicted, row.empirical, row.ratio
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> qbsde::Result<()> {
    run()
}
