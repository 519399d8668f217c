// Monotone generators: the (HMon) checker, its bounds, and the monotone Picard scheme.

use qbsde::hypotheses::{check_hmon, compare, diagnostics};
use qbsde::probes::ProbeConfig;
use qbsde::scenarios::make_monotone;
use qbsde::{picard_solve, BinomialTree, Scheme, SolverConfig};

pub fn run() -> qbsde::Result<()> {
    let problem = make_monotone(2, 2, 0.05, 1.0, 1.0, 0.125, 1.0, 16)?;
    let verdict = check_hmon(&problem, 2.0, 0.25, &ProbeConfig::checker())?;
    for h in &verdict.hypotheses {
        println!("{:<60} holds={}", h.name, h.holds);
    }
    let tree = BinomialTree::for_problem(&problem)?;
    for scheme in [Scheme::StepImplicit, Scheme::MonotonePicard] {
        let sol = picard_solve(&problem, &tree, &SolverConfig::with_scheme(scheme))?;
        println!("{scheme:?}: Y_0 = {:?}", sol.y0());
        for row in compare(&verdict, &diagnostics(&sol, &tree)?, 0.10) {
            println!("  {:<18} {:.5} <= {:.5}", row.bound, row.empirical, row.predicted);
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> qbsde::Result<()> {
    run()
}
