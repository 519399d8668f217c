// Martingales on the round sphere in a stereographic chart: the Christoffel generator, the
// martingale property test, and the doubly convex BMO bound.

use qbsde::bmo::{bmo_norm, bound_b_or_inf};
use qbsde::hypotheses::{check_doubly_convex, domain_probes};
use qbsde::scenarios::{make_sphere_martingale, martingale_property_test, SphereSpec};
use qbsde::{picard_solve, BinomialTree, SolverConfig};

pub fn run() -> qbsde::Result<()> {
    for steps in [8, 16, 32] {
        let s = make_sphere_martingale(&SphereSpec {
            steps,
            ..SphereSpec::default()
        })?;
        let tree = BinomialTree::for_problem(&s.problem)?;
        let sol = picard_solve(&s.problem, &tree, &SolverConfig::default())?;
        let residual = martingale_property_test(&sol, &s.test_function, s.christoffel.as_ref(), &tree)?;
        println!(
            "N = {steps:>2}: drift residual {residual:.3e}, BMO {:.4}",
            bmo_norm(&sol.z, &tree)?
        );
    }
    let spec = SphereSpec::default();
    let s = make_sphere_martingale(&spec)?;
    let points = domain_probes(&s.test_function, &spec.center, spec.radius, 1000, 0);
    let b_m = bound_b_or_inf(2.0, s.problem.constants.l_y, s.problem.constants.l_z)?;
    let dc = check_doubly_convex(&s.test_function, s.christoffel.as_ref(), &points, b_m)?;
    println!(
        "alpha {:.4}, osc {:.4}, BMO bound {:.4}",
        dc.alpha_convex, dc.osc, dc.bmo_bound
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> qbsde::Result<()> {
    run()
}
