// Linear BSDEs: the representation formula against the backward scheme, and the reverse Hölder
// statistic of the stochastic exponential.

use qbsde::bmo::{k_constant, slicing_condition};
use qbsde::linear::{linear_problem, representation_solve, reverse_holder_statistic, simulate_s, LinearCoefficients};
use qbsde::tree::build_tree;
use qbsde::{picard_solve, Dimensions, Scheme, SolverConfig};

pub fn run() -> qbsde::Result<()> {
    let tree = build_tree(Dimensions::new(2, 2, 1.0, 8)?)?;
    let coeffs = LinearCoefficients::random(&tree, 2, 1.0, 7);
    let u = representation_solve(&coeffs, &tree)?;
    let sol = picard_solve(
        &linear_problem(&coeffs, &tree)?,
        &tree,
        &SolverConfig::with_scheme(Scheme::StepExplicit),
    )?;
    println!("representation vs explicit scheme: {:.2e}", u.max_diff(&sol.y)?);

    let small = LinearCoefficients::random(&tree, 2, 0.1, 3);
    let s = simulate_s(&small, &tree)?;
    let stat = reverse_holder_statistic(&s, 2.0, &tree)?;
    let (na, nb) = small.sup_norms();
    let slices = 4;
    let h = 1.0 / slices as f64;
    let (e1, e2) = ((na * h).sqrt(), nb * h.sqrt());
    println!(
        "reverse Hölder statistic {stat:.4}; slicing condition {:.3}; K = {:.3}",
        slicing_condition(2.0, e1, e2),
        k_constant(2.0, e1, e2, slices)?
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> qbsde::Result<()> {
    run()
}
