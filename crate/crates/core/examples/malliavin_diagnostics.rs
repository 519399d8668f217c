// Discrete Malliavin derivatives: the identity `D_t Y_t = Z_t` and the linear BSDE for `D_u Y`.

use qbsde::malliavin::{discrete_malliavin, malliavin_bsde_solve, z_identity_check, GeneratorGradients};
use qbsde::scenarios::make_tevzadze;
use qbsde::tree::build_tree;
use qbsde::{picard_solve, SolverConfig};

pub fn run() -> qbsde::Result<()> {
    let problem = make_tevzadze(1, 1, 0.15, 1.0, 1.0, 10)?;
    let tree = build_tree(problem.dims)?;
    let sol = picard_solve(&problem, &tree, &SolverConfig::default())?;
    println!("max |Z_t - D_t Y_t| = {:.2e}", z_identity_check(&sol, &tree)?);

    let grads = GeneratorGradients::finite_difference(problem.generator.clone(), 1, 1);
    for u in [0, 4, 8] {
        let linear = malliavin_bsde_solve(&problem, &sol, &grads, u, &tree)?;
        let flip = discrete_malliavin(&sol.y, u, &tree)?;
        println!(
            "u = {u}: sup |D_u Y| from the linear BSDE {:.4}, from flips {:.4}, gap {:.2e}",
            linear.sup_norm(),
            flip.sup_norm(),
            linear.max_diff(&flip)?
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> qbsde::Result<()> {
    run()
}
