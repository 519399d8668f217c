// Perturb the terminal condition and measure how the solution moves.

use qbsde::config::{shape_terminal, TerminalShape};
use qbsde::scenarios::make_tevzadze;
use qbsde::stability::{empirical_stability_constant, perturb_and_solve, Perturbation, StabilityRow};
use qbsde::{BinomialTree, SolverConfig};

pub fn run() -> qbsde::Result<()> {
    let problem = make_tevzadze(1, 1, 1.0, 0.125, 1.0, 12)?;
    let tree = BinomialTree::for_problem(&problem)?;
    let direction = Perturbation {
        terminal: Some(shape_terminal(TerminalShape::Cos, 1.0, 1, 1)),
        generator: None,
    };
    let rows = perturb_and_solve(
        &problem,
        &direction,
        &[0.0, 1e-3, 1e-2, 1e-1],
        2.0,
        &tree,
        &SolverConfig::default(),
    )?;
    println!("{}", StabilityRow::CSV_HEADER.join(","));
    for r in &rows {
        println!("{}", r.csv_record().join(","));
    }
    let k = empirical_stability_constant(&rows)?;
    println!("K_hat {:.4}, spread {:.4}", k.k_hat, k.spread);
    Ok(())
}

#[allow(dead_code)]
fn main() -> qbsde::Result<()> {
    run()
}
