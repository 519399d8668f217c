// Localize the generator at radius M and watch `Z` stop depending on M once the truncation is inactive.

use qbsde::scenarios::make_tevzadze;
use qbsde::solver::sweep_m;
use qbsde::truncation::localized_lipschitz;
use qbsde::{BinomialTree, SolverConfig};

pub fn run() -> qbsde::Result<()> {
    let problem = make_tevzadze(1, 1, 0.15, 1.0, 1.0, 32)?;
    let tree = BinomialTree::for_problem(&problem)?;
    let radii = [0.25, 0.5, 1.0, 2.0, 4.0];
    let table = sweep_m(&problem, &radii, &tree, &SolverConfig::default())?;
    for row in &table.rows {
        let lip = localized_lipschitz(&problem, row.radius);
        println!(
            "M = {:<5} z_sup {:.6} BMO {:.6} inactive {:<5} Lipschitz (y {:.2}, z {:.2})",
            row.radius, row.z_sup, row.bmo_norm, row.truncation_inactive, lip.y, lip.z
        );
    }
    println!("first inactive radius: {:?}", table.m_star);
    Ok(())
}

#[allow(dead_code)]
fn main() -> qbsde::Result<()> {
    run()
}
