// BMO norms of `Z★W` on the tree: whole and sliced norms, the energy and John–Nirenberg
// inequalities, and the smallness threshold 𝔹^m.

use qbsde::bmo::{bmo_norm, bound_b, energy_check, find_slicing, john_nirenberg_check, sliced_bmo, uniform_partition};
use qbsde::tree::build_tree;
use qbsde::{AdaptedField, Dimensions};

pub fn run() -> qbsde::Result<()> {
    let tree = build_tree(Dimensions::new(1, 1, 1.0, 10)?)?;
    // Z is larger on the upper half-line, so the remaining quadratic variation depends on the node.
    let z = AdaptedField::from_fn(&tree, 1, 1, 0, 9, |n, node, out| {
        let mut w = [0.0];
        tree.brownian(n, node, &mut w);
        out[0] = if w[0] >= 0.0 { 0.8 } else { 0.2 };
    });
    let norm = bmo_norm(&z, &tree)?;
    let sliced = sliced_bmo(&z, &tree, &uniform_partition(10, 5))?;
    println!("BMO norm {norm:.4}; max over 5 slices {:.4}", sliced.max_slice_norm());
    if let Some(r) = find_slicing(&z, &tree, 0.3)? {
        println!("slices needed for eps = 0.3: {}", r.slice_count);
    }
    for n in 1..=3 {
        let e = energy_check(&z, &tree, n)?;
        println!("energy n={n}: {:.4} <= {:.4}", e.lhs, e.rhs);
    }
    println!("John-Nirenberg: {:?}", john_nirenberg_check(&z, &tree)?);
    println!("B_2(L_y = 0.1, L_z = 0.5) = {:.4}", bound_b(2.0, 0.1, 0.5)?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> qbsde::Result<()> {
    run()
}
