//! BMO norms of tree martingales `Z★W`, their sliced versions, the explicit constants built on the
//! Burkholder–Davis–Gundy constant, and exact checks of the energy and John–Nirenberg inequalities.
//!
//! On a finite tree every conditional quantity is a node function, so the supremum over stopping times
//! in the BMO norm is the maximum over nodes of `E[Σ_{m≥n}|Z_m|²Δt | node]`.

use serde::Serialize;

use crate::error::{BsdeError, Result};
use crate::model::AdaptedField;
use crate::tree::BinomialTree;

/// `‖Z★W‖_BMO`: square root of the largest conditional remaining quadratic sum.
pub fn bmo_norm(z: &AdaptedField, tree: &BinomialTree) -> Result<f64> {
    slice_norm(z, tree, 0, tree.steps())
}

fn slice_norm(z: &AdaptedField, tree: &BinomialTree, start: usize, end: usize) -> Result<f64> {
    if start == end {
        return Ok(0.0);
    }
    let r = tree.remaining_sum_between(z, start, end)?;
    let max = (start..end)
        .flat_map(|n| r.level(n).iter().copied())
        .fold(0.0, f64::max);
    Ok(max.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SliceNorm {
    pub start: usize,
    pub end: usize,
    pub norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TheoremConstants {
    #[serde(rename = "C_m")]
    pub c_m: f64,
    #[serde(rename = "B_m")]
    pub b_m: f64,
    #[serde(rename = "K_const")]
    pub k_const: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BmoReport {
    pub norm: f64,
    pub sliced: Vec<SliceNorm>,
    pub slice_count: usize,
    pub epsilon_target: Option<f64>,
    pub constants: Option<TheoremConstants>,
}

impl BmoReport {
    pub fn max_slice_norm(&self) -> f64 {
        self.sliced.iter().map(|s| s.norm).fold(0.0, f64::max)
    }
}

/// Levels `⌊iN/P⌋`, `i = 0..=P`.
pub fn uniform_partition(steps: usize, slices: usize) -> Vec<usize> {
    (0..=slices).map(|i| i * steps / slices).collect()
}

fn check_partition(partition: &[usize], steps: usize) -> Result<()> {
    let ok = partition.len() >= 2
        && partition[0] == 0
        && *partition.last().unwrap() == steps
        && partition.windows(2).all(|w| w[0] < w[1]);
    if ok {
        Ok(())
    } else {
        Err(BsdeError::Contract(format!(
            "partition {partition:?} must increase strictly from 0 to N={steps}"
        )))
    }
}

/// Norms of `Z★W` started at `T_i` and stopped at `T_{i+1}` for each cell of `partition`.
pub fn sliced_bmo(z: &AdaptedField, tree: &BinomialTree, partition: &[usize]) -> Result<BmoReport> {
    check_partition(partition, tree.steps())?;
    let sliced = partition
        .windows(2)
        .map(|w| {
            slice_norm(z, tree, w[0], w[1]).map(|norm| SliceNorm {
                start: w[0],
                end: w[1],
                norm,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BmoReport {
        norm: bmo_norm(z, tree)?,
        slice_count: sliced.len(),
        sliced,
        epsilon_target: None,
        constants: None,
    })
}

/// Smallest uniform slice count `P ≤ N` whose slices all have norm at most `epsilon`.
pub fn find_slicing(z: &AdaptedField, tree: &BinomialTree, epsilon: f64) -> Result<Option<BmoReport>> {
    if !(epsilon > 0.0) {
        return Err(BsdeError::Config(format!(
            "slicing target must be positive, got {epsilon}"
        )));
    }
    for p in 1..=tree.steps() {
        let mut report = sliced_bmo(z, tree, &uniform_partition(tree.steps(), p))?;
        if report.max_slice_norm() <= epsilon {
            report.epsilon_target = Some(epsilon);
            return Ok(Some(report));
        }
    }
    Ok(None)
}

/// The constant `C′_m` of the Burkholder–Davis–Gundy inequality.
pub fn bdg_constant(m: f64) -> f64 {
    assert!(m > 0.0, "BDG constant needs m > 0");
    if m > 2.0 {
        (m / (m - 1.0)).powf(m / 2.0) * (m * (m - 1.0) / 2.0).powi(2)
    } else if m < 2.0 {
        4.0 * (2.0 / m).sqrt()
    } else {
        4.0
    }
}

/// The smallness threshold `𝔹^m(L_y, L_z)` on BMO norms.
///
/// For `L_y > 0` the closed form `(−L_zC′_m + √(mL_y + (L_zC′_m)²))/(√2 m L_y)` is evaluated as
/// `1/(√2(L_zC′_m + √(mL_y + (L_zC′_m)²)))`, which is the same number without cancellation and
/// reduces to `1/(2√2 L_z C′_m)` at `L_y = 0`.
pub fn bound_b(m: f64, l_y: f64, l_z: f64) -> Result<f64> {
    if !(m > 1.0) || l_y < 0.0 || l_z < 0.0 {
        return Err(BsdeError::Config(format!(
            "bound B needs m > 1 and nonnegative constants (m={m}, L_y={l_y}, L_z={l_z})"
        )));
    }
    if l_y == 0.0 && l_z == 0.0 {
        return Err(BsdeError::Undefined(
            "B^m(0, 0) is unbounded: every process qualifies".into(),
        ));
    }
    let a = l_z * bdg_constant(m);
    Ok(1.0 / (std::f64::consts::SQRT_2 * (a + (m * l_y + a * a).sqrt())))
}

/// [`bound_b`] with `+∞` for the degenerate `L_y = L_z = 0` case.
pub fn bound_b_or_inf(m: f64, l_y: f64, l_z: f64) -> Result<f64> {
    match bound_b(m, l_y, l_z) {
        Err(BsdeError::Undefined(_)) => Ok(f64::INFINITY),
        other => other,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Membership {
    pub member: bool,
    pub norm: f64,
    pub bound: f64,
}

/// Whether `‖|Z|★W‖_BMO < 𝔹^m(L_y, L_z)`.
pub fn in_z_bmo(z: &AdaptedField, tree: &BinomialTree, m: f64, l_y: f64, l_z: f64) -> Result<Membership> {
    let bound = bound_b_or_inf(m, l_y, l_z)?;
    let norm = bmo_norm(z, tree)?;
    Ok(Membership {
        member: norm < bound,
        norm,
        bound,
    })
}

/// `2mε₁² + √2 ε₂ C′_m`, which must stay below one.
pub fn slicing_condition(m: f64, eps1: f64, eps2: f64) -> f64 {
    2.0 * m * eps1 * eps1 + std::f64::consts::SQRT_2 * eps2 * bdg_constant(m)
}

/// `Σ_{i=0}^{P−1} 𝐊^i` with `𝐊 = 1/(1 − 2mε₁² − √2 ε₂ C′_m)`.
pub fn k_constant(m: f64, eps1: f64, eps2: f64, slices: usize) -> Result<f64> {
    let lhs = slicing_condition(m, eps1, eps2);
    if !(lhs < 1.0) {
        return Err(BsdeError::Condition {
            what: "2m eps1^2 + sqrt(2) eps2 C'_m < 1".into(),
            lhs,
        });
    }
    let base = 1.0 / (1.0 - lhs);
    Ok((0..slices).map(|i| base.powi(i as i32)).sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct InequalityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Conditional moments `E[(Σ_{m≥n}|Z_m|²Δt)^j | node]` for `j = 0..=order`, on level 0.
fn quadratic_moments(z: &AdaptedField, tree: &BinomialTree, order: usize) -> Result<Vec<f64>> {
    let steps = tree.steps();
    if !z.defined(0) || !z.defined(steps - 1) {
        return Err(BsdeError::Contract("moments need Z on levels 0..N-1".into()));
    }
    let dt = tree.dt();
    let width = order + 1;
    let mut next: Vec<f64> = (0..tree.level_size(steps))
        .flat_map(|_| std::iter::once(1.0).chain(std::iter::repeat_n(0.0, order)))
        .collect();
    for n in (0..steps).rev() {
        let e = tree.condexp_level(n, &next, width);
        let mut cur = vec![0.0; e.len()];
        for (node, (dst, src)) in cur.chunks_mut(width).zip(e.chunks(width)).enumerate() {
            let q = z.at(n, node).iter().map(|x| x * x).sum::<f64>() * dt;
            for j in 0..=order {
                dst[j] = (0..=j).map(|i| binomial(j, i) * q.powi(i as i32) * src[j - i]).sum();
            }
        }
        next = cur;
    }
    Ok(next)
}

/// Energy inequality `E[(Σ|Z|²Δt)^n] ≤ n!·‖Z★W‖^{2n}_BMO`, evaluated exactly.
pub fn energy_check(z: &AdaptedField, tree: &BinomialTree, n: u32) -> Result<InequalityCheck> {
    if n == 0 {
        return Err(BsdeError::Config("energy inequality needs n >= 1".into()));
    }
    let lhs = quadratic_moments(z, tree, n as usize)?[n as usize];
    let rhs = factorial(n) * bmo_norm(z, tree)?.powi(2 * n as i32);
    Ok(InequalityCheck {
        lhs,
        rhs,
        pass: lhs <= rhs * (1.0 + 1e-12),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum JohnNirenberg {
    Checked {
        max_conditional_exp: f64,
        bound: f64,
        pass: bool,
    },
    NotApplicable {
        norm: f64,
    },
}

/// `E[exp(Σ_{m≥n}|Z_m|²Δt) | node] ≤ 1/(1 − ‖Z★W‖²_BMO)` at every node, when the norm is below one.
pub fn john_nirenberg_check(z: &AdaptedField, tree: &BinomialTree) -> Result<JohnNirenberg> {
    let norm = bmo_norm(z, tree)?;
    if norm >= 1.0 {
        return Ok(JohnNirenberg::NotApplicable { norm });
    }
    let dt = tree.dt();
    let steps = tree.steps();
    let mut next = vec![1.0; tree.level_size(steps)];
    let mut max: f64 = 1.0;
    for n in (0..steps).rev() {
        let mut cur = tree.condexp_level(n, &next, 1);
        for (node, v) in cur.iter_mut().enumerate() {
            let q = z.at(n, node).iter().map(|x| x * x).sum::<f64>() * dt;
            *v *= q.exp();
            max = max.max(*v);
        }
        next = cur;
    }
    let bound = 1.0 / (1.0 - norm * norm);
    Ok(JohnNirenberg::Checked {
        max_conditional_exp: max,
        bound,
        pass: max <= bound * (1.0 + 1e-12),
    })
}
