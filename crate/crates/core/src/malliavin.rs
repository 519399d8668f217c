//! Discrete Malliavin derivatives on the path tree.
//!
//! `D_u^p` of a level-n field (n > u) is the flip quotient
//! `(Y(path with ΔW^p_u = +√Δt) − Y(path with ΔW^p_u = −√Δt)) / (2√Δt)`. At level `u` itself the
//! derivative is the conditional expectation of the level-`u+1` quotients, and it vanishes below `u`.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{BsdeError, Result};
use crate::linear::{representation_solve_from, LinearCoefficients};
use crate::model::{AdaptedField, BsdeSolution, Generator, NodeCtx, QuadraticBsdeProblem};
use crate::solver::prepare;
use crate::tree::{BinomialTree, TreeKind};

/// Writes a row-major d×d Jacobian.
pub type JacobianFn = Arc<dyn Fn(&NodeCtx<'_>, &[f64], &[f64], &mut [f64]) + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    Analytic,
    FiniteDifference,
}

/// `∇_y f` (d×d) and `∇_z f` as k blocks `∂f/∂z^{(:,p)}` (each d×d, written consecutively).
#[derive(Clone)]
pub struct GeneratorGradients {
    pub grad_y: JacobianFn,
    pub grad_z: JacobianFn,
    pub mode: GradientMode,
}

pub const FD_STEP: f64 = 1e-6;

impl GeneratorGradients {
    pub fn analytic(grad_y: JacobianFn, grad_z: JacobianFn) -> Self {
        Self {
            grad_y,
            grad_z,
            mode: GradientMode::Analytic,
        }
    }

    /// Central differences with step [`FD_STEP`].
    pub fn finite_difference(generator: Arc<dyn Generator>, d: usize, k: usize) -> Self {
        let gy = generator.clone();
        let grad_y: JacobianFn = Arc::new(move |ctx, y, z, out| {
            let mut p = y.to_vec();
            let (mut up, mut dn) = (vec![0.0; d], vec![0.0; d]);
            for j in 0..d {
                p[j] = y[j] + FD_STEP;
                gy.eval(ctx, &p, z, &mut up);
                p[j] = y[j] - FD_STEP;
                gy.eval(ctx, &p, z, &mut dn);
                p[j] = y[j];
                for i in 0..d {
                    out[i * d + j] = (up[i] - dn[i]) / (2.0 * FD_STEP);
                }
            }
        });
        let grad_z: JacobianFn = Arc::new(move |ctx, y, z, out| {
            let mut q = z.to_vec();
            let (mut up, mut dn) = (vec![0.0; d], vec![0.0; d]);
            for p in 0..k {
                for j in 0..d {
                    let idx = j * k + p;
                    q[idx] = z[idx] + FD_STEP;
                    generator.eval(ctx, y, &q, &mut up);
                    q[idx] = z[idx] - FD_STEP;
                    generator.eval(ctx, y, &q, &mut dn);
                    q[idx] = z[idx];
                    for i in 0..d {
                        out[p * d * d + i * d + j] = (up[i] - dn[i]) / (2.0 * FD_STEP);
                    }
                }
            }
        });
        Self {
            grad_y,
            grad_z,
            mode: GradientMode::FiniteDifference,
        }
    }
}

fn require_path(tree: &BinomialTree) -> Result<()> {
    if tree.kind() == TreeKind::Path {
        Ok(())
    } else {
        Err(BsdeError::Contract("Malliavin derivatives need a path tree".into()))
    }
}

/// The two level-`n` nodes obtained by setting bit `p` of the step-`u` branch to 1 and to 0.
fn flip_pair(tree: &BinomialTree, n: usize, node: usize, u: usize, p: usize) -> (usize, usize) {
    let b = tree.branch_at(n, node, u);
    (
        tree.with_branch_at(n, node, u, b | (1 << p)),
        tree.with_branch_at(n, node, u, b & !(1 << p)),
    )
}

/// Replaces level `u` of a d×k derivative field by the conditional expectation of level `u+1`.
fn project_to_level(field: &mut AdaptedField, tree: &BinomialTree, u: usize) {
    let width = field.width();
    let projected = tree.condexp_level(u, field.level(u + 1), width);
    field.set_level(u, projected);
}

/// `D_u Y` as a d×k field on levels `0..=N` (zero below `u`).
pub fn discrete_malliavin(y: &AdaptedField, u: usize, tree: &BinomialTree) -> Result<AdaptedField> {
    require_path(tree)?;
    let steps = tree.steps();
    if u >= steps {
        return Err(BsdeError::Contract(format!(
            "derivative time {u} must be below N={steps}"
        )));
    }
    if y.first_level() > u || y.last_level() < steps {
        return Err(BsdeError::Contract("field must be defined on levels u..=N".into()));
    }
    let (d, k) = (y.rows(), tree.dims().k);
    let scale = 0.5 / tree.sqrt_dt();
    let mut out = AdaptedField::from_fn(tree, d, k, 0, steps, |n, node, dst| {
        if n <= u {
            return;
        }
        for p in 0..k {
            let (hi, lo) = flip_pair(tree, n, node, u, p);
            let (a, b) = (y.at(n, hi), y.at(n, lo));
            for i in 0..d {
                dst[i * k + p] = (a[i] - b[i]) * scale;
            }
        }
    });
    project_to_level(&mut out, tree, u);
    Ok(out)
}

/// Solves the linear BSDE satisfied by `D_u Y` along `solution`, one Brownian component at a time.
///
/// Coefficients are `A = ∇_y f`, `B^q = ∂f/∂z^{(:,q)}` at `(Y_n, Z_n)`; the terminal is the flip derivative
/// of `ξ`; the forcing is the flip derivative of `f` through its state argument with `(Y_n, Z_n)` held
/// fixed (zero when `f` does not depend on the path). Returns a d×k field on levels `0..=N`, zero below `u`.
pub fn malliavin_bsde_solve(
    problem: &QuadraticBsdeProblem,
    solution: &BsdeSolution,
    gradients: &GeneratorGradients,
    u: usize,
    tree: &BinomialTree,
) -> Result<AdaptedField> {
    require_path(tree)?;
    let steps = tree.steps();
    if u >= steps {
        return Err(BsdeError::Contract(format!(
            "derivative time {u} must be below N={steps}"
        )));
    }
    let prep = prepare(problem, tree)?;
    let (d, k) = (problem.dims.d, problem.dims.k);
    let terminal = discrete_malliavin(&solution.y, u, tree)?;
    let first = u + 1;
    let coeffs_at = |n: usize, node: usize| {
        let ctx = prep.ctx(tree, n, node);
        (ctx, solution.y.at(n, node), solution.z.at(n, node))
    };
    let a = AdaptedField::from_fn(tree, d, d, 0, steps - 1, |n, node, out| {
        if n >= first {
            let (ctx, y, z) = coeffs_at(n, node);
            (gradients.grad_y)(&ctx, y, z, out);
        }
    });
    let blocks = AdaptedField::from_fn(tree, k * d, d, 0, steps - 1, |n, node, out| {
        if n >= first {
            let (ctx, y, z) = coeffs_at(n, node);
            (gradients.grad_z)(&ctx, y, z, out);
        }
    });
    let b: Vec<AdaptedField> = (0..k)
        .map(|q| blocks.map_nodes(d, d, |src, dst| dst.copy_from_slice(&src[q * d * d..(q + 1) * d * d])))
        .collect();
    let scale = 0.5 / tree.sqrt_dt();
    let gen = problem.generator.as_ref();
    let mut result = AdaptedField::zeros(tree, d, k, 0, steps);
    for p in 0..k {
        let (mut fa, mut fb) = (vec![0.0; d], vec![0.0; d]);
        let forcing = AdaptedField::from_fn(tree, d, 1, 0, steps - 1, |n, node, out| {
            if n < first || prep.state_dim == 0 {
                return;
            }
            let (hi, lo) = flip_pair(tree, n, node, u, p);
            let (y, z) = (solution.y.at(n, node), solution.z.at(n, node));
            gen.eval(&prep.ctx(tree, n, hi), y, z, &mut fa);
            gen.eval(&prep.ctx(tree, n, lo), y, z, &mut fb);
            for i in 0..d {
                out[i] = (fa[i] - fb[i]) * scale;
            }
        });
        let coeffs = LinearCoefficients {
            a: a.clone(),
            b: b.clone(),
            forcing,
            terminal: terminal
                .restrict(steps, steps)?
                .map_nodes(d, 1, |src, dst| (0..d).for_each(|i| dst[i] = src[i * k + p])),
        };
        let sol = representation_solve_from(&coeffs, tree, first)?;
        for n in first..=steps {
            for node in 0..tree.level_size(n) {
                let (src, dst) = (sol.at(n, node), result.at_mut(n, node));
                (0..d).for_each(|i| dst[i * k + p] = src[i]);
            }
        }
    }
    project_to_level(&mut result, tree, u);
    Ok(result)
}

/// `max_n sup_node |Z_n − (D_n Y)_n|`.
///
/// On the tree `(D_nY)_n` is the conditional expectation of the level-`n+1` flip quotients, which is the
/// martingale-representation quotient defining `Z_n`, so the identity holds to rounding for every scheme.
pub fn z_identity_check(solution: &BsdeSolution, tree: &BinomialTree) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for n in 0..tree.steps() {
        let dy = discrete_malliavin(&solution.y, n, tree)?;
        let diff = dy
            .level(n)
            .iter()
            .zip(solution.z.level(n))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst = worst.max(diff);
    }
    Ok(worst)
}
