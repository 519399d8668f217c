//! Backward solvers on a [`BinomialTree`].
//!
//! All schemes share the discrete martingale representation `Z_n = E[Y_{n+1}ΔWᵀ | F_n]/Δt` and differ in
//! where the generator is evaluated:
//!
//! | scheme | level-n update |
//! |---|---|
//! | `StepImplicit` | `Y_n = E[Y_{n+1}] + f(t_n, Y_n, Z_n)Δt` (inner fixed point) |
//! | `StepExplicit` | `Y_n = E[Y_{n+1}] + f(t_n, E[Y_{n+1}], Z_n)Δt` |
//! | `GlobalPicard` | `Y^{j+1}_n = E[Y^{j+1}_{n+1}] + f(t_n, Y^j_n, Z^j_n)Δt` |
//! | `MonotonePicard` | `Y^{j+1}_n = E[Y^{j+1}_{n+1}] + f(t_n, Y^{j+1}_n, Z^j_n)Δt` |
//! | `DiagonalGlobal` | `Y^{j+1}_n = E[Y^{j+1}_{n+1}] + (f_diag(t_n, Z^{j+1}_n) + g(t_n, Y^j_n, Z^j_n))Δt` |
//!
//! The fixed points of the implicit and global schemes coincide. Inner fixed points are only attempted
//! where `Δt·(K_y + L_y|ρ(Z_n)|²) < 1/2`, which keeps them contractive with margin.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bmo::bmo_norm;
use crate::error::{BsdeError, Result};
use crate::model::{
    norm, AdaptedField, BsdeSolution, Classification, Generator, NodeCtx, QuadraticBsdeProblem, Scheme,
};
use crate::tree::BinomialTree;
use crate::truncation::localized_generator;

const PAR_THRESHOLD: usize = 2048;

/// Largest admissible `Δt × (local y-Lipschitz constant)`.
pub const CONTRACTION_LIMIT: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub tolerance: f64,
    pub max_outer_iterations: usize,
    pub max_step_iterations: usize,
    pub scheme: Scheme,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-12,
            max_outer_iterations: 200,
            max_step_iterations: 100,
            scheme: Scheme::StepImplicit,
        }
    }
}

impl SolverConfig {
    pub fn with_scheme(scheme: Scheme) -> Self {
        Self {
            scheme,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || self.max_outer_iterations == 0 || self.max_step_iterations == 0 {
            return Err(BsdeError::Config(
                "solver needs tolerance > 0 and iteration caps >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// One row of the per-iterate trace of a global scheme.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IterateBounds {
    pub iteration: usize,
    pub y_sup: f64,
    pub bmo: f64,
    pub change: f64,
}

/// Node states and terminal values shared by every scheme.
pub(crate) struct Prepared {
    pub states: Vec<Vec<f64>>,
    pub state_dim: usize,
    pub terminal: Vec<f64>,
}

pub(crate) fn check_compatible(problem: &QuadraticBsdeProblem, tree: &BinomialTree) -> Result<()> {
    let (p, t) = (problem.dims, tree.dims());
    if p.k != t.k || p.steps != t.steps || p.horizon != t.horizon {
        return Err(BsdeError::Contract(format!(
            "tree (k={}, N={}, T={}) does not match problem (k={}, N={}, T={})",
            t.k, t.steps, t.horizon, p.k, p.steps, p.horizon
        )));
    }
    Ok(())
}

pub(crate) fn prepare(problem: &QuadraticBsdeProblem, tree: &BinomialTree) -> Result<Prepared> {
    check_compatible(problem, tree)?;
    let states = tree.states(problem.forward.as_ref())?;
    let state_dim = states[0].len();
    let terminal = tree.terminal_values(problem, &states)?;
    Ok(Prepared {
        states,
        state_dim,
        terminal,
    })
}

impl Prepared {
    pub fn ctx<'a>(&'a self, tree: &BinomialTree, n: usize, node: usize) -> NodeCtx<'a> {
        let m = self.state_dim;
        NodeCtx {
            level: n,
            node,
            t: tree.time(n),
            state: &self.states[n][node * m..(node + 1) * m],
        }
    }
}

/// Runs `f(node, out)` over every node of a level, in parallel for large levels, and returns the
/// per-node results in node order.
fn for_nodes<T, F>(size: usize, width: usize, out: &mut [f64], f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut [f64]) -> T + Send + Sync,
{
    debug_assert_eq!(out.len(), size * width);
    if size >= PAR_THRESHOLD {
        out.par_chunks_mut(width).enumerate().map(|(i, o)| f(i, o)).collect()
    } else {
        out.chunks_mut(width).enumerate().map(|(i, o)| f(i, o)).collect()
    }
}

fn sup_abs(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

fn non_finite(n: usize, values: &[f64], width: usize) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(pos) => Err(BsdeError::NonFinite {
            level: n,
            node: pos / width,
        }),
        None => Ok(()),
    }
}

fn sizing_error(problem: &QuadraticBsdeProblem, tree: &BinomialTree, n: usize, node: usize, lip: f64) -> BsdeError {
    BsdeError::Sizing(format!(
        "dt * Lip_y = {:.4} >= {CONTRACTION_LIMIT} at level {n}, node {node} (N={}, truncation {:?}); increase N",
        tree.dt() * lip,
        tree.steps(),
        problem.truncation
    ))
}

/// Inner fixed point `y = e + f(ctx, y, z)Δt`; returns (iterations, last update).
#[allow(clippy::too_many_arguments)]
fn implicit_node(
    gen: &dyn Generator,
    ctx: &NodeCtx<'_>,
    e: &[f64],
    z: &[f64],
    dt: f64,
    config: &SolverConfig,
    out: &mut [f64],
) -> std::result::Result<(usize, f64), f64> {
    let d = e.len();
    let mut f = vec![0.0; d];
    out.copy_from_slice(e);
    let mut last = f64::INFINITY;
    for it in 1..=config.max_step_iterations {
        gen.eval(ctx, out, z, &mut f);
        let mut change: f64 = 0.0;
        for i in 0..d {
            let next = e[i] + f[i] * dt;
            change = change.max((next - out[i]).abs());
            out[i] = next;
        }
        last = change;
        if !change.is_finite() {
            return Err(change);
        }
        if change <= config.tolerance * (1.0 + sup_abs(out)) {
            return Ok((it, change));
        }
    }
    Err(last)
}

/// Solves a Lipschitz (or locally Lipschitz) BSDE on the tree with the configured scheme.
pub fn picard_solve(
    problem: &QuadraticBsdeProblem,
    tree: &BinomialTree,
    config: &SolverConfig,
) -> Result<BsdeSolution> {
    config.validate()?;
    match config.scheme {
        Scheme::StepImplicit | Scheme::StepExplicit => step_solve(problem, tree, config),
        Scheme::GlobalPicard | Scheme::MonotonePicard => global_picard(problem, tree, config).map(|(s, _)| s),
        Scheme::DiagonalGlobal => diagonal_global_scheme(problem, tree, config).map(|(s, _)| s),
    }
}

fn step_solve(problem: &QuadraticBsdeProblem, tree: &BinomialTree, config: &SolverConfig) -> Result<BsdeSolution> {
    let prep = prepare(problem, tree)?;
    let (d, k, steps) = (problem.dims.d, problem.dims.k, tree.steps());
    let dt = tree.dt();
    let gen = problem.generator.as_ref();

    let mut y = AdaptedField::zeros(tree, d, 1, 0, steps);
    let mut z = AdaptedField::zeros(tree, d, k, 0, steps.saturating_sub(1));
    y.set_level(steps, prep.terminal.clone());

    let mut iterations = 0usize;
    let mut residual: f64 = 0.0;
    for n in (0..steps).rev() {
        let next = y.level(n + 1);
        let ey = tree.condexp_level(n, next, d);
        let zl = tree.extract_z_level(n, next, d);
        non_finite(n, &zl, d * k)?;
        let mut yl = vec![0.0; tree.level_size(n) * d];
        let results = for_nodes(tree.level_size(n), d, &mut yl, |node, out| -> Result<(usize, f64)> {
            let ctx = prep.ctx(tree, n, node);
            let zn = &zl[node * d * k..(node + 1) * d * k];
            let e = &ey[node * d..(node + 1) * d];
            match config.scheme {
                Scheme::StepExplicit => {
                    gen.eval(&ctx, e, zn, out);
                    for (o, ei) in out.iter_mut().zip(e) {
                        *o = ei + *o * dt;
                    }
                    Ok((1, 0.0))
                }
                _ => {
                    let lip = problem.local_y_lipschitz(norm(zn));
                    if dt * lip >= CONTRACTION_LIMIT {
                        return Err(sizing_error(problem, tree, n, node, lip));
                    }
                    implicit_node(gen, &ctx, e, zn, dt, config, out).map_err(|residual| {
                        if residual.is_finite() {
                            BsdeError::IterationLimit {
                                iterations: config.max_step_iterations,
                                residual,
                                context: format!(" at level {n}, node {node}"),
                            }
                        } else {
                            BsdeError::NonFinite { level: n, node }
                        }
                    })
                }
            }
        });
        for r in results {
            let (it, res) = r?;
            iterations = iterations.max(it);
            residual = residual.max(res);
        }
        non_finite(n, &yl, d)?;
        y.set_level(n, yl);
        z.set_level(n, zl);
    }
    let z_sup = z.sup_norm();
    Ok(BsdeSolution {
        y,
        z,
        picard_iterations: iterations,
        residual,
        z_sup,
        truncation: problem.truncation,
        scheme: config.scheme,
    })
}

/// Backward pass of a global scheme. `gen_new` is evaluated at the new `Z` (diagonal scheme only),
/// `gen_old` at the previous iterate; with `implicit_y` the y-argument of `gen_old` is the new `Y`.
#[allow(clippy::too_many_arguments)]
fn global_pass(
    problem: &QuadraticBsdeProblem,
    tree: &BinomialTree,
    prep: &Prepared,
    config: &SolverConfig,
    gen_new: Option<&dyn Generator>,
    gen_old: &dyn Generator,
    implicit_y: bool,
    old: (&AdaptedField, &AdaptedField),
) -> Result<(AdaptedField, AdaptedField)> {
    let (d, k, steps) = (problem.dims.d, problem.dims.k, tree.steps());
    let dt = tree.dt();
    let (y_old, z_old) = old;
    let mut y = AdaptedField::zeros(tree, d, 1, 0, steps);
    let mut z = AdaptedField::zeros(tree, d, k, 0, steps.saturating_sub(1));
    y.set_level(steps, prep.terminal.clone());
    for n in (0..steps).rev() {
        let next = y.level(n + 1);
        let ey = tree.condexp_level(n, next, d);
        let zl = tree.extract_z_level(n, next, d);
        non_finite(n, &zl, d * k)?;
        let mut yl = vec![0.0; tree.level_size(n) * d];
        let results = for_nodes(tree.level_size(n), d, &mut yl, |node, out| -> Result<()> {
            let ctx = prep.ctx(tree, n, node);
            let e = &ey[node * d..(node + 1) * d];
            let zo = z_old.at(n, node);
            let yo = y_old.at(n, node);
            let mut extra = vec![0.0; d];
            if let Some(g) = gen_new {
                g.eval(&ctx, yo, &zl[node * d * k..(node + 1) * d * k], &mut extra);
            }
            if implicit_y {
                let lip = problem.local_y_lipschitz(norm(zo));
                if dt * lip >= CONTRACTION_LIMIT {
                    return Err(sizing_error(problem, tree, n, node, lip));
                }
                let shifted: Vec<f64> = e.iter().zip(&extra).map(|(a, b)| a + b * dt).collect();
                implicit_node(gen_old, &ctx, &shifted, zo, dt, config, out)
                    .map(|_| ())
                    .map_err(|residual| BsdeError::IterationLimit {
                        iterations: config.max_step_iterations,
                        residual,
                        context: format!(" at level {n}, node {node}"),
                    })
            } else {
                gen_old.eval(&ctx, yo, zo, out);
                for i in 0..d {
                    out[i] = e[i] + (out[i] + extra[i]) * dt;
                }
                Ok(())
            }
        });
        results.into_iter().collect::<Result<Vec<()>>>()?;
        non_finite(n, &yl, d)?;
        y.set_level(n, yl);
        z.set_level(n, zl);
    }
    Ok((y, z))
}

fn global_iterate(
    problem: &QuadraticBsdeProblem,
    tree: &BinomialTree,
    config: &SolverConfig,
    gen_new: Option<&dyn Generator>,
    gen_old: &dyn Generator,
    implicit_y: bool,
) -> Result<(BsdeSolution, Vec<IterateBounds>)> {
    let prep = prepare(problem, tree)?;
    let (d, k, steps) = (problem.dims.d, problem.dims.k, tree.steps());
    let mut y = AdaptedField::zeros(tree, d, 1, 0, steps);
    let mut z = AdaptedField::zeros(tree, d, k, 0, steps.saturating_sub(1));
    let mut trace = Vec::new();
    let mut change = f64::INFINITY;
    for it in 1..=config.max_outer_iterations {
        let (y_new, z_new) = global_pass(problem, tree, &prep, config, gen_new, gen_old, implicit_y, (&y, &z))
            .map_err(|e| annotate_outer(e, it))?;
        change = y_new.max_diff(&y)?.max(z_new.max_diff(&z)?);
        let scale = 1.0 + y_new.sup_norm().max(z_new.sup_norm());
        trace.push(IterateBounds {
            iteration: it,
            y_sup: y_new.sup_norm(),
            bmo: bmo_norm(&z_new, tree)?,
            change,
        });
        y = y_new;
        z = z_new;
        if change <= config.tolerance * scale {
            let z_sup = z.sup_norm();
            return Ok((
                BsdeSolution {
                    y,
                    z,
                    picard_iterations: (it - 1).max(1),
                    residual: change,
                    z_sup,
                    truncation: problem.truncation,
                    scheme: config.scheme,
                },
                trace,
            ));
        }
    }
    Err(BsdeError::IterationLimit {
        iterations: config.max_outer_iterations,
        residual: change,
        context: " (outer Picard loop)".into(),
    })
}

fn annotate_outer(err: BsdeError, it: usize) -> BsdeError {
    match err {
        BsdeError::IterationLimit {
            iterations,
            residual,
            context,
        } => BsdeError::IterationLimit {
            iterations,
            residual,
            context: format!("{context} during outer iterate {it}"),
        },
        other => other,
    }
}

/// Global Picard iteration with its per-iterate trace.
pub fn global_picard(
    problem: &QuadraticBsdeProblem,
    tree: &BinomialTree,
    config: &SolverConfig,
) -> Result<(BsdeSolution, Vec<IterateBounds>)> {
    config.validate()?;
    let implicit_y = config.scheme == Scheme::MonotonePicard;
    global_iterate(problem, tree, config, None, problem.generator.as_ref(), implicit_y)
}

/// Picard scheme for diagonal generators: the diagonal part sees the new `Z`, the coupling part the
/// previous iterate. Returns the solution and the per-iterate `(‖Y‖_sup, BMO(Z))` trace.
pub fn diagonal_global_scheme(
    problem: &QuadraticBsdeProblem,
    tree: &BinomialTree,
    config: &SolverConfig,
) -> Result<(BsdeSolution, Vec<IterateBounds>)> {
    config.validate()?;
    let Classification::Diagonal(parts) = &problem.classification else {
        return Err(BsdeError::Contract(
            "diagonal scheme needs a diagonal-classified problem".into(),
        ));
    };
    let config = SolverConfig {
        scheme: Scheme::DiagonalGlobal,
        ..*config
    };
    global_iterate(
        problem,
        tree,
        &config,
        Some(parts.f_diag.as_ref()),
        parts.g.as_ref(),
        false,
    )
}

/// Solves the localized problem `f^M`; the solution is tagged with `M`.
pub fn solve_truncated(
    problem: &QuadraticBsdeProblem,
    radius: f64,
    tree: &BinomialTree,
    config: &SolverConfig,
) -> Result<BsdeSolution> {
    let local = localized_generator(problem, radius)?;
    picard_solve(&local, tree, config)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    #[serde(rename = "M")]
    pub radius: f64,
    pub z_sup: f64,
    pub bmo_norm: f64,
    pub y_sup: f64,
    pub y0_norm: f64,
    pub truncation_inactive: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// First `M` with `z_sup < M`.
    pub m_star: Option<f64>,
}

/// Solves the localized problem for each radius.
pub fn sweep_m(
    problem: &QuadraticBsdeProblem,
    radii: &[f64],
    tree: &BinomialTree,
    config: &SolverConfig,
) -> Result<SweepTable> {
    sweep_m_solutions(problem, radii, tree, config).map(|(t, _)| t)
}

/// As [`sweep_m`], also returning the solutions.
pub fn sweep_m_solutions(
    problem: &QuadraticBsdeProblem,
    radii: &[f64],
    tree: &BinomialTree,
    config: &SolverConfig,
) -> Result<(SweepTable, Vec<BsdeSolution>)> {
    if radii.is_empty() || radii.windows(2).any(|w| w[0] > w[1]) {
        return Err(BsdeError::Config("M list must be nonempty and ascending".into()));
    }
    let mut rows = Vec::with_capacity(radii.len());
    let mut sols = Vec::with_capacity(radii.len());
    for &m in radii {
        let sol = solve_truncated(problem, m, tree, config)?;
        rows.push(SweepRow {
            radius: m,
            z_sup: sol.z_sup,
            bmo_norm: bmo_norm(&sol.z, tree)?,
            y_sup: sol.y_sup(),
            y0_norm: norm(sol.y0()),
            truncation_inactive: sol.z_sup < m,
        });
        sols.push(sol);
    }
    let m_star = rows.iter().find(|r| r.truncation_inactive).map(|r| r.radius);
    Ok((SweepTable { rows, m_star }, sols))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generator, state_terminal, zero_generator, Dimensions, StructuralConstants};
    use crate::tree::build_tree;
    use std::sync::Arc;

    fn scalar_problem(
        steps: usize,
        xi: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        f: Arc<dyn Generator>,
        c: StructuralConstants,
    ) -> QuadraticBsdeProblem {
        let dims = Dimensions::new(1, 1, 1.0, steps).unwrap();
        QuadraticBsdeProblem::new("scalar", dims, state_terminal(xi), f, c).unwrap()
    }

    #[test]
    fn zero_generator_reproduces_brownian_motion() {
        let p = scalar_problem(6, |w, o| o[0] = w[0], zero_generator(), StructuralConstants::default());
        let t = build_tree(p.dims).unwrap();
        let sol = picard_solve(&p, &t, &SolverConfig::default()).unwrap();
        for n in 0..=6 {
            for node in 0..t.level_size(n) {
                let mut w = [0.0];
                t.brownian(n, node, &mut w);
                assert!((sol.y.at(n, node)[0] - w[0]).abs() < 1e-14);
                if n < 6 {
                    assert!((sol.z.at(n, node)[0] - 1.0).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn linear_ode_converges_at_first_order() {
        // f(y) = y, ξ = 1: Y_0 → e.
        let mut errs = Vec::new();
        for steps in [4, 8, 16, 32] {
            let p = scalar_problem(
                steps,
                |_, o| o[0] = 1.0,
                generator(|_, y: &[f64], _, o: &mut [f64]| o[0] = y[0]),
                StructuralConstants::lipschitz(1.0, 0.0, 0.0, 0.0),
            );
            let t = BinomialTree::recombining(p.dims).unwrap();
            let sol = picard_solve(&p, &t, &SolverConfig::default()).unwrap();
            // Implicit Euler gives (1 − Δt)^{-N} exactly.
            let exact = (1.0 - 1.0 / steps as f64).powi(-(steps as i32));
            assert!((sol.y0()[0] - exact).abs() < 1e-10);
            errs.push((sol.y0()[0] - std::f64::consts::E).abs());
        }
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order > 0.85, "order {order}");
        }
    }

    #[test]
    fn sizing_rule_refuses_coarse_steps() {
        let p = scalar_problem(
            2,
            |_, o| o[0] = 1.0,
            generator(|_, y: &[f64], _, o: &mut [f64]| o[0] = y[0]),
            StructuralConstants::lipschitz(1.0, 0.0, 0.0, 0.0),
        );
        let t = build_tree(p.dims).unwrap();
        let err = picard_solve(&p, &t, &SolverConfig::default()).unwrap_err();
        assert!(matches!(err, BsdeError::Sizing(_)), "{err}");
    }

    #[test]
    fn schemes_agree_on_lipschitz_problem() {
        let p = scalar_problem(
            8,
            |w, o| o[0] = w[0].sin(),
            generator(|t, y: &[f64], z: &[f64], o: &mut [f64]| o[0] = 0.5 * y[0].cos() + 0.3 * z[0] + t),
            StructuralConstants::lipschitz(0.5, 0.0, 0.3, 0.0),
        );
        let t = build_tree(p.dims).unwrap();
        let cfg = SolverConfig::default();
        let a = picard_solve(&p, &t, &cfg).unwrap();
        let b = picard_solve(&p, &t, &SolverConfig::with_scheme(Scheme::GlobalPicard)).unwrap();
        let c = picard_solve(&p, &t, &SolverConfig::with_scheme(Scheme::MonotonePicard)).unwrap();
        assert!(a.y.max_diff(&b.y).unwrap() <= 10.0 * cfg.tolerance);
        assert!(a.z.max_diff(&b.z).unwrap() <= 10.0 * cfg.tolerance);
        assert!(a.y.max_diff(&c.y).unwrap() <= 10.0 * cfg.tolerance);
    }

    #[test]
    fn terminal_is_exact_and_solver_is_deterministic() {
        let p = scalar_problem(
            7,
            |w, o| o[0] = w[0].cos(),
            generator(|_, y: &[f64], z: &[f64], o: &mut [f64]| o[0] = y[0].sin() * z[0] * z[0] / (1.0 + z[0] * z[0])),
            StructuralConstants::lipschitz(0.0, 1.0, 0.0, 1.0),
        );
        let t = build_tree(p.dims).unwrap();
        let a = picard_solve(&p, &t, &SolverConfig::default()).unwrap();
        let b = picard_solve(&p, &t, &SolverConfig::default()).unwrap();
        assert_eq!(a.y, b.y);
        assert_eq!(a.z, b.z);
        for node in 0..t.level_size(7) {
            let mut w = [0.0];
            t.brownian(7, node, &mut w);
            assert_eq!(a.y.at(7, node)[0], w[0].cos());
        }
    }

    #[test]
    fn comparison_in_one_dimension() {
        let mk = |shift: f64, lift: f64| {
            scalar_problem(
                6,
                move |w, o| o[0] = w[0].tanh() + shift,
                generator(move |_, y: &[f64], z: &[f64], o: &mut [f64]| o[0] = -0.5 * y[0] + 0.2 * z[0] + lift),
                StructuralConstants::lipschitz(0.5, 0.0, 0.2, 0.0),
            )
        };
        let (hi, lo) = (mk(0.1, 0.3), mk(0.0, 0.0));
        let t = build_tree(hi.dims).unwrap();
        let a = picard_solve(&hi, &t, &SolverConfig::default()).unwrap();
        let b = picard_solve(&lo, &t, &SolverConfig::default()).unwrap();
        for (x, y) in a.y.iter().zip(b.y.iter()) {
            assert!(x.2[0] >= y.2[0]);
        }
    }

    #[test]
    fn truncated_constant_terminal() {
        let p = scalar_problem(
            5,
            |_, o| o[0] = 0.7,
            generator(|_, y: &[f64], z: &[f64], o: &mut [f64]| o[0] = y[0].sin() * z[0] * z[0]),
            StructuralConstants::lipschitz(0.0, 1.0, 0.0, 1.0),
        );
        let t = build_tree(p.dims).unwrap();
        let sol = solve_truncated(&p, 1.0, &t, &SolverConfig::default()).unwrap();
        assert_eq!(sol.truncation, Some(1.0));
        assert_eq!(sol.z_sup, 0.0);
        assert!(sol.y.iter().all(|(_, _, v)| v[0] == 0.7));
    }

    #[test]
    fn zero_radius_square_generator_converges() {
        let p = scalar_problem(
            8,
            |w, o| o[0] = 2.0 * w[0],
            generator(|_, _, z: &[f64], o: &mut [f64]| o[0] = z[0] * z[0]),
            StructuralConstants::lipschitz(0.0, 0.0, 0.0, 1.0),
        );
        let t = build_tree(p.dims).unwrap();
        let sol = solve_truncated(&p, 0.0, &t, &SolverConfig::default()).unwrap();
        // Generator bounded by h(·)² ≤ 1, so Y_0 ≤ E[ξ] + T.
        assert!(sol.y0()[0] <= 1.0 + 1e-12 && sol.y0()[0] > 0.0);
    }

    #[test]
    fn huge_radius_matches_raw_solve() {
        let p = scalar_problem(
            8,
            |w, o| o[0] = w[0].sin(),
            generator(|_, _, z: &[f64], o: &mut [f64]| o[0] = 0.5 * z[0] * z[0]),
            StructuralConstants::lipschitz(0.0, 0.0, 0.0, 0.5),
        );
        let t = build_tree(p.dims).unwrap();
        let raw = picard_solve(&p, &t, &SolverConfig::default()).unwrap();
        let big = solve_truncated(&p, 10.0 * raw.z_sup, &t, &SolverConfig::default()).unwrap();
        assert!(raw.y.max_diff(&big.y).unwrap() <= 1e-10);
    }

    #[test]
    fn sweep_flags_first_inactive_radius() {
        let p = scalar_problem(
            8,
            |w, o| o[0] = 0.5 * w[0].tanh(),
            generator(|_, _, z: &[f64], o: &mut [f64]| o[0] = 0.2 * z[0]),
            StructuralConstants::lipschitz(0.0, 0.0, 0.2, 0.0),
        );
        let t = build_tree(p.dims).unwrap();
        let table = sweep_m(&p, &[0.1, 1.0, 2.0, 4.0], &t, &SolverConfig::default()).unwrap();
        assert_eq!(table.rows.len(), 4);
        assert_eq!(table.m_star, Some(1.0));
        assert_eq!(table.rows[1].z_sup, table.rows[3].z_sup);
        assert!(sweep_m(&p, &[2.0, 1.0], &t, &SolverConfig::default()).is_err());
    }

    #[test]
    fn diagonal_scheme_with_zero_generator_is_one_iteration() {
        let dims = Dimensions::new(2, 2, 1.0, 3).unwrap();
        let p = QuadraticBsdeProblem::new(
            "diag0",
            dims,
            state_terminal(|w, o: &mut [f64]| {
                o[0] = w[0];
                o[1] = w[0] * w[1];
            }),
            zero_generator(),
            StructuralConstants::default(),
        )
        .unwrap()
        .with_classification(Classification::Diagonal(crate::model::DiagonalParts {
            f_diag: zero_generator(),
            g: zero_generator(),
        }));
        let t = build_tree(dims).unwrap();
        let (sol, trace) = diagonal_global_scheme(&p, &t, &SolverConfig::default()).unwrap();
        assert_eq!(sol.picard_iterations, 1);
        assert_eq!(trace.len(), 2);
        let direct = picard_solve(&p, &t, &SolverConfig::default()).unwrap();
        assert!(sol.y.max_diff(&direct.y).unwrap() < 1e-15);
    }
}
