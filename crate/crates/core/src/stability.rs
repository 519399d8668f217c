//! Empirical stability experiments: perturb the data, solve both problems, measure the differences.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::bmo::{bmo_norm, sliced_bmo};
use crate::error::{BsdeError, Result};
use crate::model::{
    norm, AdaptedField, BsdeSolution, Generator, QuadraticBsdeProblem, ShiftedGenerator, ShiftedTerminal, Terminal,
};
use crate::solver::{picard_solve, prepare, SolverConfig};
use crate::tree::{BinomialTree, DEFAULT_NODE_BUDGET};

/// `E[g(path)]` over all `branching^N` paths, where `g` folds a per-path state along the visited nodes.
///
/// `visit(n, node, acc)` updates the accumulator at each node from level 0 to N; `leaf(acc)` maps it to
/// the integrand. Exact on both layouts; refuses more than [`DEFAULT_NODE_BUDGET`] paths.
pub fn path_expectation<A, V, L>(tree: &BinomialTree, init: A, visit: V, leaf: L) -> Result<f64>
where
    A: Clone + Send + Sync,
    V: Fn(usize, usize, &mut A) + Send + Sync,
    L: Fn(&A) -> f64 + Send + Sync,
{
    let (b, steps) = (tree.branching(), tree.steps());
    let paths = (b as f64).powi(steps as i32);
    if paths > DEFAULT_NODE_BUDGET as f64 {
        return Err(BsdeError::Sizing(format!(
            "path functional needs {paths:.0} paths (budget {DEFAULT_NODE_BUDGET}); reduce N or k"
        )));
    }
    fn walk<A: Clone, V: Fn(usize, usize, &mut A), L: Fn(&A) -> f64>(
        tree: &BinomialTree,
        n: usize,
        node: usize,
        mut acc: A,
        visit: &V,
        leaf: &L,
    ) -> f64 {
        visit(n, node, &mut acc);
        if n == tree.steps() {
            return leaf(&acc);
        }
        let b = tree.branching();
        (0..b)
            .map(|br| walk(tree, n + 1, tree.child(n, node, br), acc.clone(), visit, leaf))
            .sum::<f64>()
            / b as f64
    }
    let mut root = init;
    visit(0, 0, &mut root);
    if steps == 0 {
        return Ok(leaf(&root));
    }
    let parts: Vec<f64> = (0..b)
        .into_par_iter()
        .map(|br| walk(tree, 1, tree.child(0, 0, br), root.clone(), &visit, &leaf))
        .collect();
    Ok(parts.iter().sum::<f64>() / b as f64)
}

/// Unconditional expectation of a per-leaf scalar.
pub fn leaf_expectation(tree: &BinomialTree, leaf: &[f64]) -> f64 {
    let mut level = leaf.to_vec();
    for n in (0..tree.steps()).rev() {
        level = tree.condexp_level(n, &level, 1);
    }
    level[0]
}

fn check_p(p: f64) -> Result<()> {
    if p >= 1.0 {
        Ok(())
    } else {
        Err(BsdeError::Contract(format!("norm exponent must be >= 1, got {p}")))
    }
}

/// `E[max_n |Y_n|^p]^{1/p}` over the levels on which `field` is defined.
pub fn tree_sp_norm(field: &AdaptedField, tree: &BinomialTree, p: f64) -> Result<f64> {
    check_p(p)?;
    let (first, last) = (field.first_level(), field.last_level());
    let m = path_expectation(
        tree,
        0.0f64,
        |n, node, acc| {
            if (first..=last).contains(&n) {
                *acc = acc.max(norm(field.at(n, node)));
            }
        },
        |acc| acc.powf(p),
    )?;
    Ok(m.powf(1.0 / p))
}

/// `E[(Σ_n |Z_n|²Δt)^{p/2}]^{1/p}`, the ℋ^p norm of `Z★W`.
pub fn tree_hp_norm(z: &AdaptedField, tree: &BinomialTree, p: f64) -> Result<f64> {
    check_p(p)?;
    let dt = tree.dt();
    let (first, last) = (z.first_level(), z.last_level());
    let m = path_expectation(
        tree,
        0.0f64,
        |n, node, acc| {
            if (first..=last).contains(&n) && n < tree.steps() {
                *acc += z.at(n, node).iter().map(|x| x * x).sum::<f64>() * dt;
            }
        },
        |acc| acc.powf(p / 2.0),
    )?;
    Ok(m.powf(1.0 / p))
}

/// `E[(Σ_n |g_n|Δt)^{q}]^{1/q}` for a field `g` on levels `0..N−1`.
fn integral_lq(g: &AdaptedField, tree: &BinomialTree, q: f64) -> Result<f64> {
    let dt = tree.dt();
    let m = path_expectation(
        tree,
        0.0f64,
        |n, node, acc| {
            if g.defined(n) && n < tree.steps() {
                *acc += norm(g.at(n, node)) * dt;
            }
        },
        |acc| acc.powf(q),
    )?;
    Ok(m.powf(1.0 / q))
}

/// Perturbation applied with weight ε: `ξ + ε·δξ`, `f + ε·δf`.
#[derive(Clone, Default)]
pub struct Perturbation {
    pub terminal: Option<Arc<dyn Terminal>>,
    pub generator: Option<Arc<dyn Generator>>,
}

impl Perturbation {
    pub fn apply(&self, problem: &QuadraticBsdeProblem, epsilon: f64) -> QuadraticBsdeProblem {
        let mut out = problem.clone();
        if let Some(t) = &self.terminal {
            out.terminal = Arc::new(ShiftedTerminal {
                base: problem.terminal.clone(),
                shift: t.clone(),
                epsilon,
            });
        }
        if let Some(g) = &self.generator {
            out.generator = Arc::new(ShiftedGenerator {
                base: problem.generator.clone(),
                shift: g.clone(),
                epsilon,
            });
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StabilityRow {
    pub epsilon: f64,
    #[serde(rename = "dY_S2p")]
    pub dy_s2p: f64,
    #[serde(rename = "dZ_Hp")]
    pub dz_hp: f64,
    #[serde(rename = "dxi_L2p")]
    pub dxi_l2p: f64,
    #[serde(rename = "dfint_L2p")]
    pub dfint_l2p: f64,
    /// `None` when the data difference vanishes.
    pub ratio: Option<f64>,
}

impl StabilityRow {
    pub const CSV_HEADER: [&'static str; 6] = ["epsilon", "dY_S2p", "dZ_Hp", "dxi_L2p", "dfint_L2p", "ratio"];

    pub fn degenerate(&self) -> bool {
        self.ratio.is_none()
    }

    pub fn csv_record(&self) -> [String; 6] {
        [
            format!("{:e}", self.epsilon),
            format!("{:e}", self.dy_s2p),
            format!("{:e}", self.dz_hp),
            format!("{:e}", self.dxi_l2p),
            format!("{:e}", self.dfint_l2p),
            self.ratio.map(|r| format!("{r:e}")).unwrap_or_default(),
        ]
    }
}

/// `|f₁ − f₂|` along a solution, as a d×1 field on levels `0..N−1`.
fn generator_gap(
    p1: &QuadraticBsdeProblem,
    p2: &QuadraticBsdeProblem,
    along: &BsdeSolution,
    tree: &BinomialTree,
) -> Result<AdaptedField> {
    let prep = prepare(p2, tree)?;
    let d = p1.dims.d;
    let steps = tree.steps();
    let last = steps.saturating_sub(1);
    let mut a = vec![0.0; d];
    let mut b = vec![0.0; d];
    Ok(AdaptedField::from_fn(tree, d, 1, 0, last, |n, node, out| {
        let ctx = prep.ctx(tree, n, node);
        let (y, z) = (along.y.at(n, node), along.z.at(n, node));
        p1.generator.eval(&ctx, y, z, &mut a);
        p2.generator.eval(&ctx, y, z, &mut b);
        for ((o, x), w) in out.iter_mut().zip(&a).zip(&b) {
            *o = x - w;
        }
    }))
}

fn stability_row(
    epsilon: f64,
    perturbed: (&QuadraticBsdeProblem, &BsdeSolution),
    base: (&QuadraticBsdeProblem, &BsdeSolution),
    tree: &BinomialTree,
    p: f64,
) -> Result<StabilityRow> {
    let steps = tree.steps();
    let dy = perturbed.1.y.sub(&base.1.y)?;
    let dz = perturbed.1.z.sub(&base.1.z)?;
    let dxi: Vec<f64> = dy
        .level(steps)
        .chunks(dy.width())
        .map(|c| norm(c).powf(2.0 * p))
        .collect();
    let dxi_l2p = leaf_expectation(tree, &dxi).powf(0.5 / p);
    let gap = generator_gap(perturbed.0, base.0, base.1, tree)?;
    let dfint_l2p = integral_lq(&gap, tree, 2.0 * p)?;
    let dy_s2p = tree_sp_norm(&dy, tree, 2.0 * p)?;
    let dz_hp = tree_hp_norm(&dz, tree, p)?;
    let den = dxi_l2p.powf(p) + dfint_l2p.powf(p);
    Ok(StabilityRow {
        epsilon,
        dy_s2p,
        dz_hp,
        dxi_l2p,
        dfint_l2p,
        ratio: (den > 0.0).then(|| (dy_s2p.powf(p) + dz_hp.powf(p)) / den),
    })
}

/// Solves the base problem once and each perturbed problem, one row per ε (ascending).
pub fn perturb_and_solve(
    problem: &QuadraticBsdeProblem,
    direction: &Perturbation,
    epsilons: &[f64],
    p: f64,
    tree: &BinomialTree,
    config: &SolverConfig,
) -> Result<Vec<StabilityRow>> {
    check_p(p)?;
    if epsilons.iter().any(|e| !e.is_finite()) {
        return Err(BsdeError::Config("epsilons must be finite".into()));
    }
    let mut eps = epsilons.to_vec();
    eps.sort_by(f64::total_cmp);
    let base = picard_solve(problem, tree, config)?;
    eps.par_iter()
        .map(|&e| {
            let perturbed = direction.apply(problem, e);
            let sol = picard_solve(&perturbed, tree, config).map_err(|err| annotate(err, e))?;
            stability_row(e, (&perturbed, &sol), (problem, &base), tree, p)
        })
        .collect()
}

fn annotate(err: BsdeError, epsilon: f64) -> BsdeError {
    match err {
        BsdeError::IterationLimit {
            iterations,
            residual,
            context,
        } => BsdeError::IterationLimit {
            iterations,
            residual,
            context: format!("{context} (epsilon = {epsilon:e})"),
        },
        BsdeError::Sizing(m) => BsdeError::Sizing(format!("{m} (epsilon = {epsilon:e})")),
        other => other,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StabilityConstant {
    pub k_hat: f64,
    pub spread: f64,
}

/// `K̂ = max ratio` and `spread = max/min ratio` over the non-degenerate rows.
pub fn empirical_stability_constant(rows: &[StabilityRow]) -> Result<StabilityConstant> {
    let ratios: Vec<f64> = rows.iter().filter_map(|r| r.ratio).collect();
    if ratios.len() < 2 {
        return Err(BsdeError::Contract(format!(
            "stability constant needs at least 2 non-degenerate rows, got {}",
            ratios.len()
        )));
    }
    let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(StabilityConstant {
        k_hat: hi,
        spread: if lo > 0.0 { hi / lo } else { f64::INFINITY },
    })
}

/// Both sides of the diagonal stability estimate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagStability {
    #[serde(rename = "dY_Sinf")]
    pub dy_sinf: f64,
    pub dz_bmo: f64,
    pub dxi_inf: f64,
    /// `‖√|δf|★W‖²_BMO`.
    pub dfbmo_sq: f64,
    /// `(dY_Sinf + dZ_bmo)/(dxi_inf + dfbmo_sq)`, absent when the data coincide.
    pub ratio: Option<f64>,
    /// Slice-composed constant `P·Π K_i` over a shared partition, when one was requested.
    pub composed_estimate: Option<f64>,
}

struct DiagPieces {
    dy: AdaptedField,
    dz: AdaptedField,
    root_gap: AdaptedField,
}

/// Per-node `|δf|` is the larger of `|f₁ − f₂|` evaluated along each solution, so the report does not
/// depend on the order of the two problems.
fn diag_pieces(
    p1: &QuadraticBsdeProblem,
    s1: &BsdeSolution,
    p2: &QuadraticBsdeProblem,
    s2: &BsdeSolution,
    tree: &BinomialTree,
) -> Result<DiagPieces> {
    let g1 = generator_gap(p1, p2, s1, tree)?;
    let g2 = generator_gap(p1, p2, s2, tree)?;
    let root_gap = AdaptedField::from_fn(tree, 1, 1, 0, g1.last_level(), |n, node, out| {
        out[0] = norm(g1.at(n, node)).max(norm(g2.at(n, node))).sqrt();
    });
    Ok(DiagPieces {
        dy: s1.y.sub(&s2.y)?,
        dz: s1.z.sub(&s2.z)?,
        root_gap,
    })
}

fn level_sup(field: &AdaptedField, n: usize) -> f64 {
    field.level(n).chunks(field.width()).map(norm).fold(0.0, f64::max)
}

/// Solves both diagonal problems and measures the two sides of the diagonal stability estimate.
///
/// With a `partition` (strictly increasing from 0 to N), the estimate is also evaluated per slice,
/// with `sup |δY|` at the slice end as the terminal gap, and composed as `P·Π K_i`.
pub fn diag_stability(
    p1: &QuadraticBsdeProblem,
    p2: &QuadraticBsdeProblem,
    tree: &BinomialTree,
    config: &SolverConfig,
    partition: Option<&[usize]>,
) -> Result<DiagStability> {
    for p in [p1, p2] {
        if p.classification.name() != "diagonal" {
            return Err(BsdeError::Contract(format!("problem '{}' is not diagonal", p.name)));
        }
    }
    let s1 = picard_solve(p1, tree, config)?;
    let s2 = picard_solve(p2, tree, config)?;
    diag_stability_from(p1, &s1, p2, &s2, tree, partition)
}

/// As [`diag_stability`] for already computed solutions.
pub fn diag_stability_from(
    p1: &QuadraticBsdeProblem,
    s1: &BsdeSolution,
    p2: &QuadraticBsdeProblem,
    s2: &BsdeSolution,
    tree: &BinomialTree,
    partition: Option<&[usize]>,
) -> Result<DiagStability> {
    let pieces = diag_pieces(p1, s1, p2, s2, tree)?;
    let steps = tree.steps();
    let dy_sinf = pieces.dy.sup_norm();
    let dz_bmo = bmo_norm(&pieces.dz, tree)?;
    let dxi_inf = level_sup(&pieces.dy, steps);
    let gap_bmo = bmo_norm(&pieces.root_gap, tree)?;
    let dfbmo_sq = gap_bmo * gap_bmo;
    let den = dxi_inf + dfbmo_sq;
    let ratio = (den > 0.0).then(|| (dy_sinf + dz_bmo) / den);

    let composed_estimate = match partition {
        None => None,
        Some(part) => {
            let dz_slices = sliced_bmo(&pieces.dz, tree, part)?;
            let gap_slices = sliced_bmo(&pieces.root_gap, tree, part)?;
            let mut product = 1.0;
            for (i, w) in part.windows(2).enumerate() {
                let dy_slice = (w[0]..=w[1]).map(|n| level_sup(&pieces.dy, n)).fold(0.0, f64::max);
                let lhs = dy_slice + dz_slices.sliced[i].norm;
                let rhs = level_sup(&pieces.dy, w[1]) + gap_slices.sliced[i].norm.powi(2);
                product *= if rhs > 0.0 {
                    lhs / rhs
                } else if lhs == 0.0 {
                    1.0
                } else {
                    f64::INFINITY
                };
            }
            Some((part.len() - 1) as f64 * product)
        }
    };
    Ok(DiagStability {
        dy_sinf,
        dz_bmo,
        dxi_inf,
        dfbmo_sq,
        ratio,
        composed_estimate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bmo::uniform_partition;
    use crate::linear::{linear_problem, LinearCoefficients};
    use crate::model::{generator, state_terminal, Dimensions, StructuralConstants};
    use crate::tree::build_tree;
    use proptest::prelude::*;

    fn tree(k: usize, steps: usize) -> BinomialTree {
        build_tree(Dimensions::new(1, k, 1.0, steps).unwrap()).unwrap()
    }

    /// Every path of a path tree, by explicit enumeration of the branch sequence.
    fn enumerate_paths(t: &BinomialTree) -> Vec<Vec<usize>> {
        let (b, n) = (t.branching(), t.steps());
        (0..b.pow(n as u32))
            .map(|mut code| {
                let mut nodes = vec![0];
                for level in 0..n {
                    let br = code % b;
                    code /= b;
                    nodes.push(t.child(level, nodes[level], br));
                }
                nodes
            })
            .collect()
    }

    #[test]
    fn sp_norm_of_brownian_motion_matches_enumeration() {
        for steps in [4, 8, 12] {
            let t = tree(1, steps);
            let w = AdaptedField::from_fn(&t, 1, 1, 0, steps, |n, node, out| t.brownian(n, node, out));
            let paths = enumerate_paths(&t);
            let mean = paths
                .iter()
                .map(|p| {
                    p.iter()
                        .enumerate()
                        .map(|(n, &node)| w.at(n, node)[0].powi(2))
                        .fold(0.0, f64::max)
                })
                .sum::<f64>()
                / paths.len() as f64;
            let got = tree_sp_norm(&w, &t, 2.0).unwrap();
            assert!((got * got - mean).abs() < 1e-12, "N={steps}: {got} vs {mean}");
        }
    }

    #[test]
    fn constant_fields() {
        let t = tree(2, 5);
        let c = AdaptedField::constant(&t, &[3.0, 4.0], 2, 1, 0, 5);
        assert!((tree_sp_norm(&c, &t, 3.0).unwrap() - 5.0).abs() < 1e-12);
        let z = AdaptedField::constant(&t, &[1.0], 1, 1, 0, 4);
        assert!((tree_hp_norm(&z, &t, 2.0).unwrap() - 1.0).abs() < 1e-12);
        let t2 = build_tree(Dimensions::new(1, 1, 2.5, 6).unwrap()).unwrap();
        let z = AdaptedField::constant(&t2, &[1.0], 1, 1, 0, 5);
        assert!((tree_hp_norm(&z, &t2, 4.0).unwrap() - 2.5f64.sqrt()).abs() < 1e-12);
        assert!(tree_hp_norm(&z, &t2, 0.5).is_err());
    }

    #[test]
    fn lattice_and_path_layouts_agree() {
        let dims = Dimensions::new(1, 1, 1.0, 10).unwrap();
        let (tp, tl) = (build_tree(dims).unwrap(), BinomialTree::recombining(dims).unwrap());
        let f = |t: &BinomialTree| {
            AdaptedField::from_fn(t, 1, 1, 0, 10, |n, node, out| {
                t.brownian(n, node, out);
                out[0] = out[0].sin() + 0.1 * n as f64;
            })
        };
        let (a, b) = (f(&tp), f(&tl));
        assert!((tree_sp_norm(&a, &tp, 4.0).unwrap() - tree_sp_norm(&b, &tl, 4.0).unwrap()).abs() < 1e-12);
        let (za, zb) = (a.restrict(0, 9).unwrap(), b.restrict(0, 9).unwrap());
        assert!((tree_hp_norm(&za, &tp, 2.0).unwrap() - tree_hp_norm(&zb, &tl, 2.0).unwrap()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn hp_norm_is_homogeneous(lambda in -5.0f64..5.0, seed in 0u64..50) {
            let t = tree(1, 6);
            let z = AdaptedField::from_fn(&t, 2, 1, 0, 5, |n, node, out| {
                let s = (seed as f64 + 1.0) * (n as f64 + 0.3) * (node as f64 + 0.7);
                out[0] = s.sin();
                out[1] = (1.3 * s).cos();
            });
            let a = tree_hp_norm(&z.scale(lambda), &t, 2.0).unwrap();
            let b = lambda.abs() * tree_hp_norm(&z, &t, 2.0).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b));
        }
    }

    fn quadratic_problem(steps: usize) -> QuadraticBsdeProblem {
        let mut c = StructuralConstants::lipschitz(0.0, 0.5, 0.0, 0.5);
        c.growth = Some(crate::model::GrowthConstants {
            gamma: Some(0.5),
            ..Default::default()
        });
        QuadraticBsdeProblem::new(
            "q",
            Dimensions::new(1, 1, 1.0, steps).unwrap(),
            state_terminal(|w, o| o[0] = 0.125 * w[0].tanh()),
            generator(|_, y: &[f64], z: &[f64], o: &mut [f64]| o[0] = 0.5 * y[0].sin() * z[0] * z[0]),
            c,
        )
        .unwrap()
        .with_terminal_bound(vec![0.125])
    }

    fn terminal_direction() -> Perturbation {
        Perturbation {
            terminal: Some(state_terminal(|w, o| o[0] = w[0].cos())),
            generator: None,
        }
    }

    #[test]
    fn zero_perturbation_row_is_exactly_zero() {
        let p = quadratic_problem(8);
        let t = build_tree(p.dims).unwrap();
        let rows = perturb_and_solve(
            &p,
            &terminal_direction(),
            &[1e-2, 0.0],
            2.0,
            &t,
            &SolverConfig::default(),
        )
        .unwrap();
        assert_eq!(rows[0].epsilon, 0.0);
        assert!(rows[0].degenerate());
        assert_eq!((rows[0].dy_s2p, rows[0].dz_hp, rows[0].dxi_l2p), (0.0, 0.0, 0.0));
        assert!(empirical_stability_constant(&rows).is_err());
    }

    #[test]
    fn linear_problem_ratio_is_constant() {
        let t = tree(1, 8);
        let coeffs = LinearCoefficients::random(&t, 2, 0.3, 11);
        let p = linear_problem(&coeffs, &t).unwrap();
        let dir = Perturbation {
            terminal: Some(state_terminal(|w, o| {
                o[0] = w[0].sin();
                o[1] = 1.0;
            })),
            generator: Some(generator(|t, _, _, o: &mut [f64]| {
                o[0] = t + 0.5;
                o[1] = 0.0;
            })),
        };
        let config = SolverConfig::with_scheme(crate::model::Scheme::StepExplicit);
        let rows = perturb_and_solve(&p, &dir, &[1e-1, 1e-2, 1e-3, 1e-4], 2.0, &t, &config).unwrap();
        let k = empirical_stability_constant(&rows).unwrap();
        assert!((k.spread - 1.0).abs() < 1e-9, "{k:?}");
    }

    #[test]
    fn quadratic_spread_is_small() {
        let p = quadratic_problem(10);
        let t = build_tree(p.dims).unwrap();
        let rows = perturb_and_solve(
            &p,
            &terminal_direction(),
            &[1e-1, 1e-2, 1e-3, 1e-4],
            2.0,
            &t,
            &SolverConfig::default(),
        )
        .unwrap();
        let k = empirical_stability_constant(&rows).unwrap();
        assert!(k.spread <= 2.0, "{k:?}");
        let single = &rows[..1];
        assert!(empirical_stability_constant(single).is_err());
    }

    fn diag(steps: usize, xi_shift: f64, f_shift: f64) -> QuadraticBsdeProblem {
        let f_diag = generator(|_, _, z: &[f64], o: &mut [f64]| o[0] = 0.5 * z[0] * z[0]);
        let g = generator(move |_, y: &[f64], z: &[f64], o: &mut [f64]| {
            o[0] = 0.1 * y[0].sin() * z[0] * z[0] / (1.0 + z[0] * z[0]) + f_shift
        });
        let mut c = StructuralConstants::lipschitz(0.0, 0.1, 0.0, 0.6);
        c.growth = Some(crate::model::GrowthConstants {
            gamma: None,
            g_d: Some(0.5),
            g: Some(0.1),
        });
        QuadraticBsdeProblem::new(
            "d",
            Dimensions::new(1, 1, 1.0, steps).unwrap(),
            state_terminal(move |w, o| o[0] = 0.1 * w[0].tanh() + xi_shift),
            Arc::new(crate::model::SumGenerator(f_diag.clone(), g.clone())),
            c,
        )
        .unwrap()
        .with_classification(crate::model::Classification::Diagonal(crate::model::DiagonalParts {
            f_diag,
            g,
        }))
    }

    #[test]
    fn diag_stability_identities() {
        let t = tree(1, 10);
        let c = SolverConfig::default();
        let same = diag_stability(&diag(10, 0.0, 0.0), &diag(10, 0.0, 0.0), &t, &c, None).unwrap();
        assert_eq!(
            (same.dy_sinf, same.dz_bmo, same.dxi_inf, same.dfbmo_sq),
            (0.0, 0.0, 0.0, 0.0)
        );
        assert!(same.ratio.is_none());
        let a = diag_stability(&diag(10, 0.0, 0.0), &diag(10, 0.01, 0.02), &t, &c, None).unwrap();
        let b = diag_stability(&diag(10, 0.01, 0.02), &diag(10, 0.0, 0.0), &t, &c, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn diag_terminal_perturbation_is_linear_in_epsilon() {
        let t = tree(1, 10);
        let c = SolverConfig::default();
        let lhs: Vec<f64> = [1e-2, 1e-3, 1e-4]
            .iter()
            .map(|&e| {
                let r = diag_stability(&diag(10, 0.0, 0.0), &diag(10, e, 0.0), &t, &c, None).unwrap();
                r.dy_sinf + r.dz_bmo
            })
            .collect();
        for w in lhs.windows(2) {
            let slope = (w[0] / w[1]).log10();
            assert!((slope - 1.0).abs() < 0.05, "{lhs:?}");
        }
        let ratios: Vec<f64> = [1e-1, 1e-2, 1e-3]
            .iter()
            .map(|&e| {
                diag_stability(&diag(10, 0.0, 0.0), &diag(10, 0.0, e), &t, &c, None)
                    .unwrap()
                    .ratio
                    .unwrap()
            })
            .collect();
        let spread = ratios.iter().copied().fold(0.0, f64::max) / ratios.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(spread < 2.0, "{ratios:?}");
    }

    #[test]
    fn composed_estimate_with_one_slice_is_the_ratio() {
        let t = tree(1, 8);
        let c = SolverConfig::default();
        let whole = uniform_partition(8, 1);
        let r = diag_stability(&diag(8, 0.0, 0.0), &diag(8, 0.01, 0.0), &t, &c, Some(&whole)).unwrap();
        assert!((r.composed_estimate.unwrap() - r.ratio.unwrap()).abs() < 1e-12);
        let four = uniform_partition(8, 4);
        let r4 = diag_stability(&diag(8, 0.0, 0.0), &diag(8, 0.01, 0.0), &t, &c, Some(&four)).unwrap();
        assert!(r4.composed_estimate.unwrap().is_finite());
    }
}
