//! Linear BSDEs `U_t = ζ + ∫_t^T (A_s U_s + B_s V_s + f_s) ds − ∫_t^T V_s dW_s`, the matrix SDE
//! `dS = Σ_p S B^p dW^p + S A dt` behind their representation formula, and the reverse Hölder statistic.
//!
//! `B^p` is the d×d block acting on column `p` of `V`. The discrete `S` is the Euler product
//! `S_{n+1} = S_n (I + A_nΔt + Σ_p B^p_n ΔW^p_n)`, so `S_n^{-1}S_{n+1}` is the one-step factor and the
//! representation formula reduces to a single backward sweep of those factors.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BsdeError, Result};
use crate::model::{
    AdaptedField, Dimensions, Generator, LeafCtx, NodeCtx, QuadraticBsdeProblem, StructuralConstants, Terminal,
};
use crate::tree::{BinomialTree, TreeKind};

const PAR_THRESHOLD: usize = 4096;
const SINGULAR_DET: f64 = 1e-12;

/// Coefficients `(A, B, f, ζ)`; all matrices are d×d row-major per node.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearCoefficients {
    pub a: AdaptedField,
    pub b: Vec<AdaptedField>,
    pub forcing: AdaptedField,
    pub terminal: AdaptedField,
}

impl LinearCoefficients {
    pub fn dim(&self) -> usize {
        self.forcing.rows()
    }

    /// Coefficients constant over the tree, with a leaf-wise terminal `ζ(W_T)`.
    pub fn constant(
        tree: &BinomialTree,
        a: &[f64],
        b: &[Vec<f64>],
        forcing: &[f64],
        terminal: impl Fn(&[f64], &mut [f64]),
    ) -> Self {
        let d = forcing.len();
        let n = tree.steps();
        let k = tree.dims().k;
        let mut w = vec![0.0; k];
        Self {
            a: AdaptedField::constant(tree, a, d, d, 0, n - 1),
            b: b.iter()
                .map(|bp| AdaptedField::constant(tree, bp, d, d, 0, n - 1))
                .collect(),
            forcing: AdaptedField::constant(tree, forcing, d, 1, 0, n - 1),
            terminal: AdaptedField::from_fn(tree, d, 1, n, n, |_, node, out| {
                tree.brownian(n, node, &mut w);
                terminal(&w, out);
            }),
        }
    }

    /// Node-wise uniform coefficients in `[−bound, bound]`.
    pub fn random(tree: &BinomialTree, d: usize, bound: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = tree.steps();
        let mut draw = |rows: usize, cols: usize, first: usize, last: usize| {
            AdaptedField::from_fn(tree, rows, cols, first, last, |_, _, out| {
                out.iter_mut().for_each(|v| *v = rng.gen_range(-bound..=bound));
            })
        };
        let a = draw(d, d, 0, n - 1);
        let b = (0..tree.dims().k).map(|_| draw(d, d, 0, n - 1)).collect();
        let forcing = draw(d, 1, 0, n - 1);
        let terminal = draw(d, 1, n, n);
        Self {
            a,
            b,
            forcing,
            terminal,
        }
    }

    pub fn validate(&self, tree: &BinomialTree) -> Result<()> {
        let d = self.dim();
        let n = tree.steps();
        let k = tree.dims().k;
        let square = |f: &AdaptedField| f.rows() == d && f.cols() == d;
        let spans = |f: &AdaptedField| f.defined(0) && f.defined(n - 1);
        let ok = square(&self.a)
            && spans(&self.a)
            && self.b.len() == k
            && self.b.iter().all(|b| square(b) && spans(b))
            && self.forcing.cols() == 1
            && spans(&self.forcing)
            && self.terminal.rows() == d
            && self.terminal.defined(n);
        if !ok {
            return Err(BsdeError::Contract(format!(
                "linear coefficients need A, B^1..B^{k} (d×d) and f on levels 0..{}, ζ on level {n}",
                n - 1
            )));
        }
        for (n, node, v) in [&self.a, &self.forcing, &self.terminal]
            .into_iter()
            .chain(&self.b)
            .flat_map(|f| f.iter())
        {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(BsdeError::NonFinite { level: n, node });
            }
        }
        for n in 0..n {
            if self.a.nodes(n) != tree.level_size(n) {
                return Err(BsdeError::Contract(
                    "coefficients were built on a different tree".into(),
                ));
            }
        }
        Ok(())
    }

    /// `I + A_nΔt + Σ_p B^p_n ΔW^p` at a node for branch `b`.
    pub fn step_factor(&self, tree: &BinomialTree, n: usize, node: usize, branch: usize, out: &mut [f64]) {
        let d = self.dim();
        let dt = tree.dt();
        let sq = tree.sqrt_dt();
        let a = self.a.at(n, node);
        for (i, o) in out.iter_mut().enumerate() {
            *o = a[i] * dt + if i % (d + 1) == 0 { 1.0 } else { 0.0 };
        }
        for (p, bp) in self.b.iter().enumerate() {
            let s = tree.sign(branch, p) * sq;
            for (o, v) in out.iter_mut().zip(bp.at(n, node)) {
                *o += s * v;
            }
        }
    }

    /// Sup over nodes of the Frobenius norms `(|A|, |B|)`, with `|B|² = Σ_p |B^p|²`.
    pub fn sup_norms(&self) -> (f64, f64) {
        let a = self.a.sup_norm();
        let mut b: f64 = 0.0;
        for (n, node, _) in self.a.iter() {
            let s: f64 = self
                .b
                .iter()
                .map(|bp| bp.at(n, node).iter().map(|v| v * v).sum::<f64>())
                .sum();
            b = b.max(s.sqrt());
        }
        (a, b)
    }
}

pub(crate) fn matmul(a: &[f64], b: &[f64], d: usize, out: &mut [f64]) {
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = (0..d).map(|l| a[i * d + l] * b[l * d + j]).sum();
        }
    }
}

fn identity(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    (0..d).for_each(|i| m[i * d + i] = 1.0);
    m
}

fn require_path(tree: &BinomialTree, what: &str) -> Result<()> {
    if tree.kind() != TreeKind::Path {
        return Err(BsdeError::Contract(format!(
            "{what} is a path functional and needs a path tree"
        )));
    }
    Ok(())
}

fn invert(m: &[f64], d: usize, level: usize, node: usize) -> Result<Vec<f64>> {
    let mat = DMatrix::from_row_slice(d, d, m);
    let det = mat.determinant();
    if det.abs() < SINGULAR_DET {
        return Err(BsdeError::Singular { level, node, det });
    }
    let inv = mat.try_inverse().ok_or(BsdeError::Singular { level, node, det })?;
    Ok(inv.transpose().as_slice().to_vec())
}

/// Spectral norm of a d×d row-major matrix.
pub fn spectral_norm(m: &[f64], d: usize) -> f64 {
    DMatrix::from_row_slice(d, d, m).singular_values().max()
}

/// Fills level `n+1` from level `n` by `next[child] = g(parent, branch, parent value)`.
fn forward_level<F>(tree: &BinomialTree, n: usize, cur: &[f64], width: usize, g: F) -> Vec<f64>
where
    F: Fn(usize, usize, &[f64], &mut [f64]) + Send + Sync,
{
    let bcount = tree.branching();
    let size = tree.level_size(n + 1);
    let mut next = vec![0.0; size * width];
    let fill = |child: usize, dst: &mut [f64]| {
        let (parent, b) = (child / bcount, child % bcount);
        g(parent, b, &cur[parent * width..(parent + 1) * width], dst);
    };
    if size >= PAR_THRESHOLD {
        next.par_chunks_mut(width).enumerate().for_each(|(c, dst)| fill(c, dst));
    } else {
        next.chunks_mut(width).enumerate().for_each(|(c, dst)| fill(c, dst));
    }
    next
}

/// `S` started from `I` at level 0.
pub fn simulate_s(coeffs: &LinearCoefficients, tree: &BinomialTree) -> Result<AdaptedField> {
    simulate_s_from(coeffs, tree, 0, None)
}

/// `S` on levels `start..=N`, started from `initial` (one d×d matrix per level-`start` node) or `I`.
pub fn simulate_s_from(
    coeffs: &LinearCoefficients,
    tree: &BinomialTree,
    start: usize,
    initial: Option<&[f64]>,
) -> Result<AdaptedField> {
    require_path(tree, "S")?;
    coeffs.validate(tree)?;
    let d = coeffs.dim();
    let w = d * d;
    let first = match initial {
        Some(v) if v.len() == tree.level_size(start) * w => v.to_vec(),
        Some(_) => return Err(BsdeError::Contract("initial S has the wrong number of nodes".into())),
        None => identity(d).repeat(tree.level_size(start)),
    };
    let mut levels = vec![first];
    for n in start..tree.steps() {
        let next = forward_level(tree, n, &levels[n - start], w, |parent, b, s, dst| {
            let mut m = vec![0.0; w];
            coeffs.step_factor(tree, n, parent, b, &mut m);
            matmul(s, &m, d, dst);
        });
        levels.push(next);
    }
    AdaptedField::from_levels(d, d, start, levels)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InverseMode {
    /// Per-node inversion of `S`.
    #[default]
    Direct,
    /// Euler scheme of `dS⁻¹ = [(Σ_p (B^p)² − A)dt − Σ_p B^p dW^p] S⁻¹`.
    Sde,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SInverse {
    pub field: AdaptedField,
    pub mode: InverseMode,
    /// `sup_nodes max_ij |(S·S⁻¹ − I)_ij|`.
    pub identity_error: f64,
}

pub fn simulate_s_inverse(coeffs: &LinearCoefficients, tree: &BinomialTree, mode: InverseMode) -> Result<SInverse> {
    let s = simulate_s(coeffs, tree)?;
    let d = coeffs.dim();
    let w = d * d;
    let field = match mode {
        InverseMode::Direct => {
            let mut out = AdaptedField::zeros(tree, d, d, 0, tree.steps());
            for n in 0..=tree.steps() {
                for node in 0..tree.level_size(n) {
                    let inv = invert(s.at(n, node), d, n, node)?;
                    out.at_mut(n, node).copy_from_slice(&inv);
                }
            }
            out
        }
        InverseMode::Sde => {
            let dt = tree.dt();
            let sq = tree.sqrt_dt();
            let mut levels = vec![identity(d)];
            for n in 0..tree.steps() {
                let next = forward_level(tree, n, &levels[n], w, |parent, b, sinv, dst| {
                    let mut m = identity(d);
                    let a = coeffs.a.at(n, parent);
                    let mut sq_b = vec![0.0; w];
                    for (p, bp) in coeffs.b.iter().enumerate() {
                        let bm = bp.at(n, parent);
                        matmul(bm, bm, d, &mut sq_b);
                        let s = tree.sign(b, p) * sq;
                        for i in 0..w {
                            m[i] += sq_b[i] * dt - s * bm[i];
                        }
                    }
                    for i in 0..w {
                        m[i] -= a[i] * dt;
                    }
                    matmul(&m, sinv, d, dst);
                });
                levels.push(next);
            }
            AdaptedField::from_levels(d, d, 0, levels)?
        }
    };
    let mut identity_error: f64 = 0.0;
    let eye = identity(d);
    let mut prod = vec![0.0; w];
    for (n, node, si) in field.iter() {
        matmul(s.at(n, node), si, d, &mut prod);
        let err = prod.iter().zip(&eye).map(|(x, e)| (x - e).abs()).fold(0.0, f64::max);
        identity_error = identity_error.max(err);
    }
    Ok(SInverse {
        field,
        mode,
        identity_error,
    })
}

/// `U_n = E[S_n⁻¹S_Nζ + Σ_{m≥n} S_n⁻¹S_m f_m Δt | F_n]` on levels `0..=N`.
pub fn representation_solve(coeffs: &LinearCoefficients, tree: &BinomialTree) -> Result<AdaptedField> {
    representation_solve_from(coeffs, tree, 0)
}

/// The representation formula on levels `start..=N`.
///
/// Uses `S_n⁻¹S_m = Π_{n≤j<m}(I + A_jΔt + Σ_p B^p_j ΔW^p_j)`, so
/// `U_n = E[(I + A_nΔt + Σ_p B^p_nΔW^p) U_{n+1} | F_n] + f_nΔt`. Every factor is checked for invertibility.
pub fn representation_solve_from(
    coeffs: &LinearCoefficients,
    tree: &BinomialTree,
    start: usize,
) -> Result<AdaptedField> {
    coeffs.validate(tree)?;
    let steps = tree.steps();
    if start > steps {
        return Err(BsdeError::Contract(format!("start level {start} beyond N={steps}")));
    }
    let d = coeffs.dim();
    let dt = tree.dt();
    let bcount = tree.branching();
    let mut levels = vec![Vec::new(); steps - start + 1];
    levels[steps - start] = coeffs.terminal.level(steps).to_vec();
    for n in (start..steps).rev() {
        let next = &levels[n + 1 - start];
        let size = tree.level_size(n);
        let mut cur = vec![0.0; size * d];
        let fill = |node: usize, dst: &mut [f64]| -> Result<()> {
            let mut m = vec![0.0; d * d];
            for b in 0..bcount {
                coeffs.step_factor(tree, n, node, b, &mut m);
                if d > 1 || m[0].abs() < SINGULAR_DET {
                    let det = DMatrix::from_row_slice(d, d, &m).determinant();
                    if det.abs() < SINGULAR_DET {
                        return Err(BsdeError::Singular {
                            level: n + 1,
                            node,
                            det,
                        });
                    }
                }
                let c = tree.child(n, node, b);
                let u = &next[c * d..(c + 1) * d];
                for i in 0..d {
                    dst[i] += (0..d).map(|j| m[i * d + j] * u[j]).sum::<f64>();
                }
            }
            let f = coeffs.forcing.at(n, node);
            for i in 0..d {
                dst[i] = dst[i] / bcount as f64 + f[i] * dt;
            }
            Ok(())
        };
        if size >= PAR_THRESHOLD {
            cur.par_chunks_mut(d)
                .enumerate()
                .try_for_each(|(node, dst)| fill(node, dst))?;
        } else {
            cur.chunks_mut(d)
                .enumerate()
                .try_for_each(|(node, dst)| fill(node, dst))?;
        }
        levels[n - start] = cur;
    }
    AdaptedField::from_levels(d, 1, start, levels)
}

/// `max_{(t,node)} E[max_{s≥t} |S_t⁻¹S_s|^m | node]^{1/m}` with the spectral norm, exact on the tree.
pub fn reverse_holder_statistic(s: &AdaptedField, m: f64, tree: &BinomialTree) -> Result<f64> {
    require_path(tree, "the reverse Hölder statistic")?;
    if !(m >= 1.0) {
        return Err(BsdeError::Config(format!(
            "reverse Hölder exponent must be >= 1, got {m}"
        )));
    }
    let d = s.rows();
    let steps = tree.steps();
    if !s.defined(0) || !s.defined(steps) {
        return Err(BsdeError::Contract("S must be given on levels 0..=N".into()));
    }
    let bcount = tree.branching();
    let mut best: f64 = 1.0;
    for t in 0..steps {
        let per_node = (0..tree.level_size(t))
            .into_par_iter()
            .map(|node| -> Result<f64> {
                let inv = invert(s.at(t, node), d, t, node)?;
                let mut prod = vec![0.0; d * d];
                let mut running = vec![1.0f64];
                let mut base = node;
                for lvl in t + 1..=steps {
                    base *= bcount;
                    let mut next = vec![0.0; running.len() * bcount];
                    for (j, v) in next.iter_mut().enumerate() {
                        matmul(&inv, s.at(lvl, base + j), d, &mut prod);
                        *v = running[j / bcount].max(spectral_norm(&prod, d));
                    }
                    running = next;
                }
                let mean = running.iter().map(|r| r.powf(m)).sum::<f64>() / running.len() as f64;
                Ok(mean.powf(1.0 / m))
            })
            .collect::<Result<Vec<_>>>()?;
        best = per_node.into_iter().fold(best, f64::max);
    }
    Ok(best)
}

/// `K(‖ζ‖_∞ + T‖f‖_∞)`, the sup-norm bound on `U` given a reverse Hölder constant `K`.
pub fn sup_bound(coeffs: &LinearCoefficients, horizon: f64, k_const: f64) -> f64 {
    k_const * (coeffs.terminal.sup_norm() + horizon * coeffs.forcing.sup_norm())
}

/// `A y + Σ_p B^p z_{:,p} + f` as a node-indexed generator.
pub struct LinearGenerator(pub Arc<LinearCoefficients>);

impl Generator for LinearGenerator {
    fn eval(&self, ctx: &NodeCtx<'_>, y: &[f64], z: &[f64], out: &mut [f64]) {
        let c = &self.0;
        let d = c.dim();
        let k = c.b.len();
        let (n, node) = (ctx.level, ctx.node);
        let a = c.a.at(n, node);
        out.copy_from_slice(c.forcing.at(n, node));
        for i in 0..d {
            out[i] += (0..d).map(|j| a[i * d + j] * y[j]).sum::<f64>();
            for (p, bp) in c.b.iter().enumerate() {
                let bm = bp.at(n, node);
                out[i] += (0..d).map(|j| bm[i * d + j] * z[j * k + p]).sum::<f64>();
            }
        }
    }
}

/// Leaf-indexed terminal condition; node indices are only meaningful on a path tree.
pub struct LeafTerminal(pub Arc<LinearCoefficients>);

impl Terminal for LeafTerminal {
    fn eval(&self, leaf: &LeafCtx<'_>, out: &mut [f64]) {
        let n = self.0.terminal.last_level();
        out.copy_from_slice(self.0.terminal.at(n, leaf.node));
    }

    fn path_dependent(&self) -> bool {
        true
    }
}

/// The linear BSDE as a [`QuadraticBsdeProblem`] on `tree`, with `K_y = sup|A|`, `K_z = sup|B|`.
pub fn linear_problem(coeffs: &LinearCoefficients, tree: &BinomialTree) -> Result<QuadraticBsdeProblem> {
    coeffs.validate(tree)?;
    let td = tree.dims();
    let dims = Dimensions::new(coeffs.dim(), td.k, td.horizon, td.steps)?;
    let (ka, kb) = coeffs.sup_norms();
    let shared = Arc::new(coeffs.clone());
    QuadraticBsdeProblem::new(
        "linear",
        dims,
        Arc::new(LeafTerminal(shared.clone())),
        Arc::new(LinearGenerator(shared)),
        StructuralConstants::lipschitz(ka, 0.0, kb, 0.0),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bmo::{k_constant, slicing_condition};
    use crate::model::Scheme;
    use crate::solver::{picard_solve, SolverConfig};
    use crate::tree::build_tree;
    use proptest::prelude::*;

    fn tree(k: usize, n: usize) -> BinomialTree {
        build_tree(Dimensions::new(1, k, 1.0, n).unwrap()).unwrap()
    }

    fn scalar(t: &BinomialTree, a: f64, b: f64, f: f64, zeta: fn(f64) -> f64) -> LinearCoefficients {
        LinearCoefficients::constant(t, &[a], &[vec![b]], &[f], move |w, o| o[0] = zeta(w[0]))
    }

    #[test]
    fn zero_coefficients_give_identity() {
        let t = tree(2, 4);
        let c = LinearCoefficients::constant(&t, &[0.0; 4], &[vec![0.0; 4], vec![0.0; 4]], &[0.0, 0.0], |_, o| {
            o.fill(0.0)
        });
        let s = simulate_s(&c, &t).unwrap();
        let inv = simulate_s_inverse(&c, &t, InverseMode::Sde).unwrap();
        for (n, node, v) in s.iter() {
            assert_eq!(v, &[1.0, 0.0, 0.0, 1.0]);
            assert_eq!(inv.field.at(n, node), &[1.0, 0.0, 0.0, 1.0]);
        }
        assert_eq!(inv.identity_error, 0.0);
    }

    #[test]
    fn scalar_product_and_continuum_limit() {
        let (a, b) = (0.3, 0.5);
        for n in [8, 12, 16] {
            let t = tree(1, n);
            let s = simulate_s(&scalar(&t, a, b, 0.0, |_| 0.0), &t).unwrap();
            for leaf in 0..t.level_size(n) {
                let mut prod = 1.0;
                for u in 0..n {
                    prod *= 1.0 + a * t.dt() + b * t.sign(t.branch_at(n, leaf, u), 0) * t.sqrt_dt();
                }
                assert!((s.at(n, leaf)[0] - prod).abs() < 1e-13);
            }
        }
        // E[S_T] is the Euler product (1 + aΔt)^N; leaves with W_T = 0 approach e^{aT − b²T/2}.
        let mut errs = vec![];
        for n in [8, 12, 16, 20] {
            let t = tree(1, n);
            let s = simulate_s(&scalar(&t, a, b, 0.0, |_| 0.0), &t).unwrap();
            let mean: f64 = s.level(n).iter().sum::<f64>() / t.level_size(n) as f64;
            assert!((mean - (1.0 + a / n as f64).powi(n as i32)).abs() < 1e-10);
            let mut w = [0.0];
            let leaf = (0..t.level_size(n))
                .find(|&leaf| {
                    t.brownian(n, leaf, &mut w);
                    w[0].abs() < 1e-12
                })
                .unwrap();
            errs.push((s.at(n, leaf)[0] - (a - 0.5 * b * b).exp()).abs());
        }
        assert!(errs.windows(2).all(|e| e[1] < e[0]), "{errs:?}");
        assert!(errs[3] * 20.0 < errs[0] * 8.0 * 1.2);
    }

    #[test]
    fn commuting_matrices_reduce_to_scalars() {
        // A = P diag(a) P⁻¹, B = P diag(b) P⁻¹ with a fixed rotation P.
        let t = tree(1, 6);
        let (c, s) = (0.6f64, 0.8f64);
        let p = [c, -s, s, c];
        let pt = [c, s, -s, c];
        let conj = |diag: [f64; 2]| {
            let mut tmp = [0.0; 4];
            let mut out = [0.0; 4];
            matmul(&p, &[diag[0], 0.0, 0.0, diag[1]], 2, &mut tmp);
            matmul(&tmp, &pt, 2, &mut out);
            out.to_vec()
        };
        let coeffs = LinearCoefficients::constant(&t, &conj([0.2, -0.4]), &[conj([0.5, 0.1])], &[0.0, 0.0], |_, o| {
            o.fill(0.0)
        });
        let sm = simulate_s(&coeffs, &t).unwrap();
        let s1 = simulate_s(&scalar(&t, 0.2, 0.5, 0.0, |_| 0.0), &t).unwrap();
        let s2 = simulate_s(&scalar(&t, -0.4, 0.1, 0.0, |_| 0.0), &t).unwrap();
        for leaf in 0..t.level_size(6) {
            let expect = conj([s1.at(6, leaf)[0], s2.at(6, leaf)[0]]);
            for (x, y) in sm.at(6, leaf).iter().zip(&expect) {
                assert!((x - y).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn inverse_modes() {
        let t = tree(2, 6);
        let c = LinearCoefficients::random(&t, 2, 0.5, 4);
        let direct = simulate_s_inverse(&c, &t, InverseMode::Direct).unwrap();
        assert!(direct.identity_error <= 1e-12);
        // Extreme leaves carry W_T of order √N, so the comparison uses the leaf average.
        let mut diffs = vec![];
        let sizes = [8, 12, 16];
        for n in sizes {
            let t = tree(1, n);
            let c = LinearCoefficients::constant(
                &t,
                &[0.3, 0.1, -0.2, 0.2],
                &[vec![0.4, -0.3, 0.2, 0.1]],
                &[0.0, 0.0],
                |_, o| o.fill(0.0),
            );
            let a = simulate_s_inverse(&c, &t, InverseMode::Direct).unwrap();
            let b = simulate_s_inverse(&c, &t, InverseMode::Sde).unwrap();
            let total: f64 = a
                .field
                .level(n)
                .iter()
                .zip(b.field.level(n))
                .map(|(x, y)| (x - y).abs())
                .sum();
            diffs.push(total / t.level_size(n) as f64);
        }
        for i in 1..sizes.len() {
            let order = (diffs[i - 1] / diffs[i]).ln() / (sizes[i] as f64 / sizes[i - 1] as f64).ln();
            assert!(order > 0.8, "{diffs:?}");
        }
    }

    #[test]
    fn singular_factor_is_reported() {
        let t = tree(1, 2);
        // 1 + aΔt − b√Δt = 0 on the down branch.
        let c = scalar(&t, 0.0, 2f64.sqrt(), 0.0, |_| 1.0);
        assert!(matches!(
            simulate_s_inverse(&c, &t, InverseMode::Direct),
            Err(BsdeError::Singular { level: 1, .. })
        ));
        assert!(matches!(representation_solve(&c, &t), Err(BsdeError::Singular { .. })));
    }

    #[test]
    fn zero_coefficients_representation() {
        let t = tree(1, 5);
        let c = scalar(&t, 0.0, 0.0, 0.7, |w| w * w);
        let u = representation_solve(&c, &t).unwrap();
        for n in 0..=5 {
            for node in 0..t.level_size(n) {
                let mut w = [0.0];
                t.brownian(n, node, &mut w);
                let tau = 1.0 - t.time(n);
                let expect = w[0] * w[0] + tau + 0.7 * tau;
                assert!((u.at(n, node)[0] - expect).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn representation_matches_explicit_s_formula() {
        let t = tree(2, 4);
        let c = LinearCoefficients::random(&t, 2, 0.6, 11);
        let u = representation_solve(&c, &t).unwrap();
        let s = simulate_s(&c, &t).unwrap();
        let inv = simulate_s_inverse(&c, &t, InverseMode::Direct).unwrap().field;
        // V_n = E[S_Nζ + Σ_{m≥n} S_m f_m Δt | F_n] by brute-force leaf enumeration.
        let d = 2;
        for n in 0..=4 {
            for node in 0..t.level_size(n) {
                let span = t.branching().pow((4 - n) as u32);
                let mut v = [0.0; 2];
                for j in 0..span {
                    let leaf = node * span + j;
                    let mut acc = [0.0; 2];
                    for m in n..=4 {
                        let at = leaf / t.branching().pow((4 - m) as u32);
                        let vec = if m == 4 {
                            c.terminal.at(4, at).to_vec()
                        } else {
                            c.forcing.at(m, at).iter().map(|x| x * t.dt()).collect()
                        };
                        let sm = s.at(m, at);
                        for i in 0..d {
                            acc[i] += (0..d).map(|l| sm[i * d + l] * vec[l]).sum::<f64>();
                        }
                    }
                    v[0] += acc[0] / span as f64;
                    v[1] += acc[1] / span as f64;
                }
                let si = inv.at(n, node);
                for i in 0..d {
                    let expect: f64 = (0..d).map(|l| si[i * d + l] * v[l]).sum();
                    assert!((u.at(n, node)[i] - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn agrees_with_explicit_picard_scheme() {
        let t = tree(2, 8);
        let c = LinearCoefficients::random(&t, 2, 1.0, 1);
        let u = representation_solve(&c, &t).unwrap();
        let p = linear_problem(&c, &t).unwrap();
        let sol = picard_solve(&p, &t, &SolverConfig::with_scheme(Scheme::StepExplicit)).unwrap();
        assert!(u.max_diff(&sol.y).unwrap() <= 1e-12);
        // The implicit scheme differs by O(Δt).
        let imp = picard_solve(&p, &t, &SolverConfig::default()).unwrap();
        assert!(u.max_diff(&imp.y).unwrap() < 0.5);
    }

    #[test]
    fn scalar_girsanov_closed_form() {
        // U_0 = E[S_T ζ] → e^{a} E^Q[ζ(W_T)] with W_T ~ N(b, 1) under Q; ζ(w) = w gives e^{a}·b.
        let (a, b) = (0.2, 0.4);
        let mut errs = vec![];
        for n in [16, 64, 256] {
            let t = BinomialTree::recombining(Dimensions::new(1, 1, 1.0, n).unwrap()).unwrap();
            let c = LinearCoefficients::constant(&t, &[a], &[vec![b]], &[0.0], |w, o| o[0] = w[0]);
            let u = representation_solve(&c, &t).unwrap();
            errs.push((u.at(0, 0)[0] - a.exp() * b).abs());
        }
        assert!(errs[2] < 2e-3 && errs[2] < errs[0], "{errs:?}");
    }

    #[test]
    fn flow_property() {
        let t = tree(1, 6);
        let c = LinearCoefficients::random(&t, 2, 0.5, 2);
        let s = simulate_s(&c, &t).unwrap();
        let restarted = simulate_s_from(&c, &t, 3, Some(s.level(3))).unwrap();
        for n in 3..=6 {
            assert_eq!(restarted.level(n), s.level(n));
        }
    }

    #[test]
    fn reverse_holder_examples() {
        let t = tree(1, 5);
        let zero = scalar(&t, 0.0, 0.0, 0.0, |_| 0.0);
        let s = simulate_s(&zero, &t).unwrap();
        assert_eq!(reverse_holder_statistic(&s, 2.0, &t).unwrap(), 1.0);
        let c = LinearCoefficients::random(&t, 2, 0.4, 8);
        let s = simulate_s(&c, &t).unwrap();
        assert!(reverse_holder_statistic(&s, 2.0, &t).unwrap() >= 1.0);
    }

    #[test]
    fn reverse_holder_below_k_constant() {
        // Constant A, B: on a slice of h levels the BMO norms are √(|A|hΔt) and |B|√(hΔt).
        let n = 8;
        let t = build_tree(Dimensions::new(1, 1, 1.0, n).unwrap()).unwrap();
        let a = [0.2, 0.05, -0.05, 0.1];
        let b = vec![0.15, 0.05, 0.0, -0.1];
        let c = LinearCoefficients::constant(&t, &a, std::slice::from_ref(&b), &[0.0, 0.0], |_, o| o.fill(0.0));
        let (na, nb) = c.sup_norms();
        let slices = 4;
        let h = 1.0 / slices as f64;
        let (e1, e2) = ((na * h).sqrt(), nb * h.sqrt());
        assert!(slicing_condition(2.0, e1, e2) < 1.0);
        let s = simulate_s(&c, &t).unwrap();
        let stat = reverse_holder_statistic(&s, 2.0, &t).unwrap();
        let k = k_constant(2.0, e1, e2, slices).unwrap();
        assert!(stat <= 1.05 * k, "{stat} vs {k}");
    }

    proptest! {
        #[test]
        fn representation_is_linear(seed in 0u64..500, lambda in -2.0f64..2.0) {
            let t = tree(1, 4);
            let c1 = LinearCoefficients::random(&t, 2, 0.5, seed);
            let mut c2 = LinearCoefficients::random(&t, 2, 0.5, seed + 1000);
            c2.a = c1.a.clone();
            c2.b = c1.b.clone();
            let mut sum = c1.clone();
            sum.forcing = c1.forcing.add(&c2.forcing.scale(lambda)).unwrap();
            sum.terminal = c1.terminal.add(&c2.terminal.scale(lambda)).unwrap();
            let u1 = representation_solve(&c1, &t).unwrap();
            let u2 = representation_solve(&c2, &t).unwrap();
            let us = representation_solve(&sum, &t).unwrap();
            let combo = u1.add(&u2.scale(lambda)).unwrap();
            prop_assert!(us.max_diff(&combo).unwrap() <= 1e-12);

            let mut zero = c1.clone();
            zero.forcing = c1.forcing.scale(0.0);
            zero.terminal = c1.terminal.scale(0.0);
            prop_assert_eq!(representation_solve(&zero, &t).unwrap().sup_norm(), 0.0);
        }
    }
}
