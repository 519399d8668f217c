//! Discrete Brownian filtration with `2^k` equiprobable Rademacher branches per step.
//!
//! Branch `b` moves component `p` by `+√Δt` when bit `p` of `b` is set and by `−√Δt` otherwise,
//! so `E[ΔW] = 0` and `E[ΔW ΔWᵀ] = Δt·I` hold exactly. Two layouts share the same interface:
//!
//! * [`TreeKind::Path`]: one node per path prefix, child index `parent·2^k + branch`;
//!   level `n` has `(2^k)^n` nodes and every adapted functional is representable.
//! * [`TreeKind::Recombining`]: one node per vector of up-move counts, `(n+1)^k` nodes at level `n`.
//!   Only functionals of the current Brownian value live here, which covers every problem whose
//!   terminal condition and generator depend on `W` only through the current state.
//!
//! Conditional expectations sum children in ascending branch order and then multiply by `2^{-k}`,
//! so results are bit-identical regardless of how levels are split across threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BsdeError, Result};
use crate::model::{AdaptedField, Dimensions, ForwardSde, LeafCtx, QuadraticBsdeProblem};

/// Default cap on the total number of nodes of a tree.
pub const DEFAULT_NODE_BUDGET: usize = 1 << 24;

/// Levels at least this large are processed in parallel.
const PAR_THRESHOLD: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TreeKind {
    #[default]
    Path,
    Recombining,
}

#[derive(Clone, Debug)]
pub struct BinomialTree {
    dims: Dimensions,
    kind: TreeKind,
    branching: usize,
    sqrt_dt: f64,
    sizes: Vec<usize>,
}

/// Path tree for `dims` with the default node budget.
pub fn build_tree(dims: Dimensions) -> Result<BinomialTree> {
    BinomialTree::new(dims, TreeKind::Path, DEFAULT_NODE_BUDGET)
}

impl BinomialTree {
    pub fn new(dims: Dimensions, kind: TreeKind, budget: usize) -> Result<Self> {
        dims.validate()?;
        let (k, n_steps) = (dims.k, dims.steps);
        let oversized = || {
            BsdeError::Sizing(format!(
                "node budget {budget} exceeded for k={k}, N={n_steps} ({kind:?} layout); reduce N or k",
            ))
        };
        if k >= usize::BITS as usize - 1 {
            return Err(oversized());
        }
        let branching = 1usize << k;
        let mut sizes = Vec::with_capacity(n_steps + 1);
        let mut total = 0usize;
        for n in 0..=n_steps {
            let size = match kind {
                TreeKind::Path => branching.checked_pow(n as u32),
                TreeKind::Recombining => (n + 1).checked_pow(k as u32),
            }
            .ok_or_else(oversized)?;
            total = total.checked_add(size).ok_or_else(oversized)?;
            if total > budget {
                return Err(oversized());
            }
            sizes.push(size);
        }
        Ok(Self {
            dims,
            kind,
            branching,
            sqrt_dt: dims.dt().sqrt(),
            sizes,
        })
    }

    /// Recombining lattice with the default node budget.
    pub fn recombining(dims: Dimensions) -> Result<Self> {
        Self::new(dims, TreeKind::Recombining, DEFAULT_NODE_BUDGET)
    }

    /// Recombining lattice for problems that allow it, path tree otherwise.
    pub fn for_problem(problem: &QuadraticBsdeProblem) -> Result<Self> {
        if supports_recombining(problem) {
            Self::recombining(problem.dims)
        } else {
            build_tree(problem.dims)
        }
    }

    pub fn dims(&self) -> Dimensions {
        self.dims
    }

    pub fn kind(&self) -> TreeKind {
        self.kind
    }

    pub fn branching(&self) -> usize {
        self.branching
    }

    pub fn steps(&self) -> usize {
        self.dims.steps
    }

    pub fn dt(&self) -> f64 {
        self.dims.dt()
    }

    pub fn sqrt_dt(&self) -> f64 {
        self.sqrt_dt
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt()
    }

    pub fn level_size(&self, n: usize) -> usize {
        self.sizes[n]
    }

    pub fn total_nodes(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// `±1`: the sign of Brownian component `p` on branch `b`.
    #[inline]
    pub fn sign(&self, b: usize, p: usize) -> f64 {
        if (b >> p) & 1 == 1 {
            1.0
        } else {
            -1.0
        }
    }

    /// Writes `ΔW` of branch `b`.
    pub fn increment(&self, b: usize, out: &mut [f64]) {
        for (p, o) in out.iter_mut().enumerate() {
            *o = self.sign(b, p) * self.sqrt_dt;
        }
    }

    fn counts(&self, n: usize, mut node: usize, out: &mut [usize]) {
        let base = n + 1;
        for c in out.iter_mut() {
            *c = node % base;
            node /= base;
        }
    }

    #[inline]
    pub fn child(&self, n: usize, node: usize, b: usize) -> usize {
        match self.kind {
            TreeKind::Path => node * self.branching + b,
            TreeKind::Recombining => {
                let (base, next) = (n + 1, n + 2);
                let mut rest = node;
                let mut idx = 0;
                let mut mult = 1;
                for p in 0..self.dims.k {
                    let up = (b >> p) & 1;
                    idx += (rest % base + up) * mult;
                    rest /= base;
                    mult *= next;
                }
                idx
            }
        }
    }

    /// Brownian value `W` at a node.
    pub fn brownian(&self, n: usize, node: usize, out: &mut [f64]) {
        let k = self.dims.k;
        match self.kind {
            TreeKind::Path => {
                out.fill(0.0);
                let mut rest = node;
                for _ in 0..n {
                    let b = rest % self.branching;
                    rest /= self.branching;
                    for (p, o) in out.iter_mut().enumerate() {
                        *o += self.sign(b, p);
                    }
                }
                for o in out.iter_mut() {
                    *o *= self.sqrt_dt;
                }
            }
            TreeKind::Recombining => {
                let mut counts = vec![0; k];
                self.counts(n, node, &mut counts);
                for (o, c) in out.iter_mut().zip(counts) {
                    *o = (2.0 * c as f64 - n as f64) * self.sqrt_dt;
                }
            }
        }
    }

    /// Branch taken at step `u` (from level `u` to `u+1`) on the way to a path-tree node at level `n`.
    pub fn branch_at(&self, n: usize, node: usize, u: usize) -> usize {
        debug_assert!(u < n);
        (node / self.branching.pow((n - 1 - u) as u32)) % self.branching
    }

    /// Path-tree node at level `n` reached by replacing the branch taken at step `u` with `b`.
    pub fn with_branch_at(&self, n: usize, node: usize, u: usize, b: usize) -> usize {
        let weight = self.branching.pow((n - 1 - u) as u32);
        let old = (node / weight) % self.branching;
        node - old * weight + b * weight
    }

    /// `W_0, …, W_n` flattened, for a path-tree node at level `n`.
    pub fn path(&self, n: usize, node: usize) -> Result<Vec<f64>> {
        if self.kind != TreeKind::Path {
            return Err(BsdeError::Contract(
                "Brownian paths are only available on path trees".into(),
            ));
        }
        let k = self.dims.k;
        let mut out = vec![0.0; (n + 1) * k];
        for u in 0..n {
            let b = self.branch_at(n, node, u);
            for p in 0..k {
                out[(u + 1) * k + p] = out[u * k + p] + self.sign(b, p) * self.sqrt_dt;
            }
        }
        Ok(out)
    }

    /// Values at level `n` of `E[next | node]`, where `next` holds `width` values per level-(n+1) node.
    pub fn condexp_level(&self, n: usize, next: &[f64], width: usize) -> Vec<f64> {
        debug_assert_eq!(next.len(), self.sizes[n + 1] * width);
        let inv = 1.0 / self.branching as f64;
        let mut out = vec![0.0; self.sizes[n] * width];
        let fill = |node: usize, dst: &mut [f64]| {
            for b in 0..self.branching {
                let c = self.child(n, node, b);
                for (o, v) in dst.iter_mut().zip(&next[c * width..(c + 1) * width]) {
                    *o += v;
                }
            }
            for o in dst.iter_mut() {
                *o *= inv;
            }
        };
        if self.sizes[n] >= PAR_THRESHOLD {
            out.par_chunks_mut(width)
                .enumerate()
                .for_each(|(node, dst)| fill(node, dst));
        } else {
            out.chunks_mut(width)
                .enumerate()
                .for_each(|(node, dst)| fill(node, dst));
        }
        out
    }

    /// Conditional expectation of a field's level `n+1` given level `n`, as a one-level field.
    pub fn condexp(&self, field: &AdaptedField, n: usize) -> Result<AdaptedField> {
        if n >= self.steps() || !field.defined(n + 1) {
            return Err(BsdeError::Contract(format!(
                "condexp needs the field on level {}",
                n + 1
            )));
        }
        self.check_level(field, n + 1)?;
        let values = self.condexp_level(n, field.level(n + 1), field.width());
        AdaptedField::from_levels(field.rows(), field.cols(), n, vec![values])
    }

    /// `Z_n = E[Y_{n+1} ΔWᵀ | node]/Δt` for `Y` with `d` components per node at level `n+1`.
    pub fn extract_z_level(&self, n: usize, next_y: &[f64], d: usize) -> Vec<f64> {
        let k = self.dims.k;
        let width = d * k;
        let scale = 1.0 / (self.branching as f64 * self.sqrt_dt);
        let mut out = vec![0.0; self.sizes[n] * width];
        let fill = |node: usize, dst: &mut [f64]| {
            for b in 0..self.branching {
                let c = self.child(n, node, b);
                let y = &next_y[c * d..(c + 1) * d];
                for (i, yi) in y.iter().enumerate() {
                    for p in 0..k {
                        dst[i * k + p] += self.sign(b, p) * yi;
                    }
                }
            }
            for o in dst.iter_mut() {
                *o *= scale;
            }
        };
        if self.sizes[n] >= PAR_THRESHOLD {
            out.par_chunks_mut(width)
                .enumerate()
                .for_each(|(node, dst)| fill(node, dst));
        } else {
            out.chunks_mut(width)
                .enumerate()
                .for_each(|(node, dst)| fill(node, dst));
        }
        out
    }

    /// Martingale-representation integrand of an ℝ^d field given on level `n+1`.
    pub fn extract_z(&self, next_y: &AdaptedField, n: usize) -> Result<AdaptedField> {
        if n >= self.steps() || !next_y.defined(n + 1) || next_y.cols() != 1 {
            return Err(BsdeError::Contract(format!(
                "extract_z needs an R^d field on level {}",
                n + 1
            )));
        }
        self.check_level(next_y, n + 1)?;
        let d = next_y.rows();
        let values = self.extract_z_level(n, next_y.level(n + 1), d);
        AdaptedField::from_levels(d, self.dims.k, n, vec![values])
    }

    /// `R_n = E[Σ_{m≥n} |Z_m|²Δt | node]` on levels `0..=N` (zero at level N).
    pub fn remaining_quadratic_sum(&self, z: &AdaptedField) -> Result<AdaptedField> {
        self.remaining_sum_between(z, 0, self.steps())
    }

    /// `E[Σ_{m=n}^{end-1} |Z_m|²Δt | node]` on levels `start..=end`.
    pub fn remaining_sum_between(&self, z: &AdaptedField, start: usize, end: usize) -> Result<AdaptedField> {
        if start > end || end > self.steps() || (end > start && (!z.defined(start) || !z.defined(end - 1))) {
            return Err(BsdeError::Contract(format!(
                "remaining quadratic sum over levels {start}..{end} needs Z on those levels"
            )));
        }
        let dt = self.dt();
        let mut levels: Vec<Vec<f64>> = vec![Vec::new(); end - start + 1];
        levels[end - start] = vec![0.0; self.sizes[end]];
        for n in (start..end).rev() {
            self.check_level(z, n)?;
            let mut r = self.condexp_level(n, &levels[n + 1 - start], 1);
            for (ri, zi) in r.iter_mut().zip(z.level(n).chunks(z.width())) {
                *ri += zi.iter().map(|x| x * x).sum::<f64>() * dt;
            }
            levels[n - start] = r;
        }
        AdaptedField::from_levels(1, 1, start, levels)
    }

    fn check_level(&self, field: &AdaptedField, n: usize) -> Result<()> {
        if field.nodes(n) != self.sizes[n] {
            return Err(BsdeError::Contract(format!(
                "field has {} nodes on level {n}, tree has {}",
                field.nodes(n),
                self.sizes[n]
            )));
        }
        Ok(())
    }

    /// Per-level node states: `W_n`, or the Euler forward process when `forward` is given.
    pub fn states(&self, forward: Option<&ForwardSde>) -> Result<Vec<Vec<f64>>> {
        let k = self.dims.k;
        let steps = self.steps();
        let Some(fw) = forward else {
            return Ok((0..=steps)
                .map(|n| {
                    let mut lvl = vec![0.0; self.sizes[n] * k];
                    for (node, out) in lvl.chunks_mut(k).enumerate() {
                        self.brownian(n, node, out);
                    }
                    lvl
                })
                .collect());
        };
        let m = fw.dim();
        let dt = self.dt();
        let mut b = vec![0.0; m];
        let mut s = vec![0.0; m * k];
        if self.kind == TreeKind::Recombining {
            if !fw.additive {
                return Err(BsdeError::Contract(
                    "a forward process with state-dependent coefficients needs a path tree".into(),
                ));
            }
            (fw.drift)(0.0, &fw.x0, &mut b);
            (fw.diffusion)(0.0, &fw.x0, &mut s);
            let mut w = vec![0.0; k];
            return Ok((0..=steps)
                .map(|n| {
                    let t = self.time(n);
                    let mut lvl = vec![0.0; self.sizes[n] * m];
                    for (node, out) in lvl.chunks_mut(m).enumerate() {
                        self.brownian(n, node, &mut w);
                        for i in 0..m {
                            out[i] = fw.x0[i] + b[i] * t + (0..k).map(|p| s[i * k + p] * w[p]).sum::<f64>();
                        }
                    }
                    lvl
                })
                .collect());
        }
        let mut levels = vec![fw.x0.clone()];
        let mut dw = vec![0.0; k];
        for n in 0..steps {
            let t = self.time(n);
            let cur = &levels[n];
            let mut next = vec![0.0; self.sizes[n + 1] * m];
            for node in 0..self.sizes[n] {
                let x = &cur[node * m..(node + 1) * m];
                (fw.drift)(t, x, &mut b);
                (fw.diffusion)(t, x, &mut s);
                for br in 0..self.branching {
                    self.increment(br, &mut dw);
                    let c = self.child(n, node, br);
                    for i in 0..m {
                        next[c * m + i] = x[i] + b[i] * dt + (0..k).map(|p| s[i * k + p] * dw[p]).sum::<f64>();
                    }
                }
            }
            levels.push(next);
        }
        Ok(levels)
    }

    /// Terminal values ξ on every leaf (`d` values per leaf).
    pub fn terminal_values(&self, problem: &QuadraticBsdeProblem, states: &[Vec<f64>]) -> Result<Vec<f64>> {
        let d = problem.dims.d;
        let n = self.steps();
        let m = states[n].len() / self.sizes[n];
        let path_dep = problem.terminal.path_dependent();
        if path_dep && self.kind != TreeKind::Path {
            return Err(BsdeError::Contract(
                "a path-dependent terminal condition needs a path tree".into(),
            ));
        }
        let mut out = vec![0.0; self.sizes[n] * d];
        for (node, dst) in out.chunks_mut(d).enumerate() {
            let path = if path_dep { Some(self.path(n, node)?) } else { None };
            let leaf = LeafCtx {
                node,
                state: &states[n][node * m..(node + 1) * m],
                path: path.as_deref(),
            };
            problem.terminal.eval(&leaf, dst);
            if dst.iter().any(|v| !v.is_finite()) {
                return Err(BsdeError::NonFinite { level: n, node });
            }
        }
        Ok(out)
    }
}

/// Whether a problem's data depend on the Brownian path only through the current state.
pub fn supports_recombining(problem: &QuadraticBsdeProblem) -> bool {
    !problem.terminal.path_dependent() && problem.forward.as_ref().is_none_or(|f| f.additive)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dims(k: usize, n: usize) -> Dimensions {
        Dimensions::new(1, k, 1.0, n).unwrap()
    }

    #[test]
    fn level_sizes_and_increments() {
        let t = build_tree(dims(1, 2)).unwrap();
        assert_eq!((0..=2).map(|n| t.level_size(n)).collect::<Vec<_>>(), vec![1, 2, 4]);
        let mut dw = [0.0];
        t.increment(0, &mut dw);
        assert!((dw[0] + 0.5f64.sqrt()).abs() < 1e-15);
        t.increment(1, &mut dw);
        assert!((dw[0] - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn two_dimensional_single_step() {
        let t = build_tree(Dimensions::new(1, 2, 1.0, 1).unwrap()).unwrap();
        assert_eq!(t.level_size(1), 4);
        let mut seen: Vec<(i32, i32)> = (0..4)
            .map(|b| {
                let mut w = [0.0; 2];
                t.brownian(1, t.child(0, 0, b), &mut w);
                (w[0] as i32, w[1] as i32)
            })
            .collect();
        seen.sort();
        assert_eq!(seen, vec![(-1, -1), (-1, 1), (1, -1), (1, 1)]);
    }

    #[test]
    fn node_budget_names_k_and_n() {
        let err = build_tree(Dimensions::new(1, 2, 1.0, 13).unwrap()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("k=2") && msg.contains("N=13"), "{msg}");
        assert!(build_tree(Dimensions::new(1, 2, 1.0, 11).unwrap()).is_ok());
    }

    #[test]
    fn condexp_examples() {
        let t = build_tree(dims(1, 1)).unwrap();
        assert_eq!(t.condexp_level(0, &[1.0, 3.0], 1), vec![2.0]);

        let t = build_tree(dims(1, 3)).unwrap();
        let w = AdaptedField::from_fn(&t, 1, 1, 0, 3, |n, node, out| t.brownian(n, node, out));
        let w2 = w.map_nodes(1, 1, |v, o| o[0] = v[0] * v[0]);
        for n in 0..3 {
            let e = t.condexp(&w, n).unwrap();
            let e2 = t.condexp(&w2, n).unwrap();
            for node in 0..t.level_size(n) {
                assert!((e.at(n, node)[0] - w.at(n, node)[0]).abs() < 1e-15);
                assert!((e2.at(n, node)[0] - w2.at(n, node)[0] - t.dt()).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn extract_z_examples() {
        let t = build_tree(dims(1, 1)).unwrap();
        assert_eq!(t.extract_z_level(0, &[-1.0, 1.0], 1), vec![1.0]);
        assert_eq!(t.extract_z_level(0, &[5.0, 5.0], 1), vec![0.0]);

        // Y = a·ΔW reproduces a for a 2×2 matrix a.
        let t = build_tree(Dimensions::new(2, 2, 0.5, 1).unwrap()).unwrap();
        let a = [0.3, -1.2, 2.0, 0.7];
        let mut next = vec![0.0; 8];
        for b in 0..4 {
            let mut dw = [0.0; 2];
            t.increment(b, &mut dw);
            for i in 0..2 {
                next[b * 2 + i] = a[i * 2] * dw[0] + a[i * 2 + 1] * dw[1];
            }
        }
        let z = t.extract_z_level(0, &next, 2);
        for (x, y) in z.iter().zip(a) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn remaining_sum_of_constant_and_brute_force() {
        let t = build_tree(dims(1, 4)).unwrap();
        let z = AdaptedField::constant(&t, &[2.0], 1, 1, 0, 3);
        let r = t.remaining_quadratic_sum(&z).unwrap();
        for n in 0..=4 {
            for (_, _, v) in r.restrict(n, n).unwrap().iter() {
                assert!((v[0] - 4.0 * (1.0 - t.time(n))).abs() < 1e-14);
            }
        }

        // Z = W: compare with enumeration of all continuations below each node.
        let t = build_tree(dims(1, 5)).unwrap();
        let z = AdaptedField::from_fn(&t, 1, 1, 0, 4, |n, node, out| t.brownian(n, node, out));
        let r = t.remaining_quadratic_sum(&z).unwrap();
        for n in 0..5 {
            for node in 0..t.level_size(n) {
                let depth = 5 - n;
                let mut total = 0.0;
                for tail in 0..(1usize << depth) {
                    let mut cur = node;
                    let mut acc = 0.0;
                    for step in 0..depth {
                        acc += z.at(n + step, cur)[0].powi(2) * t.dt();
                        cur = t.child(n + step, cur, (tail >> (depth - 1 - step)) & 1);
                    }
                    total += acc;
                }
                total /= (1usize << depth) as f64;
                assert!((r.at(n, node)[0] - total).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn recombining_matches_path_tree() {
        let d2 = Dimensions::new(1, 2, 1.0, 5).unwrap();
        let p = build_tree(d2).unwrap();
        let r = BinomialTree::recombining(d2).unwrap();
        assert_eq!(r.level_size(5), 36);
        // Same W on path nodes and on the lattice node reached by the same branches.
        let mut wp = [0.0; 2];
        let mut wr = [0.0; 2];
        for leaf in 0..p.level_size(5) {
            let mut node_r = 0;
            for u in 0..5 {
                node_r = r.child(u, node_r, p.branch_at(5, leaf, u));
            }
            p.brownian(5, leaf, &mut wp);
            r.brownian(5, node_r, &mut wr);
            assert_eq!(wp, wr);
        }
    }

    #[test]
    fn path_and_branch_edits() {
        let t = build_tree(dims(1, 3)).unwrap();
        let node = 0b101;
        assert_eq!(t.branch_at(3, node, 0), 1);
        assert_eq!(t.branch_at(3, node, 1), 0);
        assert_eq!(t.with_branch_at(3, node, 1, 1), 0b111);
        let path = t.path(3, node).unwrap();
        let s = t.sqrt_dt();
        assert_eq!(path, vec![0.0, s, 0.0, s]);
    }

    proptest! {
        #[test]
        fn tower_property(vals in proptest::collection::vec(-10.0f64..10.0, 16)) {
            let t = build_tree(Dimensions::new(1, 2, 1.0, 2).unwrap()).unwrap();
            let one = t.condexp_level(1, &vals, 1);
            let two = t.condexp_level(0, &one, 1);
            let direct: f64 = vals.iter().sum::<f64>() / 16.0;
            prop_assert!((two[0] - direct).abs() < 1e-12);
        }

        #[test]
        fn extract_z_reconstructs_affine(a in -5.0f64..5.0, b0 in -5.0f64..5.0, b1 in -5.0f64..5.0) {
            let t = build_tree(Dimensions::new(1, 2, 0.25, 1).unwrap()).unwrap();
            let mut next = vec![0.0; 4];
            let mut dw = [0.0; 2];
            for (b, v) in next.iter_mut().enumerate() {
                t.increment(b, &mut dw);
                *v = a + b0 * dw[0] + b1 * dw[1];
            }
            let z = t.extract_z_level(0, &next, 1);
            let e = t.condexp_level(0, &next, 1);
            prop_assert!((z[0] - b0).abs() < 1e-12 && (z[1] - b1).abs() < 1e-12);
            prop_assert!((e[0] - a).abs() < 1e-12);
        }

        #[test]
        fn probability_mass_is_one(k in 1usize..3, n in 1usize..5) {
            let t = build_tree(Dimensions::new(1, k, 1.0, n).unwrap()).unwrap();
            let mut mass = vec![1.0; t.level_size(n)];
            for m in (0..n).rev() {
                mass = t.condexp_level(m, &mass, 1);
            }
            prop_assert_eq!(mass, vec![1.0]);
        }
    }
}
