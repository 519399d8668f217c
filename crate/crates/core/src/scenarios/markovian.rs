//! Markovian BSDEs driven by an Euler forward diffusion on the tree.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BsdeError, Result};
use crate::hypotheses::QuadraticFunction;
use crate::model::{
    norm_sq, state_terminal, Dimensions, ForwardSde, Generator, NodeCtx, QuadraticBsdeProblem, StructuralConstants,
    VectorFn,
};
use crate::probes::box_points;
use crate::solver::{picard_solve, SolverConfig};
use crate::tree::BinomialTree;

/// Terminal map `G: ℝ^m → ℝ^d`.
pub type TerminalMap = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

pub struct MarkovianScenario {
    pub problem: QuadraticBsdeProblem,
    pub terminal_map: TerminalMap,
    /// Smallest and largest eigenvalue of `σσᵀ` over the probes.
    pub ellipticity: (f64, f64),
    pub kappa: f64,
    /// Sampled `sup |G(x) − G(x')| / |x − x'|^κ`.
    pub holder_constant: f64,
    pub lyapunov: Option<QuadraticFunction>,
}

/// Sampled extreme eigenvalues of `σ(t,x)σ(t,x)ᵀ` for `x` in `x0 ± radius`.
pub fn ellipticity_bounds(forward: &ForwardSde, k: usize, horizon: f64, radius: f64, count: usize) -> (f64, f64) {
    let m = forward.dim();
    let mut radii = vec![0.5];
    radii.extend(std::iter::repeat_n(radius, m));
    let mut s = vec![0.0; m * k];
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for p in box_points(1 + m, count, 7, &radii) {
        let t = (p[0] + 0.5) * horizon;
        let x: Vec<f64> = p[1..].iter().zip(&forward.x0).map(|(a, b)| a + b).collect();
        (forward.diffusion)(t, &x, &mut s);
        let sig = DMatrix::from_row_slice(m, k, &s);
        let eig = SymmetricEigen::new(&sig * sig.transpose()).eigenvalues;
        lo = lo.min(eig.min());
        hi = hi.max(eig.max());
    }
    (lo, hi)
}

/// Sampled `sup |G(x) − G(x')| / |x − x'|^κ` over probe pairs in `center ± radius`.
pub fn holder_constant(
    map: &dyn Fn(&[f64], &mut [f64]),
    center: &[f64],
    d: usize,
    kappa: f64,
    radius: f64,
    count: usize,
) -> f64 {
    let m = center.len();
    let pts = box_points(2 * m, count, 3, &vec![radius; 2 * m]);
    let (mut a, mut b) = (vec![0.0; d], vec![0.0; d]);
    let mut best: f64 = 0.0;
    for p in pts {
        let x: Vec<f64> = p[..m].iter().zip(center).map(|(u, c)| u + c).collect();
        let y: Vec<f64> = p[m..].iter().zip(center).map(|(u, c)| u + c).collect();
        let dist = x.iter().zip(&y).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
        if dist < 1e-12 {
            continue;
        }
        map(&x, &mut a);
        map(&y, &mut b);
        let diff = a.iter().zip(&b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
        best = best.max(diff / dist.powf(kappa));
    }
    best
}

/// Builds `Y_t = G(X_T) + ∫ f(s, X_s, Y_s, Z_s) ds − ∫ Z dW` with `X` the Euler scheme of `forward`.
///
/// Refuses (config error) a diffusion whose sampled `σσᵀ` has an eigenvalue below `1e-10`.
#[allow(clippy::too_many_arguments)]
pub fn make_markovian(
    name: &str,
    dims: Dimensions,
    forward: ForwardSde,
    f: Arc<dyn Generator>,
    terminal_map: TerminalMap,
    constants: StructuralConstants,
    kappa: f64,
    probe_radius: f64,
) -> Result<MarkovianScenario> {
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(BsdeError::Config(format!(
            "Hölder exponent must lie in (0, 1], got {kappa}"
        )));
    }
    let ellipticity = ellipticity_bounds(&forward, dims.k, dims.horizon, probe_radius, 256);
    if !(ellipticity.0 > 1e-10) {
        return Err(BsdeError::Config(format!(
            "diffusion is not uniformly elliptic on the probes (min eigenvalue of sigma sigma^T = {:e})",
            ellipticity.0
        )));
    }
    let holder = holder_constant(terminal_map.as_ref(), &forward.x0, dims.d, kappa, probe_radius, 512);
    let map = terminal_map.clone();
    let mut problem = QuadraticBsdeProblem::new(name, dims, state_terminal(move |x, out| map(x, out)), f, constants)?
        .with_forward(forward);
    problem.expected.insert("holder_constant".into(), holder);
    problem.expected.insert("ellipticity_min".into(), ellipticity.0);
    Ok(MarkovianScenario {
        problem,
        terminal_map,
        ellipticity,
        kappa,
        holder_constant: holder,
        lyapunov: None,
    })
}

/// Parameters of the built-in Markovian scenario: `X = x0 + b·t + σW` in `ℝ^dim` (k = d = dim),
/// `G(x)^i = terminal_scale·sin(x^i)`, `f(x,y,z) = −β(1 + sin²x¹)y − γ·y|z|²/(1+|y|²)`.
///
/// `y·f ≤ 0`, so `F(y) = |y|²` is a Lyapunov function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarkovianSpec {
    pub dim: usize,
    pub drift: Vec<f64>,
    pub sigma: f64,
    pub x0: Vec<f64>,
    pub gamma: f64,
    pub beta: f64,
    pub terminal_scale: f64,
    pub horizon: f64,
    pub steps: usize,
}

impl Default for MarkovianSpec {
    fn default() -> Self {
        Self {
            dim: 1,
            drift: vec![0.1],
            sigma: 0.8,
            x0: vec![0.0],
            gamma: 0.5,
            beta: 0.2,
            terminal_scale: 0.5,
            horizon: 1.0,
            steps: 16,
        }
    }
}

impl MarkovianSpec {
    pub fn build(&self) -> Result<MarkovianScenario> {
        let m = self.dim;
        if self.drift.len() != m || self.x0.len() != m {
            return Err(BsdeError::Config(format!("drift and x0 must have length {m}")));
        }
        if !(self.gamma >= 0.0 && self.beta >= 0.0) {
            return Err(BsdeError::Config("gamma and beta must be nonnegative".into()));
        }
        let dims = Dimensions::new(m, m, self.horizon, self.steps)?;
        let (b, s) = (self.drift.clone(), self.sigma);
        let drift: VectorFn = Arc::new(move |_, _, out| out.copy_from_slice(&b));
        let diffusion: VectorFn = Arc::new(move |_, _, out| {
            out.fill(0.0);
            (0..m).for_each(|i| out[i * m + i] = s);
        });
        let forward = ForwardSde {
            x0: self.x0.clone(),
            drift,
            diffusion,
            additive: true,
        };
        let (gamma, beta) = (self.gamma, self.beta);
        let f: Arc<dyn Generator> = Arc::new(move |ctx: &NodeCtx<'_>, y: &[f64], z: &[f64], out: &mut [f64]| {
            let damp = beta * (1.0 + ctx.state[0].sin().powi(2));
            let q = gamma * norm_sq(z) / (1.0 + norm_sq(y));
            for (o, yi) in out.iter_mut().zip(y) {
                *o = -(damp + q) * yi;
            }
        });
        let scale = self.terminal_scale;
        let map: TerminalMap = Arc::new(move |x, out| {
            for (o, xi) in out.iter_mut().zip(x) {
                *o = scale * xi.sin();
            }
        });
        let constants = StructuralConstants::lipschitz(2.0 * beta, gamma, 0.0, 0.5 * gamma);
        let mut sc = make_markovian("markovian", dims, forward, f, map, constants, 1.0, 2.0)?;
        sc.problem = sc.problem.with_terminal_bound(vec![scale.abs(); m]);
        sc.lyapunov = Some(QuadraticFunction::new(vec![0.0; m], 1.0, 0.0));
        Ok(sc)
    }
}

/// The problem restarted at level `start` from `x`: horizon `T − t_start`, `N − start` steps, with the
/// clock of the forward coefficients and the generator shifted by `t_start`.
pub fn restart(problem: &QuadraticBsdeProblem, start: usize, x: &[f64]) -> Result<QuadraticBsdeProblem> {
    let fw = problem
        .forward
        .as_ref()
        .ok_or_else(|| BsdeError::Contract("restart needs a forward process".into()))?;
    let dims = problem.dims;
    if start >= dims.steps || x.len() != fw.dim() {
        return Err(BsdeError::Contract(format!(
            "cannot restart at level {start} from a state of length {}",
            x.len()
        )));
    }
    let t0 = dims.dt() * start as f64;
    let mut out = problem.clone();
    out.dims = Dimensions::new(dims.d, dims.k, dims.horizon - t0, dims.steps - start)?;
    let (drift, diffusion) = (fw.drift.clone(), fw.diffusion.clone());
    out.forward = Some(ForwardSde {
        x0: x.to_vec(),
        drift: Arc::new(move |t, x, o| drift(t + t0, x, o)),
        diffusion: Arc::new(move |t, x, o| diffusion(t + t0, x, o)),
        additive: fw.additive,
    });
    let g = problem.generator.clone();
    out.generator = Arc::new(move |ctx: &NodeCtx<'_>, y: &[f64], z: &[f64], o: &mut [f64]| {
        let shifted = NodeCtx { t: ctx.t + t0, ..*ctx };
        g.eval(&shifted, y, z, o)
    });
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegularityProbe {
    pub kappa: f64,
    /// `max |v(t,x) − v(t',x')| / (|x − x'|^κ + |t − t'|^{κ/2})` over all pairs of starts.
    pub constant: f64,
    /// Median of the same ratios; a constant far above it points at a single outlying pair.
    pub median_ratio: f64,
    pub starts: usize,
}

/// Solves from every `(level, x)` start and fits the Hölder constant of `v(t, x) = Y_t^{t,x}`.
pub fn regularity_probe(
    problem: &QuadraticBsdeProblem,
    levels: &[usize],
    xs: &[Vec<f64>],
    kappa: f64,
    config: &SolverConfig,
) -> Result<RegularityProbe> {
    let starts: Vec<(usize, &Vec<f64>)> = levels.iter().flat_map(|&l| xs.iter().map(move |x| (l, x))).collect();
    if starts.len() < 2 {
        return Err(BsdeError::Config("regularity probe needs at least two starts".into()));
    }
    let dt = problem.dims.dt();
    let values: Vec<(f64, &Vec<f64>, Vec<f64>)> = starts
        .par_iter()
        .map(|&(l, x)| {
            let p = restart(problem, l, x)?;
            let tree = BinomialTree::for_problem(&p)?;
            let sol = picard_solve(&p, &tree, config)?;
            Ok((l as f64 * dt, x, sol.y0().to_vec()))
        })
        .collect::<Result<_>>()?;
    let mut ratios = Vec::new();
    for (i, a) in values.iter().enumerate() {
        for b in &values[i + 1..] {
            let dx = a.1.iter().zip(b.1).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
            let den = dx.powf(kappa) + (a.0 - b.0).abs().powf(kappa / 2.0);
            if den > 0.0 {
                let dv = a.2.iter().zip(&b.2).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
                ratios.push(dv / den);
            }
        }
    }
    ratios.sort_by(f64::total_cmp);
    Ok(RegularityProbe {
        kappa,
        constant: ratios.last().copied().unwrap_or(0.0),
        median_ratio: ratios.get(ratios.len() / 2).copied().unwrap_or(0.0),
        starts: starts.len(),
    })
}

/// Uniform grid of `count` points on `center ± radius` along the first coordinate.
pub fn line_grid(center: &[f64], radius: f64, count: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|i| {
            let mut x = center.to_vec();
            let s = if count > 1 { i as f64 / (count - 1) as f64 } else { 0.5 };
            x[0] += radius * (2.0 * s - 1.0);
            x
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypotheses::check_lyapunov;
    use crate::model::validate_problem;
    use crate::probes::ProbeConfig;
    use crate::solver::sweep_m;

    /// `|f(0, 0, 0, 0)|` with a zero state of dimension `m`.
    fn zero_state_value(g: &dyn Generator, d: usize, k: usize, m: usize) -> f64 {
        let mut out = vec![0.0; d];
        g.eval(
            &NodeCtx::at_time(0.0, &vec![0.0; m]),
            &vec![0.0; d],
            &vec![0.0; d * k],
            &mut out,
        );
        crate::model::norm(&out)
    }

    #[test]
    fn brownian_forward_process() {
        let spec = MarkovianSpec {
            drift: vec![0.0],
            sigma: 1.0,
            x0: vec![0.3],
            steps: 6,
            ..MarkovianSpec::default()
        };
        let sc = spec.build().unwrap();
        let t = BinomialTree::for_problem(&sc.problem).unwrap();
        let states = t.states(sc.problem.forward.as_ref()).unwrap();
        for (n, level) in states.iter().enumerate() {
            for (node, x) in level.iter().enumerate() {
                let mut w = [0.0];
                t.brownian(n, node, &mut w);
                assert!((x - 0.3 - w[0]).abs() < 1e-14);
            }
        }
        assert!(validate_problem(&sc.problem, &ProbeConfig::checker()).is_empty());
        assert_eq!(zero_state_value(sc.problem.generator.as_ref(), 1, 1, 1), 0.0);
    }

    #[test]
    fn degenerate_diffusion_is_refused() {
        let spec = MarkovianSpec {
            sigma: 0.0,
            ..MarkovianSpec::default()
        };
        assert!(matches!(spec.build(), Err(BsdeError::Config(_))));
    }

    #[test]
    fn holder_constant_of_sine() {
        let sc = MarkovianSpec::default().build().unwrap();
        assert!(sc.holder_constant <= 0.5 + 1e-12 && sc.holder_constant > 0.45);
        let sqrt_map = |x: &[f64], o: &mut [f64]| o[0] = x[0].abs().sqrt();
        let c = holder_constant(&sqrt_map, &[0.0], 1, 0.5, 1.0, 512);
        assert!(c <= 1.0 + 1e-12 && c > 0.9);
    }

    #[test]
    fn lyapunov_function_passes() {
        let sc = MarkovianSpec::default().build().unwrap();
        let f = sc.lyapunov.as_ref().unwrap();
        let r = check_lyapunov(f, sc.problem.generator.as_ref(), 1, 1, 1.0, &ProbeConfig::checker());
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn z_sup_stabilizes_under_truncation_sweep() {
        let sc = MarkovianSpec::default().build().unwrap();
        let t = BinomialTree::for_problem(&sc.problem).unwrap();
        let table = sweep_m(&sc.problem, &[0.5, 1.0, 2.0, 4.0, 8.0], &t, &SolverConfig::default()).unwrap();
        let m_star = table.m_star.unwrap();
        let tail: Vec<f64> = table
            .rows
            .iter()
            .filter(|r| r.radius >= m_star)
            .map(|r| r.z_sup)
            .collect();
        assert!(tail.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-10), "{tail:?}");
    }

    #[test]
    fn regularity_probe_is_finite_and_deterministic() {
        let sc = MarkovianSpec::default().build().unwrap();
        let xs = line_grid(&[0.0], 0.5, 5);
        let a = regularity_probe(&sc.problem, &[0, 4, 8], &xs, 1.0, &SolverConfig::default()).unwrap();
        let b = regularity_probe(&sc.problem, &[0, 4, 8], &xs, 1.0, &SolverConfig::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.starts, 15);
        assert!(a.constant.is_finite() && a.constant < 5.0 && a.median_ratio <= a.constant);
    }

    #[test]
    fn restart_at_zero_reproduces_the_solution() {
        let sc = MarkovianSpec::default().build().unwrap();
        let t = BinomialTree::for_problem(&sc.problem).unwrap();
        let s0 = picard_solve(&sc.problem, &t, &SolverConfig::default()).unwrap();
        let p = restart(&sc.problem, 0, &[0.0]).unwrap();
        let s1 = picard_solve(&p, &BinomialTree::for_problem(&p).unwrap(), &SolverConfig::default()).unwrap();
        assert_eq!(s0.y0(), s1.y0());
    }
}
