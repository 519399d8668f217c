use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{BsdeError, Result};
use crate::model::field::AdaptedField;
use crate::truncation::Truncation;

/// Sizes of a problem: state dimension `d`, Brownian dimension `k`, horizon `T` and step count `N`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dimensions {
    pub d: usize,
    pub k: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "N")]
    pub steps: usize,
}

impl Dimensions {
    pub fn new(d: usize, k: usize, horizon: f64, steps: usize) -> Result<Self> {
        let dims = Self { d, k, horizon, steps };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.k == 0 || self.steps == 0 || !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(BsdeError::Config(format!(
                "dimensions need d, k, N >= 1 and T > 0 (got d={}, k={}, T={}, N={})",
                self.d, self.k, self.horizon, self.steps
            )));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Same problem sizes with a different step count.
    pub fn with_steps(&self, steps: usize) -> Self {
        Self { steps, ..*self }
    }
}

/// Constants of the diagonal structure: `f = f_diag + g`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagonalConstants {
    pub l_d: f64,
    pub k_dy: f64,
    pub l_dy: f64,
    pub k_dz: f64,
    pub l_dz: f64,
}

/// Quadratic growth constants.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GrowthConstants {
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default, rename = "G_d")]
    pub g_d: Option<f64>,
    #[serde(default, rename = "G")]
    pub g: Option<f64>,
}

/// Monotonicity data: `y·f ≤ α|y| − μ|y|² + γ|y||z|²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotoneConstants {
    pub alpha_mon: f64,
    pub mu: f64,
    pub gamma_mon: f64,
}

/// Norm-equivalence constants under a change of measure; always user supplied.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KazamakiConstants {
    pub c1: f64,
    pub c2: f64,
}

impl Default for KazamakiConstants {
    fn default() -> Self {
        Self { c1: 1.0, c2: 1.0 }
    }
}

/// Lipschitz data of the generator:
/// `|f(y,z) − f(y',z)| ≤ (K_y + L_y|z|²)|y − y'|` and
/// `|f(y,z) − f(y,z')| ≤ (K_z + L_z(|z| + |z'|))|z − z'|`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StructuralConstants {
    #[serde(default)]
    pub k_y: f64,
    #[serde(default)]
    pub l_y: f64,
    #[serde(default)]
    pub k_z: f64,
    #[serde(default)]
    pub l_z: f64,
    #[serde(default)]
    pub diagonal: Option<DiagonalConstants>,
    #[serde(default)]
    pub growth: Option<GrowthConstants>,
    #[serde(default)]
    pub monotone: Option<MonotoneConstants>,
    #[serde(default)]
    pub kazamaki: Option<KazamakiConstants>,
}

impl StructuralConstants {
    pub fn lipschitz(k_y: f64, l_y: f64, k_z: f64, l_z: f64) -> Self {
        Self {
            k_y,
            l_y,
            k_z,
            l_z,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut values = vec![
            ("K_y", self.k_y),
            ("L_y", self.l_y),
            ("K_z", self.k_z),
            ("L_z", self.l_z),
        ];
        if let Some(dg) = &self.diagonal {
            values.extend([
                ("L_d", dg.l_d),
                ("K_dy", dg.k_dy),
                ("L_dy", dg.l_dy),
                ("K_dz", dg.k_dz),
                ("L_dz", dg.l_dz),
            ]);
        }
        if let Some(g) = &self.growth {
            for (name, v) in [("gamma", g.gamma), ("G_d", g.g_d), ("G", g.g)] {
                if let Some(v) = v {
                    values.push((name, v));
                }
            }
        }
        if let Some((name, v)) = values.iter().find(|(_, v)| !(*v >= 0.0) || !v.is_finite()) {
            return Err(BsdeError::Config(format!(
                "constant {name} must be finite and nonnegative, got {v}"
            )));
        }
        if let Some(m) = &self.monotone {
            if !(m.mu > 0.0) {
                return Err(BsdeError::Config(format!("monotone block needs mu > 0, got {}", m.mu)));
            }
        }
        if let Some(c) = &self.kazamaki {
            if !(c.c1 > 0.0 && c.c2 > 0.0 && c.c1 <= c.c2) {
                return Err(BsdeError::Config(format!(
                    "kazamaki constants need 0 < c1 <= c2, got c1={}, c2={}",
                    c.c1, c.c2
                )));
            }
        }
        Ok(())
    }

    pub fn gamma(&self) -> Option<f64> {
        self.growth.and_then(|g| g.gamma)
    }
}

/// Where a generator is evaluated: tree coordinates, time and the node's state
/// (the Brownian value `W`, or the forward process `X` for Markovian problems).
#[derive(Clone, Copy, Debug)]
pub struct NodeCtx<'a> {
    pub level: usize,
    pub node: usize,
    pub t: f64,
    pub state: &'a [f64],
}

impl<'a> NodeCtx<'a> {
    /// Context detached from any tree node, used by probes.
    pub fn at_time(t: f64, state: &'a [f64]) -> Self {
        Self {
            level: 0,
            node: 0,
            t,
            state,
        }
    }
}

/// The driver `f(t, y, z)`. `z` is d×k row-major, `out` has length d.
pub trait Generator: Send + Sync {
    fn eval(&self, ctx: &NodeCtx<'_>, y: &[f64], z: &[f64], out: &mut [f64]);
}

impl<F> Generator for F
where
    F: Fn(&NodeCtx<'_>, &[f64], &[f64], &mut [f64]) + Send + Sync,
{
    fn eval(&self, ctx: &NodeCtx<'_>, y: &[f64], z: &[f64], out: &mut [f64]) {
        self(ctx, y, z, out)
    }
}

/// Adapts a closure of `(t, y, z, out)` into a [`Generator`].
pub struct FnGenerator<F>(pub F);

impl<F> Generator for FnGenerator<F>
where
    F: Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync,
{
    fn eval(&self, ctx: &NodeCtx<'_>, y: &[f64], z: &[f64], out: &mut [f64]) {
        (self.0)(ctx.t, y, z, out)
    }
}

pub fn generator<F>(f: F) -> Arc<dyn Generator>
where
    F: Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
{
    Arc::new(FnGenerator(f))
}

/// The zero generator.
pub fn zero_generator() -> Arc<dyn Generator> {
    generator(|_, _, _, out: &mut [f64]| out.fill(0.0))
}

/// Sum of two generators.
pub struct SumGenerator(pub Arc<dyn Generator>, pub Arc<dyn Generator>);

impl Generator for SumGenerator {
    fn eval(&self, ctx: &NodeCtx<'_>, y: &[f64], z: &[f64], out: &mut [f64]) {
        self.0.eval(ctx, y, z, out);
        let mut extra = vec![0.0; out.len()];
        self.1.eval(ctx, y, z, &mut extra);
        for (o, e) in out.iter_mut().zip(extra) {
            *o += e;
        }
    }
}

/// `f + ε·g`.
pub struct ShiftedGenerator {
    pub base: Arc<dyn Generator>,
    pub shift: Arc<dyn Generator>,
    pub epsilon: f64,
}

impl Generator for ShiftedGenerator {
    fn eval(&self, ctx: &NodeCtx<'_>, y: &[f64], z: &[f64], out: &mut [f64]) {
        self.base.eval(ctx, y, z, out);
        let mut extra = vec![0.0; out.len()];
        self.shift.eval(ctx, y, z, &mut extra);
        for (o, e) in out.iter_mut().zip(extra) {
            *o += self.epsilon * e;
        }
    }
}

/// A leaf of the tree as seen by a terminal condition.
#[derive(Clone, Copy, Debug)]
pub struct LeafCtx<'a> {
    pub node: usize,
    /// `W_T`, or `X_N` when the problem has a forward process.
    pub state: &'a [f64],
    /// `W_0, …, W_N` flattened (length (N+1)·k); only available on path trees.
    pub path: Option<&'a [f64]>,
}

/// The terminal condition ξ.
pub trait Terminal: Send + Sync {
    fn eval(&self, leaf: &LeafCtx<'_>, out: &mut [f64]);

    /// Whether ξ needs the whole Brownian path rather than the terminal state.
    fn path_dependent(&self) -> bool {
        false
    }
}

/// Terminal condition depending on the terminal state only.
pub struct StateTerminal<F>(pub F);

impl<F> Terminal for StateTerminal<F>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    fn eval(&self, leaf: &LeafCtx<'_>, out: &mut [f64]) {
        (self.0)(leaf.state, out)
    }
}

/// Terminal condition reading the full Brownian path `W_0..W_N`.
pub struct PathTerminal<F>(pub F);

impl<F> Terminal for PathTerminal<F>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    fn eval(&self, leaf: &LeafCtx<'_>, out: &mut [f64]) {
        let path = leaf.path.expect("path-dependent terminal evaluated without a path");
        (self.0)(path, out)
    }

    fn path_dependent(&self) -> bool {
        true
    }
}

pub fn state_terminal<F>(f: F) -> Arc<dyn Terminal>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
{
    Arc::new(StateTerminal(f))
}

pub fn path_terminal<F>(f: F) -> Arc<dyn Terminal>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
{
    Arc::new(PathTerminal(f))
}

/// `ξ + ε·η`.
pub struct ShiftedTerminal {
    pub base: Arc<dyn Terminal>,
    pub shift: Arc<dyn Terminal>,
    pub epsilon: f64,
}

impl Terminal for ShiftedTerminal {
    fn eval(&self, leaf: &LeafCtx<'_>, out: &mut [f64]) {
        self.base.eval(leaf, out);
        let mut extra = vec![0.0; out.len()];
        self.shift.eval(leaf, &mut extra);
        for (o, e) in out.iter_mut().zip(extra) {
            *o += self.epsilon * e;
        }
    }

    fn path_dependent(&self) -> bool {
        self.base.path_dependent() || self.shift.path_dependent()
    }
}

/// The two parts of a diagonal generator `f = f_diag + g`,
/// where `f_diag^i` depends on `z` only through the row `z^{(i,:)}`.
#[derive(Clone)]
pub struct DiagonalParts {
    pub f_diag: Arc<dyn Generator>,
    pub g: Arc<dyn Generator>,
}

#[derive(Clone)]
pub enum Classification {
    General,
    Diagonal(DiagonalParts),
    Manifold,
    Markovian,
}

impl Classification {
    pub fn name(&self) -> &'static str {
        match self {
            Classification::General => "general",
            Classification::Diagonal(_) => "diagonal",
            Classification::Manifold => "manifold",
            Classification::Markovian => "markovian",
        }
    }
}

pub type VectorFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// Forward diffusion `dX = b(t,X)dt + σ(t,X)dW`, discretized by Euler on the tree.
#[derive(Clone)]
pub struct ForwardSde {
    pub x0: Vec<f64>,
    /// Writes `b(t, x)` (length m).
    pub drift: VectorFn,
    /// Writes `σ(t, x)` (m×k row-major).
    pub diffusion: VectorFn,
    /// Constant drift and diffusion: `X_n = x0 + b·t_n + σ·W_n`, usable on recombining lattices.
    pub additive: bool,
}

impl ForwardSde {
    pub fn dim(&self) -> usize {
        self.x0.len()
    }
}

/// A quadratic BSDE `Y_t = ξ + ∫_t^T f(s, Y_s, Z_s) ds − ∫_t^T Z_s dW_s`.
#[derive(Clone)]
pub struct QuadraticBsdeProblem {
    pub name: String,
    pub dims: Dimensions,
    pub terminal: Arc<dyn Terminal>,
    pub generator: Arc<dyn Generator>,
    pub constants: StructuralConstants,
    pub classification: Classification,
    pub forward: Option<ForwardSde>,
    /// Declared per-component sup bounds of ξ.
    pub terminal_bound: Option<Vec<f64>>,
    /// Truncation radius when the generator has been localized.
    pub truncation: Option<f64>,
    /// Expected-bound record attached by scenario builders.
    pub expected: BTreeMap<String, f64>,
}

impl fmt::Debug for QuadraticBsdeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("QuadraticBsdeProblem")
            .field("name", &self.name)
            .field("dims", &self.dims)
            .field("constants", &self.constants)
            .field("classification", &self.classification.name())
            .field("forward", &self.forward.as_ref().map(|fw| fw.x0.clone()))
            .field("terminal_bound", &self.terminal_bound)
            .field("truncation", &self.truncation)
            .finish()
    }
}

impl QuadraticBsdeProblem {
    pub fn new(
        name: impl Into<String>,
        dims: Dimensions,
        terminal: Arc<dyn Terminal>,
        generator: Arc<dyn Generator>,
        constants: StructuralConstants,
    ) -> Result<Self> {
        dims.validate()?;
        constants.validate()?;
        Ok(Self {
            name: name.into(),
            dims,
            terminal,
            generator,
            constants,
            classification: Classification::General,
            forward: None,
            terminal_bound: None,
            truncation: None,
            expected: BTreeMap::new(),
        })
    }

    pub fn with_classification(mut self, classification: Classification) -> Self {
        self.classification = classification;
        self
    }

    pub fn with_terminal_bound(mut self, bound: Vec<f64>) -> Self {
        self.terminal_bound = Some(bound);
        self
    }

    pub fn with_forward(mut self, forward: ForwardSde) -> Self {
        self.forward = Some(forward);
        self.classification = match self.classification {
            Classification::General => Classification::Markovian,
            other => other,
        };
        self
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.dims = self.dims.with_steps(steps);
        self
    }

    /// Euclidean norm of the declared terminal bound.
    pub fn terminal_sup(&self) -> Option<f64> {
        self.terminal_bound
            .as_ref()
            .map(|b| b.iter().map(|x| x * x).sum::<f64>().sqrt())
    }

    /// Global y-Lipschitz constant: `K_y + L_y(M+1)²` after localization,
    /// `K_y` for a raw generator with `L_y = 0`, otherwise infinite.
    pub fn y_lipschitz(&self) -> f64 {
        let c = &self.constants;
        match self.truncation {
            Some(m) => c.k_y + c.l_y * (m + 1.0).powi(2),
            None if c.l_y == 0.0 => c.k_y,
            None => f64::INFINITY,
        }
    }

    /// Global z-Lipschitz constant: `K_z + 2L_z(M+1)` after localization.
    pub fn z_lipschitz(&self) -> f64 {
        let c = &self.constants;
        match self.truncation {
            Some(m) => c.k_z + 2.0 * c.l_z * (m + 1.0),
            None if c.l_z == 0.0 => c.k_z,
            None => f64::INFINITY,
        }
    }

    /// y-Lipschitz constant of the generator restricted to a given `z`:
    /// `K_y + L_y|ρ(z)|²`.
    pub fn local_y_lipschitz(&self, z_norm: f64) -> f64 {
        let c = &self.constants;
        let r = match self.truncation {
            Some(m) => Truncation::new(m).profile(z_norm),
            None => z_norm,
        };
        c.k_y + c.l_y * r * r
    }
}

/// Which backward scheme produced a solution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// `Y_n = E[Y_{n+1}] + f(t_n, Y_n, Z_n)Δt`, solved per node by fixed point.
    #[default]
    StepImplicit,
    /// `Y_n = E[Y_{n+1}] + f(t_n, E[Y_{n+1}], Z_n)Δt`; matches the Euler product representation of linear BSDEs exactly.
    StepExplicit,
    /// Full backward passes with the generator frozen at the previous iterate.
    GlobalPicard,
    /// Global passes with the new iterate in the y-argument and the previous one in the z-argument.
    MonotonePicard,
    /// Diagonal part at the new iterate, coupling part at the previous one.
    DiagonalGlobal,
}

/// Adapted pair `(Y, Z)` plus solver diagnostics.
#[derive(Clone, Debug)]
pub struct BsdeSolution {
    /// ℝ^d on levels 0..=N.
    pub y: AdaptedField,
    /// ℝ^{d×k} on levels 0..N−1.
    pub z: AdaptedField,
    pub picard_iterations: usize,
    pub residual: f64,
    pub z_sup: f64,
    pub truncation: Option<f64>,
    pub scheme: Scheme,
}

impl BsdeSolution {
    pub fn y0(&self) -> &[f64] {
        self.y.at(0, 0)
    }

    pub fn y_sup(&self) -> f64 {
        self.y.sup_norm()
    }
}
