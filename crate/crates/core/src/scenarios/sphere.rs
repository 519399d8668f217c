//! Martingales on the round sphere in the stereographic chart.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{BsdeError, Result};
use crate::hypotheses::{covariant_hessian, Christoffel, FlatConnection, QuadraticFunction, ScalarFunction};
use crate::model::{
    norm, state_terminal, BsdeSolution, Classification, Dimensions, Generator, NodeCtx, QuadraticBsdeProblem,
    StructuralConstants,
};
use crate::probes::box_points;
use crate::tree::BinomialTree;

const METRIC_STEP: f64 = 1e-5;

/// Christoffel symbols of `g_ij = 4δ_ij/(1+|y|²)²`, from central differences of the metric.
#[derive(Clone, Copy, Debug)]
pub struct SphereChristoffel {
    pub dim: usize,
}

impl SphereChristoffel {
    /// Conformal factor `λ(y)` with `g = λ·I`.
    fn factor(y: &[f64]) -> f64 {
        let s = 1.0 + y.iter().map(|v| v * v).sum::<f64>();
        4.0 / (s * s)
    }
}

impl Christoffel for SphereChristoffel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn symbols(&self, y: &[f64], out: &mut [f64]) {
        let d = self.dim;
        // ∂_l g_ij = δ_ij ∂_l λ; the inverse metric is I/λ.
        let lambda = Self::factor(y);
        let mut p = y.to_vec();
        let mut grad = vec![0.0; d];
        for l in 0..d {
            p[l] = y[l] + METRIC_STEP;
            let up = Self::factor(&p);
            p[l] = y[l] - METRIC_STEP;
            let dn = Self::factor(&p);
            p[l] = y[l];
            grad[l] = (up - dn) / (2.0 * METRIC_STEP);
        }
        let dg = |l: usize, i: usize, j: usize| if i == j { grad[l] } else { 0.0 };
        for k in 0..d {
            for i in 0..d {
                for j in 0..d {
                    out[k * d * d + i * d + j] = 0.5 / lambda * (dg(i, j, k) + dg(j, i, k) - dg(k, i, j));
                }
            }
        }
    }
}

/// `f^k(y, z) = ½ Γ^k_ij(y) z^{(i,:)}·z^{(j,:)}`.
struct ChristoffelGenerator {
    gamma: Arc<dyn Christoffel>,
    k: usize,
}

impl Generator for ChristoffelGenerator {
    fn eval(&self, _ctx: &NodeCtx<'_>, y: &[f64], z: &[f64], out: &mut [f64]) {
        let (d, k) = (y.len(), self.k);
        let mut g = vec![0.0; d * d * d];
        self.gamma.symbols(y, &mut g);
        for (c, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for i in 0..d {
                for j in 0..d {
                    let dot: f64 = (0..k).map(|l| z[i * k + l] * z[j * k + l]).sum();
                    s += g[c * d * d + i * d + j] * dot;
                }
            }
            *o = 0.5 * s;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SphereSpec {
    pub dim: usize,
    /// Terminal points `center + radius·(tanh(W_T^i))_i/√d`.
    pub center: Vec<f64>,
    pub radius: f64,
    /// Chart ball that must contain every terminal point; constants are estimated on it.
    pub chart_radius: f64,
    /// Replace the round metric by the flat one (`Γ ≡ 0`).
    pub flat: bool,
    pub horizon: f64,
    pub steps: usize,
}

impl Default for SphereSpec {
    fn default() -> Self {
        Self {
            dim: 2,
            center: vec![0.0, 0.0],
            radius: 0.2,
            chart_radius: 0.5,
            flat: false,
            horizon: 1.0,
            steps: 16,
        }
    }
}

pub struct SphereScenario {
    pub problem: QuadraticBsdeProblem,
    pub christoffel: Arc<dyn Christoffel>,
    /// Squared chart distance to the center, restricted to the terminal ball.
    pub test_function: QuadraticFunction,
    /// `max |Γ^k_ij − Γ^k_ji|` over the probe grid.
    pub symmetry_residual: f64,
}

/// Builds the manifold-valued martingale problem with `k = d`.
///
/// `L_z = ½ max ‖Γ‖` and `L_y = ½ max ‖∂Γ‖` (Frobenius norms over a probe grid of the chart ball,
/// with 10% headroom), so `|Γ^k_ij| ≤ 2L_z` there.
pub fn make_sphere_martingale(spec: &SphereSpec) -> Result<SphereScenario> {
    let d = spec.dim;
    if spec.center.len() != d || !(spec.radius >= 0.0) || !(spec.chart_radius > 0.0) {
        return Err(BsdeError::Config(format!(
            "sphere scenario needs a center of length {d}, radius >= 0 and chart_radius > 0"
        )));
    }
    if norm(&spec.center) + spec.radius > spec.chart_radius {
        return Err(BsdeError::Contract(format!(
            "terminal ball |center| + radius = {} leaves the chart ball of radius {}",
            norm(&spec.center) + spec.radius,
            spec.chart_radius
        )));
    }
    let dims = Dimensions::new(d, d, spec.horizon, spec.steps)?;
    let christoffel: Arc<dyn Christoffel> = if spec.flat {
        Arc::new(FlatConnection(d))
    } else {
        Arc::new(SphereChristoffel { dim: d })
    };

    let probes: Vec<Vec<f64>> = box_points(d, 1000, 0, &vec![spec.chart_radius; d])
        .into_iter()
        .filter(|y| norm(y) <= spec.chart_radius)
        .collect();
    let (mut sup_gamma, mut sup_dgamma, mut asym): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut g = vec![0.0; d * d * d];
    let (mut up, mut dn) = (g.clone(), g.clone());
    for y in &probes {
        christoffel.symbols(y, &mut g);
        sup_gamma = sup_gamma.max(norm(&g));
        for k in 0..d {
            for i in 0..d {
                for j in 0..d {
                    asym = asym.max((g[k * d * d + i * d + j] - g[k * d * d + j * d + i]).abs());
                }
            }
        }
        let mut p = y.clone();
        let mut dsq = 0.0;
        for l in 0..d {
            p[l] = y[l] + 1e-4;
            christoffel.symbols(&p, &mut up);
            p[l] = y[l] - 1e-4;
            christoffel.symbols(&p, &mut dn);
            p[l] = y[l];
            dsq += up.iter().zip(&dn).map(|(a, b)| ((a - b) / 2e-4).powi(2)).sum::<f64>();
        }
        sup_dgamma = sup_dgamma.max(dsq.sqrt());
    }
    let constants = StructuralConstants::lipschitz(0.0, 0.55 * sup_dgamma, 0.0, 0.55 * sup_gamma);

    let (center, r) = (spec.center.clone(), spec.radius / (d as f64).sqrt());
    let terminal = state_terminal(move |w, out| {
        for (i, o) in out.iter_mut().enumerate() {
            *o = center[i] + r * w[i].tanh();
        }
    });
    let generator = Arc::new(ChristoffelGenerator {
        gamma: christoffel.clone(),
        k: d,
    });
    let bound: Vec<f64> = spec.center.iter().map(|c| c.abs() + r).collect();
    let mut problem = QuadraticBsdeProblem::new("sphere", dims, terminal, generator, constants)?
        .with_classification(Classification::Manifold)
        .with_terminal_bound(bound);
    problem.expected.insert("gamma_sup".into(), sup_gamma);
    problem.expected.insert("symmetry_residual".into(), asym);
    let test_function = QuadraticFunction::new(spec.center.clone(), 1.0, 0.0).on_ball(spec.radius);
    Ok(SphereScenario {
        problem,
        christoffel,
        test_function,
        symmetry_residual: asym,
    })
}

/// `max_node |E[F(Y_{n+1}) | node] − F(Y_n) − ½ Σ_l ∇dF(Y_n)(Z^{(:,l)}, Z^{(:,l)}) Δt|`.
pub fn martingale_property_test(
    solution: &BsdeSolution,
    f: &dyn ScalarFunction,
    christoffel: &dyn Christoffel,
    tree: &BinomialTree,
) -> Result<f64> {
    let (d, k) = (solution.y.rows(), tree.dims().k);
    let dt = tree.dt();
    let mut worst: f64 = 0.0;
    for n in 0..tree.steps() {
        let fy: Vec<f64> = solution.y.level(n + 1).chunks(d).map(|y| f.value(y)).collect();
        let expected = tree.condexp_level(n, &fy, 1);
        for (node, e) in expected.iter().enumerate() {
            let y = solution.y.at(n, node);
            let z = solution.z.at(n, node);
            let h = covariant_hessian(f, christoffel, y);
            let mut quad = 0.0;
            for l in 0..k {
                for i in 0..d {
                    for j in 0..d {
                        quad += h[i * d + j] * z[i * k + l] * z[j * k + l];
                    }
                }
            }
            let r = (e - f.value(y) - 0.5 * quad * dt).abs();
            if !r.is_finite() {
                return Err(BsdeError::NonFinite { level: n, node });
            }
            worst = worst.max(r);
        }
    }
    Ok(worst)
}
