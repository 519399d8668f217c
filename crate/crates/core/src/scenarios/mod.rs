//! Named problem builders, each carrying the a-priori bounds it is expected to satisfy.

mod markovian;
mod sphere;

use std::sync::Arc;

pub use markovian::{
    ellipticity_bounds, holder_constant, line_grid, make_markovian, regularity_probe, restart, MarkovianScenario,
    MarkovianSpec, RegularityProbe,
};
pub use sphere::{make_sphere_martingale, martingale_property_test, SphereChristoffel, SphereScenario, SphereSpec};

use crate::error::{BsdeError, Result};
use crate::hypotheses::quadratic_bmo_sq_bound;
use crate::model::{
    generator, norm_sq, state_terminal, Classification, DiagonalConstants, DiagonalParts, Dimensions, GrowthConstants,
    MonotoneConstants, QuadraticBsdeProblem, StructuralConstants, SumGenerator,
};

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(BsdeError::Config(format!("{name} must be positive, got {v}")))
    }
}

/// `ξ^i = scale·tanh(W_T^{i mod k})/√d`, so `|ξ| ≤ scale`.
fn tanh_terminal(d: usize, k: usize, scale: f64) -> Arc<dyn crate::model::Terminal> {
    let c = scale / (d as f64).sqrt();
    state_terminal(move |w, out| {
        for (i, o) in out.iter_mut().enumerate() {
            *o = c * w[i % k].tanh();
        }
    })
}

/// Quadratic-growth generator `f^i = (γ/√d)·cos(yⁱ)·|z|²` (so `|f| ≤ γ|z|²`) with
/// `ξ^i = xi_scale·tanh(W_T^{i mod k})/√d` (so `‖ξ‖ ≤ xi_scale`).
///
/// Structural constants: `L_y = γ/√d`, `L_z = γ`. Expected bounds: `bmo_sq`, `bmo`, `y_sup` from the
/// (HQ) formulas when `32γ²xi_scale² ≤ 1`.
pub fn make_tevzadze(
    d: usize,
    k: usize,
    gamma: f64,
    xi_scale: f64,
    horizon: f64,
    steps: usize,
) -> Result<QuadraticBsdeProblem> {
    positive("gamma", gamma)?;
    if !(xi_scale >= 0.0) {
        return Err(BsdeError::Config("xi_scale must be nonnegative".into()));
    }
    let dims = Dimensions::new(d, k, horizon, steps)?;
    let c = gamma / (d as f64).sqrt();
    let f = generator(move |_, y: &[f64], z: &[f64], out: &mut [f64]| {
        let q = norm_sq(z);
        for (o, yi) in out.iter_mut().zip(y) {
            *o = c * yi.cos() * q;
        }
    });
    let mut constants = StructuralConstants::lipschitz(0.0, c, 0.0, gamma);
    constants.growth = Some(GrowthConstants {
        gamma: Some(gamma),
        ..Default::default()
    });
    let mut p = QuadraticBsdeProblem::new("tevzadze", dims, tanh_terminal(d, k, xi_scale), f, constants)?
        .with_terminal_bound(vec![xi_scale / (d as f64).sqrt(); d]);
    if let Some(b) = quadratic_bmo_sq_bound(gamma, xi_scale) {
        p.expected.insert("bmo_sq".into(), b);
        p.expected.insert("bmo".into(), b.sqrt());
        p.expected.insert("y_sup".into(), xi_scale + gamma * b);
    }
    Ok(p)
}

/// `f(y,z) = −μy + γ·(y/(1+|y|))·|z|² + α·y/(1+|y|)`, which satisfies
/// `y·f ≤ α|y| − μ|y|² + γ|y||z|²`, with the same terminal as [`make_tevzadze`].
///
/// Constants: `K_y = μ + α`, `L_y = γ`, `L_z = γ`. Expected: `A = max(‖ξ‖, α/μ)` and, when
/// `32γ²A² ≤ 1`, the discounted BMO² bound and the `y_sup` bound.
#[allow(clippy::too_many_arguments)]
pub fn make_monotone(
    d: usize,
    k: usize,
    alpha_mon: f64,
    mu: f64,
    gamma_mon: f64,
    xi_scale: f64,
    horizon: f64,
    steps: usize,
) -> Result<QuadraticBsdeProblem> {
    positive("mu", mu)?;
    if !(alpha_mon >= 0.0 && gamma_mon >= 0.0 && xi_scale >= 0.0) {
        return Err(BsdeError::Config(
            "alpha_mon, gamma_mon and xi_scale must be nonnegative".into(),
        ));
    }
    let dims = Dimensions::new(d, k, horizon, steps)?;
    let f = generator(move |_, y: &[f64], z: &[f64], out: &mut [f64]| {
        let s = 1.0 / (1.0 + norm_sq(y).sqrt());
        let q = norm_sq(z);
        for (o, yi) in out.iter_mut().zip(y) {
            *o = -mu * yi + (gamma_mon * q + alpha_mon) * yi * s;
        }
    });
    let mut constants = StructuralConstants::lipschitz(mu + alpha_mon, gamma_mon, 0.0, gamma_mon);
    constants.monotone = Some(MonotoneConstants {
        alpha_mon,
        mu,
        gamma_mon,
    });
    let mut p = QuadraticBsdeProblem::new("monotone", dims, tanh_terminal(d, k, xi_scale), f, constants)?
        .with_terminal_bound(vec![xi_scale / (d as f64).sqrt(); d]);
    let a = xi_scale.max(alpha_mon / mu);
    p.expected.insert("A".into(), a);
    if let Some(b) = quadratic_bmo_sq_bound(gamma_mon, a) {
        p.expected.insert("discounted_bmo_sq".into(), b);
        p.expected.insert(
            "y_sup".into(),
            2.0 * gamma_mon * b + (2.0 * a * a + 4.0 * gamma_mon * gamma_mon * b * b).sqrt(),
        );
    }
    Ok(p)
}

/// Diagonal quadratic problem with `k = d`: `f_diag^i = G_d|z^{(i,:)}|²`,
/// `g^i = (G/√d)·sin(y^{(i+1) mod d})·|z|²` (so `|g| ≤ G|z|²`), `ξ^i = level_i·tanh(W_T^i)`.
///
/// Constants: `L_d = G_d`, `L_dy = G/√d`, `L_dz = G`, `L_y = G/√d`, `L_z = G_d + G`. Expected: the
/// relation value, and the BMO and `y_sup` bounds.
pub fn make_diagonal(
    d: usize,
    g_d: f64,
    g: f64,
    xi_levels: &[f64],
    horizon: f64,
    steps: usize,
) -> Result<QuadraticBsdeProblem> {
    positive("G_d", g_d)?;
    if !(g >= 0.0) || xi_levels.len() != d || xi_levels.iter().any(|x| !(*x >= 0.0)) {
        return Err(BsdeError::Config(format!(
            "diagonal scenario needs G >= 0 and {d} nonnegative terminal levels"
        )));
    }
    let dims = Dimensions::new(d, d, horizon, steps)?;
    let f_diag = generator(move |_, _, z: &[f64], out: &mut [f64]| {
        for (i, o) in out.iter_mut().enumerate() {
            *o = g_d * norm_sq(&z[i * d..(i + 1) * d]);
        }
    });
    let c = g / (d as f64).sqrt();
    let coupling = generator(move |_, y: &[f64], z: &[f64], out: &mut [f64]| {
        let q = norm_sq(z);
        for (i, o) in out.iter_mut().enumerate() {
            *o = c * y[(i + 1) % d].sin() * q;
        }
    });
    let levels = xi_levels.to_vec();
    let terminal = state_terminal(move |w, out| {
        for (i, o) in out.iter_mut().enumerate() {
            *o = levels[i] * w[i].tanh();
        }
    });
    let mut constants = StructuralConstants::lipschitz(0.0, c, 0.0, g_d + g);
    constants.diagonal = Some(DiagonalConstants {
        l_d: g_d,
        k_dy: 0.0,
        l_dy: c,
        k_dz: 0.0,
        l_dz: g,
    });
    constants.growth = Some(GrowthConstants {
        gamma: None,
        g_d: Some(g_d),
        g: Some(g),
    });
    let generator = Arc::new(SumGenerator(f_diag.clone(), coupling.clone()));
    let mut p = QuadraticBsdeProblem::new("diagonal", dims, terminal, generator, constants)?
        .with_classification(Classification::Diagonal(DiagonalParts { f_diag, g: coupling }))
        .with_terminal_bound(xi_levels.to_vec());
    let relation = 4.0 * xi_levels.iter().map(|x| (2.0 * g_d * x).exp()).sum::<f64>() / g_d * g;
    p.expected.insert("relation".into(), relation);
    p.expected.insert(
        "bmo".into(),
        if g == 0.0 {
            f64::INFINITY
        } else {
            (4.0 * g_d * g).powf(-0.5)
        },
    );
    let xi = xi_levels.iter().map(|x| x * x).sum::<f64>().sqrt();
    p.expected.insert(
        "y_sup".into(),
        xi + (d as f64).sqrt() * std::f64::consts::LN_2 / (2.0 * g_d),
    );
    Ok(p)
}
