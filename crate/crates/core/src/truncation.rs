//! Smooth radial truncation `ρ^M(z) = z·h(|z|)/|z|` and the localized generator `f^M(t,y,z) = f(t,y,ρ^M(z))`.
//!
//! The profile is `h(r) = r` on `[0, M]` and `h(r) = M + ∫_0^{r−M} (1 − ψ(s/2)) ds` beyond, where `ψ` is the
//! standard `e^{−1/t}` smooth step from 0 to 1 on `[0, 1]`. Hence `0 ≤ h′ ≤ 1`, `h` is C^∞, and since
//! `∫_0^2 (1 − ψ(s/2)) ds = 1`, `h ≡ M + 1` on `[M + 2, ∞)`. Both Jacobian eigenvalues of `ρ^M`
//! (`h′(r)` radially, `h(r)/r` tangentially) lie in `[0, 1]`, so `ρ^M` is 1-Lipschitz.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{BsdeError, Result};
use crate::model::{norm, Classification, DiagonalParts, Generator, NodeCtx, QuadraticBsdeProblem};

/// Width of the transition zone `[M, M + 2]`.
const TRANSITION: f64 = 2.0;

// 8-point Gauss–Legendre rule on [-1, 1].
const GL_NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];
const PANELS: usize = 8;

/// The smooth step: 0 for `x ≤ 0`, 1 for `x ≥ 1`, C^∞ in between.
pub fn smooth_step(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / x).exp();
        let b = (-1.0 / (1.0 - x)).exp();
        a / (a + b)
    }
}

fn slope(s: f64) -> f64 {
    1.0 - smooth_step(s / TRANSITION)
}

/// Composite Gauss–Legendre integral of `f` over `[0, len]`.
fn integrate(f: impl Fn(f64) -> f64, len: f64) -> f64 {
    let width = len / PANELS as f64;
    let half = 0.5 * width;
    let mut acc = 0.0;
    for panel in 0..PANELS {
        let mid = (panel as f64 + 0.5) * width;
        for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
            acc += w * (f(mid - half * x) + f(mid + half * x));
        }
    }
    acc * half
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Truncation {
    pub radius: f64,
}

impl Truncation {
    pub fn new(radius: f64) -> Self {
        assert!(
            radius >= 0.0 && radius.is_finite(),
            "truncation radius must be finite and nonnegative"
        );
        Self { radius }
    }

    /// The radial profile `h`.
    pub fn profile(&self, r: f64) -> f64 {
        let m = self.radius;
        if r <= m {
            return r;
        }
        let s = r - m;
        if s >= TRANSITION {
            return m + 1.0;
        }
        // Past the midpoint integrate the complementary tail, which keeps the plateau accurate.
        if s <= 0.5 * TRANSITION {
            m + integrate(slope, s)
        } else {
            m + 1.0 - integrate(|v| 1.0 - slope(v), TRANSITION - s)
        }
    }

    /// Derivative of the profile.
    pub fn profile_slope(&self, r: f64) -> f64 {
        if r <= self.radius {
            1.0
        } else {
            slope(r - self.radius)
        }
    }

    /// `ρ^M(z)`; returns `z` unchanged (bit for bit) when `|z| ≤ M`.
    pub fn rho(&self, z: &[f64], out: &mut [f64]) {
        let r = norm(z);
        if r <= self.radius {
            out.copy_from_slice(z);
            return;
        }
        let scale = self.profile(r) / r;
        for (o, v) in out.iter_mut().zip(z) {
            *o = v * scale;
        }
    }

    pub fn rho_vec(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; z.len()];
        self.rho(z, &mut out);
        out
    }
}

/// Generator composed with the truncation: `f(t, y, ρ^M(z))`.
pub struct TruncatedGenerator {
    pub inner: Arc<dyn Generator>,
    pub truncation: Truncation,
}

impl Generator for TruncatedGenerator {
    fn eval(&self, ctx: &NodeCtx<'_>, y: &[f64], z: &[f64], out: &mut [f64]) {
        if norm(z) <= self.truncation.radius {
            self.inner.eval(ctx, y, z, out);
        } else {
            let zr = self.truncation.rho_vec(z);
            self.inner.eval(ctx, y, &zr, out);
        }
    }
}

/// Lipschitz constants of a localized generator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LocalizedLipschitz {
    /// `K_y + L_y(M+1)²`.
    pub y: f64,
    /// `K_z + 2L_z(M+1)`.
    pub z: f64,
}

/// Replaces the generator by `f^M`; diagonal parts are truncated alike.
pub fn localized_generator(problem: &QuadraticBsdeProblem, radius: f64) -> Result<QuadraticBsdeProblem> {
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(BsdeError::Config(format!(
            "truncation radius must be finite and >= 0, got {radius}"
        )));
    }
    let truncation = Truncation::new(radius);
    let wrap = |g: &Arc<dyn Generator>| -> Arc<dyn Generator> {
        Arc::new(TruncatedGenerator {
            inner: g.clone(),
            truncation,
        })
    };
    let base = match problem.truncation {
        Some(_) => {
            return Err(BsdeError::Contract("generator is already localized".into()));
        }
        None => problem,
    };
    let mut out = base.clone();
    out.generator = wrap(&base.generator);
    if let Classification::Diagonal(parts) = &base.classification {
        out.classification = Classification::Diagonal(DiagonalParts {
            f_diag: wrap(&parts.f_diag),
            g: wrap(&parts.g),
        });
    }
    out.truncation = Some(radius);
    Ok(out)
}

/// Lipschitz constants reported for `f^M`.
pub fn localized_lipschitz(problem: &QuadraticBsdeProblem, radius: f64) -> LocalizedLipschitz {
    let c = &problem.constants;
    LocalizedLipschitz {
        y: c.k_y + c.l_y * (radius + 1.0).powi(2),
        z: c.k_z + 2.0 * c.l_z * (radius + 1.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generator, state_terminal, Dimensions, StructuralConstants};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn profile_shape() {
        let t = Truncation::new(1.5);
        assert_eq!(t.profile(0.7), 0.7);
        assert_eq!(t.profile(1.5), 1.5);
        assert_eq!(t.profile(3.5), 2.5);
        assert_eq!(t.profile(100.0), 2.5);
        // Transition integrates to exactly one extra unit.
        assert!((t.profile(3.5 - 1e-9) - 2.5).abs() < 1e-12);
        let mut prev = t.profile(1.5);
        for i in 1..=400 {
            let r = 1.5 + i as f64 * 0.01;
            let h = t.profile(r);
            assert!(h >= prev - 1e-14 && h <= 2.5 + 1e-14);
            assert!(h - prev <= 0.01 + 1e-12);
            prev = h;
        }
    }

    #[test]
    fn smooth_step_symmetry() {
        for i in 0..=20 {
            let x = i as f64 / 20.0;
            assert!((smooth_step(x) + smooth_step(1.0 - x) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn rho_examples() {
        let t = Truncation::new(2.0);
        let z = [0.3, -1.1, 0.5, 0.2];
        assert_eq!(t.rho_vec(&z), z.to_vec());
        assert_eq!(t.rho_vec(&[0.0; 3]), vec![0.0; 3]);
        let big = t.rho_vec(&[30.0, 40.0]);
        assert!((norm(&big) - 3.0).abs() < 1e-14);
        assert!((big[0] / big[1] - 0.75).abs() < 1e-14);
    }

    #[test]
    fn jacobian_norm_at_most_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = Truncation::new(1.0);
        let h = 1e-5;
        for _ in 0..1000 {
            let dim = 4;
            let mut z: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = norm(&z).max(1e-12);
            let target = rng.gen_range(0.0..3.0);
            z.iter_mut().for_each(|v| *v *= target / n);
            // Jacobian by central differences, then its largest singular value.
            let mut jac = nalgebra::DMatrix::<f64>::zeros(dim, dim);
            for j in 0..dim {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[j] += h;
                zm[j] -= h;
                let (rp, rm) = (t.rho_vec(&zp), t.rho_vec(&zm));
                for i in 0..dim {
                    jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
                }
            }
            let sv = jac.singular_values().max();
            assert!(sv <= 1.0 + 1e-6, "operator norm {sv} at |z|={target}");
        }
    }

    #[test]
    fn localized_constants_and_bound() {
        let dims = Dimensions::new(1, 1, 1.0, 4).unwrap();
        let p = QuadraticBsdeProblem::new(
            "sq",
            dims,
            state_terminal(|_, o: &mut [f64]| o[0] = 0.0),
            generator(|_, _, z: &[f64], o: &mut [f64]| o[0] = z[0] * z[0]),
            StructuralConstants::lipschitz(0.0, 1.0, 0.0, 1.0),
        )
        .unwrap();
        let lp = localized_generator(&p, 2.0).unwrap();
        assert_eq!(lp.y_lipschitz(), 9.0);
        assert_eq!(localized_lipschitz(&p, 2.0), LocalizedLipschitz { y: 9.0, z: 6.0 });

        let l1 = localized_generator(&p, 1.0).unwrap();
        let mut out = [0.0];
        for i in 0..200 {
            let z = [i as f64 * 0.1 - 10.0];
            l1.generator.eval(&NodeCtx::at_time(0.0, &[0.0]), &[0.0], &z, &mut out);
            assert!(out[0] <= 4.0 + 1e-12);
            if z[0].abs() <= 1.0 {
                assert_eq!(out[0], z[0] * z[0]);
            }
        }
    }

    proptest! {
        #[test]
        fn rho_is_one_lipschitz(
            a in proptest::collection::vec(-6.0f64..6.0, 3),
            b in proptest::collection::vec(-6.0f64..6.0, 3),
            m in 0.0f64..3.0,
        ) {
            let t = Truncation::new(m);
            let (ra, rb) = (t.rho_vec(&a), t.rho_vec(&b));
            let lhs: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let rhs: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            prop_assert!(lhs <= (1.0 + 1e-6) * rhs + 1e-15);
            prop_assert!(norm(&ra) <= m + 1.0 + 1e-12);
        }

        #[test]
        fn larger_radius_agrees_inside(z in proptest::collection::vec(-2.0f64..2.0, 2), m in 3.0f64..5.0, extra in 0.0f64..5.0) {
            let (t1, t2) = (Truncation::new(m), Truncation::new(m + extra));
            prop_assert_eq!(t1.rho_vec(&z), z.clone());
            prop_assert_eq!(t2.rho_vec(&z), z);
        }
    }
}
