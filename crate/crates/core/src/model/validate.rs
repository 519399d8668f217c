use serde::Serialize;

use crate::model::field::norm;
use crate::model::problem::{Classification, Generator, NodeCtx, QuadraticBsdeProblem};
use crate::probes::{to_box, Halton, ProbeConfig};

/// A sampled probe at which a structural inequality failed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub inequality: String,
    pub t: f64,
    pub y: Vec<f64>,
    pub y_alt: Vec<f64>,
    pub z: Vec<f64>,
    pub z_alt: Vec<f64>,
    pub lhs: f64,
    pub rhs: f64,
}

const REL_TOL: f64 = 1e-9;
const ABS_TOL: f64 = 1e-12;

fn exceeds(lhs: f64, rhs: f64) -> bool {
    !(lhs <= rhs * (1.0 + REL_TOL) + ABS_TOL)
}

struct Probe {
    t: f64,
    y: Vec<f64>,
    y_alt: Vec<f64>,
    z: Vec<f64>,
    z_alt: Vec<f64>,
}

impl Probe {
    fn violation(&self, inequality: &str, lhs: f64, rhs: f64) -> Violation {
        Violation {
            inequality: inequality.to_string(),
            t: self.t,
            y: self.y.clone(),
            y_alt: self.y_alt.clone(),
            z: self.z.clone(),
            z_alt: self.z_alt.clone(),
            lhs,
            rhs,
        }
    }
}

fn probes(problem: &QuadraticBsdeProblem, cfg: &ProbeConfig) -> Vec<Probe> {
    let d = problem.dims.d;
    let dk = d * problem.dims.k;
    let dim = 1 + 2 * d + 2 * dk;
    Halton::new(dim, cfg.seed)
        .take(cfg.count)
        .map(|u| {
            let mut it = u.into_iter();
            let t = it.next().unwrap() * problem.dims.horizon;
            let mut take = |n: usize, r: f64| -> Vec<f64> { (0..n).map(|_| to_box(it.next().unwrap(), r)).collect() };
            let y = take(d, cfg.y_radius);
            let y_alt = take(d, cfg.y_radius);
            let z = take(dk, cfg.z_radius);
            let z_alt = take(dk, cfg.z_radius);
            Probe { t, y, y_alt, z, z_alt }
        })
        .collect()
}

fn eval(g: &dyn Generator, t: f64, state: &[f64], y: &[f64], z: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; y.len()];
    g.eval(&NodeCtx::at_time(t, state), y, z, &mut out);
    out
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Sampled check of the structural Lipschitz inequalities on a Halton probe grid.
///
/// Returns every probe at which an inequality (or finiteness) fails; an empty list means no
/// probe refuted the declared constants.
pub fn validate_problem(problem: &QuadraticBsdeProblem, cfg: &ProbeConfig) -> Vec<Violation> {
    let c = &problem.constants;
    let state_dim = problem.forward.as_ref().map_or(problem.dims.k, |f| f.dim());
    let state = vec![0.0; state_dim];
    let f = problem.generator.as_ref();
    let mut out = Vec::new();

    for p in probes(problem, cfg) {
        let f0 = eval(f, p.t, &state, &p.y, &p.z);
        let fy = eval(f, p.t, &state, &p.y_alt, &p.z);
        let fz = eval(f, p.t, &state, &p.y, &p.z_alt);
        if f0.iter().chain(&fy).chain(&fz).any(|v| !v.is_finite()) {
            out.push(p.violation("finite generator", f64::NAN, 0.0));
            continue;
        }
        let zn = norm(&p.z);
        let lhs = dist(&f0, &fy);
        let rhs = (c.k_y + c.l_y * zn * zn) * dist(&p.y, &p.y_alt);
        if exceeds(lhs, rhs) {
            out.push(p.violation("y-Lipschitz: |f(y,z)-f(y',z)| <= (K_y + L_y|z|^2)|y-y'|", lhs, rhs));
        }
        let lhs = dist(&f0, &fz);
        let rhs = (c.k_z + c.l_z * (zn + norm(&p.z_alt))) * dist(&p.z, &p.z_alt);
        if exceeds(lhs, rhs) {
            out.push(p.violation("z-Lipschitz: |f(y,z)-f(y,z')| <= (K_z + L_z(|z|+|z'|))|z-z'|", lhs, rhs));
        }
        if let Classification::Diagonal(parts) = &problem.classification {
            check_diagonal_probe(
                problem,
                parts.f_diag.as_ref(),
                parts.g.as_ref(),
                &state,
                &p,
                &f0,
                &mut out,
            );
        }
    }
    out
}

fn check_diagonal_probe(
    problem: &QuadraticBsdeProblem,
    f_diag: &dyn Generator,
    g: &dyn Generator,
    state: &[f64],
    p: &Probe,
    f0: &[f64],
    out: &mut Vec<Violation>,
) {
    let (d, k) = (problem.dims.d, problem.dims.k);
    let base = eval(f_diag, p.t, state, &p.y, &p.z);
    let coupling = eval(g, p.t, state, &p.y, &p.z);
    let split = f0
        .iter()
        .zip(base.iter().zip(&coupling))
        .map(|(f, (a, b))| (f - a - b).abs())
        .fold(0.0, f64::max);
    if exceeds(split, 0.0) {
        out.push(p.violation("diagonal split: f = f_diag + g", split, 0.0));
    }
    for i in 0..d {
        // Swap every row except i for the alternative probe.
        let mut z = p.z_alt.clone();
        z[i * k..(i + 1) * k].copy_from_slice(&p.z[i * k..(i + 1) * k]);
        let moved = eval(f_diag, p.t, state, &p.y_alt, &z);
        let lhs = (moved[i] - base[i]).abs();
        if exceeds(lhs, 0.0) {
            out.push(p.violation(
                "diagonal structure: f_diag^i depends on z only through z^(i,:)",
                lhs,
                0.0,
            ));
        }
    }
}
