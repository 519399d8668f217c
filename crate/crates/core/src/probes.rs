//! Deterministic low-discrepancy probe points (Halton sequence) for sampled hypothesis checks.

use serde::{Deserialize, Serialize};

/// Size and extent of a probe grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub count: usize,
    pub y_radius: f64,
    pub z_radius: f64,
    /// Offset into the sequence; different seeds give disjoint point sets.
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            count: 256,
            y_radius: 4.0,
            z_radius: 4.0,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    /// The 10³-point configuration used by the hypothesis checkers.
    pub fn checker() -> Self {
        Self {
            count: 1000,
            ..Self::default()
        }
    }
}

fn primes(count: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(count);
    let mut candidate = 2u64;
    while out.len() < count {
        if out
            .iter()
            .take_while(|p| *p * *p <= candidate)
            .all(|p| !candidate.is_multiple_of(*p))
        {
            out.push(candidate);
        }
        candidate += 1;
    }
    out
}

/// Van der Corput radical inverse of `index` in `base`.
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while index > 0 {
        r += f * (index % base) as f64;
        index /= base;
        f *= inv;
    }
    r
}

/// Halton points in `[0,1)^dim`.
#[derive(Clone, Debug)]
pub struct Halton {
    bases: Vec<u64>,
    next: u64,
}

impl Halton {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self {
            bases: primes(dim),
            next: seed + 1,
        }
    }

    pub fn next_point(&mut self) -> Vec<f64> {
        let idx = self.next;
        self.next += 1;
        self.bases.iter().map(|b| radical_inverse(idx, *b)).collect()
    }
}

impl Iterator for Halton {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        Some(self.next_point())
    }
}

/// Maps a unit-cube coordinate to `[-radius, radius]`.
pub fn to_box(u: f64, radius: f64) -> f64 {
    (2.0 * u - 1.0) * radius
}

/// Collects `count` points of dimension `dim` scaled to per-coordinate radii.
pub fn box_points(dim: usize, count: usize, seed: u64, radii: &[f64]) -> Vec<Vec<f64>> {
    assert_eq!(radii.len(), dim);
    Halton::new(dim, seed)
        .take(count)
        .map(|p| p.iter().zip(radii).map(|(u, r)| to_box(*u, *r)).collect())
        .collect()
}
