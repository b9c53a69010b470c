//! Deterministic point sets shared by the construction and verification stages.
//!
//! Construction grids use Halton sequences (nested prefixes, so enlarging a
//! sample never drops points). Verification draws from a seeded ChaCha stream
//! so that it never replays the construction grid.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

const PRIMES: [u32; 24] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
];

/// Index offset separating independent Halton streams.
const STREAM_STRIDE: u64 = 100_003;

/// Radical inverse of `index` in `base`.
pub fn halton(mut index: u64, base: u32) -> f64 {
    let b = base as u64;
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % b) as f64;
        index /= b;
    }
    r
}

fn halton_vector(index: u64, dims: usize) -> Vec<f64> {
    assert!(dims <= PRIMES.len(), "Halton dimension {dims} unsupported");
    (0..dims).map(|d| halton(index, PRIMES[d])).collect()
}

/// Axis-aligned box in real coordinates `(x1, y1, x2, y2, ...)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl RealBox {
    pub fn empty(real_dims: usize) -> Self {
        RealBox {
            lo: vec![f64::INFINITY; real_dims],
            hi: vec![f64::NEG_INFINITY; real_dims],
        }
    }

    pub fn include(&mut self, z: &[C64]) {
        for (j, c) in z.iter().enumerate() {
            for (k, v) in [c.re, c.im].into_iter().enumerate() {
                let i = 2 * j + k;
                self.lo[i] = self.lo[i].min(v);
                self.hi[i] = self.hi[i].max(v);
            }
        }
    }

    /// Grows every side by `rel` times the largest extent plus `abs`.
    pub fn padded(&self, rel: f64, abs: f64) -> Self {
        let pad = rel * self.max_extent() + abs;
        RealBox {
            lo: self.lo.iter().map(|v| v - pad).collect(),
            hi: self.hi.iter().map(|v| v + pad).collect(),
        }
    }

    pub fn max_extent(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| b - a)
            .fold(0.0, f64::max)
    }

    pub fn diagonal(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>()
            .sqrt()
    }

    pub fn complex_dims(&self) -> usize {
        self.lo.len() / 2
    }

    /// Maps a point of the unit cube to the box, as complex coordinates.
    pub fn map_unit(&self, u: &[f64]) -> Vec<C64> {
        (0..self.complex_dims())
            .map(|j| {
                let x = self.lo[2 * j] + u[2 * j] * (self.hi[2 * j] - self.lo[2 * j]);
                let y = self.lo[2 * j + 1] + u[2 * j + 1] * (self.hi[2 * j + 1] - self.lo[2 * j + 1]);
                C64::new(x, y)
            })
            .collect()
    }
}

/// `count` quasi-uniform Halton points in `bbox`, drawn from `stream`.
pub fn halton_in_box(bbox: &RealBox, count: usize, stream: u64) -> Vec<Vec<C64>> {
    let dims = bbox.lo.len();
    (0..count as u64)
        .map(|k| bbox.map_unit(&halton_vector(k + 1 + stream * STREAM_STRIDE, dims)))
        .collect()
}

/// Quasi-uniform unit vectors in `C^n` (the sphere `S^{2n-1}`).
///
/// For `n = 1` this is the angle grid `exp(2πi(k + φ)/count)` where the phase
/// `φ` depends on `stream` (`φ = 0` for stream 0, so four directions give
/// `{1, i, -1, -i}`). For `n ≥ 2` Halton points are pushed through Box–Muller
/// and normalized; prefixes are nested.
pub fn sphere_directions(n: usize, count: usize, stream: u64) -> Vec<Vec<C64>> {
    if n == 1 {
        let phase = if stream == 0 { 0.0 } else { halton(stream, 2) };
        return (0..count)
            .map(|k| {
                let theta = 2.0 * PI * (k as f64 + phase) / count as f64;
                vec![C64::from_polar(1.0, theta)]
            })
            .collect();
    }
    (0..count as u64)
        .map(|k| {
            let u = halton_vector(k + 1 + stream * STREAM_STRIDE, 2 * n);
            let mut v: Vec<C64> = (0..n)
                .map(|j| {
                    let r = (-2.0 * (1.0 - u[2 * j]).ln()).sqrt();
                    C64::from_polar(r, 2.0 * PI * u[2 * j + 1])
                })
                .collect();
            normalize(&mut v);
            v
        })
        .collect()
}

pub fn norm(z: &[C64]) -> f64 {
    z.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

pub fn distance(a: &[C64], b: &[C64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

pub fn normalize(v: &mut [C64]) {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|c| *c /= n);
    }
}

/// Uniformly distributed unit vector in `C^n`.
pub fn random_direction(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
    loop {
        let mut v: Vec<C64> = (0..n)
            .map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        if norm(&v) > 1e-12 {
            normalize(&mut v);
            return v;
        }
    }
}

/// Uniform point of the open ball `B(center, radius)` in `C^n = R^{2n}`.
pub fn random_in_ball(rng: &mut ChaCha8Rng, center: &[C64], radius: f64) -> Vec<C64> {
    let n = center.len();
    let dir = random_direction(rng, n);
    let u: f64 = rng.random();
    let s = radius * u.powf(1.0 / (2 * n) as f64);
    center.iter().zip(&dir).map(|(c, d)| c + d * s).collect()
}

/// Uniform point of `bbox`.
pub fn random_in_box(rng: &mut ChaCha8Rng, bbox: &RealBox) -> Vec<C64> {
    let u: Vec<f64> = (0..bbox.lo.len()).map(|_| rng.random::<f64>()).collect();
    bbox.map_unit(&u)
}
