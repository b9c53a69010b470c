//! Levi forms, Levi polynomials and the grid estimates of `C₁`, `(C₂, ε₂)` and `C₅`.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{evaluate_defining, BandRegion, ComplexPoint, DefiningSample, Family, ParameterValue};
use crate::error::{Error, Result};
use crate::sampling;

/// Largest value reported for `C₁`; the construction needs `C₁ < 1`.
pub const C1_CAP: f64 = 0.99;
/// Safety factor applied to grid maxima.
pub const MAX_SAFETY: f64 = 1.05;
/// Lower limit of the `C₂` search.
pub const C2_FLOOR: f64 = 1e-3;

/// `Re Σ L_ij X_i X̄_j`.
pub fn levi_form(sample: &DefiningSample, x: &[C64]) -> Result<f64> {
    let n = sample.dimension();
    if x.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: x.len() });
    }
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            acc += sample.levi[(i, j)] * x[i] * x[j].conj();
        }
    }
    Ok(acc.re)
}

/// `P(z;ζ) = −Σ a_j δ_j − ½ Σ b_ij δ_i δ_j` with `δ = z − ζ`.
#[derive(Clone, Debug, PartialEq)]
pub struct LeviPolynomial {
    pub base: ComplexPoint,
    pub linear: Vec<C64>,
    pub quadratic: DMatrix<C64>,
}

impl LeviPolynomial {
    pub fn from_sample(base: ComplexPoint, sample: &DefiningSample) -> Self {
        LeviPolynomial { base, linear: sample.grad_z.clone(), quadratic: sample.hess_zz.clone() }
    }

    pub fn dimension(&self) -> usize {
        self.linear.len()
    }

    pub fn eval(&self, z: &[C64]) -> C64 {
        let n = self.dimension();
        let mut lin = C64::new(0.0, 0.0);
        let mut quad = C64::new(0.0, 0.0);
        for i in 0..n {
            let di = z[i] - self.base[i];
            lin += self.linear[i] * di;
            for j in 0..n {
                quad += self.quadratic[(i, j)] * di * (z[j] - self.base[j]);
            }
        }
        -lin - quad * 0.5
    }

    /// `∂P/∂z_j`.
    pub fn gradient(&self, z: &[C64]) -> Vec<C64> {
        let n = self.dimension();
        (0..n)
            .map(|j| {
                let mut g = -self.linear[j];
                for i in 0..n {
                    g -= self.quadratic[(i, j)] * (z[i] - self.base[i]);
                }
                g
            })
            .collect()
    }
}

pub fn levi_polynomial(family: &Family, t: ParameterValue, zeta: &[C64]) -> Result<LeviPolynomial> {
    let s = evaluate_defining(family, t, zeta)?;
    Ok(LeviPolynomial::from_sample(ComplexPoint::from(zeta.to_vec()), &s))
}

/// `r(z) − [r(ζ) − 2Re P(z;ζ) + L_r(ζ; z−ζ)]`, the third-order Taylor remainder at `ζ`.
pub fn taylor_residual(family: &Family, t: ParameterValue, zeta: &[C64], z: &[C64]) -> Result<f64> {
    family.check_dim(z)?;
    let s = evaluate_defining(family, t, zeta)?;
    let p = LeviPolynomial::from_sample(ComplexPoint::from(zeta.to_vec()), &s);
    let delta: Vec<C64> = z.iter().zip(zeta).map(|(a, b)| a - b).collect();
    let quadratic = levi_form(&s, &delta)?;
    Ok(family.value(t, z) - (s.r - 2.0 * p.eval(z).re + quadratic))
}

/// A constant read off a sample grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformConstantEstimate {
    pub value: f64,
    /// Distance to the violated constraint (gap to 0, or inequality slack).
    pub margin: f64,
    pub samples: usize,
    pub grid: String,
}

/// `C₁`: minimum of the Levi form over band points and unit directions, capped at [`C1_CAP`].
pub fn estimate_c1(family: &Family, band: &BandRegion, direction_count: usize) -> Result<UniformConstantEstimate> {
    let n = family.dimension();
    let dirs = sampling::sphere_directions(n, direction_count.max(1), 0);
    let mut items: Vec<(ParameterValue, &ComplexPoint)> = Vec::new();
    for (ti, t) in band.t_grid.iter().enumerate() {
        items.extend(band.points[ti].iter().map(|z| (*t, z)));
        items.extend(band.boundary[ti].iter().map(|z| (*t, z)));
    }
    let min = items
        .par_iter()
        .map(|(t, z)| {
            let s = family.sample(*t, z);
            dirs.iter()
                .map(|x| levi_form(&s, x).unwrap_or(f64::NAN))
                .fold(f64::INFINITY, f64::min)
        })
        .reduce(|| f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(Error::Degenerate(format!(
            "Levi form minimum {min:.3e} on the band is not positive"
        )));
    }
    Ok(UniformConstantEstimate {
        value: min.min(C1_CAP),
        margin: min,
        samples: items.len() * dirs.len(),
        grid: format!("{} band points x {} directions", items.len(), dirs.len()),
    })
}

/// Slack of the quadratic lower bound: `r(z) + 2Re P(z;ζ) − C₂‖z−ζ‖²`.
pub fn quadratic_bound_margin(family: &Family, t: ParameterValue, poly: &LeviPolynomial, z: &[C64], c2: f64) -> f64 {
    let d2: f64 = z.iter().zip(poly.base.iter()).map(|(a, b)| (a - b).norm_sqr()).sum();
    family.value(t, z) + 2.0 * poly.eval(z).re - c2 * d2
}

/// Boundary samples with their Levi polynomials, per parameter value.
pub fn boundary_polynomials(family: &Family, band: &BandRegion) -> Result<Vec<(ParameterValue, LeviPolynomial)>> {
    let mut out = Vec::new();
    for (ti, t) in band.t_grid.iter().enumerate() {
        for zeta in &band.boundary[ti] {
            out.push((*t, levi_polynomial(family, *t, zeta)?));
        }
    }
    Ok(out)
}

fn quadratic_bound_min_margin(family: &Family, polys: &[(ParameterValue, LeviPolynomial)], dirs: &[Vec<C64>], eps: f64, c2: f64) -> f64 {
    polys
        .par_iter()
        .map(|(t, p)| {
            let mut m = f64::INFINITY;
            for k in 1..=8 {
                let rad = eps * k as f64 / 8.0;
                for d in dirs {
                    let z: Vec<C64> = p.base.iter().zip(d).map(|(a, b)| a + b * rad).collect();
                    m = m.min(quadratic_bound_margin(family, *t, p, &z, c2));
                }
            }
            m
        })
        .reduce(|| f64::INFINITY, f64::min)
}

/// Largest grid-validated `(C₂, ε₂)` with `0 < C₂ < C₁`.
///
/// Starts from `C₂ = 0.99·C₁`, `ε = eps_start`. At each `ε` the candidate `C₂`
/// shrinks by 0.9 down to [`C2_FLOOR`]; only then does `ε` shrink by 0.8.
/// The reported `ε₂` is 0.95 of the validated radius.
pub fn estimate_c2_eps2(
    family: &Family,
    band: &BandRegion,
    c1: f64,
    eps_start: f64,
    direction_count: usize,
) -> Result<(UniformConstantEstimate, UniformConstantEstimate)> {
    if !(c1 > 0.0) {
        return Err(Error::InvalidInput(format!("C1 must be positive, got {c1}")));
    }
    let polys = boundary_polynomials(family, band)?;
    let dirs = sampling::sphere_directions(family.dimension(), direction_count.max(4), 3);
    let samples = polys.len() * dirs.len() * 8;
    let mut eps = eps_start;
    while eps > 1e-3 {
        let mut c2 = 0.99 * c1;
        while c2 >= C2_FLOOR {
            let margin = quadratic_bound_min_margin(family, &polys, &dirs, eps, c2);
            if margin >= 0.0 {
                let grid = format!("{} boundary points x {} directions x 8 radii", polys.len(), dirs.len());
                return Ok((
                    UniformConstantEstimate { value: c2, margin, samples, grid: grid.clone() },
                    UniformConstantEstimate { value: 0.95 * eps, margin: 0.05 * eps, samples, grid },
                ));
            }
            c2 *= 0.9;
        }
        eps *= 0.8;
    }
    Err(Error::Degenerate("no (C2, eps2) pair above the floor satisfies the quadratic lower bound".into()))
}

/// `C₅`: `max |P(z;ζ)|/‖z−ζ‖` over boundary `ζ` and band `z` at the same `t`, times 1.05.
pub fn estimate_c5(family: &Family, band: &BandRegion) -> Result<UniformConstantEstimate> {
    let mut work: Vec<(LeviPolynomial, &[ComplexPoint])> = Vec::new();
    for (ti, t) in band.t_grid.iter().enumerate() {
        for zeta in &band.boundary[ti] {
            work.push((levi_polynomial(family, *t, zeta)?, &band.points[ti]));
        }
    }
    let (ratio, count) = work
        .par_iter()
        .map(|(p, pts)| {
            let mut m: f64 = 0.0;
            let mut c = 0usize;
            for z in pts.iter() {
                let d = sampling::distance(z, &p.base);
                if d > 1e-12 {
                    m = m.max(p.eval(z).norm() / d);
                    c += 1;
                }
            }
            (m, c)
        })
        .reduce(|| (0.0, 0), |a, b| (a.0.max(b.0), a.1 + b.1));
    Ok(UniformConstantEstimate {
        value: ratio * MAX_SAFETY,
        margin: ratio * (MAX_SAFETY - 1.0),
        samples: count,
        grid: format!("{} boundary points x band points", work.len()),
    })
}
