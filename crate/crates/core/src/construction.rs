//! The cutoff `χ`, the glued function `φ_t(·;ζ)`, the form `α_t` and the
//! inflated sublevel domains `G̃_t = {r_t < η}` and `Ĝ_t = {r_t < η̂}`.

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{level_bbox, ray_to_level, BandRegion, ComplexPoint, Family, ParameterValue};
use crate::error::{Error, Result};
use crate::levi::{levi_polynomial, LeviPolynomial, UniformConstantEstimate, MAX_SAFETY};
use crate::sampling::{self, RealBox};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CutoffKind {
    /// `1 − (6x⁵ − 15x⁴ + 10x³)` on the transition interval; C².
    #[default]
    QuinticSmoothstep,
    /// `1 − e^{−1/x}/(e^{−1/x} + e^{−1/(1−x)})`; C^∞.
    ExpMollifier,
}

/// Radial cutoff `χ̂`: 1 on `[0, η₁/2]`, 0 on `[η₁, ∞)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffProfile {
    pub eta1: f64,
    pub kind: CutoffKind,
}

impl CutoffProfile {
    pub fn new(eta1: f64, kind: CutoffKind) -> Result<Self> {
        if !(eta1 > 0.0 && eta1.is_finite()) {
            return Err(Error::InvalidInput(format!("eta1 must be positive, got {eta1}")));
        }
        Ok(CutoffProfile { eta1, kind })
    }

    fn unit(&self, s: f64) -> Option<f64> {
        let half = 0.5 * self.eta1;
        if s <= half {
            None
        } else if s >= self.eta1 {
            Some(1.0)
        } else {
            Some((s - half) / half)
        }
    }

    pub fn value(&self, s: f64) -> f64 {
        let x = match self.unit(s) {
            None => return 1.0,
            Some(x) if x >= 1.0 => return 0.0,
            Some(x) => x,
        };
        match self.kind {
            CutoffKind::QuinticSmoothstep => 1.0 - x * x * x * (10.0 + x * (-15.0 + 6.0 * x)),
            CutoffKind::ExpMollifier => 1.0 - mollifier_step(x),
        }
    }

    /// `dχ̂/ds`.
    pub fn derivative(&self, s: f64) -> f64 {
        let x = match self.unit(s) {
            None => return 0.0,
            Some(x) if x >= 1.0 => return 0.0,
            Some(x) => x,
        };
        let scale = 2.0 / self.eta1;
        match self.kind {
            CutoffKind::QuinticSmoothstep => -30.0 * x * x * (x - 1.0) * (x - 1.0) * scale,
            CutoffKind::ExpMollifier => {
                let st = mollifier_step(x);
                -st * (1.0 - st) * (1.0 / (x * x) + 1.0 / ((1.0 - x) * (1.0 - x))) * scale
            }
        }
    }
}

fn mollifier_step(x: f64) -> f64 {
    // 1/(1 + e^u) with u = 1/x − 1/(1−x)
    let u = 1.0 / x - 1.0 / (1.0 - x);
    if u > 700.0 {
        0.0
    } else {
        1.0 / (1.0 + u.exp())
    }
}

pub fn cutoff(profile: &CutoffProfile, s: f64) -> f64 {
    profile.value(s)
}

/// `φ = χP + (1 − χ)‖z − ζ‖²` for one base point.
#[derive(Clone, Debug)]
pub struct GluedFunction {
    pub poly: LeviPolynomial,
    pub cutoff: CutoffProfile,
}

impl GluedFunction {
    pub fn new(family: &Family, t: ParameterValue, zeta: &[C64], cutoff: CutoffProfile) -> Result<Self> {
        Ok(GluedFunction { poly: levi_polynomial(family, t, zeta)?, cutoff })
    }

    pub fn zeta(&self) -> &ComplexPoint {
        &self.poly.base
    }

    pub fn distance(&self, z: &[C64]) -> f64 {
        sampling::distance(z, &self.poly.base)
    }

    pub fn phi(&self, z: &[C64]) -> C64 {
        let s = self.distance(z);
        let chi = self.cutoff.value(s);
        if chi == 1.0 {
            return self.poly.eval(z);
        }
        let d2 = C64::new(s * s, 0.0);
        if chi == 0.0 {
            return d2;
        }
        self.poly.eval(z) * chi + d2 * (1.0 - chi)
    }

    /// `∂φ/∂z̄_j = χ̂'(s)·δ_j/(2s)·(P − s²) + (1 − χ)·δ_j`.
    pub fn dbar_phi(&self, z: &[C64]) -> Vec<C64> {
        let s = self.distance(z);
        let chi = self.cutoff.value(s);
        let delta: Vec<C64> = z.iter().zip(self.poly.base.iter()).map(|(a, b)| a - b).collect();
        if chi == 1.0 {
            return vec![C64::new(0.0, 0.0); z.len()];
        }
        let dchi = self.cutoff.derivative(s);
        let jump = if dchi != 0.0 { self.poly.eval(z) - s * s } else { C64::new(0.0, 0.0) };
        delta
            .iter()
            .map(|d| jump * (dchi / (2.0 * s)) * d + d * (1.0 - chi))
            .collect()
    }

    /// `α_j = −(∂φ/∂z̄_j)/φ²` outside `B(ζ, η₁/2)`, zero inside.
    pub fn alpha(&self, z: &[C64]) -> Result<Vec<C64>> {
        let s = self.distance(z);
        if s < 0.5 * self.cutoff.eta1 {
            return Ok(vec![C64::new(0.0, 0.0); z.len()]);
        }
        let phi = self.phi(z);
        if phi.norm() == 0.0 {
            return Err(Error::CertificateBreach(format!(
                "phi vanishes at distance {s:.3e} from the base point"
            )));
        }
        let inv = -(phi * phi).inv();
        Ok(self.dbar_phi(z).into_iter().map(|d| d * inv).collect())
    }
}

pub fn phi(family: &Family, t: ParameterValue, zeta: &[C64], z: &[C64], profile: &CutoffProfile) -> Result<C64> {
    family.check_dim(z)?;
    Ok(GluedFunction::new(family, t, zeta, *profile)?.phi(z))
}

pub fn alpha_form(
    family: &Family,
    t: ParameterValue,
    zeta: &[C64],
    z: &[C64],
    profile: &CutoffProfile,
) -> Result<Vec<C64>> {
    family.check_dim(z)?;
    GluedFunction::new(family, t, zeta, *profile)?.alpha(z)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiBoundReport {
    /// `C₂η₁²/8`
    pub threshold: f64,
    /// `min (2Re φ − threshold)` over the checked samples.
    pub min_margin: f64,
    pub samples: usize,
}

/// Checks `2Re φ_t(z;ζ) ≥ C₂η₁²/8` where `‖z−ζ‖ ≥ η₁/2` and `r_t(z) < C₂η₁²/8`.
pub fn check_phi_lower_bound(
    family: &Family,
    band: &BandRegion,
    c2: f64,
    profile: &CutoffProfile,
    per_zeta: usize,
) -> Result<PhiBoundReport> {
    let threshold = c2 * profile.eta1 * profile.eta1 / 8.0;
    let mut work = Vec::new();
    for (ti, t) in band.t_grid.iter().enumerate() {
        for zeta in &band.boundary[ti] {
            work.push((*t, GluedFunction::new(family, *t, zeta, *profile)?));
        }
    }
    let region = level_bbox(family, threshold)?;
    let pts = sampling::halton_in_box(&region, per_zeta, 9);
    let results: Vec<(f64, usize, Option<Vec<C64>>)> = work
        .par_iter()
        .map(|(t, g)| {
            let mut m = f64::INFINITY;
            let mut count = 0;
            let mut worst = None;
            for z in &pts {
                if g.distance(z) < 0.5 * profile.eta1 || family.value(*t, z) >= threshold {
                    continue;
                }
                count += 1;
                let margin = 2.0 * g.phi(z).re - threshold;
                if margin < m {
                    m = margin;
                    worst = Some(z.clone());
                }
            }
            (m, count, worst)
        })
        .collect();
    let samples = results.iter().map(|r| r.1).sum();
    let (min_margin, worst) = results
        .into_iter()
        .fold((f64::INFINITY, None), |acc, r| if r.0 < acc.0 { (r.0, r.2) } else { acc });
    if min_margin < 0.0 {
        return Err(Error::CertificateBreach(format!(
            "2 Re phi falls {:.3e} below C2*eta1^2/8 at {:?}",
            -min_margin, worst
        )));
    }
    Ok(PhiBoundReport { threshold, min_margin, samples })
}

/// `G̃_t = {r_t < η}` and `Ĝ_t = {r_t < η̂}` with one `η` for all `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InflatedDomains {
    pub eta: f64,
    pub eta_hat: f64,
    /// Bounding box of `G̃_t` over the parameter grid.
    pub bbox: RealBox,
    /// Every sampled ray crossed the level `η` exactly once.
    pub star_shaped: bool,
}

impl InflatedDomains {
    pub fn in_closure(&self, family: &Family, t: ParameterValue, z: &[C64]) -> bool {
        family.value(t, z) <= 0.0
    }

    pub fn in_tilde(&self, family: &Family, t: ParameterValue, z: &[C64]) -> bool {
        family.value(t, z) < self.eta
    }

    pub fn in_hat(&self, family: &Family, t: ParameterValue, z: &[C64]) -> bool {
        family.value(t, z) < self.eta_hat
    }
}

/// `η = 0.5·C₂η₁²/8`, `η̂ = η/2`.
pub fn inflate_domains(family: &Family, c2: f64, eta1: f64) -> Result<InflatedDomains> {
    if !(c2 > 0.0 && eta1 > 0.0) {
        return Err(Error::InvalidInput("C2 and eta1 must be positive".into()));
    }
    let eta = 0.5 * c2 * eta1 * eta1 / 8.0;
    let n = family.dimension();
    let center = family.center();
    let dirs = sampling::sphere_directions(n, 32, 5);
    let mut star_shaped = true;
    for t in family.t_grid() {
        for dir in &dirs {
            let s = ray_to_level(family, t, &center, dir, eta)?;
            // sign changes of r − η along the ray up to 1.5 s
            let mut changes = 0;
            let mut prev = family.value(t, &center) - eta;
            for k in 1..=96 {
                let u = 1.5 * s * k as f64 / 96.0;
                let z: Vec<C64> = center.iter().zip(dir).map(|(c, d)| c + d * u).collect();
                let v = family.value(t, &z) - eta;
                if (v >= 0.0) != (prev >= 0.0) {
                    changes += 1;
                }
                prev = v;
            }
            star_shaped &= changes == 1;
        }
    }
    Ok(InflatedDomains { eta, eta_hat: 0.5 * eta, bbox: level_bbox(family, eta)?, star_shaped })
}

/// `C₃ = 1.05·max |α_{t,j}|` over `G̃_t` samples for the given base points.
pub fn estimate_c3(
    family: &Family,
    domains: &InflatedDomains,
    glued: &[(ParameterValue, GluedFunction)],
    per_zeta: usize,
) -> Result<UniformConstantEstimate> {
    let pts = sampling::halton_in_box(&domains.bbox, per_zeta, 10);
    let maxima: Vec<Result<(f64, usize)>> = glued
        .par_iter()
        .map(|(t, g)| {
            let mut m: f64 = 0.0;
            let mut count = 0;
            for z in pts.iter().filter(|z| domains.in_tilde(family, *t, z)) {
                count += 1;
                for a in g.alpha(z)? {
                    m = m.max(a.norm());
                }
            }
            Ok((m, count))
        })
        .collect();
    let mut max: f64 = 0.0;
    let mut samples = 0;
    for r in maxima {
        let (m, c) = r?;
        max = max.max(m);
        samples += c;
    }
    Ok(UniformConstantEstimate {
        value: max * MAX_SAFETY,
        margin: max * (MAX_SAFETY - 1.0),
        samples,
        grid: format!("{} base points x {} box samples", glued.len(), per_zeta),
    })
}
