//! Independent re-tests of the peak properties, holomorphy of `h`, every
//! certified inequality and the continuity modulus, on fresh random samples.

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::construction::GluedFunction;
use crate::dbar::Backend;
use crate::domain::{level_bbox, project_to_boundary, ray_to_level, Family, ParameterValue};
use crate::error::{Error, Result};
use crate::levi::quadratic_bound_margin;
use crate::peak::{ConstantsCertificate, PeakEvaluator};
use crate::pipeline::Construction;
use crate::sampling::{self, RealBox};

/// Radius of the ball around `ζ` excluded from the peak check.
pub const PEAK_EXCLUSION: f64 = 1e-2;
/// Minimum depth of holomorphy test points inside `Ĝ_t`.
pub const HOLOMORPHY_CLEARANCE: f64 = 0.05;
/// Step of the central differences in the Cauchy–Riemann check.
pub const CR_STEP: f64 = 1e-5;
/// Holomorphy tolerance of the `n = 1` transform.
pub const HOLOMORPHY_TOL_PLANAR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyResult {
    pub name: String,
    /// Slack of the tested inequality; negative on violation.
    pub margin: f64,
    pub samples: usize,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuityRow {
    pub delta: f64,
    pub omega: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuityTable {
    pub t0: f64,
    pub zeta0: Vec<[f64; 2]>,
    pub z0: Vec<[f64; 2]>,
    /// Rows by decreasing `δ`; rows without valid triples are skipped.
    pub rows: Vec<ContinuityRow>,
    pub skipped: Vec<f64>,
    pub nonincreasing: bool,
    pub strictly_decreasing: bool,
    pub alpha_target: f64,
    /// `ω(δ_min) ≤ alpha_target`.
    pub within_target: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub backend: Backend,
    pub residual_max: f64,
    pub residual_mean: f64,
    pub certified: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    /// SHA-256 of the certificate file.
    pub certificate: String,
    pub properties: Vec<PropertyResult>,
    pub continuity: Vec<ContinuityRow>,
    pub continuity_table: ContinuityTable,
    pub solver: SolverSummary,
    pub seed: u64,
    pub version: String,
    pub pass: bool,
}

impl VerificationReport {
    pub fn property(&self, name: &str) -> Option<&PropertyResult> {
        self.properties.iter().find(|p| p.name == name)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HolomorphyStats {
    pub max: f64,
    pub mean: f64,
    pub count: usize,
}

/// `max_j |∂w/∂z̄_j|` by central differences.
pub fn cauchy_riemann_residual(w: &dyn Fn(&[C64]) -> Result<C64>, z: &[C64], step: f64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for j in 0..z.len() {
        let shifted = |d: C64| -> Result<C64> {
            let mut p = z.to_vec();
            p[j] += d;
            w(&p)
        };
        let dx = (shifted(C64::new(step, 0.0))? - shifted(C64::new(-step, 0.0))?) / (2.0 * step);
        let dy = (shifted(C64::new(0.0, step))? - shifted(C64::new(0.0, -step))?) / (2.0 * step);
        worst = worst.max((0.5 * (dx + C64::new(0.0, 1.0) * dy)).norm());
    }
    Ok(worst)
}

/// Cauchy–Riemann residual statistics of `w` over `points`.
pub fn verify_holomorphy(w: &(dyn Fn(&[C64]) -> Result<C64> + Sync), points: &[Vec<C64>], step: f64) -> Result<HolomorphyStats> {
    let res: Vec<f64> = points
        .par_iter()
        .map(|z| cauchy_riemann_residual(w, z, step))
        .collect::<Result<_>>()?;
    let count = res.len();
    let max = res.iter().cloned().fold(0.0, f64::max);
    let mean = if count > 0 { res.iter().sum::<f64>() / count as f64 } else { 0.0 };
    Ok(HolomorphyStats { max, mean, count })
}

/// Running minimum of a slack with its sample count.
#[derive(Clone, Copy, Debug)]
struct Slack {
    min: f64,
    count: usize,
}

impl Slack {
    fn new() -> Self {
        Slack { min: f64::INFINITY, count: 0 }
    }

    fn push(&mut self, v: f64) {
        self.min = self.min.min(v);
        self.count += 1;
    }

    fn merge(self, o: Slack) -> Slack {
        Slack { min: self.min.min(o.min), count: self.count + o.count }
    }
}

const NAMES: [&str; 14] = [
    "peak_value",
    "peak_below_one",
    "lipschitz_at_peak",
    "away_bound",
    "holomorphy",
    "quadratic_lower_bound",
    "phi_lower_bound",
    "c5",
    "c4",
    "c6",
    "c8",
    "re_f_positive",
    "branch_agreement",
    "eta1_below_eps2",
];

struct Regions<'a> {
    family: &'a Family,
    cert: &'a ConstantsCertificate,
    /// Box of `G̃` over the parameter grid.
    tilde_box: &'a RealBox,
    /// Box of `{r < C₂η₁²/8}`.
    phi_box: &'a RealBox,
}

fn rng_for(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64 + 1))
}

/// Draws up to `count` points with `accept`, giving up after `50·count` tries.
fn rejection(rng: &mut ChaCha8Rng, count: usize, mut draw: impl FnMut(&mut ChaCha8Rng) -> Vec<C64>, accept: impl Fn(&[C64]) -> bool) -> Vec<Vec<C64>> {
    let mut out = Vec::with_capacity(count);
    let mut tries = 0;
    while out.len() < count && tries < 50 * count {
        tries += 1;
        let z = draw(rng);
        if accept(&z) {
            out.push(z);
        }
    }
    out
}

/// Closure samples: 80% interior, 20% on the boundary along random rays.
fn closure_samples(rng: &mut ChaCha8Rng, family: &Family, t: ParameterValue, bbox: &RealBox, count: usize) -> Result<Vec<Vec<C64>>> {
    let n_bdry = count / 5;
    let mut out = rejection(rng, count - n_bdry, |r| sampling::random_in_box(r, bbox), |z| family.value(t, z) <= 0.0);
    let center = family.center();
    for _ in 0..n_bdry {
        let dir = sampling::random_direction(rng, family.dimension());
        let s = ray_to_level(family, t, &center, &dir, 0.0)?;
        out.push(center.iter().zip(&dir).map(|(c, d)| c + d * s).collect());
    }
    Ok(out)
}

fn check_evaluator(ev: &PeakEvaluator, reg: &Regions, budget: usize, local: usize, holo: usize, seed: u64, index: usize) -> Result<Vec<Slack>> {
    let family = reg.family;
    let cert = reg.cert;
    let t = ev.t();
    let zeta = ev.zeta().coords().to_vec();
    let n = family.dimension();
    let mut rng = rng_for(seed, index);
    let mut s = vec![Slack::new(); NAMES.len()];
    let dist = |z: &[C64]| sampling::distance(z, &zeta);
    let in_hat = |z: &[C64]| family.value(t, z) < cert.eta_hat;

    // peak_value
    s[0].push(1e-8 - (ev.eval_h(&zeta)? - 1.0).norm());

    // peak_below_one and away_bound, c8 on closure samples
    let closure = closure_samples(&mut rng, family, t, reg.tilde_box, budget)?;
    for z in &closure {
        let d = dist(z);
        if d < PEAK_EXCLUSION {
            continue;
        }
        let h = ev.eval_h(z)?;
        s[1].push(1.0 - h.norm());
    }
    let far = rejection(&mut rng, local, |r| sampling::random_in_box(r, reg.tilde_box), |z| {
        family.value(t, z) <= 0.0 && dist(z) >= cert.eta1
    });
    let far_bdry: Vec<Vec<C64>> = closure.iter().filter(|z| dist(z) >= cert.eta1).take(local / 5).cloned().collect();
    for z in far.iter().chain(&far_bdry) {
        let g = ev.g(z)?;
        s[3].push(cert.d2 - (-g).exp().norm());
        s[10].push(g.re - cert.c8);
    }

    // lipschitz_at_peak and c6 near ζ
    let near = rejection(&mut rng, local, |r| sampling::random_in_ball(r, &zeta, cert.eta2), |z| in_hat(z));
    for z in &near {
        let d = dist(z);
        let g = ev.g(z)?;
        let h = (-g).exp();
        s[2].push(cert.d1 * d * (1.0 + 1e-6) - (1.0 - h).norm());
        s[9].push(cert.c6 * d * (1.0 + 1e-6) - g.norm());
    }

    // holomorphy on interior points of Ĝ_t
    let pts = rejection(&mut rng, holo, |r| sampling::random_in_box(r, reg.tilde_box), |z| {
        let level = family.value(t, z) - cert.eta_hat;
        let grad = sampling::norm(&family.sample(t, z).real_gradient());
        level < 0.0 && -level >= HOLOMORPHY_CLEARANCE * grad
    });
    let w = |z: &[C64]| ev.eval_h(z);
    let hs = verify_holomorphy(&w, &pts, CR_STEP)?;
    let tol = if n == 1 { HOLOMORPHY_TOL_PLANAR } else { 10.0 * cert.solver.residual_tol };
    s[4] = Slack { min: tol - hs.max, count: hs.count };

    // quadratic lower bound on B(ζ, ε₂)
    let poly = &ev.glued().poly;
    for _ in 0..local {
        let z = sampling::random_in_ball(&mut rng, &zeta, cert.eps2);
        s[5].push(quadratic_bound_margin(family, t, poly, &z, cert.c2));
    }

    // lower bound of φ: 2Re φ ≥ C₂η₁²/8 where ‖z−ζ‖ ≥ η₁/2 and r < C₂η₁²/8
    let thr = cert.c2 * cert.eta1 * cert.eta1 / 8.0;
    let glued = GluedFunction::new(family, t, &zeta, cert.cutoff)?;
    let phi_pts = rejection(&mut rng, local, |r| sampling::random_in_box(r, reg.phi_box), |z| {
        family.value(t, z) < thr && dist(z) >= 0.5 * cert.eta1
    });
    for z in &phi_pts {
        s[6].push(2.0 * glued.phi(z).re - thr);
    }

    // |P| ≤ C₅‖z−ζ‖ on Ĝ_t ∩ B(ζ, η₁)
    let mid = rejection(&mut rng, local, |r| sampling::random_in_ball(r, &zeta, cert.eta1), |z| in_hat(z));
    for z in &mid {
        s[7].push(cert.c5 * dist(z) - poly.eval(z).norm());
    }

    // ‖v‖ ≤ C₄ on Ĝ_t
    let hat = rejection(&mut rng, local, |r| sampling::random_in_box(r, reg.tilde_box), |z| in_hat(z));
    for z in &hat {
        s[8].push(cert.c4 - ev.v(z).norm());
    }

    // Re f > 0 on (G̃ \ B(ζ, η₁/2)) ∪ (Ḡ \ {ζ}), evaluated where v is defined
    let tilde = rejection(&mut rng, local, |r| sampling::random_in_box(r, reg.tilde_box), |z| {
        let r = family.value(t, z);
        r < cert.eta && (dist(z) >= 0.5 * cert.eta1 || r <= 0.0)
    });
    for z in tilde.iter().chain(&closure) {
        if dist(z) == 0.0 {
            continue;
        }
        if let Some(f) = ev.f(z) {
            s[11].push(f.re);
        }
    }

    // branch agreement on the overlap annulus
    let ring = rejection(&mut rng, local, |r| sampling::random_in_ball(r, &zeta, cert.eta2), |z| {
        in_hat(z) && dist(z) > 0.5 * cert.eta2
    });
    for z in &ring {
        if ev.glued().phi(z).norm() <= 1e-8 {
            continue;
        }
        s[12].push(1e-6 - (ev.g_near(z) - ev.g_far(z)?).norm());
    }

    s[13].push(cert.eps2 - cert.eta1);
    Ok(s)
}

/// Margins of every property over all evaluators, in the order of `NAMES`.
pub fn verify_bounds(construction: &Construction, seed: u64) -> Result<Vec<PropertyResult>> {
    let cert = &construction.certificate;
    let family = &construction.family;
    let v = &construction.config.verification;
    let phi_box = level_bbox(family, cert.c2 * cert.eta1 * cert.eta1 / 8.0)?;
    let reg = Regions { family, cert, tilde_box: &construction.domains.bbox, phi_box: &phi_box };
    let per: Vec<Vec<Slack>> = construction
        .evaluators
        .par_iter()
        .enumerate()
        .map(|(i, ev)| check_evaluator(ev, &reg, v.sample_budget, v.local_samples, v.holomorphy_points, seed, i))
        .collect::<Result<_>>()?;
    let mut total = vec![Slack::new(); NAMES.len()];
    for s in per {
        for (t, x) in total.iter_mut().zip(s) {
            *t = t.merge(x);
        }
    }
    Ok(NAMES
        .iter()
        .zip(total)
        .map(|(name, s)| {
            // peak_below_one needs a strict gap; the others are non-strict
            let pass = s.count > 0 && if *name == "peak_below_one" { s.min > 0.0 } else { s.min >= 0.0 };
            PropertyResult { name: name.to_string(), margin: s.min, samples: s.count, pass }
        })
        .collect())
}

fn to_pairs(z: &[C64]) -> Vec<[f64; 2]> {
    z.iter().map(|c| [c.re, c.im]).collect()
}

fn from_pairs(p: &[[f64; 2]]) -> Vec<C64> {
    p.iter().map(|[a, b]| C64::new(*a, *b)).collect()
}

/// `ω(δ) = max |h_{t₀}(z₀;ζ₀) − h_s(w;ξ)|` over sampled triples within `δ` of the base.
pub fn continuity_modulus(
    construction: &Construction,
    base: (f64, &[C64], &[C64]),
    deltas: &[f64],
    triples_per_delta: usize,
    alpha_target: f64,
    seed: u64,
) -> Result<ContinuityTable> {
    let family = &construction.family;
    let (t0, zeta_hint, z0) = base;
    let t0v = ParameterValue::real(t0);
    let zeta0 = project_to_boundary(family, t0v, zeta_hint)?.into_inner();
    let ev0 = construction.evaluator_at(t0v, &zeta0)?;
    let h0 = ev0.eval_h(z0)?;
    let [ta, tb] = family.t_range();
    let mut deltas: Vec<f64> = deltas.to_vec();
    deltas.sort_by(|a, b| b.total_cmp(a));

    let mut rng = rng_for(seed, usize::MAX / 2);
    let mut triples: Vec<(f64, Vec<C64>, Vec<C64>, f64)> = Vec::new();
    for &delta in &deltas {
        let mut made = 0;
        let mut tries = 0;
        while made < triples_per_delta && tries < 20 * triples_per_delta {
            tries += 1;
            let s = (t0 + delta * (2.0 * rng.random::<f64>() - 1.0)).clamp(ta, tb);
            let sv = ParameterValue::real(s);
            let start = sampling::random_in_ball(&mut rng, &zeta0, delta);
            let Ok(xi) = project_to_boundary(family, sv, &start) else { continue };
            let xi = xi.into_inner();
            let w = sampling::random_in_ball(&mut rng, z0, delta);
            let dist = (s - t0).abs().max(sampling::distance(&xi, &zeta0)).max(sampling::distance(&w, z0));
            if dist > delta || family.value(sv, &w) >= construction.certificate.eta_hat {
                continue;
            }
            triples.push((s, xi, w, dist));
            made += 1;
        }
    }
    let values: Vec<(f64, f64)> = triples
        .par_iter()
        .map(|(s, xi, w, dist)| {
            let ev = construction.evaluator_at(ParameterValue::real(*s), xi)?;
            Ok((*dist, (ev.eval_h(w)? - h0).norm()))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for &delta in &deltas {
        let within: Vec<f64> = values.iter().filter(|(d, _)| *d <= delta).map(|(_, v)| *v).collect();
        if within.is_empty() {
            skipped.push(delta);
            continue;
        }
        rows.push(ContinuityRow { delta, omega: within.iter().cloned().fold(0.0, f64::max), count: within.len() });
    }
    let nonincreasing = rows.windows(2).all(|w| w[1].omega <= w[0].omega);
    let strictly_decreasing = rows.windows(2).all(|w| w[1].omega < w[0].omega);
    let within_target = rows.last().is_some_and(|r| r.omega <= alpha_target);
    Ok(ContinuityTable {
        t0,
        zeta0: to_pairs(&zeta0),
        z0: to_pairs(z0),
        rows,
        skipped,
        nonincreasing,
        strictly_decreasing,
        alpha_target,
        within_target,
    })
}

/// The continuity base triple from the config, with defaults filled in.
pub fn continuity_base(construction: &Construction) -> Result<(f64, Vec<C64>, Vec<C64>)> {
    let cfg = &construction.config.verification.continuity_base;
    let family = &construction.family;
    let n = family.dimension();
    let [ta, tb] = family.t_range();
    let t0 = cfg.t.unwrap_or(0.5 * (ta + tb));
    let center = family.center();
    let zeta = match &cfg.zeta {
        Some(p) => from_pairs(p),
        None => {
            let mut z = center.clone();
            z[0] += 1.0;
            z
        }
    };
    let z0 = match &cfg.z {
        Some(p) => from_pairs(p),
        None => center,
    };
    if zeta.len() != n || z0.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: zeta.len().min(z0.len()) });
    }
    Ok((t0, zeta, z0))
}

/// Runs every check and assembles the report.
pub fn verify(construction: &Construction, certificate_hash: &str) -> Result<VerificationReport> {
    let v = &construction.config.verification;
    let mut properties = verify_bounds(construction, v.seed)?;
    let (t0, zeta, z0) = continuity_base(construction)?;
    let table = continuity_modulus(construction, (t0, &zeta, &z0), &v.delta_list, v.triples_per_delta, v.alpha_target, v.seed)?;
    let omega_min = table.rows.last().map(|r| r.omega).unwrap_or(f64::INFINITY);
    properties.push(PropertyResult {
        name: "continuity".into(),
        margin: v.alpha_target - omega_min,
        samples: table.rows.first().map(|r| r.count).unwrap_or(0),
        pass: table.nonincreasing && table.within_target,
    });

    let evs = &construction.evaluators;
    let solver = SolverSummary {
        backend: evs.first().map(|e| e.solution().backend).unwrap_or(Backend::CauchyPompeiu),
        residual_max: evs.iter().map(|e| e.solution().residual.max).fold(0.0, f64::max),
        residual_mean: if evs.is_empty() {
            0.0
        } else {
            evs.iter().map(|e| e.solution().residual.mean).sum::<f64>() / evs.len() as f64
        },
        certified: evs.iter().all(|e| e.solution().certified),
    };
    let pass = properties.iter().all(|p| p.pass);
    Ok(VerificationReport {
        certificate: certificate_hash.to_string(),
        properties,
        continuity: table.rows.clone(),
        continuity_table: table,
        solver,
        seed: v.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Vec<Vec<C64>> {
        (0..50).map(|k| vec![C64::from_polar(0.1 + 0.8 * k as f64 / 50.0, 0.37 * k as f64)]).collect()
    }

    #[test]
    fn holomorphic_input_has_no_residual() {
        let w = |z: &[C64]| -> Result<C64> { Ok(z[0] * z[0]) };
        let s = verify_holomorphy(&w, &grid(), CR_STEP).unwrap();
        assert!(s.max <= 1e-9, "{}", s.max);
        assert_eq!(s.count, 50);
    }

    #[test]
    fn antiholomorphic_input_has_unit_residual() {
        let w = |z: &[C64]| -> Result<C64> { Ok(z[0].conj()) };
        let s = verify_holomorphy(&w, &grid(), CR_STEP).unwrap();
        assert!((s.max - 1.0).abs() <= 1e-9 && (s.mean - 1.0).abs() <= 1e-9, "{s:?}");
    }

    #[test]
    fn residual_takes_worst_coordinate() {
        let w = |z: &[C64]| -> Result<C64> { Ok(z[0] + 3.0 * z[1].conj()) };
        let r = cauchy_riemann_residual(&w, &[C64::new(0.1, 0.2), C64::new(-0.3, 0.0)], CR_STEP).unwrap();
        assert!((r - 3.0).abs() < 1e-8);
    }

    #[test]
    fn rng_streams_are_distinct_and_reproducible() {
        let a: f64 = rng_for(7, 0).random();
        let b: f64 = rng_for(7, 1).random();
        let c: f64 = rng_for(7, 0).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }
}
