//! `f_t = 1/φ_t + C₄ − v_t`, `g_t = 1/f_t` and `h_t = exp(−g_t)`, plus the
//! constants that depend only on earlier ones.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::construction::{CutoffProfile, GluedFunction, InflatedDomains};
use crate::dbar::{solve_dbar, DbarData, DbarProblem, DbarSolution, SolverSettings};
use crate::domain::{ComplexPoint, Family, FamilySpec, ParameterValue};
use crate::error::{Error, Result};
use crate::sampling::{self, RealBox};

/// Every constant of the construction with the grids it was read from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsCertificate {
    pub family: FamilySpec,
    pub cutoff: CutoffProfile,
    pub solver: SolverSettings,
    pub eps1: f64,
    pub eps2: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub eta: f64,
    pub eta_hat: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub c6: f64,
    pub c7: f64,
    pub c8: f64,
    pub d1: f64,
    pub d2: f64,
    pub diam_u: f64,
    /// Factor applied to grid maxima.
    pub max_safety: f64,
    /// Boundary points per `t` at which `∂̄` was solved for `C₄`.
    pub zeta_count: usize,
    /// Every `∂̄` solve met the residual tolerance.
    pub solver_certified: bool,
    pub solver_residual_max: f64,
    pub grids: BTreeMap<String, String>,
    pub notes: BTreeMap<String, String>,
}

impl ConstantsCertificate {
    /// Checks the ordering constraints between the constants.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(0.0 < self.c2 && self.c2 < self.c1 && self.c1 < 1.0) {
            bad.push(format!("0 < C2 < C1 < 1 fails (C1 {}, C2 {})", self.c1, self.c2));
        }
        if !(0.0 < self.eta && self.eta < self.c2 * self.eta1 * self.eta1 / 8.0) {
            bad.push(format!("0 < eta < C2 eta1^2/8 fails (eta {})", self.eta));
        }
        let eta2_cap = (0.5 * self.eta1).min(1.0 / (4.0 * self.c4 * self.c5));
        if !(0.0 < self.eta2 && self.eta2 < eta2_cap) {
            bad.push(format!("0 < eta2 < {eta2_cap} fails (eta2 {})", self.eta2));
        }
        if !(self.d2 < 1.0 && self.d2 > 0.0) {
            bad.push(format!("0 < d2 < 1 fails (d2 {})", self.d2));
        }
        if !(self.d1 > 0.0) {
            bad.push(format!("d1 must be positive (d1 {})", self.d1));
        }
        if !(self.eta1 < self.eps2) {
            bad.push(format!("eta1 {} must be below eps2 {}", self.eta1, self.eps2));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::CertificateBreach(bad.join("; ")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DownstreamConstants {
    pub eta2: f64,
    pub c6: f64,
    pub c7: f64,
    pub c8: f64,
    pub d1: f64,
    pub d2: f64,
}

/// `(e^x − 1)/x`, continuous at 0.
fn exp_ratio(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 + 0.5 * x
    } else {
        x.exp_m1() / x
    }
}

pub fn derive_downstream_constants(eta1: f64, c4: f64, c5: f64, diam_u: f64) -> Result<DownstreamConstants> {
    for (name, v) in [("eta1", eta1), ("C4", c4), ("C5", c5), ("diam_U", diam_u)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
        }
    }
    let eta2 = 0.5 * (0.5 * eta1).min(1.0 / (4.0 * c4 * c5));
    let c6 = c5 / (1.0 - 2.0 * c4 * c5 * eta2);
    let c7 = exp_ratio(c6 * eta2);
    let c8 = eta1 * eta1 / (1.0 + 2.0 * diam_u * diam_u * c4).powi(2);
    Ok(DownstreamConstants { eta2, c6, c7, c8, d1: c6 * c7, d2: (-c8).exp() })
}

/// Right-hand side `α_t(·;ζ)` on `G̃_t = {r_t < η}`.
pub struct PeakData {
    pub family: Family,
    pub t: ParameterValue,
    pub glued: GluedFunction,
    pub eta: f64,
    pub bbox: RealBox,
    /// Offer `1/φ − 1/P` as a particular solution to the collocation solver.
    pub enrichment: bool,
}

impl DbarData for PeakData {
    fn dimension(&self) -> usize {
        self.family.dimension()
    }

    fn level(&self, z: &[C64]) -> f64 {
        self.family.value(self.t, z) - self.eta
    }

    fn level_gradient_norm(&self, z: &[C64]) -> f64 {
        sampling::norm(&self.family.sample(self.t, z).real_gradient())
    }

    fn alpha(&self, z: &[C64]) -> Vec<C64> {
        // φ only vanishes on a null set outside Ḡ_t
        self.glued.alpha(z).unwrap_or_else(|_| vec![C64::new(0.0, 0.0); z.len()])
    }

    fn bbox(&self) -> RealBox {
        self.bbox.clone()
    }

    /// `u = 1/φ − 1/P` vanishes on `B(ζ, η₁/2)` and has `∂̄u = α` wherever `P ≠ 0`.
    fn enrichment(&self, z: &[C64]) -> Option<(C64, Vec<C64>)> {
        if !self.enrichment {
            return None;
        }
        let zero = C64::new(0.0, 0.0);
        if self.glued.distance(z) < 0.5 * self.glued.cutoff.eta1 {
            return Some((zero, vec![zero; z.len()]));
        }
        let p = self.glued.poly.eval(z);
        let phi = self.glued.phi(z);
        if p.norm() < 1e-8 || phi.norm() < 1e-8 {
            return None;
        }
        let alpha = self.glued.alpha(z).ok()?;
        Some((phi.inv() - p.inv(), alpha))
    }
}

/// Solves `∂̄v = α_t(·;ζ)` on `G̃_t`, using `bbox` as the common solver box.
pub fn solve_peak_dbar(
    family: &Family,
    t: ParameterValue,
    glued: &GluedFunction,
    domains: &InflatedDomains,
    settings: &SolverSettings,
) -> Result<DbarSolution> {
    let data = PeakData {
        family: family.clone(),
        t,
        glued: glued.clone(),
        eta: domains.eta,
        bbox: domains.bbox.clone(),
        enrichment: settings.enrichment && family.dimension() > 1,
    };
    solve_dbar(&DbarProblem { data: Arc::new(data), settings: settings.clone() })
}

/// `h_t(·;ζ)` for one parameter value and base point.
#[derive(Clone, Debug)]
pub struct PeakEvaluator {
    family: Family,
    t: ParameterValue,
    glued: GluedFunction,
    solution: Arc<DbarSolution>,
    c4: f64,
    eta2: f64,
    eta_hat: f64,
}

pub fn make_peak_evaluator(
    family: &Family,
    t: ParameterValue,
    zeta: &[C64],
    certificate: &ConstantsCertificate,
    solution: Arc<DbarSolution>,
) -> Result<PeakEvaluator> {
    family.check_dim(zeta)?;
    let glued = GluedFunction::new(family, t, zeta, certificate.cutoff)?;
    Ok(PeakEvaluator {
        family: family.clone(),
        t,
        glued,
        solution,
        c4: certificate.c4,
        eta2: certificate.eta2,
        eta_hat: certificate.eta_hat,
    })
}

impl PeakEvaluator {
    pub fn t(&self) -> ParameterValue {
        self.t
    }

    pub fn zeta(&self) -> &ComplexPoint {
        self.glued.zeta()
    }

    pub fn glued(&self) -> &GluedFunction {
        &self.glued
    }

    pub fn solution(&self) -> &DbarSolution {
        &self.solution
    }

    pub fn eta2(&self) -> f64 {
        self.eta2
    }

    /// Whether `z` lies in `Ĝ_t`.
    pub fn contains(&self, z: &[C64]) -> bool {
        self.family.value(self.t, z) < self.eta_hat
    }

    fn check(&self, z: &[C64]) -> Result<()> {
        self.family.check_dim(z)?;
        let level = self.family.value(self.t, z);
        if !(level < self.eta_hat) {
            return Err(Error::OutsideDomain { level, threshold: self.eta_hat });
        }
        Ok(())
    }

    pub fn v(&self, z: &[C64]) -> C64 {
        self.solution.value(z)
    }

    /// `P/(1 − P(v − C₄))`; regular across the zero set of `P`.
    pub fn g_near(&self, z: &[C64]) -> C64 {
        let p = self.glued.poly.eval(z);
        p / (1.0 - p * (self.v(z) - self.c4))
    }

    /// `f = 1/φ + C₄ − v`, or `None` where `φ = 0`.
    pub fn f(&self, z: &[C64]) -> Option<C64> {
        let phi = self.glued.phi(z);
        if phi.norm() == 0.0 {
            return None;
        }
        Some(phi.inv() + self.c4 - self.v(z))
    }

    /// `1/f`, with the limit 0 where `φ = 0`.
    pub fn g_far(&self, z: &[C64]) -> Result<C64> {
        match self.f(z) {
            None => Ok(C64::new(0.0, 0.0)),
            Some(f) if f.norm() == 0.0 || !f.is_finite() => Err(Error::CertificateBreach(format!(
                "f = {f} at distance {:.3e} from the base point",
                self.glued.distance(z)
            ))),
            Some(f) => Ok(f.inv()),
        }
    }

    /// Near branch inside `B(ζ, η₂)`, far branch elsewhere.
    pub fn g(&self, z: &[C64]) -> Result<C64> {
        self.check(z)?;
        if self.glued.distance(z) < self.eta2 {
            Ok(self.g_near(z))
        } else {
            self.g_far(z)
        }
    }

    pub fn eval_h(&self, z: &[C64]) -> Result<C64> {
        Ok((-self.g(z)?).exp())
    }
}

pub fn eval_h(evaluator: &PeakEvaluator, z: &[C64]) -> Result<C64> {
    evaluator.eval_h(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::construction::{inflate_domains, CutoffKind};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn worked_downstream_constants() {
        let k = derive_downstream_constants(0.5, 1.0, 1.0, 2.2).unwrap();
        assert_relative_eq!(k.eta2, 0.125, max_relative = 1e-12);
        assert_relative_eq!(k.c6, 4.0 / 3.0, max_relative = 1e-12);
        // independent: series of (e^x − 1)/x at x = 1/6
        let x: f64 = 1.0 / 6.0;
        let mut series = 0.0;
        let mut term = 1.0;
        for j in 1..30 {
            series += term;
            term *= x / (j + 1) as f64;
        }
        assert_relative_eq!(k.c7, series, max_relative = 1e-12);
        assert_relative_eq!(k.d1, 4.0 / 3.0 * series, max_relative = 1e-12);
        assert_relative_eq!(k.c8, 0.25 / (1.0f64 + 9.68).powi(2), max_relative = 1e-12);
        assert_relative_eq!(k.c8, 2.192e-3, max_relative = 1e-3);
        assert_relative_eq!(k.d2, 0.99781, max_relative = 1e-5);
    }

    #[test]
    fn c7_bounds_exponential_on_grid() {
        let k = derive_downstream_constants(0.5, 1.0, 1.0, 2.2).unwrap();
        let r = k.c6 * k.eta2;
        for i in 0..=2000 {
            let lam = -r + 2.0 * r * i as f64 / 2000.0;
            assert!(lam.exp_m1().abs() <= k.c7 * lam.abs() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn nonpositive_inputs_rejected() {
        assert!(derive_downstream_constants(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(derive_downstream_constants(0.5, -1.0, 1.0, 1.0).is_err());
        assert!(derive_downstream_constants(0.5, 1.0, f64::NAN, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn d2_below_one(eta1 in 1e-3f64..2.0, c4 in 1e-3f64..50.0, c5 in 1e-3f64..50.0, diam in 1e-2f64..20.0) {
            let k = derive_downstream_constants(eta1, c4, c5, diam).unwrap();
            prop_assert!(k.d2 < 1.0 && k.d2 > 0.0);
            prop_assert!(2.0 * c4 * c5 * k.eta2 <= 0.25 + 1e-12);
            prop_assert!(k.eta2 < 0.5 * eta1 && k.eta2 < 1.0 / (4.0 * c4 * c5));
        }
    }

    fn disc_evaluator(c4: f64) -> (Family, PeakEvaluator) {
        let spec = FamilySpec { name: "disc".into(), params: vec![1.0, 0.0], t_range: [0.0, 0.0], t_points: 1, dimension: 1 };
        let family = Family::from_spec(&spec).unwrap();
        let t = ParameterValue::real(0.0);
        let eta1 = 0.5;
        let domains = inflate_domains(&family, 0.99, eta1).unwrap();
        let profile = CutoffProfile::new(eta1, CutoffKind::QuinticSmoothstep).unwrap();
        let zeta = [C64::new(1.0, 0.0)];
        let glued = GluedFunction::new(&family, t, &zeta, profile).unwrap();
        let settings = SolverSettings { quadrature_cells: 128, ..Default::default() };
        let sol = solve_peak_dbar(&family, t, &glued, &domains, &settings).unwrap();
        let k = derive_downstream_constants(eta1, c4, 1.05, 2.2).unwrap();
        let ev = PeakEvaluator {
            family: family.clone(),
            t,
            glued,
            solution: Arc::new(sol),
            c4,
            eta2: k.eta2,
            eta_hat: domains.eta_hat,
        };
        (family, ev)
    }

    #[test]
    fn base_point_maps_to_one() {
        let (_, ev) = disc_evaluator(1.0);
        let h = ev.eval_h(&[C64::new(1.0, 0.0)]).unwrap();
        assert!((h - 1.0).norm() <= 1e-12);
    }

    #[test]
    fn branches_agree_on_overlap() {
        let (_, ev) = disc_evaluator(1.0);
        let eta2 = ev.eta2();
        for k in 0..64 {
            let th = std::f64::consts::PI * (0.5 + k as f64 / 64.0);
            let rad = eta2 * (0.5 + 0.5 * k as f64 / 64.0);
            let z = [C64::new(1.0, 0.0) + C64::from_polar(rad, th)];
            if !ev.contains(&z) || ev.glued().phi(&z).norm() <= 1e-8 {
                continue;
            }
            let d = (ev.g_near(&z) - ev.g_far(&z).unwrap()).norm();
            assert!(d <= 1e-6, "branch gap {d:e}");
        }
    }

    #[test]
    fn outside_domain_rejected() {
        let (_, ev) = disc_evaluator(1.0);
        assert!(matches!(ev.eval_h(&[C64::new(1.5, 0.0)]), Err(Error::OutsideDomain { .. })));
        assert!(matches!(ev.eval_h(&[C64::new(0.0, 0.0), C64::new(0.0, 0.0)]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn modulus_is_exp_of_minus_real_part() {
        let (_, ev) = disc_evaluator(1.0);
        for k in 0..50 {
            let z = [C64::from_polar(0.9 * k as f64 / 50.0, k as f64)];
            let g = ev.g(&z).unwrap();
            let h = ev.eval_h(&z).unwrap();
            assert!((h.norm() - (-g.re).exp()).abs() <= 1e-12);
        }
    }
}
