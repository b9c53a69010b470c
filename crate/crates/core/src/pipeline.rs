//! Stage orchestration: band → C₁ → (C₂, ε₂) → η₁ check → φ bound → domains
//! → α, C₃ → ∂̄ solves, C₄ → C₅ → downstream constants → evaluators.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::construction::{
    check_phi_lower_bound, estimate_c3, inflate_domains, CutoffProfile, GluedFunction, InflatedDomains,
};
use crate::dbar::DbarSolution;
use crate::domain::{
    build_band, level_bbox, sample_boundary_stream, BandOptions, ComplexPoint, Family, ParameterValue,
};
use crate::error::{Error, Result, StageExt};
use crate::levi::{estimate_c1, estimate_c2_eps2, estimate_c5, MAX_SAFETY};
use crate::peak::{derive_downstream_constants, make_peak_evaluator, solve_peak_dbar, ConstantsCertificate, PeakEvaluator};

/// Boundary-point stream of the evaluator grid; distinct from the band grid.
pub const EVALUATOR_STREAM: u64 = 1;

/// A certificate together with everything needed to evaluate `h`.
#[derive(Clone, Debug)]
pub struct Construction {
    pub config: RunConfig,
    pub family: Family,
    pub domains: InflatedDomains,
    pub certificate: ConstantsCertificate,
    /// One evaluator per `(t, ζ)` on the parameter grid × `zeta_count` boundary points.
    pub evaluators: Vec<PeakEvaluator>,
}

fn evaluator_grid(family: &Family, zeta_count: usize) -> Result<Vec<(ParameterValue, ComplexPoint)>> {
    let mut out = Vec::new();
    for t in family.t_grid() {
        for zeta in sample_boundary_stream(family, t, zeta_count, EVALUATOR_STREAM)? {
            out.push((t, zeta));
        }
    }
    Ok(out)
}

fn solve_grid(
    family: &Family,
    domains: &InflatedDomains,
    profile: CutoffProfile,
    config: &RunConfig,
    grid: &[(ParameterValue, ComplexPoint)],
) -> Result<Vec<(GluedFunction, Arc<DbarSolution>)>> {
    grid.par_iter()
        .map(|(t, zeta)| {
            let glued = GluedFunction::new(family, *t, zeta, profile)?;
            let sol = solve_peak_dbar(family, *t, &glued, domains, &config.solver)?;
            Ok((glued, Arc::new(sol)))
        })
        .collect()
}

/// Runs every construction stage and returns the certificate and evaluators.
pub fn certify(config: &RunConfig) -> Result<Construction> {
    config.validate().stage("config")?;
    let family = Family::from_spec(&config.family).stage("family")?;
    let cc = &config.construction;
    let opts = BandOptions {
        boundary_samples: cc.boundary_samples,
        band_samples: cc.band_samples,
        ..Default::default()
    };
    let band = build_band(&family, cc.eps1, &opts).stage("band")?;
    let c1 = estimate_c1(&family, &band, 64).stage("c1")?;
    let (c2, eps2) = estimate_c2_eps2(&family, &band, c1.value, cc.eps1, 32).stage("c2_eps2")?;
    if !(cc.eta1 < eps2.value) {
        return Err(Error::InvalidInput(format!(
            "eta1 {} is not below eps2 {:.6}",
            cc.eta1, eps2.value
        ))
        .at_stage("eta1_check"));
    }
    let profile = CutoffProfile::new(cc.eta1, cc.cutoff_kind).stage("eta1_check")?;
    let phi_bound = check_phi_lower_bound(&family, &band, c2.value, &profile, 2500).stage("phi_bound")?;
    let domains = inflate_domains(&family, c2.value, cc.eta1).stage("domains")?;

    let grid = evaluator_grid(&family, config.verification.zeta_count).stage("alpha_c3")?;
    let glued: Vec<(ParameterValue, GluedFunction)> = grid
        .iter()
        .map(|(t, z)| Ok((*t, GluedFunction::new(&family, *t, z, profile)?)))
        .collect::<Result<_>>()
        .stage("alpha_c3")?;
    let c3 = estimate_c3(&family, &domains, &glued, 4000).stage("alpha_c3")?;

    let solved = solve_grid(&family, &domains, profile, config, &grid).stage("dbar_c4")?;
    let sup = solved.iter().map(|(_, s)| s.sup_norm).fold(0.0, f64::max);
    let residual_max = solved.iter().map(|(_, s)| s.residual.max).fold(0.0, f64::max);
    let solver_certified = solved.iter().all(|(_, s)| s.certified);
    let c4 = sup * MAX_SAFETY;
    if !(c4 > 0.0) {
        return Err(Error::Degenerate("dbar solutions vanish identically".into()).at_stage("dbar_c4"));
    }

    let c5 = estimate_c5(&family, &band).stage("c5")?;
    let diam_u = band.diameter;
    let k = derive_downstream_constants(cc.eta1, c4, c5.value, diam_u).stage("downstream")?;

    let mut grids = BTreeMap::new();
    grids.insert("c1".into(), c1.grid.clone());
    grids.insert("c2_eps2".into(), c2.grid.clone());
    grids.insert("c3".into(), c3.grid.clone());
    grids.insert("c4".into(), format!("{} (t, zeta) solves", solved.len()));
    grids.insert("c5".into(), c5.grid.clone());
    grids.insert("phi_bound".into(), format!("{} samples, min margin {:.6e}", phi_bound.samples, phi_bound.min_margin));
    let mut notes = BTreeMap::new();
    for (name, note) in [
        ("c1", "min Levi form over band points and unit directions, capped at 0.99"),
        ("c2", "largest grid-validated factor in r + 2 Re P >= C2 |z - zeta|^2"),
        ("eps2", "0.95 x validated radius of the quadratic lower bound"),
        ("c3", "1.05 x max |alpha| on G~ samples"),
        ("c4", "1.05 x max sup-norm of the dbar solutions"),
        ("c5", "1.05 x max |P(z;zeta)| / |z - zeta| over boundary zeta and band z"),
        ("eta", "0.5 x C2 eta1^2 / 8"),
        ("eta_hat", "eta / 2"),
        ("eta2", "0.5 x min(eta1/2, 1/(4 C4 C5))"),
        ("c6", "C5 / (1 - 2 C4 C5 eta2)"),
        ("c7", "(exp(C6 eta2) - 1) / (C6 eta2)"),
        ("c8", "eta1^2 / (1 + 2 diam_U^2 C4)^2"),
        ("d1", "C6 C7"),
        ("d2", "exp(-C8)"),
        ("diam_u", "largest distance between sampled outer band-edge points"),
    ] {
        notes.insert(name.to_string(), note.to_string());
    }

    let certificate = ConstantsCertificate {
        family: config.family.clone(),
        cutoff: profile,
        solver: config.solver.clone(),
        eps1: cc.eps1,
        eps2: eps2.value,
        eta1: cc.eta1,
        eta2: k.eta2,
        eta: domains.eta,
        eta_hat: domains.eta_hat,
        c1: c1.value,
        c2: c2.value,
        c3: c3.value,
        c4,
        c5: c5.value,
        c6: k.c6,
        c7: k.c7,
        c8: k.c8,
        d1: k.d1,
        d2: k.d2,
        diam_u,
        max_safety: MAX_SAFETY,
        zeta_count: config.verification.zeta_count,
        solver_certified,
        solver_residual_max: residual_max,
        grids,
        notes,
    };
    certificate.validate().stage("certificate")?;

    let evaluators = grid
        .iter()
        .zip(solved)
        .map(|((t, zeta), (_, sol))| make_peak_evaluator(&family, *t, zeta, &certificate, sol))
        .collect::<Result<_>>()
        .stage("evaluators")?;
    Ok(Construction { config: config.clone(), family, domains, certificate, evaluators })
}

/// A construction from a stored certificate with no evaluators solved yet;
/// use [`Construction::evaluator_at`] for single points.
pub fn load(config: &RunConfig, certificate: &ConstantsCertificate) -> Result<Construction> {
    if certificate.family != config.family {
        return Err(Error::Config("certificate was issued for a different family block".into()).at_stage("rebuild"));
    }
    certificate.validate().stage("certificate")?;
    let family = Family::from_spec(&certificate.family).stage("family")?;
    let mut domains = inflate_domains(&family, certificate.c2, certificate.eta1).stage("domains")?;
    if domains.eta != certificate.eta {
        domains.eta = certificate.eta;
        domains.bbox = level_bbox(&family, certificate.eta).stage("domains")?;
    }
    domains.eta_hat = certificate.eta_hat;
    let mut config = config.clone();
    config.solver = certificate.solver.clone();
    Ok(Construction { config, family, domains, certificate: certificate.clone(), evaluators: Vec::new() })
}

/// Rebuilds the evaluators of a stored certificate, taking every constant from it.
pub fn rebuild(config: &RunConfig, certificate: &ConstantsCertificate) -> Result<Construction> {
    let mut c = load(config, certificate)?;
    let grid = evaluator_grid(&c.family, certificate.zeta_count).stage("alpha_c3")?;
    let solved = solve_grid(&c.family, &c.domains, certificate.cutoff, &c.config, &grid).stage("dbar_c4")?;
    c.evaluators = grid
        .iter()
        .zip(solved)
        .map(|((t, zeta), (_, sol))| make_peak_evaluator(&c.family, *t, zeta, certificate, sol))
        .collect::<Result<_>>()
        .stage("evaluators")?;
    Ok(c)
}

/// Run config reproducing the construction settings stored in a certificate.
pub fn config_from_certificate(certificate: &ConstantsCertificate, seed: u64) -> RunConfig {
    let mut config = RunConfig {
        family: certificate.family.clone(),
        construction: Default::default(),
        solver: certificate.solver.clone(),
        verification: Default::default(),
        output: Default::default(),
    };
    config.construction.eta1 = certificate.eta1;
    config.construction.eps1 = certificate.eps1;
    config.construction.cutoff_kind = certificate.cutoff.kind;
    config.verification.seed = seed;
    config.verification.zeta_count = certificate.zeta_count;
    config
}

impl Construction {
    /// Solves `∂̄` for a base point off the evaluator grid.
    pub fn evaluator_at(&self, t: ParameterValue, zeta: &[C64]) -> Result<PeakEvaluator> {
        if let Some(e) = self
            .evaluators
            .iter()
            .find(|e| e.t() == t && e.zeta().coords() == zeta)
        {
            return Ok(e.clone());
        }
        let glued = GluedFunction::new(&self.family, t, zeta, self.certificate.cutoff)?;
        let sol = solve_peak_dbar(&self.family, t, &glued, &self.domains, &self.certificate.solver)?;
        make_peak_evaluator(&self.family, t, zeta, &self.certificate, Arc::new(sol))
    }
}

/// Canonical certificate text.
pub fn certificate_json(certificate: &ConstantsCertificate) -> String {
    let mut s = serde_json::to_string_pretty(certificate).expect("certificate serializes");
    s.push('\n');
    s
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
