//! Run configuration: parsing, default fill and validation.

use serde::{Deserialize, Serialize};

use crate::construction::CutoffKind;
use crate::dbar::SolverSettings;
use crate::domain::{FamilySpec, FAMILY_NAMES};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstructionConfig {
    pub eta1: f64,
    pub cutoff_kind: CutoffKind,
    /// Width of the boundary band on which the Levi matrix is checked.
    pub eps1: f64,
    pub boundary_samples: usize,
    pub band_samples: usize,
}

impl Default for ConstructionConfig {
    fn default() -> Self {
        ConstructionConfig {
            eta1: 0.5,
            cutoff_kind: CutoffKind::QuinticSmoothstep,
            eps1: 0.75,
            boundary_samples: 16,
            band_samples: 32,
        }
    }
}

/// Base triple of the continuity table. Missing parts are filled by the pipeline:
/// `t` at the middle of the range, `ζ` the projection of `center + e₁`, `z` the center.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuityBase {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    /// Point projected onto `∂G_t` to give `ζ₀`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<Vec<[f64; 2]>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerificationConfig {
    /// Closure samples per evaluator for the peak property.
    pub sample_budget: usize,
    /// Fresh samples per evaluator for the local and far bounds.
    pub local_samples: usize,
    /// Interior points per evaluator for the Cauchy–Riemann check.
    pub holomorphy_points: usize,
    pub delta_list: Vec<f64>,
    pub alpha_target: f64,
    pub triples_per_delta: usize,
    pub continuity_base: ContinuityBase,
    pub seed: u64,
    /// Boundary points per parameter value.
    pub zeta_count: usize,
}

impl Default for VerificationConfig {
    fn default() -> Self {
        VerificationConfig {
            sample_budget: 10_000,
            local_samples: 1000,
            holomorphy_points: 200,
            delta_list: vec![0.1, 0.05, 0.025, 0.0125],
            alpha_target: 0.05,
            triples_per_delta: 16,
            continuity_base: ContinuityBase::default(),
            seed: 0,
            zeta_count: 8,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub svg: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub family: FamilySpec,
    pub construction: ConstructionConfig,
    pub solver: SolverSettings,
    pub verification: VerificationConfig,
    pub output: OutputConfig,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawFamily {
    Name(String),
    Block(RawFamilyBlock),
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFamilyBlock {
    name: String,
    params: Option<Vec<f64>>,
    t_range: Option<[f64; 2]>,
    t_points: Option<usize>,
    dimension: Option<usize>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConstruction {
    eta1: Option<f64>,
    cutoff_kind: Option<CutoffKind>,
    eps1: Option<f64>,
    boundary_samples: Option<usize>,
    band_samples: Option<usize>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    quadrature_cells: Option<usize>,
    singular_rule: Option<crate::dbar::SingularCellRule>,
    local_correction: Option<bool>,
    collocation_degree: Option<usize>,
    collocation_nodes: Option<usize>,
    enrichment: Option<bool>,
    residual_tol: Option<f64>,
    test_points: Option<usize>,
    boundary_clearance: Option<f64>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVerification {
    sample_budget: Option<usize>,
    local_samples: Option<usize>,
    holomorphy_points: Option<usize>,
    delta_list: Option<Vec<f64>>,
    alpha_target: Option<f64>,
    triples_per_delta: Option<usize>,
    continuity_base: Option<ContinuityBase>,
    seed: Option<u64>,
    zeta_count: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    family: RawFamily,
    eta1: Option<f64>,
    seed: Option<u64>,
    #[serde(default)]
    construction: RawConstruction,
    #[serde(default)]
    solver: RawSolver,
    #[serde(default)]
    verification: RawVerification,
    #[serde(default)]
    output: OutputConfig,
}

/// Defaults per family: `(params, t_range, t_points)`.
fn family_defaults(name: &str) -> (Vec<f64>, [f64; 2], usize) {
    match name {
        "disc" | "ball" => (vec![1.0, 0.1], [0.0, 1.0], 5),
        "ellipsoid" => (vec![1.0, 0.8], [0.0, 1.0], 5),
        _ => (vec![1.0], [0.0, 0.1], 5),
    }
}

fn fill_family(raw: RawFamily) -> Result<FamilySpec> {
    let block = match raw {
        RawFamily::Name(name) => RawFamilyBlock { name, ..Default::default() },
        RawFamily::Block(b) => b,
    };
    if !FAMILY_NAMES.contains(&block.name.as_str()) {
        return Err(Error::UnknownFamily(block.name));
    }
    let (params, t_range, t_points) = family_defaults(&block.name);
    let params = block.params.unwrap_or(params);
    let dimension = match block.dimension {
        Some(d) => d,
        None => FamilySpec::default_dimension(&block.name, &params)?,
    };
    Ok(FamilySpec {
        name: block.name,
        params,
        t_range: block.t_range.unwrap_or(t_range),
        t_points: block.t_points.unwrap_or(t_points),
        dimension,
    })
}

/// Parses JSON text into a validated config with every default filled in.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let raw: RawConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let family = fill_family(raw.family)?;

    let c = raw.construction;
    let d = ConstructionConfig::default();
    if raw.eta1.is_some() && c.eta1.is_some() && raw.eta1 != c.eta1 {
        return Err(Error::Config("eta1 given twice with different values".into()));
    }
    let construction = ConstructionConfig {
        eta1: c.eta1.or(raw.eta1).unwrap_or(d.eta1),
        cutoff_kind: c.cutoff_kind.unwrap_or(d.cutoff_kind),
        eps1: c.eps1.unwrap_or(d.eps1),
        boundary_samples: c.boundary_samples.unwrap_or(d.boundary_samples),
        band_samples: c.band_samples.unwrap_or(d.band_samples),
    };

    let s = raw.solver;
    let d = SolverSettings::default();
    let solver = SolverSettings {
        quadrature_cells: s.quadrature_cells.unwrap_or(d.quadrature_cells),
        singular_rule: s.singular_rule.unwrap_or(d.singular_rule),
        local_correction: s.local_correction.unwrap_or(d.local_correction),
        collocation_degree: s.collocation_degree.unwrap_or(d.collocation_degree),
        collocation_nodes: s.collocation_nodes.unwrap_or(d.collocation_nodes),
        enrichment: s.enrichment.unwrap_or(d.enrichment),
        residual_tol: s.residual_tol.unwrap_or(d.residual_tol),
        test_points: s.test_points.unwrap_or(d.test_points),
        boundary_clearance: s.boundary_clearance.unwrap_or(d.boundary_clearance),
    };

    let v = raw.verification;
    if raw.seed.is_some() && v.seed.is_some() && raw.seed != v.seed {
        return Err(Error::Config("seed given twice with different values".into()));
    }
    let seed = v
        .seed
        .or(raw.seed)
        .ok_or_else(|| Error::Config("a seed is required".into()))?;
    let d = VerificationConfig::default();
    let verification = VerificationConfig {
        sample_budget: v.sample_budget.unwrap_or(d.sample_budget),
        local_samples: v.local_samples.unwrap_or(d.local_samples),
        holomorphy_points: v.holomorphy_points.unwrap_or(d.holomorphy_points),
        delta_list: v.delta_list.unwrap_or(d.delta_list),
        alpha_target: v.alpha_target.unwrap_or(d.alpha_target),
        triples_per_delta: v.triples_per_delta.unwrap_or(d.triples_per_delta),
        continuity_base: v.continuity_base.unwrap_or_default(),
        seed,
        zeta_count: v.zeta_count.unwrap_or(d.zeta_count),
    };

    let config = RunConfig { family, construction, solver, verification, output: raw.output };
    config.validate()?;
    Ok(config)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let c = &self.construction;
        let positive = [
            ("eta1", c.eta1),
            ("eps1", c.eps1),
            ("residual_tol", self.solver.residual_tol),
            ("boundary_clearance", self.solver.boundary_clearance),
            ("alpha_target", self.verification.alpha_target),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if c.eta1 >= c.eps1 {
            return Err(Error::Config(format!(
                "eta1 {} must be below the band width eps1 {}",
                c.eta1, c.eps1
            )));
        }
        let counts = [
            ("boundary_samples", c.boundary_samples),
            ("band_samples", c.band_samples),
            ("t_points", self.family.t_points),
            ("quadrature_cells", self.solver.quadrature_cells),
            ("collocation_degree", self.solver.collocation_degree),
            ("collocation_nodes", self.solver.collocation_nodes),
            ("test_points", self.solver.test_points),
            ("sample_budget", self.verification.sample_budget),
            ("local_samples", self.verification.local_samples),
            ("holomorphy_points", self.verification.holomorphy_points),
            ("triples_per_delta", self.verification.triples_per_delta),
            ("zeta_count", self.verification.zeta_count),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if c.boundary_samples < 4 || self.verification.zeta_count < 4 {
            return Err(Error::Config("boundary_samples and zeta_count must be at least 4".into()));
        }
        if self.verification.delta_list.is_empty() || self.verification.delta_list.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::Config("delta_list must be nonempty and positive".into()));
        }
        self.family.build()?;
        Ok(())
    }

    /// Canonical JSON form; `parse_config` of it gives back `self`.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
