//! Solvers for `∂̄v = α` on a sublevel domain with sup-norm and residual reporting.
//!
//! `n = 1` uses the Cauchy–Pompeiu transform on a uniform cell grid; `n ≥ 2`
//! uses weighted least-squares collocation in a monomial basis `z^a z̄^b`.

pub mod cauchy;
pub mod collocation;

use std::sync::Arc;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{self, RealBox};

/// Right-hand side and domain of a `∂̄` problem.
pub trait DbarData: Send + Sync {
    fn dimension(&self) -> usize;

    /// Level function of the domain, negative inside.
    fn level(&self, z: &[C64]) -> f64;

    /// Norm of the real gradient of [`DbarData::level`].
    fn level_gradient_norm(&self, z: &[C64]) -> f64;

    /// Coefficients `α_j(z)`.
    fn alpha(&self, z: &[C64]) -> Vec<C64>;

    /// A box containing the domain.
    fn bbox(&self) -> RealBox;

    /// First-order estimate of the distance to the boundary (positive inside).
    fn boundary_distance(&self, z: &[C64]) -> f64 {
        let g = self.level_gradient_norm(z);
        if g > 0.0 {
            -self.level(z) / g
        } else {
            f64::INFINITY
        }
    }

    /// Optional extra collocation basis function `u` with closed-form `∂̄u`,
    /// returned as `(u, ∂̄u)`. Must be defined on the whole domain.
    fn enrichment(&self, _z: &[C64]) -> Option<(C64, Vec<C64>)> {
        None
    }
}

/// Treatment of the quadrature cell that contains the evaluation point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SingularCellRule {
    /// The cell acts as a uniform disc of equal area centred at the cell centre.
    #[default]
    EqualAreaDisc,
    /// Cells within two steps of the target are integrated exactly as rectangles.
    ExactCell,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    /// Cells across the largest extent of the domain box (`n = 1`).
    pub quadrature_cells: usize,
    pub singular_rule: SingularCellRule,
    /// Subtract the leading `h²` quadrature error at interior cells (`n = 1`).
    pub local_correction: bool,
    /// Total degree of the monomial basis (`n ≥ 2`).
    pub collocation_degree: usize,
    /// Quasi-random points drawn in the domain box; those outside get weight 0.
    pub collocation_nodes: usize,
    /// Add the closed-form particular solution as an extra basis function when
    /// the right-hand side provides one (`n ≥ 2`).
    pub enrichment: bool,
    /// Bound on `|∂̄v − α| / max(1, max|α|)` for a certified solution.
    pub residual_tol: f64,
    /// Held-out points drawn in the domain box for residual statistics.
    pub test_points: usize,
    /// Test points closer than this to the boundary are reported separately.
    pub boundary_clearance: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            quadrature_cells: 256,
            singular_rule: SingularCellRule::EqualAreaDisc,
            local_correction: true,
            collocation_degree: 6,
            collocation_nodes: 2000,
            enrichment: true,
            residual_tol: 1e-3,
            test_points: 800,
            boundary_clearance: 0.05,
        }
    }
}

#[derive(Clone)]
pub struct DbarProblem {
    pub data: Arc<dyn DbarData>,
    pub settings: SolverSettings,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    CauchyPompeiu,
    Collocation,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    /// Over test points at least `boundary_clearance` inside.
    pub max: f64,
    pub mean: f64,
    pub count: usize,
    /// Over test points nearer the boundary (not certified).
    pub near_boundary_max: f64,
    pub near_boundary_count: usize,
    /// `max |α|` over the interior test points; the residual tolerance is relative to `max(1, alpha_max)`.
    pub alpha_max: f64,
}

#[derive(Clone, Debug)]
enum Field {
    Grid(cauchy::GridField),
    Poly(collocation::PolyField),
}

/// An approximate solution `v` of `∂̄v = α`.
#[derive(Clone, Debug)]
pub struct DbarSolution {
    pub backend: Backend,
    pub sup_norm: f64,
    pub residual: ResidualStats,
    pub certified: bool,
    field: Field,
}

impl DbarSolution {
    pub fn value(&self, z: &[C64]) -> C64 {
        match &self.field {
            Field::Grid(g) => g.value(z[0]),
            Field::Poly(p) => p.value(z),
        }
    }

    /// `∂v/∂z̄_j` of the evaluator.
    pub fn dbar(&self, z: &[C64]) -> Vec<C64> {
        match &self.field {
            Field::Grid(g) => vec![g.dbar(z[0])],
            Field::Poly(p) => p.dbar(z),
        }
    }

    /// Quadrature sum at an arbitrary point, bypassing interpolation (`n = 1` only).
    pub fn value_direct(&self, z: &[C64]) -> Option<C64> {
        match &self.field {
            Field::Grid(g) => Some(g.value_direct(z[0])),
            Field::Poly(_) => None,
        }
    }

    /// Condition estimate of the least-squares system (`n ≥ 2` only).
    pub fn condition(&self) -> Option<f64> {
        match &self.field {
            Field::Poly(p) => Some(p.condition),
            Field::Grid(_) => None,
        }
    }
}

pub fn solve_dbar(problem: &DbarProblem) -> Result<DbarSolution> {
    let data = problem.data.as_ref();
    let s = &problem.settings;
    if s.test_points == 0 {
        return Err(Error::InvalidInput("test_points must be positive".into()));
    }
    let (backend, field) = if data.dimension() == 1 {
        (Backend::CauchyPompeiu, Field::Grid(cauchy::GridField::build(data, s)?))
    } else {
        (Backend::Collocation, Field::Poly(collocation::PolyField::build(&problem.data, s)?))
    };
    let mut solution = DbarSolution {
        backend,
        sup_norm: 0.0,
        residual: ResidualStats::default(),
        certified: false,
        field,
    };
    solution.sup_norm = match &solution.field {
        Field::Grid(g) => g.sup_norm(data),
        Field::Poly(p) => p.sup_norm(data, s.test_points * 50),
    };
    solution.residual = residual_stats(data, s, |z| solution.dbar(z));
    solution.certified = solution.residual.max <= s.residual_tol * solution.residual.alpha_max.max(1.0);
    Ok(solution)
}

/// Held-out test points inside the domain, with their boundary distances.
pub fn test_points(data: &dyn DbarData, count: usize) -> Vec<(Vec<C64>, f64)> {
    sampling::halton_in_box(&data.bbox(), count, 12)
        .into_iter()
        .filter(|z| data.level(z) < 0.0)
        .map(|z| {
            let d = data.boundary_distance(&z);
            (z, d)
        })
        .collect()
}

fn residual_stats(data: &dyn DbarData, s: &SolverSettings, dbar: impl Fn(&[C64]) -> Vec<C64> + Sync) -> ResidualStats {
    let pts = test_points(data, s.test_points);
    let res: Vec<(f64, f64, bool)> = pts
        .par_iter()
        .map(|(z, d)| {
            let a = data.alpha(z);
            let r = dbar(z)
                .iter()
                .zip(&a)
                .map(|(u, v)| (u - v).norm())
                .fold(0.0, f64::max);
            let amax = a.iter().map(|v| v.norm()).fold(0.0, f64::max);
            (r, amax, *d >= s.boundary_clearance)
        })
        .collect();
    let mut out = ResidualStats::default();
    let mut sum = 0.0;
    for (r, amax, interior) in res {
        if interior {
            out.max = out.max.max(r);
            out.alpha_max = out.alpha_max.max(amax);
            sum += r;
            out.count += 1;
        } else {
            out.near_boundary_max = out.near_boundary_max.max(r);
            out.near_boundary_count += 1;
        }
    }
    out.mean = if out.count > 0 { sum / out.count as f64 } else { 0.0 };
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    /// Quadrature cells (`n = 1`) or basis degree (`n ≥ 2`).
    pub resolution: usize,
    pub residual_max: f64,
    pub residual_mean: f64,
    /// `log(previous/current residual) / log(current/previous resolution)`.
    pub order: Option<f64>,
}

/// Re-solves at each resolution and tabulates the residual.
pub fn quadrature_convergence_test(problem: &DbarProblem, resolutions: &[usize]) -> Result<Vec<ConvergenceRow>> {
    if resolutions.len() < 2 {
        return Err(Error::InvalidInput("convergence test needs at least two resolutions".into()));
    }
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for &res in resolutions {
        let mut settings = problem.settings.clone();
        if problem.data.dimension() == 1 {
            settings.quadrature_cells = res;
        } else {
            settings.collocation_degree = res;
        }
        let sol = solve_dbar(&DbarProblem { data: problem.data.clone(), settings })?;
        let order = rows.last().map(|prev| {
            (prev.residual_max / sol.residual.max).ln() / (res as f64 / prev.resolution as f64).ln()
        });
        rows.push(ConvergenceRow {
            resolution: res,
            residual_max: sol.residual.max,
            residual_mean: sol.residual.mean,
            order,
        });
    }
    Ok(rows)
}

/// Reference right-hand sides on balls, for solver checks.
pub mod testing {
    use super::*;

    /// `α` given by a closure on the ball `|z − c| < radius`.
    pub struct BallData<F: Fn(&[C64]) -> Vec<C64> + Send + Sync> {
        pub center: Vec<C64>,
        pub radius: f64,
        pub alpha: F,
    }

    impl<F: Fn(&[C64]) -> Vec<C64> + Send + Sync> DbarData for BallData<F> {
        fn dimension(&self) -> usize {
            self.center.len()
        }
        fn level(&self, z: &[C64]) -> f64 {
            sampling::distance(z, &self.center).powi(2) - self.radius * self.radius
        }
        fn level_gradient_norm(&self, z: &[C64]) -> f64 {
            2.0 * sampling::distance(z, &self.center)
        }
        fn alpha(&self, z: &[C64]) -> Vec<C64> {
            (self.alpha)(z)
        }
        fn bbox(&self) -> RealBox {
            let mut b = RealBox::empty(2 * self.center.len());
            let lo: Vec<C64> = self.center.iter().map(|c| c - C64::new(self.radius, self.radius)).collect();
            let hi: Vec<C64> = self.center.iter().map(|c| c + C64::new(self.radius, self.radius)).collect();
            b.include(&lo);
            b.include(&hi);
            b
        }
    }
}
