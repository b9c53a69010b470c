//! Parametric families of strictly pseudoconvex domains `G_t = {r_t < 0}`.
//!
//! Every built-in family supplies its defining function with exact Wirtinger
//! derivatives: `∂r/∂z_j`, `∂r/∂z̄_j`, the holomorphic Hessian `∂²r/∂z_i∂z_j`
//! and the Levi matrix `∂²r/∂z_i∂z̄_j`. Real gradients and Hessians (used by
//! the boundary projection) are derived from those blocks.

use std::fmt;
use std::ops::Deref;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{self, RealBox};

/// A point of `C^n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ComplexPoint(Vec<C64>);

impl ComplexPoint {
    pub fn new(coords: Vec<C64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidInput("point must have at least one coordinate".into()));
        }
        if coords.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite coordinate in {coords:?}")));
        }
        Ok(ComplexPoint(coords))
    }

    pub fn origin(n: usize) -> Self {
        ComplexPoint(vec![C64::new(0.0, 0.0); n])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[C64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<C64> {
        self.0
    }
}

impl From<Vec<C64>> for ComplexPoint {
    /// Unchecked conversion for internally produced coordinates.
    fn from(v: Vec<C64>) -> Self {
        ComplexPoint(v)
    }
}

impl Deref for ComplexPoint {
    type Target = [C64];
    fn deref(&self) -> &[C64] {
        &self.0
    }
}

impl fmt::Display for ComplexPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|c| format!("{c}")).collect();
        write!(f, "({})", parts.join(", "))
    }
}

/// Family parameter `t ∈ T ⊂ C`. Built-in families read the real part.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterValue(pub C64);

impl ParameterValue {
    pub fn real(t: f64) -> Self {
        ParameterValue(C64::new(t, 0.0))
    }

    pub fn re(self) -> f64 {
        self.0.re
    }
}

/// Value and second-order Wirtinger data of `r_t` at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct DefiningSample {
    pub r: f64,
    /// `∂r/∂z_j`
    pub grad_z: Vec<C64>,
    /// `∂r/∂z̄_j`, the conjugate of `grad_z` for real `r`.
    pub grad_zbar: Vec<C64>,
    /// `∂²r/∂z_i∂z_j`, complex symmetric.
    pub hess_zz: DMatrix<C64>,
    /// `∂²r/∂z_i∂z̄_j`, Hermitian.
    pub levi: DMatrix<C64>,
}

impl DefiningSample {
    pub fn dimension(&self) -> usize {
        self.grad_z.len()
    }

    /// Norm of `(∂r/∂z̄_1, …, ∂r/∂z̄_n)`.
    pub fn dbar_gradient_norm(&self) -> f64 {
        sampling::norm(&self.grad_zbar)
    }

    /// Real gradient packed as complex components `r_{x_j} + i r_{y_j} = 2 ∂r/∂z̄_j`.
    pub fn real_gradient(&self) -> Vec<C64> {
        self.grad_zbar.iter().map(|g| g * 2.0).collect()
    }

    /// Real gradient in `(x_1, y_1, x_2, y_2, …)` order.
    pub fn real_gradient_vec(&self) -> DVector<f64> {
        let mut out = DVector::zeros(2 * self.dimension());
        for (j, g) in self.grad_zbar.iter().enumerate() {
            out[2 * j] = 2.0 * g.re;
            out[2 * j + 1] = 2.0 * g.im;
        }
        out
    }

    /// Real Hessian in `(x_1, y_1, …)` order, from `A = hess_zz` and `L = levi`:
    /// `r_{x_i x_j} = 2Re(A+L)`, `r_{x_i y_j} = 2Im(L−A)`, `r_{y_i y_j} = 2Re(L−A)`.
    pub fn real_hessian(&self) -> DMatrix<f64> {
        let n = self.dimension();
        let mut h = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                let a = self.hess_zz[(i, j)];
                let l = self.levi[(i, j)];
                h[(2 * i, 2 * j)] = 2.0 * (a + l).re;
                h[(2 * i, 2 * j + 1)] = 2.0 * (l - a).im;
                h[(2 * i + 1, 2 * j + 1)] = 2.0 * (l - a).re;
                // r_{y_i x_j} = r_{x_j y_i}
                let aj = self.hess_zz[(j, i)];
                let lj = self.levi[(j, i)];
                h[(2 * i + 1, 2 * j)] = 2.0 * (lj - aj).im;
            }
        }
        h
    }

    pub fn min_levi_eigenvalue(&self) -> f64 {
        min_hermitian_eigenvalue(&self.levi)
    }
}

pub(crate) fn min_hermitian_eigenvalue(m: &DMatrix<C64>) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)].re;
    }
    let sym = (m + m.adjoint()) * C64::new(0.5, 0.0);
    sym.symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// A `C²` defining function family with exact derivatives.
pub trait DefiningFunction: Send + Sync {
    fn dimension(&self) -> usize;

    fn evaluate(&self, t: ParameterValue, z: &[C64]) -> DefiningSample;

    fn value(&self, t: ParameterValue, z: &[C64]) -> f64 {
        self.evaluate(t, z).r
    }

    /// An interior point from which every boundary point is visible along a ray.
    fn center(&self) -> Vec<C64> {
        vec![C64::new(0.0, 0.0); self.dimension()]
    }
}

/// The built-in families. The planar disc is the one-dimensional ball.
#[derive(Clone, Debug, PartialEq)]
pub enum BuiltinFamily {
    /// `‖z‖² − R(t)²` with `R(t) = radius + slope·t`.
    Ball { n: usize, radius: f64, slope: f64 },
    /// `Σ |z_j|²/a_j(t)² − 1` with `a_j(t) = a_j (1 + slope·t)`.
    Ellipsoid { axes: Vec<f64>, slope: f64 },
    /// `‖z‖² − 1 + coeff·t·Re(z_1³)`; the bump is pluriharmonic.
    Perturbed { n: usize, coeff: f64 },
}

fn zeros(n: usize) -> DMatrix<C64> {
    DMatrix::from_element(n, n, C64::new(0.0, 0.0))
}

impl DefiningFunction for BuiltinFamily {
    fn dimension(&self) -> usize {
        match self {
            BuiltinFamily::Ball { n, .. } | BuiltinFamily::Perturbed { n, .. } => *n,
            BuiltinFamily::Ellipsoid { axes, .. } => axes.len(),
        }
    }

    fn evaluate(&self, t: ParameterValue, z: &[C64]) -> DefiningSample {
        let n = z.len();
        let t = t.re();
        match self {
            BuiltinFamily::Ball { radius, slope, .. } => {
                let rad = radius + slope * t;
                let r = sampling::norm(z).powi(2) - rad * rad;
                let grad_z: Vec<C64> = z.iter().map(|c| c.conj()).collect();
                DefiningSample {
                    r,
                    grad_zbar: z.to_vec(),
                    grad_z,
                    hess_zz: zeros(n),
                    levi: DMatrix::identity(n, n),
                }
            }
            BuiltinFamily::Ellipsoid { axes, slope } => {
                let scale = 1.0 + slope * t;
                let w: Vec<f64> = axes.iter().map(|a| 1.0 / (a * scale).powi(2)).collect();
                let r = z.iter().zip(&w).map(|(c, wj)| wj * c.norm_sqr()).sum::<f64>() - 1.0;
                let grad_zbar: Vec<C64> = z.iter().zip(&w).map(|(c, wj)| c * *wj).collect();
                let grad_z = grad_zbar.iter().map(|c| c.conj()).collect();
                let mut levi = zeros(n);
                for (j, wj) in w.iter().enumerate() {
                    levi[(j, j)] = C64::new(*wj, 0.0);
                }
                DefiningSample { r, grad_z, grad_zbar, hess_zz: zeros(n), levi }
            }
            BuiltinFamily::Perturbed { coeff, .. } => {
                let k = coeff * t;
                let z1 = z[0];
                let r = sampling::norm(z).powi(2) - 1.0 + k * (z1 * z1 * z1).re;
                let mut grad_z: Vec<C64> = z.iter().map(|c| c.conj()).collect();
                // Re(z³) = (z³ + z̄³)/2, so ∂/∂z = 3z²/2 and ∂²/∂z² = 3z.
                grad_z[0] += z1 * z1 * (1.5 * k);
                let grad_zbar = grad_z.iter().map(|c| c.conj()).collect();
                let mut hess_zz = zeros(n);
                hess_zz[(0, 0)] = z1 * (3.0 * k);
                DefiningSample { r, grad_z, grad_zbar, hess_zz, levi: DMatrix::identity(n, n) }
            }
        }
    }

    fn value(&self, t: ParameterValue, z: &[C64]) -> f64 {
        let t = t.re();
        match self {
            BuiltinFamily::Ball { radius, slope, .. } => {
                let rad = radius + slope * t;
                sampling::norm(z).powi(2) - rad * rad
            }
            BuiltinFamily::Ellipsoid { axes, slope } => {
                let scale = 1.0 + slope * t;
                z.iter()
                    .zip(axes)
                    .map(|(c, a)| c.norm_sqr() / (a * scale).powi(2))
                    .sum::<f64>()
                    - 1.0
            }
            BuiltinFamily::Perturbed { coeff, .. } => {
                let z1 = z[0];
                sampling::norm(z).powi(2) - 1.0 + coeff * t * (z1 * z1 * z1).re
            }
        }
    }
}

/// The family block of the run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub name: String,
    pub params: Vec<f64>,
    pub t_range: [f64; 2],
    pub t_points: usize,
    pub dimension: usize,
}

pub const FAMILY_NAMES: [&str; 4] = ["disc", "ball", "ellipsoid", "perturbed"];

impl FamilySpec {
    /// Default dimension of a built-in family, used when the config omits it.
    pub fn default_dimension(name: &str, params: &[f64]) -> Result<usize> {
        match name {
            "disc" => Ok(1),
            "ball" | "perturbed" => Ok(2),
            "ellipsoid" => Ok(params.len().max(1)),
            other => Err(Error::UnknownFamily(other.to_string())),
        }
    }

    pub fn t_grid(&self) -> Vec<ParameterValue> {
        let [a, b] = self.t_range;
        if self.t_points <= 1 {
            return vec![ParameterValue::real(a)];
        }
        (0..self.t_points)
            .map(|k| ParameterValue::real(a + (b - a) * k as f64 / (self.t_points - 1) as f64))
            .collect()
    }

    pub fn build(&self) -> Result<BuiltinFamily> {
        let n = self.dimension;
        if n == 0 {
            return Err(Error::InvalidInput("dimension must be at least 1".into()));
        }
        let p = &self.params;
        let radius_slope = |p: &[f64]| -> Result<(f64, f64)> {
            match p {
                [] => Ok((1.0, 0.0)),
                [r] => Ok((*r, 0.0)),
                [r, s] => Ok((*r, *s)),
                _ => Err(Error::InvalidInput(format!("expected at most 2 params, got {}", p.len()))),
            }
        };
        let family = match self.name.as_str() {
            "disc" => {
                if n != 1 {
                    return Err(Error::DimensionMismatch { expected: 1, found: n });
                }
                let (radius, slope) = radius_slope(p)?;
                BuiltinFamily::Ball { n: 1, radius, slope }
            }
            "ball" => {
                let (radius, slope) = radius_slope(p)?;
                BuiltinFamily::Ball { n, radius, slope }
            }
            "ellipsoid" => {
                let (axes, slope) = if p.len() == n {
                    (p.clone(), 0.0)
                } else if p.len() == n + 1 {
                    (p[..n].to_vec(), p[n])
                } else {
                    return Err(Error::InvalidInput(format!(
                        "ellipsoid needs {n} axes (plus optional slope), got {} params",
                        p.len()
                    )));
                };
                if axes.iter().any(|a| !(*a > 0.0)) {
                    return Err(Error::InvalidInput("ellipsoid axes must be positive".into()));
                }
                BuiltinFamily::Ellipsoid { axes, slope }
            }
            "perturbed" => {
                let coeff = match p.as_slice() {
                    [] => 1.0,
                    [c] => *c,
                    _ => return Err(Error::InvalidInput("perturbed takes at most 1 param".into())),
                };
                BuiltinFamily::Perturbed { n, coeff }
            }
            other => return Err(Error::UnknownFamily(other.to_string())),
        };
        if let BuiltinFamily::Ball { radius, slope, .. } = &family {
            for t in self.t_grid() {
                if !(radius + slope * t.re() > 0.0) {
                    return Err(Error::InvalidInput("ball radius must stay positive on t_range".into()));
                }
            }
        }
        Ok(family)
    }
}

/// A family together with its parameter grid.
#[derive(Clone)]
pub struct Family {
    spec: FamilySpec,
    function: Arc<dyn DefiningFunction>,
}

impl fmt::Debug for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Family").field("spec", &self.spec).finish()
    }
}

impl Family {
    pub fn from_spec(spec: &FamilySpec) -> Result<Self> {
        if spec.t_points == 0 {
            return Err(Error::InvalidInput("t_points must be positive".into()));
        }
        if !(spec.t_range[0] <= spec.t_range[1]) {
            return Err(Error::InvalidInput(format!("t_range {:?} is not ordered", spec.t_range)));
        }
        let function = spec.build()?;
        Ok(Family { spec: spec.clone(), function: Arc::new(function) })
    }

    /// Wraps a caller-supplied defining function (used for degenerate test inputs).
    pub fn with_function(spec: FamilySpec, function: Arc<dyn DefiningFunction>) -> Self {
        Family { spec, function }
    }

    pub fn spec(&self) -> &FamilySpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn dimension(&self) -> usize {
        self.function.dimension()
    }

    pub fn t_grid(&self) -> Vec<ParameterValue> {
        self.spec.t_grid()
    }

    pub fn t_range(&self) -> [f64; 2] {
        self.spec.t_range
    }

    pub fn center(&self) -> Vec<C64> {
        self.function.center()
    }

    pub fn value(&self, t: ParameterValue, z: &[C64]) -> f64 {
        self.function.value(t, z)
    }

    pub fn sample(&self, t: ParameterValue, z: &[C64]) -> DefiningSample {
        self.function.evaluate(t, z)
    }

    pub(crate) fn check_dim(&self, z: &[C64]) -> Result<()> {
        if z.len() != self.dimension() {
            return Err(Error::DimensionMismatch { expected: self.dimension(), found: z.len() });
        }
        Ok(())
    }
}

pub fn evaluate_defining(family: &Family, t: ParameterValue, z: &[C64]) -> Result<DefiningSample> {
    family.check_dim(z)?;
    if z.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::InvalidInput("non-finite point".into()));
    }
    Ok(family.sample(t, z))
}

/// Maximum absolute deviation between analytic and finite-difference derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SelfTestReport {
    pub grad: f64,
    pub hess_zz: f64,
    pub levi: f64,
    /// Structural residuals: `grad_zbar = conj(grad_z)`, `levi` Hermitian, `hess_zz` symmetric.
    pub structure: f64,
}

impl SelfTestReport {
    pub fn max(&self) -> f64 {
        self.grad.max(self.hess_zz).max(self.levi).max(self.structure)
    }
}

fn to_real(z: &[C64]) -> DVector<f64> {
    DVector::from_iterator(2 * z.len(), z.iter().flat_map(|c| [c.re, c.im]))
}

fn from_real(x: &DVector<f64>) -> Vec<C64> {
    (0..x.len() / 2).map(|j| C64::new(x[2 * j], x[2 * j + 1])).collect()
}

/// Checks the analytic derivative blocks against central differences.
///
/// The gradient is compared with differences of `r`; the Hessian blocks with
/// differences of the (already checked) analytic real gradient, which keeps
/// the roundoff at `O(ε/step)` instead of `O(ε/step²)`.
pub fn derivative_selftest(
    family: &Family,
    t: ParameterValue,
    z: &[C64],
    step: f64,
) -> Result<SelfTestReport> {
    if !(step > 0.0 && step <= 1e-2) {
        return Err(Error::InvalidInput(format!("invalid step {step}: must lie in (0, 1e-2]")));
    }
    let s = evaluate_defining(family, t, z)?;
    let n = z.len();
    let x0 = to_real(z);
    let mut fd_grad = DVector::zeros(2 * n);
    let mut fd_hess = DMatrix::zeros(2 * n, 2 * n);
    for k in 0..2 * n {
        let mut xp = x0.clone();
        let mut xm = x0.clone();
        xp[k] += step;
        xm[k] -= step;
        let (zp, zm) = (from_real(&xp), from_real(&xm));
        fd_grad[k] = (family.value(t, &zp) - family.value(t, &zm)) / (2.0 * step);
        let gp = family.sample(t, &zp).real_gradient_vec();
        let gm = family.sample(t, &zm).real_gradient_vec();
        let col = (gp - gm) / (2.0 * step);
        fd_hess.set_column(k, &col);
    }
    let grad = (&fd_grad - s.real_gradient_vec()).amax();

    // Wirtinger blocks from the real Hessian H.
    let mut hess_dev: f64 = 0.0;
    let mut levi_dev: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let xx = fd_hess[(2 * i, 2 * j)];
            let yy = fd_hess[(2 * i + 1, 2 * j + 1)];
            let xy = fd_hess[(2 * i, 2 * j + 1)];
            let yx = fd_hess[(2 * i + 1, 2 * j)];
            let a = C64::new(xx - yy, -(xy + yx)) * 0.25;
            let l = C64::new(xx + yy, xy - yx) * 0.25;
            hess_dev = hess_dev.max((a - s.hess_zz[(i, j)]).norm());
            levi_dev = levi_dev.max((l - s.levi[(i, j)]).norm());
        }
    }

    let mut structure: f64 = 0.0;
    for j in 0..n {
        structure = structure.max((s.grad_zbar[j] - s.grad_z[j].conj()).norm());
        for i in 0..n {
            structure = structure.max((s.levi[(i, j)] - s.levi[(j, i)].conj()).norm());
            structure = structure.max((s.hess_zz[(i, j)] - s.hess_zz[(j, i)]).norm());
        }
    }
    Ok(SelfTestReport { grad, hess_zz: hess_dev, levi: levi_dev, structure })
}

const PROJECTION_MAX_ITER: usize = 60;
const BOUNDARY_TOL: f64 = 1e-10;

fn projection_failed(z: &[C64], iterations: usize) -> Error {
    Error::ProjectionFailed { start: z.iter().map(|c| [c.re, c.im]).collect(), iterations }
}

/// Newton steps along the current gradient until `|r| ≤ 1e-14`.
fn gradient_newton(family: &Family, t: ParameterValue, z: &[C64]) -> Result<Vec<C64>> {
    let mut x = z.to_vec();
    for _ in 0..PROJECTION_MAX_ITER {
        let s = family.sample(t, &x);
        if s.r.abs() <= 1e-14 {
            return Ok(x);
        }
        let g = s.real_gradient();
        let g2: f64 = g.iter().map(|c| c.norm_sqr()).sum();
        if !(g2 > 1e-24) {
            return Err(projection_failed(z, PROJECTION_MAX_ITER));
        }
        let step = s.r / g2;
        x.iter_mut().zip(&g).for_each(|(xi, gi)| *xi -= gi * step);
    }
    if family.value(t, &x).abs() <= BOUNDARY_TOL {
        Ok(x)
    } else {
        Err(projection_failed(z, PROJECTION_MAX_ITER))
    }
}

/// Nearest-point Newton on `x − z + λ∇r(x) = 0, r(x) = 0` started at `guess`.
fn nearest_point_newton(
    family: &Family,
    t: ParameterValue,
    z: &[C64],
    guess: &[C64],
) -> Result<Vec<C64>> {
    let n2 = 2 * z.len();
    let target = to_real(z);
    let mut x = to_real(guess);
    let s0 = family.sample(t, guess);
    let g0 = s0.real_gradient_vec();
    let mut lambda = (&target - &x).dot(&g0) / g0.norm_squared();

    for _ in 0..PROJECTION_MAX_ITER {
        let s = family.sample(t, &from_real(&x));
        let g = s.real_gradient_vec();
        let h = s.real_hessian();
        let mut f = DVector::zeros(n2 + 1);
        f.rows_mut(0, n2).copy_from(&(&x - &target + &g * lambda));
        f[n2] = s.r;

        let mut jac = DMatrix::zeros(n2 + 1, n2 + 1);
        jac.view_mut((0, 0), (n2, n2)).copy_from(&(DMatrix::identity(n2, n2) + h * lambda));
        jac.view_mut((0, n2), (n2, 1)).copy_from(&g);
        jac.view_mut((n2, 0), (1, n2)).copy_from(&g.transpose());
        let delta = jac
            .lu()
            .solve(&(-&f))
            .ok_or_else(|| projection_failed(z, PROJECTION_MAX_ITER))?;
        x += delta.rows(0, n2);
        lambda += delta[n2];
        let scale = 1.0 + x.norm();
        if delta.rows(0, n2).norm() <= 1e-15 * scale {
            break;
        }
    }
    let out = from_real(&x);
    let s = family.sample(t, &out);
    let g = s.real_gradient_vec();
    let residual = (&x - &target + &g * lambda).norm();
    if s.r.abs() <= BOUNDARY_TOL && residual <= 1e-9 {
        Ok(out)
    } else {
        Err(projection_failed(z, PROJECTION_MAX_ITER))
    }
}

/// Nearest boundary point `π(z)`: gradient Newton onto `{r_t = 0}`, then
/// Newton on the nearest-point conditions so that `z − ζ` is normal at `ζ`.
pub fn project_to_boundary(family: &Family, t: ParameterValue, z: &[C64]) -> Result<ComplexPoint> {
    evaluate_defining(family, t, z)?;
    if family.value(t, z) == 0.0 {
        return Ok(ComplexPoint(z.to_vec()));
    }
    let start = gradient_newton(family, t, z)?;
    let zeta = nearest_point_newton(family, t, z, &start)?;
    Ok(ComplexPoint(zeta))
}

/// Restarts the nearest-point Newton from 8 perturbed seeds and returns the
/// largest distance between the results (a monitor for uniqueness of `π(z)`).
pub fn projection_spread(family: &Family, t: ParameterValue, z: &[C64]) -> Result<f64> {
    let zeta = project_to_boundary(family, t, z)?;
    let n = z.len();
    let mut spread: f64 = 0.0;
    for dir in sampling::sphere_directions(n, 8, 7) {
        let seed: Vec<C64> = zeta.iter().zip(&dir).map(|(a, d)| a + d * 0.02).collect();
        let seed = gradient_newton(family, t, &seed)?;
        let other = nearest_point_newton(family, t, z, &seed)?;
        spread = spread.max(sampling::distance(&other, &zeta));
    }
    Ok(spread)
}

/// Distance `s > 0` along the ray `origin + s·dir` at which `r_t` first reaches `level`.
pub fn ray_to_level(
    family: &Family,
    t: ParameterValue,
    origin: &[C64],
    dir: &[C64],
    level: f64,
) -> Result<f64> {
    let at = |s: f64| -> Vec<C64> { origin.iter().zip(dir).map(|(o, d)| o + d * s).collect() };
    let f = |s: f64| family.value(t, &at(s)) - level;
    if f(0.0) >= 0.0 {
        return Err(Error::InvalidInput(format!(
            "ray origin is not below level {level:.3e}"
        )));
    }
    let mut lo = 0.0;
    let mut hi = 0.05;
    while f(hi) < 0.0 {
        lo = hi;
        hi *= 1.5;
        if hi > 1e4 {
            return Err(projection_failed(origin, 0));
        }
    }
    // Safeguarded Newton inside the bracket.
    let mut s = 0.5 * (lo + hi);
    for _ in 0..200 {
        let v = f(s);
        if v.abs() <= 1e-15 * (1.0 + level.abs()) || hi - lo <= 1e-16 * (1.0 + hi) {
            return Ok(s);
        }
        if v < 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        let g = family.sample(t, &at(s)).real_gradient();
        let slope: f64 = g.iter().zip(dir).map(|(gi, di)| gi.re * di.re + gi.im * di.im).sum();
        let newton = s - v / slope;
        s = if slope > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
    }
    Ok(s)
}

/// Boundary samples along quasi-uniform rays from the family center.
pub fn sample_boundary(family: &Family, t: ParameterValue, count: usize) -> Result<Vec<ComplexPoint>> {
    sample_boundary_stream(family, t, count, 0)
}

/// As [`sample_boundary`], drawing directions from an independent stream.
pub fn sample_boundary_stream(
    family: &Family,
    t: ParameterValue,
    count: usize,
    stream: u64,
) -> Result<Vec<ComplexPoint>> {
    if count < 4 {
        return Err(Error::InvalidInput(format!("boundary sample count {count} < 4")));
    }
    let center = family.center();
    sampling::sphere_directions(family.dimension(), count, stream)
        .iter()
        .map(|dir| {
            let s = ray_to_level(family, t, &center, dir, 0.0)?;
            let zeta: Vec<C64> = center.iter().zip(dir).map(|(c, d)| c + d * s).collect();
            if family.value(t, &zeta).abs() > BOUNDARY_TOL {
                return Err(projection_failed(&zeta, PROJECTION_MAX_ITER));
            }
            Ok(ComplexPoint(zeta))
        })
        .collect()
}

/// Unit outward normal in `C^n` packing (real gradient direction).
pub fn unit_normal(family: &Family, t: ParameterValue, z: &[C64]) -> Vec<C64> {
    let mut g = family.sample(t, z).real_gradient();
    sampling::normalize(&mut g);
    g
}

/// Bounding box of `{r_t < level}` over the parameter grid, from radial roots
/// along quasi-uniform directions and padded by 2% of the largest extent.
pub fn level_bbox(family: &Family, level: f64) -> Result<RealBox> {
    let n = family.dimension();
    let center = family.center();
    let dirs = sampling::sphere_directions(n, if n == 1 { 128 } else { 256 }, 4);
    let mut bbox = RealBox::empty(2 * n);
    for t in family.t_grid() {
        for dir in &dirs {
            let s = ray_to_level(family, t, &center, dir, level)?;
            let edge: Vec<C64> = center.iter().zip(dir).map(|(c, d)| c + d * s).collect();
            bbox.include(&edge);
        }
    }
    Ok(bbox.padded(0.02, 0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandOptions {
    pub boundary_samples: usize,
    pub band_samples: usize,
    pub radial_levels: usize,
}

impl Default for BandOptions {
    fn default() -> Self {
        BandOptions { boundary_samples: 16, band_samples: 32, radial_levels: 4 }
    }
}

/// The neighborhood `U'` of all boundaries, approximated by the level band
/// `{inner_level < r_t < outer_level}`.
#[derive(Clone, Debug)]
pub struct BandRegion {
    pub eps1: f64,
    pub t_grid: Vec<ParameterValue>,
    pub inner_level: f64,
    pub outer_level: f64,
    /// Bounding box of the outer band edge over all `t`.
    pub bbox: RealBox,
    /// Largest distance between sampled outer-edge points (the `diam U` surrogate).
    pub diameter: f64,
    /// Boundary samples per `t`.
    pub boundary: Vec<Vec<ComplexPoint>>,
    /// Interior band samples per `t`.
    pub points: Vec<Vec<ComplexPoint>>,
    pub min_levi_eigenvalue: f64,
    /// Range of `‖(∂r/∂z̄_j)‖` over boundary samples; 1 when the gradient is normalized.
    pub gradient_norm_range: (f64, f64),
    /// Worst nearest-point restart spread over the monitored band points.
    pub projection_spread: f64,
}

impl BandRegion {
    pub fn contains(&self, family: &Family, t: ParameterValue, z: &[C64]) -> bool {
        let r = family.value(t, z);
        r > self.inner_level && r < self.outer_level
    }
}

pub fn build_band(family: &Family, eps1: f64, opts: &BandOptions) -> Result<BandRegion> {
    if !(eps1 > 0.0) {
        return Err(Error::InvalidInput(format!("eps1 must be positive, got {eps1}")));
    }
    let t_grid = family.t_grid();
    let center = family.center();
    let n = family.dimension();

    let mut boundary = Vec::with_capacity(t_grid.len());
    let mut inner_level = f64::NEG_INFINITY;
    let mut outer_level = f64::INFINITY;
    let mut grad_range = (f64::INFINITY, f64::NEG_INFINITY);
    for &t in &t_grid {
        let samples = sample_boundary(family, t, opts.boundary_samples)?;
        for zeta in &samples {
            let s = family.sample(t, zeta);
            let gn = s.dbar_gradient_norm();
            grad_range = (grad_range.0.min(gn), grad_range.1.max(gn));
            let nu = unit_normal(family, t, zeta);
            let inside: Vec<C64> = zeta.iter().zip(&nu).map(|(a, b)| a - b * eps1).collect();
            let depth: f64 = inside
                .iter()
                .zip(&center)
                .zip(&nu)
                .map(|((p, c), v)| ((p - c) * v.conj()).re)
                .sum();
            if depth <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "eps1 = {eps1} too large: the band reaches the domain center"
                )));
            }
            let outside: Vec<C64> = zeta.iter().zip(&nu).map(|(a, b)| a + b * eps1).collect();
            inner_level = inner_level.max(family.value(t, &inside));
            outer_level = outer_level.min(family.value(t, &outside));
        }
        boundary.push(samples);
    }
    if !(inner_level < 0.0 && outer_level > 0.0) {
        return Err(Error::InvalidInput(format!(
            "eps1 = {eps1} yields a degenerate band [{inner_level:.3e}, {outer_level:.3e}]"
        )));
    }

    let dirs = sampling::sphere_directions(n, opts.band_samples, 0);
    let mut points = Vec::with_capacity(t_grid.len());
    let mut outer_pts: Vec<Vec<C64>> = Vec::new();
    let mut bbox = RealBox::empty(2 * n);
    let mut min_eig = f64::INFINITY;
    for (ti, &t) in t_grid.iter().enumerate() {
        if family.value(t, &center) >= inner_level {
            return Err(Error::InvalidInput(format!(
                "eps1 = {eps1} too large: the band reaches the domain center"
            )));
        }
        let mut pts = Vec::with_capacity(dirs.len() * opts.radial_levels);
        for dir in &dirs {
            let s_in = ray_to_level(family, t, &center, dir, inner_level)?;
            let s_out = ray_to_level(family, t, &center, dir, outer_level)?;
            let outer: Vec<C64> = center.iter().zip(dir).map(|(c, d)| c + d * s_out).collect();
            bbox.include(&outer);
            outer_pts.push(outer);
            for k in 0..opts.radial_levels {
                let s = s_in + (k as f64 + 0.5) / opts.radial_levels as f64 * (s_out - s_in);
                let z: Vec<C64> = center.iter().zip(dir).map(|(c, d)| c + d * s).collect();
                min_eig = min_eig.min(family.sample(t, &z).min_levi_eigenvalue());
                pts.push(ComplexPoint(z));
            }
        }
        for zeta in &boundary[ti] {
            min_eig = min_eig.min(family.sample(t, zeta).min_levi_eigenvalue());
        }
        points.push(pts);
    }
    if !(min_eig > 0.0) {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: min_eig });
    }

    let mut diameter: f64 = 0.0;
    for (i, a) in outer_pts.iter().enumerate() {
        for b in &outer_pts[i + 1..] {
            diameter = diameter.max(sampling::distance(a, b));
        }
    }

    // Uniqueness of the nearest point, monitored on the inner half of the band.
    let mut spread: f64 = 0.0;
    for (ti, &t) in t_grid.iter().enumerate() {
        for z in points[ti].iter().step_by(opts.radial_levels.max(1)).take(8) {
            spread = spread.max(projection_spread(family, t, z)?);
        }
    }

    Ok(BandRegion {
        eps1,
        t_grid,
        inner_level,
        outer_level,
        bbox,
        diameter,
        boundary,
        points,
        min_levi_eigenvalue: min_eig,
        gradient_norm_range: grad_range,
        projection_spread: spread,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    pub(crate) fn spec(name: &str, params: Vec<f64>, t_range: [f64; 2], t_points: usize, n: usize) -> FamilySpec {
        FamilySpec { name: name.into(), params, t_range, t_points, dimension: n }
    }

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn disc() -> Family {
        Family::from_spec(&spec("disc", vec![], [0.0, 0.0], 1, 1)).unwrap()
    }

    fn ball() -> Family {
        Family::from_spec(&spec("ball", vec![], [0.0, 0.0], 1, 2)).unwrap()
    }

    fn perturbed() -> Family {
        Family::from_spec(&spec("perturbed", vec![], [0.0, 0.1], 5, 2)).unwrap()
    }

    #[test]
    fn disc_sample_at_half() {
        let s = evaluate_defining(&disc(), ParameterValue::real(0.0), &[c(0.5, 0.0)]).unwrap();
        assert_abs_diff_eq!(s.r, -0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(s.grad_z[0].re, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s.levi[(0, 0)].re, 1.0, epsilon = 1e-15);
        assert_eq!(s.hess_zz[(0, 0)], c(0.0, 0.0));
    }

    #[test]
    fn ball_sample_at_origin() {
        let s = evaluate_defining(&ball(), ParameterValue::real(0.0), &[c(0.0, 0.0); 2]).unwrap();
        assert_eq!(s.r, -1.0);
        assert!(s.grad_z.iter().all(|g| g.norm() == 0.0));
        assert_eq!(s.levi, DMatrix::identity(2, 2));
    }

    #[test]
    fn perturbed_at_zero_parameter_is_the_ball() {
        let (p, b) = (perturbed(), ball());
        for z in sampling::sphere_directions(2, 20, 3) {
            let z: Vec<C64> = z.iter().map(|v| v * 0.7).collect();
            assert_eq!(p.sample(ParameterValue::real(0.0), &z), b.sample(ParameterValue::real(0.0), &z));
        }
    }

    #[test]
    fn dimension_mismatch_and_unknown_family() {
        let e = evaluate_defining(&ball(), ParameterValue::real(0.0), &[c(0.0, 0.0)]);
        assert!(matches!(e, Err(Error::DimensionMismatch { expected: 2, found: 1 })));
        let e = Family::from_spec(&spec("torus", vec![], [0.0, 0.0], 1, 2));
        assert!(matches!(e, Err(Error::UnknownFamily(_))));
    }

    #[test]
    fn selftest_exact_on_ball() {
        let b = ball();
        for z in [[c(0.1, 0.2), c(-0.3, 0.4)], [c(0.9, 0.0), c(0.0, -0.2)]] {
            let rep = derivative_selftest(&b, ParameterValue::real(0.0), &z, 1e-5).unwrap();
            assert!(rep.max() <= 1e-8, "{rep:?}");
        }
    }

    #[test]
    fn selftest_perturbed_family() {
        let rep = derivative_selftest(&perturbed(), ParameterValue::real(0.1), &[c(0.3, 0.0), c(0.2, 0.0)], 1e-5)
            .unwrap();
        assert!(rep.max() <= 1e-6, "{rep:?}");
    }

    #[test]
    fn selftest_rejects_bad_step() {
        let z = [c(0.1, 0.0), c(0.0, 0.0)];
        for step in [0.0, -1e-5, 0.5] {
            assert!(matches!(
                derivative_selftest(&ball(), ParameterValue::real(0.0), &z, step),
                Err(Error::InvalidInput(_))
            ));
        }
    }

    #[test]
    fn ellipsoid_selftest_and_levi() {
        let f = Family::from_spec(&spec("ellipsoid", vec![1.0, 2.0, 0.5], [0.0, 0.2], 3, 2)).unwrap();
        let t = ParameterValue::real(0.2);
        let z = [c(0.3, -0.1), c(0.5, 0.7)];
        let rep = derivative_selftest(&f, t, &z, 1e-5).unwrap();
        assert!(rep.max() <= 1e-7, "{rep:?}");
        let s = f.sample(t, &z);
        assert_abs_diff_eq!(s.levi[(1, 1)].re, 1.0 / (2.0 * 1.1f64).powi(2), epsilon = 1e-14);
    }

    #[test]
    fn projections() {
        let t = ParameterValue::real(0.0);
        let z = project_to_boundary(&disc(), t, &[c(0.5, 0.0)]).unwrap();
        assert_abs_diff_eq!((z[0] - c(1.0, 0.0)).norm(), 0.0, epsilon = 1e-12);
        let z = project_to_boundary(&ball(), t, &[c(0.0, 0.0), c(0.5, 0.0)]).unwrap();
        assert!(sampling::distance(&z, &[c(0.0, 0.0), c(1.0, 0.0)]) < 1e-12);
        let on = [c(0.6, 0.0), c(0.0, 0.8)];
        let z = project_to_boundary(&ball(), t, &on).unwrap();
        assert_eq!(z.coords(), &on);
    }

    #[test]
    fn projection_is_idempotent_and_normal() {
        let f = perturbed();
        let t = ParameterValue::real(0.1);
        for dir in sampling::sphere_directions(2, 12, 5) {
            let z: Vec<C64> = dir.iter().map(|d| d * 0.85).collect();
            let zeta = project_to_boundary(&f, t, &z).unwrap();
            assert!(f.value(t, &zeta).abs() <= 1e-10);
            let again = project_to_boundary(&f, t, &zeta).unwrap();
            assert!(sampling::distance(&again, &zeta) < 1e-9);
            // z − ζ is parallel to the real gradient at ζ.
            let nu = unit_normal(&f, t, &zeta);
            let d: Vec<C64> = z.iter().zip(zeta.iter()).map(|(a, b)| a - b).collect();
            let along: f64 = d.iter().zip(&nu).map(|(a, b)| a.re * b.re + a.im * b.im).sum();
            let perp: f64 = d
                .iter()
                .zip(&nu)
                .map(|(a, b)| (a - b * along).norm_sqr())
                .sum::<f64>()
                .sqrt();
            assert!(perp < 1e-9, "tangential residual {perp}");
            assert!(projection_spread(&f, t, &z).unwrap() < 1e-8);
        }
    }

    #[test]
    fn boundary_samples() {
        let t = ParameterValue::real(0.0);
        let pts = sample_boundary(&disc(), t, 4).unwrap();
        let expect = [c(1.0, 0.0), c(0.0, 1.0), c(-1.0, 0.0), c(0.0, -1.0)];
        for (p, e) in pts.iter().zip(expect) {
            assert!((p[0] - e).norm() < 1e-12);
        }
        for p in sample_boundary(&ball(), t, 32).unwrap() {
            let s = ball().sample(t, &p);
            assert!((s.dbar_gradient_norm() - 1.0).abs() < 1e-10);
            assert!((sampling::norm(&p) - 1.0).abs() < 1e-10);
        }
        assert!(matches!(sample_boundary(&disc(), t, 3), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn disc_band_geometry() {
        let band = build_band(&disc(), 0.1, &BandOptions::default()).unwrap();
        assert_abs_diff_eq!(band.inner_level, 0.81 - 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(band.outer_level, 1.21 - 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(band.diameter, 2.2, epsilon = 1e-9);
        let t = ParameterValue::real(0.0);
        assert!(band.contains(&disc(), t, &[c(0.95, 0.0)]));
        assert!(!band.contains(&disc(), t, &[c(0.85, 0.0)]));
        assert!(!band.contains(&disc(), t, &[c(0.0, 1.15)]));
    }

    #[test]
    fn perturbed_band() {
        let f = perturbed();
        let band = build_band(&f, 0.1, &BandOptions::default()).unwrap();
        assert!(band.min_levi_eigenvalue > 0.9);
        for (ti, t) in band.t_grid.iter().enumerate() {
            for zeta in &band.boundary[ti] {
                assert!(band.contains(&f, *t, zeta));
            }
            // sign convention: negative at the center, positive past the outer edge
            assert!(f.value(*t, &f.center()) < 0.0);
            for dir in sampling::sphere_directions(2, 16, 2) {
                let far: Vec<C64> = dir.iter().map(|d| d * 1.2).collect();
                assert!(f.value(*t, &far) > band.outer_level);
            }
        }
        assert!(band.projection_spread < 1e-8);
    }

    #[test]
    fn band_rejects_nonpositive_eps() {
        assert!(matches!(build_band(&disc(), 0.0, &BandOptions::default()), Err(Error::InvalidInput(_))));
        assert!(build_band(&disc(), 1.2, &BandOptions::default()).is_err());
    }

    #[test]
    fn t_grid_is_inclusive() {
        let g = spec("perturbed", vec![], [0.0, 0.1], 5, 2).t_grid();
        assert_eq!(g.len(), 5);
        assert_abs_diff_eq!(g[4].re(), 0.1, epsilon = 1e-15);
    }
}
