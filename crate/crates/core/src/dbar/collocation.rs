//! Weighted least-squares collocation for `∂̄v = α` in `C^n`, `n ≥ 2`.
//!
//! `v = Σ c_m ẑ^a conj(ẑ)^b` over `|a| + |b| ≤ D`, `|b| ≥ 1`, with
//! `ẑ = (z − centre)/scale`. Holomorphic monomials are left out since `∂̄`
//! annihilates them. Each node contributes one row per coordinate `j`,
//! weighted by a taper that vanishes on the boundary so the solution depends
//! continuously on the domain.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use num_complex::Complex64 as C64;
use rayon::prelude::*;

use super::{DbarData, SolverSettings};
use crate::error::{Error, Result};
use crate::sampling;

/// Largest accepted ratio `max |R_ii| / min |R_ii|`.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Clone, Debug)]
pub struct PolyField {
    center: Vec<C64>,
    scale: f64,
    /// `(a, b)` exponent pairs.
    exponents: Vec<(Vec<u32>, Vec<u32>)>,
    coeffs: Vec<C64>,
    /// Coefficient of the enrichment function, if one was used.
    enrichment: Option<(C64, std::sync::Arc<dyn EnrichmentEval>)>,
    pub condition: f64,
    pub degree: usize,
}

pub(crate) trait EnrichmentEval: Send + Sync + std::fmt::Debug {
    fn eval(&self, z: &[C64]) -> Option<(C64, Vec<C64>)>;
}

struct DataEnrichment(std::sync::Arc<dyn DbarData>);

impl std::fmt::Debug for DataEnrichment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("DataEnrichment")
    }
}

impl EnrichmentEval for DataEnrichment {
    fn eval(&self, z: &[C64]) -> Option<(C64, Vec<C64>)> {
        self.0.enrichment(z)
    }
}

/// Multi-indices `(a, b)` with `|a| + |b| ≤ degree`, `|b| ≥ 1`, in graded order.
pub fn exponents(n: usize, degree: usize) -> Vec<(Vec<u32>, Vec<u32>)> {
    fn compositions(len: usize, total: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if prefix.len() == len - 1 {
            let used: u32 = prefix.iter().sum();
            let mut v = prefix.clone();
            v.push(total - used);
            out.push(v);
            return;
        }
        let used: u32 = prefix.iter().sum();
        for k in (0..=total - used).rev() {
            prefix.push(k);
            compositions(len, total, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    for d in 1..=degree as u32 {
        let mut all = Vec::new();
        compositions(2 * n, d, &mut Vec::new(), &mut all);
        for e in all {
            let (a, b) = e.split_at(n);
            if b.iter().sum::<u32>() >= 1 {
                out.push((a.to_vec(), b.to_vec()));
            }
        }
    }
    out
}

fn powers(zh: &[C64], degree: usize) -> (Vec<Vec<C64>>, Vec<Vec<C64>>) {
    let one = C64::new(1.0, 0.0);
    let mut p = Vec::with_capacity(zh.len());
    let mut q = Vec::with_capacity(zh.len());
    for z in zh {
        let mut row = vec![one; degree + 1];
        let mut crow = vec![one; degree + 1];
        for k in 1..=degree {
            row[k] = row[k - 1] * z;
            crow[k] = crow[k - 1] * z.conj();
        }
        p.push(row);
        q.push(crow);
    }
    (p, q)
}

fn taper(d: f64, width: f64) -> f64 {
    let x = (d / width).clamp(0.0, 1.0);
    x * x * x * (10.0 + x * (-15.0 + 6.0 * x))
}

impl PolyField {
    fn normalize(&self, z: &[C64]) -> Vec<C64> {
        z.iter().zip(&self.center).map(|(a, c)| (a - c) / self.scale).collect()
    }

    /// Rows `∂̄_j ψ_m(z)` for all basis functions and `j`.
    fn dbar_rows(&self, z: &[C64]) -> Vec<Vec<C64>> {
        let n = z.len();
        let zh = self.normalize(z);
        let (p, q) = powers(&zh, self.degree);
        let mut rows = vec![Vec::with_capacity(self.exponents.len()); n];
        for (a, b) in &self.exponents {
            let mut hol = C64::new(1.0, 0.0);
            for k in 0..n {
                hol *= p[k][a[k] as usize];
            }
            for (j, row) in rows.iter_mut().enumerate() {
                if b[j] == 0 {
                    row.push(C64::new(0.0, 0.0));
                    continue;
                }
                let mut v = hol * (b[j] as f64 / self.scale);
                for k in 0..n {
                    let e = if k == j { b[k] - 1 } else { b[k] };
                    v *= q[k][e as usize];
                }
                row.push(v);
            }
        }
        rows
    }

    fn basis_values(&self, z: &[C64]) -> Vec<C64> {
        let n = z.len();
        let zh = self.normalize(z);
        let (p, q) = powers(&zh, self.degree);
        self.exponents
            .iter()
            .map(|(a, b)| {
                let mut v = C64::new(1.0, 0.0);
                for k in 0..n {
                    v *= p[k][a[k] as usize] * q[k][b[k] as usize];
                }
                v
            })
            .collect()
    }

    pub fn build(shared: &std::sync::Arc<dyn DbarData>, s: &SolverSettings) -> Result<Self> {
        let data = shared.as_ref();
        let n = data.dimension();
        if s.collocation_degree == 0 {
            return Err(Error::InvalidInput("collocation_degree must be positive".into()));
        }
        let bbox = data.bbox();
        let center: Vec<C64> = (0..n)
            .map(|j| C64::new(0.5 * (bbox.lo[2 * j] + bbox.hi[2 * j]), 0.5 * (bbox.lo[2 * j + 1] + bbox.hi[2 * j + 1])))
            .collect();
        let scale = 0.5 * bbox.diagonal() / (2.0f64).sqrt();
        let mut field = PolyField {
            center,
            scale,
            exponents: exponents(n, s.collocation_degree),
            coeffs: Vec::new(),
            enrichment: None,
            condition: 1.0,
            degree: s.collocation_degree,
        };

        let nodes: Vec<(Vec<C64>, f64)> = sampling::halton_in_box(&bbox, s.collocation_nodes, 11)
            .into_iter()
            .filter(|z| data.level(z) < 0.0)
            .map(|z| {
                let w = taper(data.boundary_distance(&z), s.boundary_clearance);
                (z, w)
            })
            .filter(|(_, w)| *w > 0.0)
            .collect();

        let use_enrichment = !nodes.is_empty() && nodes.iter().all(|(z, _)| data.enrichment(z).is_some());
        let m = field.exponents.len() + use_enrichment as usize;
        let rows = nodes.len() * n;
        if rows < m {
            return Err(Error::IllConditioned(f64::INFINITY));
        }

        let blocks: Vec<(Vec<Vec<C64>>, Vec<C64>)> = nodes
            .par_iter()
            .map(|(z, w)| {
                let mut r = field.dbar_rows(z);
                if use_enrichment {
                    let (_, d) = data.enrichment(z).expect("checked above");
                    for (row, dj) in r.iter_mut().zip(d) {
                        row.push(dj);
                    }
                }
                let rhs = data.alpha(z);
                (
                    r.into_iter().map(|row| row.into_iter().map(|v| v * *w).collect()).collect(),
                    rhs.into_iter().map(|v| v * *w).collect(),
                )
            })
            .collect();
        let mut a = DMatrix::<C64>::zeros(rows, m);
        let mut b = DVector::<C64>::zeros(rows);
        for (k, (rs, rhs)) in blocks.into_iter().enumerate() {
            for j in 0..n {
                for (col, v) in rs[j].iter().enumerate() {
                    a[(k * n + j, col)] = *v;
                }
                b[k * n + j] = rhs[j];
            }
        }
        // column equilibration
        let norms: Vec<f64> = (0..m).map(|c| a.column(c).norm()).collect();
        for (c, nrm) in norms.iter().enumerate() {
            if *nrm > 0.0 {
                a.column_mut(c).scale_mut(1.0 / nrm);
            }
        }
        let qr = a.qr();
        let r = qr.r();
        let diag: Vec<f64> = (0..m).map(|i| r[(i, i)].norm()).collect();
        let dmax = diag.iter().cloned().fold(0.0, f64::max);
        let dmin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        let condition = if dmin > 0.0 { dmax / dmin } else { f64::INFINITY };
        if !(condition <= MAX_CONDITION) {
            return Err(Error::IllConditioned(condition));
        }
        let qtb = qr.q().adjoint() * b;
        let x = r.solve_upper_triangular(&qtb).ok_or(Error::IllConditioned(condition))?;
        let mut coeffs: Vec<C64> = x.iter().zip(&norms).map(|(v, nrm)| if *nrm > 0.0 { v / *nrm } else { *v }).collect();
        if use_enrichment {
            let c = coeffs.pop().expect("enrichment column");
            field.enrichment = Some((c, std::sync::Arc::new(DataEnrichment(shared.clone()))));
        }
        field.coeffs = coeffs;
        field.condition = condition;
        Ok(field)
    }

    pub fn value(&self, z: &[C64]) -> C64 {
        let mut v: C64 = self.basis_values(z).iter().zip(&self.coeffs).map(|(b, c)| b * c).sum();
        if let Some((c, e)) = &self.enrichment {
            if let Some((u, _)) = e.eval(z) {
                v += c * u;
            }
        }
        v
    }

    pub fn dbar(&self, z: &[C64]) -> Vec<C64> {
        let mut out: Vec<C64> = self
            .dbar_rows(z)
            .into_iter()
            .map(|row| row.iter().zip(&self.coeffs).map(|(b, c)| b * c).sum())
            .collect();
        if let Some((c, e)) = &self.enrichment {
            if let Some((_, d)) = e.eval(z) {
                out.iter_mut().zip(d).for_each(|(o, dj)| *o += c * dj);
            }
        }
        out
    }

    /// `max |v|` over quasi-random points of the domain, refined by local
    /// random search around the largest values.
    pub fn sup_norm(&self, data: &dyn DbarData, count: usize) -> f64 {
        let bbox = data.bbox();
        let mut pts: Vec<(f64, Vec<C64>)> = sampling::halton_in_box(&bbox, count, 13)
            .into_par_iter()
            .filter(|z| data.level(z) < 0.0)
            .map(|z| (self.value(&z).norm(), z))
            .collect();
        pts.sort_by(|a, b| b.0.total_cmp(&a.0));
        let width = bbox.lo.iter().zip(&bbox.hi).map(|(a, b)| b - a).fold(0.0, f64::max);
        let step0 = width * (count as f64).powf(-1.0 / bbox.lo.len() as f64);
        pts.truncate(SUP_SEEDS);
        pts.into_par_iter()
            .enumerate()
            .map(|(k, (mut best, mut z))| {
                let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
                let mut step = step0;
                for _ in 0..SUP_ROUNDS {
                    for _ in 0..SUP_TRIES {
                        let w = sampling::random_in_ball(&mut rng, &z, step);
                        if data.level(&w) < 0.0 {
                            let v = self.value(&w).norm();
                            if v > best {
                                best = v;
                                z = w;
                            }
                        }
                    }
                    step *= 0.5;
                }
                best
            })
            .reduce(|| 0.0, f64::max)
    }
}

const SUP_SEEDS: usize = 24;
const SUP_ROUNDS: usize = 8;
const SUP_TRIES: usize = 40;

#[cfg(test)]
mod tests {
    use super::super::testing::BallData;
    use super::super::*;
    use super::*;
    use std::sync::Arc;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn exponent_count() {
        // C(D+2n, 2n) − C(D+n, n) monomials with |b| ≥ 1
        assert_eq!(exponents(2, 6).len(), 210 - 28);
        assert_eq!(exponents(1, 3).len(), 10 - 4);
        assert!(exponents(2, 4).iter().all(|(_, b)| b.iter().sum::<u32>() >= 1));
    }

    /// `v* = z̄₁·bump(|z|²)` with `bump(s) = exp(−s)`; `α = ∂̄v*`.
    fn manufactured() -> BallData<impl Fn(&[C64]) -> Vec<C64> + Send + Sync> {
        BallData {
            center: vec![c(0.0, 0.0); 2],
            radius: 1.0,
            alpha: |z: &[C64]| {
                let s = z[0].norm_sqr() + z[1].norm_sqr();
                let e = (-s).exp();
                // ∂̄_j(z̄₁ e^{−s}) = δ_{1j} e^{−s} − z̄₁ z_j e^{−s}
                vec![(C64::new(1.0, 0.0) - z[0].conj() * z[0]) * e, -z[0].conj() * z[1] * e]
            },
        }
    }

    #[test]
    fn manufactured_solution_recovered() {
        let data = Arc::new(manufactured());
        let settings = SolverSettings { collocation_degree: 8, collocation_nodes: 4000, ..Default::default() };
        let sol = solve_dbar(&DbarProblem { data: data.clone(), settings }).unwrap();
        assert!(sol.residual.max <= 1e-2, "{:?}", sol.residual);
        // v − v* is holomorphic: compare ∂̄ images only
        for (z, d) in test_points(data.as_ref(), 200) {
            if d > 0.05 {
                let a = data.alpha(&z);
                let dv = sol.dbar(&z);
                assert!((a[0] - dv[0]).norm() <= 1e-2 && (a[1] - dv[1]).norm() <= 1e-2);
            }
        }
    }

    #[test]
    fn nested_degrees_do_not_increase_residual() {
        let data = Arc::new(manufactured());
        let p = DbarProblem { data, settings: SolverSettings { collocation_nodes: 8000, ..Default::default() } };
        let rows = quadrature_convergence_test(&p, &[6, 10]).unwrap();
        assert!(rows[1].residual_max <= rows[0].residual_max, "{rows:?}");
        assert!(quadrature_convergence_test(&p, &[6]).is_err());
    }

    #[test]
    fn zero_form_gives_zero() {
        let data = BallData { center: vec![c(0.0, 0.0); 2], radius: 1.0, alpha: |_z: &[C64]| vec![c(0.0, 0.0); 2] };
        let sol = solve_dbar(&DbarProblem { data: Arc::new(data), settings: SolverSettings::default() }).unwrap();
        assert_eq!(sol.sup_norm, 0.0);
    }

    #[test]
    fn linearity_of_dbar_images() {
        let s = SolverSettings::default();
        let f1 = |z: &[C64]| vec![z[0].conj() * 0.0 + c(1.0, 0.0), c(0.0, 0.0)];
        let f2 = |z: &[C64]| vec![z[1] * 0.5, z[0] * 0.5];
        let sum = move |z: &[C64]| {
            let (a, b) = (f1(z), f2(z));
            vec![a[0] + b[0], a[1] + b[1]]
        };
        let mk = |f: Box<dyn Fn(&[C64]) -> Vec<C64> + Send + Sync>| {
            solve_dbar(&DbarProblem {
                data: Arc::new(BallData { center: vec![c(0.0, 0.0); 2], radius: 1.0, alpha: f }),
                settings: s.clone(),
            })
            .unwrap()
        };
        let (s1, s2, s12) = (mk(Box::new(f1)), mk(Box::new(f2)), mk(Box::new(sum)));
        let tol = s.residual_tol;
        for z in sampling::sphere_directions(2, 20, 9) {
            let z: Vec<C64> = z.iter().map(|v| v * 0.6).collect();
            let (a, b, ab) = (s1.dbar(&z), s2.dbar(&z), s12.dbar(&z));
            for j in 0..2 {
                assert!((a[j] + b[j] - ab[j]).norm() <= 2.0 * tol);
            }
        }
    }
}
