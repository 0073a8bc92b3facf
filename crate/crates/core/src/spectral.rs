//! Galerkin approximation of `D_p^2 = 2 box_p` on functions (sections of
//! `L^p` over `CP^1`) and the Fourier filter `F` used for spectral localisation.
//!
//! The trial space is spanned by smooth sections
//! `s = z^{a} zbar^{b} (1 + |z|^2)^{-e} q(u)` of angular frequency `m = a - b`,
//! where `m` runs over `[-d, p + d]`, `e = max(0, -m, m - p)` is the excess
//! beyond the holomorphic range and `q` is a polynomial of degree `<= d - e`
//! in `u = |z|^2 / (1 + |z|^2)`. Writing `alpha = |p - m|`, `beta = |m|`, the
//! Fubini–Study norm of such a section is `int u^beta (1 - u)^alpha q^2 du`,
//! so `q` is taken from the Jacobi polynomials `P_j^{(alpha, beta)}(2u - 1)`,
//! normalised for that weight. The space grows with `d`, so Galerkin
//! eigenvalues decrease monotonically towards the true ones.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::geometry::{zeta_floor, GeometryError, ModelSurface, SampleGrid, Weight};
use crate::quadrature::{build_rule, QuadratureError, QuadratureRule};
use crate::summation::{Compensated, CompensatedComplex};

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("spectral computations are implemented on CP^1 only")]
    UnsupportedDimension,
    #[error("tensor power must be at least 1")]
    InvalidDegree,
    #[error("rule built for p_max = {rule} cannot resolve p + d = {needed}")]
    UnderResolved { rule: u32, needed: u32 },
    #[error("mass matrix is not positive definite in block m = {block}")]
    IndefiniteMass { block: i64 },
    #[error("epsilon must lie in (0, 1], got {0}")]
    InvalidEpsilon(f64),
    #[error("zeta must lie in (0, 1], got {0}")]
    InvalidZeta(f64),
    #[error("filter profile covers |a| <= {cap}, but sqrt(zeta p) = {needed}")]
    ProfileTooShort { cap: f64, needed: f64 },
    #[error("profile was built for zeta = {profile}, not {requested}")]
    ZetaMismatch { profile: f64, requested: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

pub type Result<T> = std::result::Result<T, SpectralError>;

/// `P_j^{(alpha, beta)}(x)` for `j = 0..=n`.
pub fn jacobi_all(n: usize, alpha: f64, beta: f64, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(1.0);
    if n == 0 {
        return out;
    }
    out.push(0.5 * (alpha - beta) + 0.5 * (alpha + beta + 2.0) * x);
    for k in 2..=n {
        let kf = k as f64;
        let s = 2.0 * kf + alpha + beta;
        let a1 = 2.0 * kf * (kf + alpha + beta) * (s - 2.0);
        let a2 = (s - 1.0) * (alpha * alpha - beta * beta);
        let a3 = (s - 2.0) * (s - 1.0) * s;
        let a4 = 2.0 * (kf + alpha - 1.0) * (kf + beta - 1.0) * s;
        let next = ((a2 + a3 * x) * out[k - 1] - a4 * out[k - 2]) / a1;
        out.push(next);
    }
    out
}

/// `ln int_0^1 u^beta (1 - u)^alpha P_j^{(alpha, beta)}(2u - 1)^2 du` for integer parameters.
fn ln_jacobi_norm(j: u64, alpha: u64, beta: u64) -> f64 {
    crate::ln_factorial(j + alpha) + crate::ln_factorial(j + beta)
        - ((2 * j + alpha + beta + 1) as f64).ln()
        - crate::ln_factorial(j + alpha + beta)
        - crate::ln_factorial(j)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct GalerkinElement {
    /// Angular frequency `a - b`.
    pub m: i64,
    /// Degree of `q`.
    pub j: u32,
    pub excess: u32,
}

impl GalerkinElement {
    pub fn alpha(&self, p: u32) -> u32 {
        (p as i64 - self.m).unsigned_abs() as u32
    }

    pub fn beta(&self) -> u32 {
        self.m.unsigned_abs() as u32
    }

    /// Power of `zbar` in the section.
    fn zbar_power(&self) -> u32 {
        if self.m < 0 {
            self.m.unsigned_abs() as u32
        } else {
            0
        }
    }

    pub fn is_holomorphic(&self, p: u32) -> bool {
        self.j == 0 && self.m >= 0 && self.m <= p as i64
    }
}

#[derive(Clone, Debug)]
pub struct GalerkinSpace {
    pub p: u32,
    pub d: u32,
    /// Ordered by `m`, then `j`; the holomorphic element of each block comes first.
    pub elements: Vec<GalerkinElement>,
}

impl GalerkinSpace {
    pub fn new(p: u32, d: u32) -> Result<Self> {
        if p < 1 {
            return Err(SpectralError::InvalidDegree);
        }
        let mut elements = Vec::new();
        for m in -(d as i64)..=(p + d) as i64 {
            let excess = 0.max(-m).max(m - p as i64) as u32;
            for j in 0..=(d - excess) {
                elements.push(GalerkinElement { m, j, excess });
            }
        }
        Ok(Self { p, d, elements })
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Contiguous index ranges of the angular blocks.
    pub fn blocks(&self) -> Vec<(i64, std::ops::Range<usize>)> {
        let mut out: Vec<(i64, std::ops::Range<usize>)> = Vec::new();
        for (i, e) in self.elements.iter().enumerate() {
            match out.last_mut() {
                Some((m, r)) if *m == e.m => r.end = i + 1,
                _ => out.push((e.m, i..i + 1)),
            }
        }
        out
    }

    /// Radial profiles `(R, D)` at height `u` for the elements of one block:
    /// `|s|^2 e^{-2p phi_0} = R(u)^2` and `2 |dbar s|^2 e^{-2p phi_0} = 4 pi D(u)^2`
    /// pointwise, with the angular phase `e^{i m arg z}` split off.
    fn block_profiles(&self, range: &std::ops::Range<usize>, u: f64) -> (Vec<f64>, Vec<f64>) {
        let first = self.elements[range.start];
        let (alpha, beta) = (first.alpha(self.p) as f64, first.beta() as f64);
        let (a_int, b_int) = (first.alpha(self.p) as u64, first.beta() as u64);
        let b0 = first.zbar_power() as f64;
        let e = first.excess as f64;
        let nmax = range.len() - 1;
        let x = 2.0 * u - 1.0;
        let pj = jacobi_all(nmax, alpha, beta, x);
        let dp = if nmax > 0 { jacobi_all(nmax - 1, alpha + 1.0, beta + 1.0, x) } else { vec![] };
        let ln_pre = 0.5 * (beta * u.ln() + alpha * (1.0 - u).ln());
        let su = (u * (1.0 - u)).sqrt();
        let mut r = Vec::with_capacity(range.len());
        let mut dv = Vec::with_capacity(range.len());
        for j in 0..=nmax {
            let scale = (ln_pre - 0.5 * ln_jacobi_norm(j as u64, a_int, b_int)).exp();
            let q = pj[j];
            // dq/du = 2 dP/dx = (j + alpha + beta + 1) P_{j-1}^{(alpha+1, beta+1)}.
            let dq = if j == 0 { 0.0 } else { (j as f64 + alpha + beta + 1.0) * dp[j - 1] };
            let mut bracket = su * dq;
            if b0 > 0.0 {
                bracket += b0 * q / su;
            }
            if e > 0.0 {
                bracket -= e * q * (u / (1.0 - u)).sqrt();
            }
            r.push(scale * q);
            dv.push(scale * bracket);
        }
        (r, dv)
    }
}

/// Mass and stiffness matrices of `(D_p^2, L^2(p phi))` on the Galerkin space.
#[derive(Clone, Debug)]
pub struct GalerkinMatrices {
    pub space: GalerkinSpace,
    pub mass: DMatrix<C64>,
    pub stiffness: DMatrix<C64>,
    /// True when the weight couples no two angular blocks.
    pub block_diagonal: bool,
}

pub fn assemble(
    surface: &ModelSurface,
    weight: &dyn Weight,
    p: u32,
    d: u32,
    rule: &QuadratureRule,
) -> Result<GalerkinMatrices> {
    if surface.dim() != 1 {
        return Err(SpectralError::UnsupportedDimension);
    }
    if rule.meta.p_max < p + d || rule.rings.is_none() {
        return Err(SpectralError::UnderResolved { rule: rule.meta.p_max, needed: p + d });
    }
    let space = GalerkinSpace::new(p, d)?;
    let rings = rule.rings.as_ref().expect("checked above");
    let block_diagonal = weight.is_rotation_invariant();
    let blocks = space.blocks();
    let span = (p + 2 * d) as usize;
    let bandwidth = if block_diagonal { 0 } else { span };
    let na = rule.meta.n_angular;
    let twiddle: Vec<C64> =
        (0..na).map(|l| C64::from_polar(1.0, 2.0 * PI * l as f64 / na as f64)).collect();
    let n = space.len();

    type Part = (Vec<CompensatedComplex>, Vec<CompensatedComplex>);
    let per_ring: Vec<Result<(Vec<f64>, Vec<f64>, Vec<C64>)>> = rings
        .par_iter()
        .map(|ring| {
            let mut lw = Vec::with_capacity(ring.angles);
            for node in &rule.nodes[ring.start..ring.start + ring.angles] {
                let phi = weight.value(node);
                if !phi.is_finite() {
                    return Err(GeometryError::NonFinite { what: "weight value", point: node.to_string() }.into());
                }
                lw.push(-2.0 * p as f64 * phi);
            }
            let top = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let factors: Vec<f64> = lw.iter().map(|l| (l - top).exp()).collect();
            let fourier: Vec<C64> = (-(bandwidth as i64)..=bandwidth as i64)
                .map(|k| {
                    let mut acc = CompensatedComplex::default();
                    for (l, f) in factors.iter().enumerate() {
                        acc.add(twiddle[(k * l as i64).rem_euclid(na as i64) as usize] * *f);
                    }
                    acc.value() / na as f64
                })
                .collect();
            let amp = (0.5 * top).exp();
            let mut r = vec![0.0; n];
            let mut dv = vec![0.0; n];
            for (_, range) in &blocks {
                let (rb, db) = space.block_profiles(range, ring.u);
                for (off, idx) in range.clone().enumerate() {
                    r[idx] = rb[off] * amp;
                    dv[idx] = db[off] * amp;
                }
            }
            Ok((r, dv, fourier))
        })
        .collect();

    let mut acc: Part = (vec![CompensatedComplex::default(); n * n], vec![CompensatedComplex::default(); n * n]);
    for (ring, data) in rings.iter().zip(per_ring) {
        let (r, dv, fourier) = data?;
        let w = ring.weight;
        for i in 0..n {
            let mi = space.elements[i].m;
            for j in 0..n {
                let k = space.elements[j].m - mi;
                if k.unsigned_abs() as usize > bandwidth {
                    continue;
                }
                let f = fourier[(k + bandwidth as i64) as usize];
                acc.0[i * n + j].add(f * (w * r[i] * r[j]));
                acc.1[i * n + j].add(f * (4.0 * PI * w * dv[i] * dv[j]));
            }
        }
    }
    let mass = DMatrix::from_fn(n, n, |i, j| acc.0[i * n + j].value());
    let stiffness = DMatrix::from_fn(n, n, |i, j| acc.1[i * n + j].value());
    let half = C64::new(0.5, 0.0);
    Ok(GalerkinMatrices {
        space,
        mass: (&mass + mass.adjoint()) * half,
        stiffness: (&stiffness + stiffness.adjoint()) * half,
        block_diagonal,
    })
}

fn generalized_eigenvalues(a: &DMatrix<C64>, m: &DMatrix<C64>, block: i64) -> Result<Vec<f64>> {
    let t = crate::bergman::orthonormalize_matrix(m).map_err(|_| SpectralError::IndefiniteMass { block })?;
    let c = t.adjoint() * a * &t;
    let c = (&c + c.adjoint()) * C64::new(0.5, 0.0);
    Ok(SymmetricEigen::new(c).eigenvalues.iter().copied().collect())
}

impl GalerkinMatrices {
    /// Sorted generalized eigenvalues of `(A, M)`.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.space.len());
        if self.block_diagonal {
            let blocks = self.space.blocks();
            let parts: Vec<Result<Vec<f64>>> = blocks
                .par_iter()
                .map(|(m, r)| {
                    let k = r.len();
                    let a = self.stiffness.view((r.start, r.start), (k, k)).into_owned();
                    let mm = self.mass.view((r.start, r.start), (k, k)).into_owned();
                    generalized_eigenvalues(&a, &mm, *m)
                })
                .collect();
            for p in parts {
                out.extend(p?);
            }
        } else {
            out = generalized_eigenvalues(&self.stiffness, &self.mass, i64::MIN)?;
        }
        out.sort_by(f64::total_cmp);
        Ok(out)
    }

    /// Indices of the holomorphic elements.
    pub fn holomorphic_indices(&self) -> Vec<usize> {
        let p = self.space.p;
        (0..self.space.len()).filter(|&i| self.space.elements[i].is_holomorphic(p)).collect()
    }

    /// Smallest Rayleigh quotient over the given trial vectors, for checks.
    pub fn rayleigh(&self, v: &nalgebra::DVector<C64>) -> f64 {
        let num = (v.adjoint() * &self.stiffness * v)[(0, 0)].re;
        let den = (v.adjoint() * &self.mass * v)[(0, 0)].re;
        num / den
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumReport {
    pub p: u32,
    pub d: u32,
    pub dim: usize,
    pub eigenvalues: Vec<f64>,
    pub kernel_dim: usize,
    pub gap: f64,
    pub zeta: f64,
    pub bound: f64,
    pub ratio: f64,
    pub threshold: f64,
}

pub fn zero_threshold(p: u32) -> f64 {
    1e-6 * 2.0 * PI * p as f64
}

pub fn spectrum_at(surface: &ModelSurface, weight: &dyn Weight, p: u32, d: u32, zeta: f64) -> Result<SpectrumReport> {
    let rule = build_rule(surface, p + d)?;
    let mats = assemble(surface, weight, p, d, &rule)?;
    let eigenvalues = mats.eigenvalues()?;
    let threshold = zero_threshold(p);
    let kernel_dim = eigenvalues.iter().filter(|&&l| l.abs() < threshold).count();
    let gap = eigenvalues.iter().copied().find(|&l| l >= threshold).unwrap_or(f64::INFINITY);
    let bound = 2.0 * PI * zeta * p as f64;
    Ok(SpectrumReport {
        p,
        d,
        dim: mats.space.len(),
        eigenvalues,
        kernel_dim,
        gap,
        zeta,
        bound,
        ratio: gap / bound,
        threshold,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum GapStatus {
    Converged,
    Inconclusive,
}

#[derive(Clone, Debug, Serialize)]
pub struct GapStudy {
    pub ladder: Vec<SpectrumReport>,
    /// Relative change of the gap on the last refinement.
    pub movement: f64,
    pub status: GapStatus,
    /// Fixed-index eigenvalues never increased along the ladder.
    pub monotone: bool,
    pub zeta: f64,
}

impl GapStudy {
    pub fn last(&self) -> &SpectrumReport {
        self.ladder.last().expect("ladder is never empty")
    }
}

pub const CONVERGENCE_TOLERANCE: f64 = 0.01;

/// `d` in `{p/2, p, 3p/2}` (rounded, at least 1).
pub fn default_ladder(p: u32) -> Vec<u32> {
    vec![(p / 2).max(1), p.max(2), (3 * p).div_ceil(2).max(3)]
}

/// Gap study along a refinement ladder; `zeta = None` measures the floor on the
/// certification grid.
pub fn gap_report(
    surface: &ModelSurface,
    weight: &dyn Weight,
    p: u32,
    ladder: &[u32],
    zeta: Option<f64>,
) -> Result<GapStudy> {
    let zeta = match zeta {
        Some(z) => z,
        None => zeta_floor(surface, weight, &SampleGrid::certification(surface))?.0,
    };
    let reports: Vec<Result<SpectrumReport>> =
        ladder.par_iter().map(|&d| spectrum_at(surface, weight, p, d, zeta)).collect();
    let ladder = reports.into_iter().collect::<Result<Vec<_>>>()?;
    let movement = if ladder.len() >= 2 {
        let (a, b) = (ladder[ladder.len() - 2].gap, ladder[ladder.len() - 1].gap);
        (a - b).abs() / b
    } else {
        f64::INFINITY
    };
    let mut monotone = true;
    for w in ladder.windows(2) {
        let tol = 1e-8 * w[0].eigenvalues.last().copied().unwrap_or(1.0).abs().max(1.0);
        for (coarse, fine) in w[0].eigenvalues.iter().zip(&w[1].eigenvalues) {
            if *fine > coarse + tol {
                monotone = false;
            }
        }
    }
    let status = if movement < CONVERGENCE_TOLERANCE { GapStatus::Converged } else { GapStatus::Inconclusive };
    Ok(GapStudy { ladder, movement, status, monotone, zeta })
}

/// `h(t) = e^{-1/t}` for `t > 0`.
fn glue(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        (-1.0 / t).exp()
    }
}

/// The plateau bump: `1` on `|v| <= eps/2`, `0` on `|v| >= eps`, and
/// `h(s) / (h(s) + h(1 - s))` with `s = (eps - |v|) / (eps/2)` in between.
pub fn bump(eps: f64, v: f64) -> f64 {
    let a = v.abs();
    if a <= 0.5 * eps {
        1.0
    } else if a >= eps {
        0.0
    } else {
        let s = (eps - a) / (0.5 * eps);
        glue(s) / (glue(s) + glue(1.0 - s))
    }
}

const PANEL_ORDER: usize = 24;

/// Composite Gauss–Legendre nodes on `[-eps, eps]`, symmetric about 0, with
/// panel breaks at `+-eps/2` and enough panels to resolve `e^{i v b}`.
fn filter_nodes(eps: f64, b: f64) -> Vec<(f64, f64)> {
    let gl: Vec<(f64, f64)> = gauss_quad::legendre::GaussLegendre::new(PANEL_ORDER.try_into().unwrap())
        .as_node_weight_pairs()
        .to_vec();
    let per_half = 4 + (b.abs() * eps / PI).ceil() as usize;
    let mut nodes = Vec::new();
    for (lo, hi) in [(0.0, 0.5 * eps), (0.5 * eps, eps)] {
        let h = (hi - lo) / per_half as f64;
        for k in 0..per_half {
            let a = lo + k as f64 * h;
            for &(x, w) in &gl {
                let v = a + 0.5 * h * (x + 1.0);
                nodes.push((v, 0.5 * h * w));
            }
        }
    }
    let mut out: Vec<(f64, f64)> = nodes.iter().map(|&(v, w)| (-v, w)).collect();
    out.extend(nodes);
    out
}

/// `F_1(b) = int e^{i v b} f(v) dv / int f` at `zeta = 1`; `F_zeta(a) = F_1(zeta a)`.
fn filter_unit(eps: f64, b: f64) -> C64 {
    let mut num = CompensatedComplex::default();
    let mut den = Compensated::default();
    let nodes = filter_nodes(eps, b);
    // Sum the symmetric halves pairwise so that the odd part cancels in order.
    let half = nodes.len() / 2;
    for i in 0..half {
        let (vn, w) = nodes[i];
        let (vp, _) = nodes[half + i];
        let f = bump(eps, vp) * w;
        num.add(C64::from_polar(f, vn * b));
        num.add(C64::from_polar(f, vp * b));
        den.add(2.0 * f);
    }
    num.value() / den.value()
}

pub const FILTER_CAP: f64 = 20_000.0;

#[derive(Clone, Debug, Serialize)]
pub struct FilterProfile {
    pub eps: f64,
    pub zeta: f64,
    pub a: Vec<f64>,
    pub values: Vec<C64>,
    /// `sup_a |a|^m |F(a)|` over the sampled grid, `m = 0..=4`.
    pub moments: [f64; 5],
    /// Largest `|a|` covered.
    pub cap: f64,
    /// Requested sample points dropped because `zeta |a|` exceeded the cap.
    pub omitted: usize,
}

impl FilterProfile {
    pub fn max_imag(&self) -> f64 {
        self.values.iter().map(|v| v.im.abs()).fold(0.0, f64::max)
    }
}

/// Samples in the natural variable `b = zeta a`: `[0, b_max]` with step `db`.
pub fn default_filter_grid(zeta: f64) -> Vec<f64> {
    let (b_max, db): (f64, f64) = (200.0, 0.02);
    (0..=(b_max / db).round() as usize).map(|i| i as f64 * db / zeta).collect()
}

pub fn filter_build(eps: f64, zeta: f64, grid: &[f64]) -> Result<FilterProfile> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(SpectralError::InvalidEpsilon(eps));
    }
    if !(zeta > 0.0 && zeta <= 1.0) {
        return Err(SpectralError::InvalidZeta(zeta));
    }
    let kept: Vec<f64> = grid.iter().copied().filter(|a| (zeta * a).abs() <= FILTER_CAP).collect();
    let omitted = grid.len() - kept.len();
    let values: Vec<C64> = kept.par_iter().map(|&a| filter_unit(eps, zeta * a)).collect();
    let mut moments = [0.0f64; 5];
    for (a, v) in kept.iter().zip(&values) {
        for (m, slot) in moments.iter_mut().enumerate() {
            *slot = slot.max(a.abs().powi(m as i32) * v.norm());
        }
    }
    let cap = kept.iter().fold(0.0f64, |c, a| c.max(a.abs()));
    Ok(FilterProfile { eps, zeta, a: kept, values, moments, cap, omitted })
}

/// `sup_{|a| >= sqrt(zeta p)} |F(a)|` over the profile samples: an upper bound
/// for `||F(D_p) - P_p||` by the spectral theorem, given the gap.
pub fn projector_gap_bound(profile: &FilterProfile, p: u32, zeta: f64) -> Result<f64> {
    if (profile.zeta - zeta).abs() > 1e-15 {
        return Err(SpectralError::ZetaMismatch { profile: profile.zeta, requested: zeta });
    }
    let needed = (zeta * p as f64).sqrt();
    if profile.cap < needed {
        return Err(SpectralError::ProfileTooShort { cap: profile.cap, needed });
    }
    Ok(profile
        .a
        .iter()
        .zip(&profile.values)
        .filter(|(a, _)| a.abs() >= needed)
        .map(|(_, v)| v.norm())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ZeroWeight, HeightWeight};
    use crate::quadrature::build_rule;
    use approx::assert_abs_diff_eq;

    #[test]
    fn jacobi_recurrence_matches_closed_forms() {
        // P_2^{(a,b)}(1) = C(2 + a, 2).
        let v = jacobi_all(3, 3.0, 1.0, 1.0);
        assert_abs_diff_eq!(v[2], 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v[3], 20.0, epsilon = 1e-12);
        // Legendre P_2(x) = (3x^2 - 1)/2.
        assert_abs_diff_eq!(jacobi_all(2, 0.0, 0.0, 0.3)[2], (3.0 * 0.09 - 1.0) / 2.0, epsilon = 1e-14);
    }

    #[test]
    fn space_dimension_and_blocks() {
        let s = GalerkinSpace::new(4, 3).unwrap();
        assert_eq!(s.len(), (3 + 1) * (4 + 1 + 3));
        assert_eq!(s.blocks().len(), 4 + 1 + 2 * 3);
        assert_eq!(s.elements.iter().filter(|e| e.is_holomorphic(4)).count(), 5);
    }

    #[test]
    fn fs_mass_is_identity_and_holomorphic_rows_vanish() {
        let surface = ModelSurface::projective_line();
        let rule = build_rule(&surface, 10).unwrap();
        let m = assemble(&surface, &ZeroWeight::new(1), 6, 4, &rule).unwrap();
        let n = m.space.len();
        assert!((m.mass.clone() - DMatrix::<C64>::identity(n, n)).norm() < 1e-10);
        for i in m.holomorphic_indices() {
            assert!(m.stiffness.row(i).iter().all(|c| *c == C64::new(0.0, 0.0)));
        }
    }

    #[test]
    fn fs_spectrum_matches_closed_form() {
        // On CP^1 with the Fubini–Study metric, D_p^2 acts on functions with
        // eigenvalues 4 pi k (p + k + 1), k >= 0, multiplicity p + 2k + 1.
        let surface = ModelSurface::projective_line();
        let r = spectrum_at(&surface, &ZeroWeight::new(1), 8, 6, 1.0).unwrap();
        assert_eq!(r.kernel_dim, 9);
        assert_abs_diff_eq!(r.gap, 4.0 * PI * 10.0, epsilon = 1e-8);
        let k1 = r.eigenvalues.iter().filter(|l| (*l - 4.0 * PI * 10.0).abs() < 1e-6).count();
        assert_eq!(k1, 11);
        assert!(r.ratio >= 0.9);
        let r0 = spectrum_at(&surface, &ZeroWeight::new(1), 2, 0, 1.0).unwrap();
        assert!(r0.eigenvalues.iter().all(|l| l.abs() < 1e-12));
    }

    #[test]
    fn ladder_is_monotone_for_family_weight() {
        let surface = ModelSurface::projective_line();
        let w = crate::geometry::build_family_weight(
            &surface,
            0.5,
            std::sync::Arc::new(HeightWeight::degenerate_default(1)),
        )
        .unwrap();
        let study = gap_report(&surface, &w, 8, &[2, 4, 6], Some(0.5)).unwrap();
        assert!(study.monotone);
        assert!(study.ladder.iter().all(|r| r.kernel_dim == 9));
        assert!(study.ladder.iter().all(|r| r.eigenvalues[0] > -1e-8 * r.eigenvalues.last().unwrap()));
    }

    #[test]
    fn holomorphic_block_reproduces_the_gram_matrix() {
        let surface = ModelSurface::projective_line();
        let w = crate::geometry::TiltWeight::new(0.15);
        let (p, d) = (6, 2);
        let rule = build_rule(&surface, p + d).unwrap();
        let m = assemble(&surface, &w, p, d, &rule).unwrap();
        assert!(!m.block_diagonal);
        let g = crate::bergman::gram(&crate::sections::basis_for(&surface, p).unwrap(), &w, &rule).unwrap();
        let idx = m.holomorphic_indices();
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                assert!((m.mass[(i, j)] - g.entries[(a, b)]).norm() < 1e-8);
            }
        }
        let ev = m.eigenvalues().unwrap();
        assert_eq!(ev.iter().filter(|l| l.abs() < zero_threshold(p)).count(), 7);
        assert!(ev[0] > -1e-8 * ev.last().unwrap());
    }

    #[test]
    fn filter_basics() {
        let prof = filter_build(0.5, 1.0, &[0.0, 1.0, 5.0, 10.0, 37.5]).unwrap();
        assert_abs_diff_eq!(prof.values[0].re, 1.0, epsilon = 1e-12);
        assert!(prof.max_imag() < 1e-12);
        let neg = filter_build(0.5, 1.0, &[-5.0]).unwrap();
        assert!((neg.values[0] - prof.values[2]).norm() < 1e-14);
        let a = filter_build(0.5, 1.0, &default_filter_grid(1.0)).unwrap();
        let b = filter_build(0.5, 0.5, &default_filter_grid(0.5)).unwrap();
        let growth = b.moments[2] / a.moments[2];
        assert!((3.5..=4.5).contains(&growth), "{growth}");
        assert!(projector_gap_bound(&a, 1, 1.0).unwrap() > 0.9);
        assert!(matches!(projector_gap_bound(&a, 4, 0.5), Err(SpectralError::ZetaMismatch { .. })));
        let short = filter_build(0.5, 1.0, &[0.0, 1.0]).unwrap();
        assert!(matches!(projector_gap_bound(&short, 100, 1.0), Err(SpectralError::ProfileTooShort { .. })));
    }
}
