//! Gram assembly, orthonormalisation and evaluation of the Bergman kernel.
//!
//! With `v(z)` the weighted evaluation vector of the section basis, the Gram
//! matrix is `G = sum_i w_i conj(v(z_i)) v(z_i)^T`, i.e. `G_jk = <s_j, s_k>` with
//! the inner product antilinear in its first slot. From `G = L L^H` the
//! transform `T = L^{-H}` satisfies `T^H G T = I`, and `u(z) = T^T v(z)` are the
//! values of an orthonormal basis at `z`.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use twofloat::TwoFloat;

use crate::dd::{DdComplex, DdMatrix};
use crate::geometry::{ChartPoint, GeometryError, ModelSurface, Weight};
use crate::quadrature::{QuadratureError, QuadratureRule, Ring};
use crate::sections::{eval_weighted, SectionBasis, SectionError};
use crate::summation::CompensatedComplex;

#[derive(Debug, Error)]
pub enum BergmanError {
    #[error("Gram matrix is not positive definite (pivot {pivot}, smallest eigenvalue ~{min_eigenvalue:.3e}); quadrature under-resolved or precision exhausted")]
    Indefinite { pivot: usize, min_eigenvalue: f64 },
    #[error("Gram condition estimate {condition:.3e} exceeds {threshold:.1e} and extended precision is disabled")]
    PrecisionExhausted { condition: f64, threshold: f64 },
    #[error("rule of dimension {rule} does not match basis of dimension {basis}")]
    DimensionMismatch { rule: usize, basis: usize },
    #[error("rule built for p_max = {rule} cannot resolve p = {p}")]
    UnderResolved { rule: u32, p: u32 },
    #[error("non-finite Gram entry ({j}, {k})")]
    NonFinite { j: usize, k: usize },
    #[error(transparent)]
    Section(#[from] SectionError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, BergmanError>;

/// When to leave double precision.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrecisionPolicy {
    /// Scaled condition estimate above which the Gram matrix is re-assembled
    /// and factored in extended precision.
    pub threshold: f64,
    /// Extra mantissa bits of the extended mode; `0` disables escalation.
    /// The double-double backend provides up to 53.
    pub extra_bits: u32,
    /// Skip the double-precision attempt.
    pub force_extended: bool,
}

impl Default for PrecisionPolicy {
    fn default() -> Self {
        Self { threshold: 1e12, extra_bits: 53, force_extended: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Precision {
    Double,
    Extended { extra_bits: u32 },
}

#[derive(Clone, Debug)]
pub struct GramMatrix {
    pub entries: DMatrix<C64>,
    pub p: u32,
    pub weight_label: String,
    /// Condition number of `D^{-1/2} G D^{-1/2}` with `D = diag(G)`.
    pub condition_estimate: f64,
    /// Condition number of `G` itself.
    pub raw_condition: f64,
    pub precision: Precision,
    extended: Option<DdMatrix>,
}

const RING_CHUNK: usize = 8;
const NODE_CHUNK: usize = 2048;

fn check_inputs(basis: &SectionBasis, rule: &QuadratureRule) -> Result<()> {
    if rule.meta.n != basis.n {
        return Err(BergmanError::DimensionMismatch { rule: rule.meta.n, basis: basis.n });
    }
    if rule.meta.p_max < basis.p {
        return Err(BergmanError::UnderResolved { rule: rule.meta.p_max, p: basis.p });
    }
    Ok(())
}

/// Per-ring data: `a_j = exp(ln c_j + j ln r + M/2)` and the angular Fourier
/// coefficients `W(d) = mean_l exp(lw_l - M) e^{i d theta_l}` of the metric
/// factor `exp(lw) = exp(-2p (phi_0 + phi))`, with `M = max_l lw_l`.
struct RingTerms {
    amplitude: Vec<f64>,
    fourier: Vec<C64>,
}

fn ring_terms(
    basis: &SectionBasis,
    weight: &dyn Weight,
    rule: &QuadratureRule,
    ring: &Ring,
    twiddle: &[C64],
    bandwidth: usize,
) -> Result<RingTerms> {
    let p = basis.p as f64;
    let phi0 = 0.5 * (ring.radius * ring.radius).ln_1p();
    let mut lw = Vec::with_capacity(ring.angles);
    for node in &rule.nodes[ring.start..ring.start + ring.angles] {
        let phi = weight.value(node);
        if !phi.is_finite() {
            return Err(GeometryError::NonFinite { what: "weight value", point: node.to_string() }.into());
        }
        lw.push(-2.0 * p * (phi0 + phi));
    }
    let top = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let factors: Vec<f64> = lw.iter().map(|l| (l - top).exp()).collect();
    let na = ring.angles;
    let mut fourier = vec![C64::new(0.0, 0.0); 2 * bandwidth + 1];
    for (slot, d) in fourier.iter_mut().zip(-(bandwidth as i64)..=bandwidth as i64) {
        let mut acc = CompensatedComplex::default();
        for (l, f) in factors.iter().enumerate() {
            let idx = (d * l as i64).rem_euclid(na as i64) as usize;
            acc.add(twiddle[idx] * *f);
        }
        *slot = acc.value() / na as f64;
    }
    let ln_r = ring.radius.ln();
    let amplitude = basis
        .ln_precond()
        .iter()
        .enumerate()
        .map(|(j, lc)| (lc + basis.exponents[j][0] as f64 * ln_r + 0.5 * top).exp())
        .collect();
    Ok(RingTerms { amplitude, fourier })
}

fn ring_layout(rule: &QuadratureRule) -> Option<&[Ring]> {
    match (&rule.rings, rule.meta.n) {
        (Some(r), 1) => Some(r.as_slice()),
        _ => None,
    }
}

/// Calls `emit(j, k, value)` for every contribution of ring `ring`.
fn for_each_ring_term(
    basis: &SectionBasis,
    ring: &Ring,
    terms: &RingTerms,
    bandwidth: usize,
    mut emit: impl FnMut(usize, usize, C64),
) {
    let m = basis.len();
    for j in 0..m {
        let aj = terms.amplitude[j] * ring.weight;
        if aj == 0.0 {
            continue;
        }
        for k in 0..m {
            let d = k as i64 - j as i64;
            if d.unsigned_abs() as usize > bandwidth {
                continue;
            }
            let w = terms.fourier[(d + bandwidth as i64) as usize];
            emit(j, k, w * (aj * terms.amplitude[k]));
        }
    }
}

fn twiddles(na: usize) -> Vec<C64> {
    (0..na)
        .map(|l| C64::from_polar(1.0, 2.0 * std::f64::consts::PI * l as f64 / na as f64))
        .collect()
}

fn bandwidth_for(basis: &SectionBasis, weight: &dyn Weight) -> usize {
    if weight.is_rotation_invariant() {
        0
    } else {
        basis.p as usize
    }
}

fn assemble_double(basis: &SectionBasis, weight: &dyn Weight, rule: &QuadratureRule) -> Result<DMatrix<C64>> {
    let m = basis.len();
    let partials: Vec<Result<DMatrix<C64>>> = if let Some(rings) = ring_layout(rule) {
        let bw = bandwidth_for(basis, weight);
        let tw = twiddles(rule.meta.n_angular);
        rings
            .par_chunks(RING_CHUNK)
            .map(|chunk| {
                let mut part = DMatrix::zeros(m, m);
                for ring in chunk {
                    let terms = ring_terms(basis, weight, rule, ring, &tw, bw)?;
                    for_each_ring_term(basis, ring, &terms, bw, |j, k, v| part[(j, k)] += v);
                }
                Ok(part)
            })
            .collect()
    } else {
        let idx: Vec<usize> = (0..rule.len()).collect();
        idx.par_chunks(NODE_CHUNK)
            .map(|chunk| {
                let mut part = DMatrix::<C64>::zeros(m, m);
                for &i in chunk {
                    let v = eval_weighted(basis, weight, &rule.nodes[i])?;
                    let w = rule.weights[i];
                    for j in 0..m {
                        let cj = v[j].conj() * w;
                        if cj == C64::new(0.0, 0.0) {
                            continue;
                        }
                        for k in 0..m {
                            part[(j, k)] += cj * v[k];
                        }
                    }
                }
                Ok(part)
            })
            .collect()
    };
    let mut acc = vec![CompensatedComplex::default(); m * m];
    for part in partials {
        let part = part?;
        for j in 0..m {
            for k in 0..m {
                acc[j * m + k].add(part[(j, k)]);
            }
        }
    }
    let g = DMatrix::from_fn(m, m, |j, k| acc[j * m + k].value());
    finite_or_err(&g)?;
    Ok((&g + g.adjoint()) * C64::new(0.5, 0.0))
}

fn assemble_extended(basis: &SectionBasis, weight: &dyn Weight, rule: &QuadratureRule) -> Result<DdMatrix> {
    let m = basis.len();
    let mut g = DdMatrix::zeros(m);
    if let Some(rings) = ring_layout(rule) {
        let bw = bandwidth_for(basis, weight);
        let tw = twiddles(rule.meta.n_angular);
        let terms: Vec<Result<RingTerms>> =
            rings.par_iter().map(|r| ring_terms(basis, weight, rule, r, &tw, bw)).collect();
        for (ring, t) in rings.iter().zip(terms) {
            let t = t?;
            for j in 0..m {
                let aj = t.amplitude[j] * ring.weight;
                for k in 0..m {
                    let d = k as i64 - j as i64;
                    if d.unsigned_abs() as usize > bw {
                        continue;
                    }
                    let w = t.fourier[(d + bw as i64) as usize];
                    let s = TwoFloat::new_mul(aj, t.amplitude[k]);
                    let term = DdComplex { re: s * w.re, im: s * w.im };
                    let cur = g.get(j, k);
                    g.set(j, k, cur + term);
                }
            }
        }
    } else {
        let values: Vec<Result<Vec<C64>>> = rule
            .nodes
            .par_iter()
            .map(|z| eval_weighted(basis, weight, z).map_err(Into::into))
            .collect();
        for (v, &w) in values.into_iter().zip(&rule.weights) {
            let v = v?;
            let ww = TwoFloat::from_f64(w);
            for j in 0..m {
                for k in 0..m {
                    let cur = g.get(j, k);
                    g.set(j, k, cur + DdComplex::conj_mul_exact(v[j], v[k]).scale(ww));
                }
            }
        }
    }
    g.hermitize();
    finite_or_err(&g.to_dmatrix())?;
    Ok(g)
}

fn finite_or_err(g: &DMatrix<C64>) -> Result<()> {
    for j in 0..g.nrows() {
        for k in 0..g.ncols() {
            let v = g[(j, k)];
            if !(v.re.is_finite() && v.im.is_finite()) {
                return Err(BergmanError::NonFinite { j, k });
            }
        }
    }
    Ok(())
}

fn hermitian_eigenvalues(g: &DMatrix<C64>) -> Vec<f64> {
    let mut e: Vec<f64> = SymmetricEigen::new(g.clone()).eigenvalues.iter().copied().collect();
    e.sort_by(f64::total_cmp);
    e
}

fn condition_of(eigs: &[f64]) -> f64 {
    let (lo, hi) = (eigs[0], eigs[eigs.len() - 1]);
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// `(scaled, raw)` condition estimates.
pub fn condition_estimates(g: &DMatrix<C64>) -> (f64, f64) {
    let raw = condition_of(&hermitian_eigenvalues(g));
    let d: Vec<f64> = (0..g.nrows()).map(|i| g[(i, i)].re.max(f64::MIN_POSITIVE).sqrt().recip()).collect();
    let scaled = DMatrix::from_fn(g.nrows(), g.ncols(), |i, j| g[(i, j)] * (d[i] * d[j]));
    (condition_of(&hermitian_eigenvalues(&scaled)), raw)
}

/// Gram matrix in double precision.
pub fn gram(basis: &SectionBasis, weight: &dyn Weight, rule: &QuadratureRule) -> Result<GramMatrix> {
    check_inputs(basis, rule)?;
    let entries = assemble_double(basis, weight, rule)?;
    let (condition_estimate, raw_condition) = condition_estimates(&entries);
    Ok(GramMatrix {
        entries,
        p: basis.p,
        weight_label: weight.label(),
        condition_estimate,
        raw_condition,
        precision: Precision::Double,
        extended: None,
    })
}

/// Gram matrix accumulated in double-double arithmetic.
pub fn gram_extended(
    basis: &SectionBasis,
    weight: &dyn Weight,
    rule: &QuadratureRule,
    extra_bits: u32,
) -> Result<GramMatrix> {
    check_inputs(basis, rule)?;
    let dd = assemble_extended(basis, weight, rule)?;
    let entries = dd.to_dmatrix();
    let (condition_estimate, raw_condition) = condition_estimates(&entries);
    Ok(GramMatrix {
        entries,
        p: basis.p,
        weight_label: weight.label(),
        condition_estimate,
        raw_condition,
        precision: Precision::Extended { extra_bits: extra_bits.min(53) },
        extended: Some(dd),
    })
}

impl GramMatrix {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// `max |G - G^H| / max |G|`.
    pub fn hermitian_defect(&self) -> f64 {
        let scale = self.entries.iter().map(|c| c.norm()).fold(0.0, f64::max);
        (&self.entries - self.entries.adjoint()).iter().map(|c| c.norm()).fold(0.0, f64::max) / scale
    }

    fn indefinite(&self, pivot: usize) -> BergmanError {
        BergmanError::Indefinite {
            pivot,
            min_eigenvalue: hermitian_eigenvalues(&self.entries)[0],
        }
    }
}

/// `T = L^{-H}` from `G = L L^H`; `T^H G T = I`.
pub fn orthonormalize(g: &GramMatrix) -> Result<DMatrix<C64>> {
    if let Some(dd) = &g.extended {
        let l = dd.cholesky().map_err(|pivot| g.indefinite(pivot))?;
        return Ok(l.lower_inverse().to_dmatrix().adjoint());
    }
    orthonormalize_matrix(&g.entries).map_err(|pivot| g.indefinite(pivot))
}

/// Double-precision variant of [`orthonormalize`] for a bare Hermitian matrix;
/// on failure returns the first non-positive pivot.
pub fn orthonormalize_matrix(g: &DMatrix<C64>) -> std::result::Result<DMatrix<C64>, usize> {
    let m = g.nrows();
    let chol = g.clone().cholesky().ok_or_else(|| first_bad_pivot(g))?;
    let l = chol.l();
    // The complex factorisation takes square roots of negative pivots instead
    // of failing, so the diagonal is validated here.
    if let Some(j) = (0..m).find(|&j| !(l[(j, j)].re > 0.0 && l[(j, j)].im == 0.0 && l[(j, j)].re.is_finite())) {
        return Err(j);
    }
    let linv = l
        .solve_lower_triangular(&DMatrix::identity(m, m))
        .ok_or_else(|| first_bad_pivot(g))?;
    Ok(linv.adjoint())
}

fn first_bad_pivot(g: &DMatrix<C64>) -> usize {
    (1..=g.nrows())
        .find(|&k| {
            g.view((0, 0), (k, k))
                .into_owned()
                .cholesky()
                .map_or(true, |c| !(c.l()[(k - 1, k - 1)].re > 0.0 && c.l()[(k - 1, k - 1)].im == 0.0))
        })
        .map_or(0, |k| k - 1)
}

/// Orthonormalised basis ready for kernel evaluation. Immutable once built.
#[derive(Clone, Debug)]
pub struct BergmanEvaluator {
    pub basis: SectionBasis,
    pub transform: DMatrix<C64>,
    pub p: u32,
    pub weight: Arc<dyn Weight>,
    pub condition_estimate: f64,
    pub raw_condition: f64,
    pub precision: Precision,
    gram: DMatrix<C64>,
    transform_t: DMatrix<C64>,
}

impl BergmanEvaluator {
    /// Gram assembly and factorisation with the precision ladder.
    pub fn build(
        basis: SectionBasis,
        weight: Arc<dyn Weight>,
        rule: &QuadratureRule,
        policy: &PrecisionPolicy,
    ) -> Result<Self> {
        let mut attempt = if policy.force_extended && policy.extra_bits > 0 {
            None
        } else {
            let g = gram(&basis, weight.as_ref(), rule)?;
            let ok = g.condition_estimate <= policy.threshold;
            match (ok, orthonormalize(&g)) {
                (true, Ok(t)) => Some((g, t)),
                (_, Err(e)) if policy.extra_bits == 0 => return Err(e),
                (false, _) if policy.extra_bits == 0 => {
                    return Err(BergmanError::PrecisionExhausted {
                        condition: g.condition_estimate,
                        threshold: policy.threshold,
                    })
                }
                _ => None,
            }
        };
        if attempt.is_none() {
            log::info!("p = {}: escalating Gram assembly to extended precision", basis.p);
            let g = gram_extended(&basis, weight.as_ref(), rule, policy.extra_bits)?;
            let t = orthonormalize(&g)?;
            attempt = Some((g, t));
        }
        let (g, t) = attempt.expect("set above");
        Ok(Self::from_parts(basis, weight, g, t))
    }

    fn from_parts(basis: SectionBasis, weight: Arc<dyn Weight>, g: GramMatrix, t: DMatrix<C64>) -> Self {
        Self {
            p: basis.p,
            basis,
            transform_t: t.transpose(),
            transform: t,
            weight,
            condition_estimate: g.condition_estimate,
            raw_condition: g.raw_condition,
            precision: g.precision,
            gram: g.entries,
        }
    }

    pub fn gram(&self) -> &DMatrix<C64> {
        &self.gram
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// `max |T^H G T - I|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let m = self.dim();
        let r = self.transform.adjoint() * &self.gram * &self.transform - DMatrix::<C64>::identity(m, m);
        r.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Values at `z` of the orthonormal basis, in the unitary frame.
    pub fn orthonormal_values(&self, pt: &ChartPoint) -> Result<Vec<C64>> {
        let v = nalgebra::DVector::from_vec(eval_weighted(&self.basis, self.weight.as_ref(), pt)?);
        Ok((&self.transform_t * v).iter().copied().collect())
    }

    /// `P_p(z, z) = sum_m |u_m(z)|^2`.
    pub fn kernel_diagonal(&self, pt: &ChartPoint) -> Result<f64> {
        Ok(self.orthonormal_values(pt)?.iter().map(|c| c.norm_sqr()).sum())
    }

    /// `sup { |s(z)|^2 : ||s|| = 1 } = v^T G^{-1} conj(v)`, solved by LU.
    pub fn kernel_diagonal_extremal(&self, pt: &ChartPoint) -> Result<f64> {
        let v = nalgebra::DVector::from_vec(eval_weighted(&self.basis, self.weight.as_ref(), pt)?);
        let y = self
            .gram
            .clone()
            .lu()
            .solve(&v.map(|c| c.conj()))
            .ok_or(BergmanError::Indefinite { pivot: 0, min_eigenvalue: 0.0 })?;
        Ok(v.iter().zip(y.iter()).map(|(a, b)| a * b).sum::<C64>().re)
    }

    /// `sum_m u_m(z) conj(u_m(z'))`; only its modulus is frame independent.
    pub fn kernel_value(&self, z: &ChartPoint, z2: &ChartPoint) -> Result<C64> {
        let a = self.orthonormal_values(z)?;
        let b = self.orthonormal_values(z2)?;
        Ok(a.iter().zip(&b).map(|(x, y)| x * y.conj()).sum())
    }

    pub fn kernel_offdiag_modulus(&self, z: &ChartPoint, z2: &ChartPoint) -> Result<f64> {
        Ok(self.kernel_value(z, z2)?.norm())
    }

    /// `int P_p(x, x) theta^n / n!`.
    pub fn trace(&self, rule: &QuadratureRule) -> Result<f64> {
        let values: Vec<Result<f64>> = rule.nodes.par_iter().map(|z| self.kernel_diagonal(z)).collect();
        let mut acc = crate::summation::Compensated::default();
        for (v, w) in values.into_iter().zip(&rule.weights) {
            acc.add(v? * w);
        }
        Ok(acc.value())
    }
}

/// Convenience: basis, rule and evaluator for `(surface, weight, p)` with the
/// default sizing.
pub fn evaluator_for(
    surface: &ModelSurface,
    weight: Arc<dyn Weight>,
    p: u32,
    policy: &PrecisionPolicy,
) -> Result<(BergmanEvaluator, QuadratureRule)> {
    let basis = crate::sections::basis_for(surface, p)?;
    let rule = crate::quadrature::build_rule(surface, p)?;
    let ev = BergmanEvaluator::build(basis, weight, &rule, policy)?;
    Ok((ev, rule))
}
