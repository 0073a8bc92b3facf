//! Monomial bases of `H^0(CP^n, O(p))` and their pointwise weighted values.
//!
//! In the affine chart the section `Z_0^{p - |a|} Z^a` reads `z^a`, with
//! `|sigma|^2_{h_0} = (1 + |z|^2)^{-p}`; in the antipodal chart of `CP^1` the
//! section `Z_0^{p-k} Z_1^k` reads `w^{p-k}`.

use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::geometry::{Chart, ChartPoint, GeometryError, ModelSurface, Weight};

#[derive(Debug, Error)]
pub enum SectionError {
    #[error("tensor power must be at least 1")]
    InvalidDegree,
    #[error("tensor power {p} exceeds the conditioning guard {max}")]
    DegreeTooLarge { p: u32, max: u32 },
    #[error("expected {expected} preconditioning constants, got {got}")]
    PrecondLength { expected: usize, got: usize },
    #[error("preconditioning constant {index} is not positive and finite")]
    PrecondValue { index: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, SectionError>;

pub const DEFAULT_MAX_DEGREE: u32 = 512;

#[derive(Clone, Debug, PartialEq)]
pub enum Precond {
    /// `c_a = sqrt((p + n)! / (a! (p - |a|)!))`: exactly orthonormal for `phi = 0`.
    FubiniStudy,
    None,
    Custom(Vec<f64>),
}

#[derive(Clone, Debug)]
pub struct SectionBasis {
    pub n: usize,
    pub p: u32,
    /// Multi-indices `a` with `|a| <= p`, graded then lexicographic.
    pub exponents: Vec<Vec<u32>>,
    pub precond: Vec<f64>,
    ln_precond: Vec<f64>,
}

fn multi_indices(n: usize, p: u32) -> Vec<Vec<u32>> {
    match n {
        1 => (0..=p).map(|k| vec![k]).collect(),
        _ => {
            let mut out = Vec::new();
            for deg in 0..=p {
                for a1 in (0..=deg).rev() {
                    out.push(vec![a1, deg - a1]);
                }
            }
            out
        }
    }
}

fn ln_fs_constant(n: usize, p: u32, a: &[u32]) -> f64 {
    let total: u32 = a.iter().sum();
    let mut v = crate::ln_factorial((p as usize + n) as u64) - crate::ln_factorial((p - total) as u64);
    for &ai in a {
        v -= crate::ln_factorial(ai as u64);
    }
    0.5 * v
}

pub fn basis_for(surface: &ModelSurface, p: u32) -> Result<SectionBasis> {
    basis_with(surface, p, Precond::FubiniStudy, DEFAULT_MAX_DEGREE)
}

pub fn basis_with(surface: &ModelSurface, p: u32, precond: Precond, max_degree: u32) -> Result<SectionBasis> {
    if p < 1 {
        return Err(SectionError::InvalidDegree);
    }
    if p > max_degree {
        return Err(SectionError::DegreeTooLarge { p, max: max_degree });
    }
    let n = surface.dim();
    let exponents = multi_indices(n, p);
    let ln_precond: Vec<f64> = match precond {
        Precond::FubiniStudy => exponents.iter().map(|a| ln_fs_constant(n, p, a)).collect(),
        Precond::None => vec![0.0; exponents.len()],
        Precond::Custom(c) => {
            if c.len() != exponents.len() {
                return Err(SectionError::PrecondLength { expected: exponents.len(), got: c.len() });
            }
            if let Some(index) = c.iter().position(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(SectionError::PrecondValue { index });
            }
            c.iter().map(|x| x.ln()).collect()
        }
    };
    Ok(SectionBasis {
        n,
        p,
        precond: ln_precond.iter().map(|l| l.exp()).collect(),
        exponents,
        ln_precond,
    })
}

impl SectionBasis {
    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn ln_precond(&self) -> &[f64] {
        &self.ln_precond
    }

    /// Exponent of element `j` in the chart coordinate of `chart`.
    pub fn chart_exponent(&self, j: usize, chart: Chart) -> Vec<u32> {
        match chart {
            Chart::Affine => self.exponents[j].clone(),
            Chart::Antipodal => vec![self.p - self.exponents[j][0]],
        }
    }

    /// Unweighted chart values `c_j z^{a_j}` (no metric factor).
    pub fn eval_raw(&self, pt: &ChartPoint) -> Vec<C64> {
        (0..self.len())
            .map(|j| {
                let a = self.chart_exponent(j, pt.chart);
                let mut v = C64::new(self.precond[j], 0.0);
                for (zi, &ai) in pt.z.iter().zip(&a) {
                    v *= zi.powu(ai);
                }
                v
            })
            .collect()
    }
}

/// `v_j = c_j z^{a_j} e^{-p (phi_0 + phi)(z)}`, so `|v_j| = |s_j(z)|_{p phi}`.
///
/// Every entry is assembled in the log domain and exponentiated once.
pub fn eval_weighted(basis: &SectionBasis, weight: &dyn Weight, pt: &ChartPoint) -> Result<Vec<C64>> {
    let surface = ModelSurface::new(basis.n)?;
    surface.check_point(pt)?;
    let phi = weight.value(pt);
    if !phi.is_finite() {
        return Err(GeometryError::NonFinite { what: "weight value", point: pt.to_string() }.into());
    }
    let ln_metric = -(basis.p as f64) * (surface.fs_potential(pt) + phi);
    Ok(eval_with_ln_metric(basis, pt, ln_metric))
}

pub(crate) fn eval_with_ln_metric(basis: &SectionBasis, pt: &ChartPoint, ln_metric: f64) -> Vec<C64> {
    let ln_abs: Vec<f64> = pt.z.iter().map(|z| z.norm().ln()).collect();
    let args: Vec<f64> = pt.z.iter().map(|z| z.arg()).collect();
    (0..basis.len())
        .map(|j| {
            let a = basis.chart_exponent(j, pt.chart);
            let mut ln_mod = basis.ln_precond[j] + ln_metric;
            let mut phase = 0.0;
            for i in 0..a.len() {
                if a[i] > 0 {
                    ln_mod += a[i] as f64 * ln_abs[i];
                    phase += a[i] as f64 * args[i];
                }
            }
            if ln_mod == f64::NEG_INFINITY {
                C64::new(0.0, 0.0)
            } else {
                C64::from_polar(ln_mod.exp(), phase)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ZeroWeight;
    use approx::assert_abs_diff_eq;

    #[test]
    fn counts_and_precond() {
        let line = ModelSurface::projective_line();
        let b = basis_for(&line, 2).unwrap();
        assert_eq!(b.len(), 3);
        let expected = [3f64.sqrt(), 6f64.sqrt(), 3f64.sqrt()];
        for (c, e) in b.precond.iter().zip(expected) {
            assert_abs_diff_eq!(*c, e, epsilon = 1e-14);
        }
        assert_eq!(basis_for(&line, 1).unwrap().len(), 2);
        let plane = ModelSurface::projective_plane();
        assert_eq!(basis_for(&plane, 1).unwrap().len(), 3);
        assert_eq!(basis_for(&plane, 6).unwrap().len(), 28);
        assert!(matches!(basis_for(&line, 600), Err(SectionError::DegreeTooLarge { .. })));
        assert!(matches!(basis_for(&line, 0), Err(SectionError::InvalidDegree)));
    }

    #[test]
    fn origin_values() {
        let line = ModelSurface::projective_line();
        let w = ZeroWeight::new(1);
        let origin = ChartPoint::line(C64::new(0.0, 0.0));
        let v = eval_weighted(&basis_for(&line, 2).unwrap(), &w, &origin).unwrap();
        assert_abs_diff_eq!(v[0].re, 3f64.sqrt(), epsilon = 1e-14);
        assert_eq!(v[1], C64::new(0.0, 0.0));
        assert_eq!(v[2], C64::new(0.0, 0.0));
        let v = eval_weighted(&basis_for(&line, 40).unwrap(), &w, &origin).unwrap();
        assert_abs_diff_eq!(v[0].norm(), 41f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn unit_circle_sum_and_chart_agreement() {
        let line = ModelSurface::projective_line();
        let w = ZeroWeight::new(1);
        let b = basis_for(&line, 2).unwrap();
        let z = C64::from_polar(1.0, 0.7);
        let v = eval_weighted(&b, &w, &ChartPoint::line(z)).unwrap();
        assert_abs_diff_eq!(v.iter().map(|c| c.norm_sqr()).sum::<f64>(), 3.0, epsilon = 1e-13);
        // Same point seen from the antipodal chart: pointwise norms agree.
        let z = C64::new(0.4, -1.3);
        let b = basis_for(&line, 7).unwrap();
        let a = eval_weighted(&b, &w, &ChartPoint::line(z)).unwrap();
        let c = eval_weighted(&b, &w, &ChartPoint::antipodal(z.inv())).unwrap();
        for (x, y) in a.iter().zip(&c) {
            assert_abs_diff_eq!(x.norm(), y.norm(), epsilon = 1e-13);
        }
    }

    #[test]
    fn large_powers_stay_finite_and_only_the_top_section_survives_at_infinity() {
        let line = ModelSurface::projective_line();
        let w = ZeroWeight::new(1);
        let b = basis_for(&line, 400).unwrap();
        let mut prev = f64::INFINITY;
        for r in [10.0, 1e3, 1e6] {
            let v = eval_weighted(&b, &w, &ChartPoint::line(C64::new(r, 0.0))).unwrap();
            assert!(v.iter().all(|c| c.re.is_finite() && c.im.is_finite()));
            let m = v[..400].iter().map(|c| c.norm()).fold(0.0, f64::max);
            assert!(m < prev);
            prev = m;
            // Z_1^p does not vanish at infinity: |v_p| -> sqrt(p + 1).
            assert!(v[400].norm() <= 401f64.sqrt());
        }
        assert!(prev < 1e-3);
    }
}
