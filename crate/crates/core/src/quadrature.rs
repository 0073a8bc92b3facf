//! Tensor quadrature on the affine chart in compactified coordinates.
//!
//! On `CP^1` the substitution `u = |z|^2 / (1 + |z|^2)` turns `theta` into
//! `du d(arg z) / 2 pi` on `[0, 1] x [0, 2 pi)`, and the Fubini–Study monomial
//! densities `|z|^{2k} (1 + |z|^2)^{-p}` into the polynomials `u^k (1 - u)^{p-k}`.
//! On `CP^2`, `u_j = |z_j|^2 / (1 + |z|^2)` maps `theta^2 / 2` to Lebesgue measure
//! on the unit simplex (volume 1/2), which the Duffy map `u_1 = s`,
//! `u_2 = (1 - s) v` pulls back to the square with Jacobian `1 - s`.

use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Chart, ChartPoint, ModelSurface};
use crate::summation::{Compensated, CompensatedComplex};

#[derive(Debug, Error)]
pub enum QuadratureError {
    #[error("p_max must be at least 1")]
    InvalidOrder,
    #[error("rule needs {nodes} nodes, above the configured cap of {cap}")]
    Sizing { nodes: usize, cap: usize },
    #[error("integrand is not finite at node {index} ({point})")]
    NonFinite { index: usize, point: String },
}

pub type Result<T> = std::result::Result<T, QuadratureError>;

pub const DEFAULT_NODE_CAP: usize = 8_000_000;

/// Node-count overrides; `None` keeps the sizing derived from `p_max`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureOptions {
    pub radial: Option<usize>,
    pub angular: Option<usize>,
    pub node_cap: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RuleMeta {
    pub n: usize,
    pub p_max: u32,
    /// Gauss–Legendre nodes per radial factor (two entries for `n = 2`).
    pub n_radial: Vec<usize>,
    /// Equispaced angles per angular factor.
    pub n_angular: usize,
    pub chart: Chart,
}

/// A circle `|z| = radius` carrying `angles` equispaced nodes of equal weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ring {
    pub u: f64,
    pub radius: f64,
    /// Total weight of the ring; each node carries `weight / angles`.
    pub weight: f64,
    pub start: usize,
    pub angles: usize,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ExactnessReport {
    /// `|sum w - vol| `.
    pub volume_error: f64,
    /// Max relative error on the beta-type monomial integrals at order `p_max`.
    pub max_beta_rel_error: f64,
    pub checked: usize,
}

#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub nodes: Vec<ChartPoint>,
    /// Weights with the density of `theta^n / n!` folded in.
    pub weights: Vec<f64>,
    pub meta: RuleMeta,
    /// Ring layout (present for `n = 1`): nodes `start..start + angles` sit on
    /// one circle at angles `2 pi l / angles`.
    pub rings: Option<Vec<Ring>>,
    pub exactness: ExactnessReport,
}

fn gauss_legendre_unit(count: usize) -> Vec<(f64, f64)> {
    let rule = GaussLegendre::new(NonZeroUsize::new(count.max(1)).unwrap());
    let mut pairs: Vec<(f64, f64)> = rule
        .as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| (0.5 * (x + 1.0), 0.5 * w))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs
}

pub fn build_rule(surface: &ModelSurface, p_max: u32) -> Result<QuadratureRule> {
    build_rule_with(surface, p_max, &QuadratureOptions::default())
}

pub fn build_rule_with(
    surface: &ModelSurface,
    p_max: u32,
    opts: &QuadratureOptions,
) -> Result<QuadratureRule> {
    if p_max < 1 {
        return Err(QuadratureError::InvalidOrder);
    }
    let cap = opts.node_cap.unwrap_or(DEFAULT_NODE_CAP);
    let p = p_max as usize;
    let mut rule = if surface.dim() == 1 {
        let nr = opts.radial.unwrap_or(2 * p + 16);
        let na = opts.angular.unwrap_or(4 * p + 8);
        let total = nr * na;
        if total > cap {
            return Err(QuadratureError::Sizing { nodes: total, cap });
        }
        line_rule(p_max, nr, na)
    } else {
        let ns = opts.radial.unwrap_or(p + 9);
        let nv = opts.radial.map_or(p + 8, |r| r.saturating_sub(1).max(1));
        let na = opts.angular.unwrap_or(2 * p + 4);
        let total = ns.saturating_mul(nv).saturating_mul(na).saturating_mul(na);
        if total > cap {
            return Err(QuadratureError::Sizing { nodes: total, cap });
        }
        plane_rule(p_max, ns, nv, na)
    };
    rule.exactness = exactness(surface, &rule, p_max);
    Ok(rule)
}

fn line_rule(p_max: u32, nr: usize, na: usize) -> QuadratureRule {
    let radial = gauss_legendre_unit(nr);
    let mut nodes = Vec::with_capacity(nr * na);
    let mut weights = Vec::with_capacity(nr * na);
    let mut rings = Vec::with_capacity(nr);
    for &(u, wu) in &radial {
        let radius = (u / (1.0 - u)).sqrt();
        rings.push(Ring { u, radius, weight: wu, start: nodes.len(), angles: na });
        for l in 0..na {
            let angle = 2.0 * PI * l as f64 / na as f64;
            nodes.push(ChartPoint::line(C64::from_polar(radius, angle)));
            weights.push(wu / na as f64);
        }
    }
    QuadratureRule {
        nodes,
        weights,
        meta: RuleMeta { n: 1, p_max, n_radial: vec![nr], n_angular: na, chart: Chart::Affine },
        rings: Some(rings),
        exactness: ExactnessReport::default(),
    }
}

fn plane_rule(p_max: u32, ns: usize, nv: usize, na: usize) -> QuadratureRule {
    let gs = gauss_legendre_unit(ns);
    let gv = gauss_legendre_unit(nv);
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    let wa = 1.0 / (na * na) as f64;
    for &(s, ws) in &gs {
        for &(v, wv) in &gv {
            let (u1, u2) = (s, (1.0 - s) * v);
            let u0 = (1.0 - s) * (1.0 - v);
            let (r1, r2) = ((u1 / u0).sqrt(), (u2 / u0).sqrt());
            let w = ws * wv * (1.0 - s) * wa;
            for l1 in 0..na {
                let z1 = C64::from_polar(r1, 2.0 * PI * l1 as f64 / na as f64);
                for l2 in 0..na {
                    let z2 = C64::from_polar(r2, 2.0 * PI * l2 as f64 / na as f64);
                    nodes.push(ChartPoint::affine(&[z1, z2]));
                    weights.push(w);
                }
            }
        }
    }
    QuadratureRule {
        nodes,
        weights,
        meta: RuleMeta { n: 2, p_max, n_radial: vec![ns, nv], n_angular: na, chart: Chart::Affine },
        rings: None,
        exactness: ExactnessReport::default(),
    }
}

fn exactness(surface: &ModelSurface, rule: &QuadratureRule, p_max: u32) -> ExactnessReport {
    let volume = rule.weights.iter().copied().fold(Compensated::default(), |mut a, w| {
        a.add(w);
        a
    });
    let p = p_max as u64;
    let mut worst = 0.0f64;
    let mut checked = 0;
    // Only radial profiles matter here; integrate them on the radial factor.
    if let Some(rings) = &rule.rings {
        for k in 0..=p {
            let exact = (crate::ln_factorial(k) + crate::ln_factorial(p - k)
                - crate::ln_factorial(p + 1))
            .exp();
            let mut acc = Compensated::default();
            for r in rings {
                acc.add(r.weight * r.u.powi(k as i32) * (1.0 - r.u).powi((p - k) as i32));
            }
            worst = worst.max((acc.value() - exact).abs() / exact);
            checked += 1;
        }
    } else {
        let step = (p / 8).max(1);
        for a in (0..=p).step_by(step as usize) {
            for b in (0..=p - a).step_by(step as usize) {
                let c = p - a - b;
                let exact = (crate::ln_factorial(a) + crate::ln_factorial(b) + crate::ln_factorial(c)
                    - crate::ln_factorial(p + 2))
                .exp();
                let mut acc = Compensated::default();
                for (pt, w) in rule.nodes.iter().zip(&rule.weights) {
                    let t1 = 1.0 + pt.norm_sqr();
                    let u1 = pt.z[0].norm_sqr() / t1;
                    let u2 = pt.z[1].norm_sqr() / t1;
                    acc.add(w * u1.powi(a as i32) * u2.powi(b as i32) * t1.powi(-(c as i32)));
                }
                worst = worst.max((acc.value() - exact).abs() / exact);
                checked += 1;
            }
        }
    }
    ExactnessReport {
        volume_error: (volume.value() - surface.volume()).abs(),
        max_beta_rel_error: worst,
        checked,
    }
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `sum_i w_i f(node_i)`: values are computed in parallel, then reduced in
    /// node order with compensated summation, so the result does not depend on
    /// the thread count.
    pub fn integrate<F>(&self, f: F) -> Result<f64>
    where
        F: Fn(&ChartPoint) -> f64 + Sync,
    {
        let values: Vec<f64> = self.nodes.par_iter().map(&f).collect();
        let mut acc = Compensated::default();
        for (i, (v, w)) in values.iter().zip(&self.weights).enumerate() {
            if !v.is_finite() {
                return Err(self.non_finite(i));
            }
            acc.add(w * v);
        }
        Ok(acc.value())
    }

    pub fn integrate_complex<F>(&self, f: F) -> Result<C64>
    where
        F: Fn(&ChartPoint) -> C64 + Sync,
    {
        let values: Vec<C64> = self.nodes.par_iter().map(&f).collect();
        let mut acc = CompensatedComplex::default();
        for (i, (v, w)) in values.iter().zip(&self.weights).enumerate() {
            if !(v.re.is_finite() && v.im.is_finite()) {
                return Err(self.non_finite(i));
            }
            acc.add(v * *w);
        }
        Ok(acc.value())
    }

    fn non_finite(&self, index: usize) -> QuadratureError {
        QuadratureError::NonFinite { index, point: self.nodes[index].to_string() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn beta(k: u64, p: u64) -> f64 {
        (crate::ln_factorial(k) + crate::ln_factorial(p - k) - crate::ln_factorial(p + 1)).exp()
    }

    #[test]
    fn unit_volume_and_small_beta_integrals() {
        let s = ModelSurface::projective_line();
        let r = build_rule(&s, 2).unwrap();
        assert!((r.integrate(|_| 1.0).unwrap() - 1.0).abs() < 1e-12);
        let v = r.integrate(|z| z.norm_sqr() / (1.0 + z.norm_sqr()).powi(2)).unwrap();
        assert!((v - 1.0 / 6.0).abs() < 1e-10);
        let r8 = build_rule(&s, 8).unwrap();
        let v = r8.integrate(|z| z.norm_sqr().powi(4) / (1.0 + z.norm_sqr()).powi(8)).unwrap();
        assert_relative_eq!(v, 1.0 / 630.0, max_relative = 1e-10);
        assert_relative_eq!(beta(4, 8), 1.0 / 630.0, max_relative = 1e-13);
    }

    #[test]
    fn exactness_up_to_order_64() {
        let s = ModelSurface::projective_line();
        let r = build_rule(&s, 64).unwrap();
        assert!(r.exactness.max_beta_rel_error < 1e-10, "{:?}", r.exactness);
        assert_eq!(r.exactness.checked, 65);
        assert_eq!(r.meta.n_radial, vec![144]);
        assert_eq!(r.meta.n_angular, 264);
    }

    #[test]
    fn odd_harmonics_vanish() {
        let s = ModelSurface::projective_line();
        let r = build_rule(&s, 4).unwrap();
        let v = r
            .integrate_complex(|p| {
                let z = p.z[0];
                let t = z.norm_sqr();
                C64::from_polar(t / (1.0 + t).powi(3), z.arg())
            })
            .unwrap();
        assert!(v.norm() < 1e-12);
    }

    #[test]
    fn plane_rule_volume_and_monomials() {
        let s = ModelSurface::projective_plane();
        let r = build_rule(&s, 3).unwrap();
        assert!(r.exactness.volume_error < 1e-12);
        assert!(r.exactness.max_beta_rel_error < 1e-10);
        let v = r
            .integrate(|p| p.z[0].norm_sqr() * p.z[1].norm_sqr() / (1.0 + p.norm_sqr()).powi(3))
            .unwrap();
        assert_relative_eq!(v, 1.0 / 120.0, max_relative = 1e-10);
    }

    #[test]
    fn sizing_cap_and_non_finite_nodes_are_reported() {
        let s = ModelSurface::projective_line();
        let opts = QuadratureOptions { node_cap: Some(100), ..Default::default() };
        assert!(matches!(build_rule_with(&s, 8, &opts), Err(QuadratureError::Sizing { .. })));
        assert!(matches!(build_rule(&s, 0), Err(QuadratureError::InvalidOrder)));
        let r = build_rule(&s, 1).unwrap();
        let err = r.integrate(|p| if p.z[0].re > 1.0 { f64::NAN } else { 0.0 }).unwrap_err();
        match err {
            QuadratureError::NonFinite { point, .. } => assert!(point.starts_with("z=(")),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn refinement_is_stable() {
        let s = ModelSurface::projective_line();
        let f = |p: &ChartPoint| {
            let t = p.norm_sqr();
            (t / (1.0 + t)).powi(3) * (8.0 * t / (1.0 + t)).exp() / (1.0 + t).powi(5)
        };
        let a = build_rule(&s, 16).unwrap().integrate(f).unwrap();
        let opts = QuadratureOptions { radial: Some(96), angular: Some(144), node_cap: None };
        let b = build_rule_with(&s, 16, &opts).unwrap().integrate(f).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-10);
    }
}
