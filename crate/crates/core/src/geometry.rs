//! Model manifold, Fubini–Study reference data, weights and curvature.
//!
//! Conventions: the reference metric `h_0` on `O(1)` has local weight
//! `phi_0(z) = 1/2 log(1 + |z|^2)`, i.e. `|sigma|^2_{h_0} = exp(-2 phi_0)`, and
//! `d^c = (i / 2pi)(dbar - d)` so that `dd^c u = (i/pi) d dbar u`. The chart
//! matrix of a real (1,1)-form `i sum a_jk dz_j ^ dzbar_k` is `a`, hence the
//! matrix of `omega = omega_0 + dd^c phi` is `(1/pi) Hess_C(phi_0 + phi)`.
//! We take `theta = omega_0`. The Riemannian metric attached to `theta` reads
//! `2 Re sum theta_jk dz_j dzbar_k`, so its chart matrix is `2 theta`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("unsupported complex dimension {0} (expected 1 or 2)")]
    UnsupportedDimension(usize),
    #[error("point has {got} coordinates but the manifold has dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("the {0:?} chart only exists on the projective line")]
    ChartUnavailable(Chart),
    #[error("non-finite {what} at {point}")]
    NonFinite { what: &'static str, point: String },
    #[error("reference metric is not positive definite at {point}")]
    ReferenceMetric { point: String },
    #[error("weight is not omega_0-psh: generalized eigenvalue {value:.3e} at {point}")]
    NotSemiPositive { value: f64, point: String },
    #[error("weight does not degenerate on the certification grid: floor {floor:.3e} at {point}")]
    NotDegenerate { floor: f64, point: String },
    #[error("zeta must lie in (0, 1], got {0}")]
    InvalidZeta(f64),
    #[error("radius {radius} exceeds the chart safety margin {limit}")]
    RadiusTooLarge { radius: f64, limit: f64 },
    #[error("{0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// The two standard charts of `CP^1`; `CP^2` only uses the affine one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Chart {
    /// `z = Z_1 / Z_0`
    Affine,
    /// `w = Z_0 / Z_1 = 1 / z`, covering the point at infinity.
    Antipodal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChartPoint {
    pub chart: Chart,
    pub z: Vec<C64>,
}

impl ChartPoint {
    pub fn affine(z: &[C64]) -> Self {
        Self { chart: Chart::Affine, z: z.to_vec() }
    }

    pub fn line(z: C64) -> Self {
        Self { chart: Chart::Affine, z: vec![z] }
    }

    pub fn antipodal(w: C64) -> Self {
        Self { chart: Chart::Antipodal, z: vec![w] }
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.z.iter().map(|c| c.norm_sqr()).sum()
    }

    /// The global function `u = |Z_1|^2 / |Z|^2` (for `n = 1`) or `1 - |Z_0|^2/|Z|^2`
    /// in general; it equals `|z|^2 / (1 + |z|^2)` in the affine chart.
    pub fn height(&self) -> f64 {
        let t = self.norm_sqr();
        match self.chart {
            Chart::Affine => t / (1.0 + t),
            Chart::Antipodal => 1.0 / (1.0 + t),
        }
    }

    pub fn translated(&self, dz: &[C64]) -> Self {
        Self {
            chart: self.chart,
            z: self.z.iter().zip(dz).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.z.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }
}

impl fmt::Display for ChartPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.chart {
            Chart::Affine => "z",
            Chart::Antipodal => "w",
        };
        write!(f, "{tag}=(")?;
        for (i, c) in self.z.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{:.6}{:+.6}i", c.re, c.im)?;
        }
        write!(f, ")")
    }
}

/// `CP^n` with its Fubini–Study data, `n` in {1, 2}.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelSurface {
    n: usize,
}

impl ModelSurface {
    pub fn new(n: usize) -> Result<Self> {
        match n {
            1 | 2 => Ok(Self { n }),
            _ => Err(GeometryError::UnsupportedDimension(n)),
        }
    }

    pub fn projective_line() -> Self {
        Self { n: 1 }
    }

    pub fn projective_plane() -> Self {
        Self { n: 2 }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// `int_X theta^n / n! = 1 / n!`.
    pub fn volume(&self) -> f64 {
        match self.n {
            1 => 1.0,
            _ => 0.5,
        }
    }

    /// `dim H^0(CP^n, O(p)) = C(p + n, n)`.
    pub fn section_count(&self, p: u32) -> usize {
        crate::binomial(p as u64 + self.n as u64, self.n as u64) as usize
    }

    pub fn check_point(&self, pt: &ChartPoint) -> Result<()> {
        if pt.dim() != self.n {
            return Err(GeometryError::DimensionMismatch { expected: self.n, got: pt.dim() });
        }
        if pt.chart == Chart::Antipodal && self.n != 1 {
            return Err(GeometryError::ChartUnavailable(pt.chart));
        }
        if !pt.is_finite() {
            return Err(GeometryError::NonFinite { what: "coordinate", point: pt.to_string() });
        }
        Ok(())
    }

    /// `phi_0 = 1/2 log(1 + |z|^2)`; the same expression holds in both charts.
    pub fn fs_potential(&self, pt: &ChartPoint) -> f64 {
        0.5 * pt.norm_sqr().ln_1p()
    }

    pub fn fs_gradient(&self, pt: &ChartPoint) -> Vec<C64> {
        let s = 0.5 / (1.0 + pt.norm_sqr());
        pt.z.iter().map(|z| z.conj() * s).collect()
    }

    /// `d^2 phi_0 / dz_j dzbar_k`.
    pub fn fs_complex_hessian(&self, pt: &ChartPoint) -> DMatrix<C64> {
        let n = pt.dim();
        let t1 = 1.0 + pt.norm_sqr();
        DMatrix::from_fn(n, n, |j, k| {
            let delta = if j == k { 1.0 / t1 } else { 0.0 };
            (C64::new(delta, 0.0) - pt.z[j].conj() * pt.z[k] / (t1 * t1)) * 0.5
        })
    }

    pub fn fs_holomorphic_hessian(&self, pt: &ChartPoint) -> DMatrix<C64> {
        let n = pt.dim();
        let t1 = 1.0 + pt.norm_sqr();
        DMatrix::from_fn(n, n, |j, k| -(pt.z[j].conj() * pt.z[k].conj()) * (0.5 / (t1 * t1)))
    }

    /// Chart matrix of `theta = omega_0`.
    pub fn theta_matrix(&self, pt: &ChartPoint) -> DMatrix<C64> {
        self.fs_complex_hessian(pt) / C64::new(PI, 0.0)
    }

    /// Chart matrix of the Riemannian metric attached to `theta`.
    pub fn metric_matrix(&self, pt: &ChartPoint) -> DMatrix<C64> {
        self.theta_matrix(pt) * C64::new(2.0, 0.0)
    }

    /// Density of `theta^n / n!` against Lebesgue measure in the chart.
    pub fn volume_density(&self, pt: &ChartPoint) -> f64 {
        let t1 = 1.0 + pt.norm_sqr();
        t1.powi(-(self.n as i32) - 1) / PI.powi(self.n as i32)
    }
}

/// A real potential `phi` on `X`, with `h = exp(-2 phi) h_0`.
///
/// Derivatives are taken in the coordinate of the point's chart. The default
/// methods fall back to central finite differences (step `1e-4`, one
/// Richardson extrapolation); shipped weights override them analytically.
pub trait Weight: Send + Sync + fmt::Debug {
    fn label(&self) -> String;

    fn dim(&self) -> usize;

    fn value(&self, pt: &ChartPoint) -> f64;

    /// `d phi / dz_j`.
    fn gradient(&self, pt: &ChartPoint) -> Vec<C64> {
        fd::gradient(self, pt, fd::DEFAULT_STEP)
    }

    /// `d^2 phi / dz_j dzbar_k`.
    fn complex_hessian(&self, pt: &ChartPoint) -> DMatrix<C64> {
        fd::complex_hessian(self, pt, fd::DEFAULT_STEP)
    }

    /// `d^2 phi / dz_j dz_k`.
    fn holomorphic_hessian(&self, pt: &ChartPoint) -> DMatrix<C64> {
        fd::holomorphic_hessian(self, pt, fd::DEFAULT_STEP)
    }

    /// `Some(zeta)` when the weight was produced by [`build_family_weight`].
    fn family_param(&self) -> Option<f64> {
        None
    }

    /// Invariance under `z -> e^{i t} z` in every coordinate.
    fn is_rotation_invariant(&self) -> bool {
        false
    }
}

/// Finite-difference derivatives in the real coordinates `(Re z_j, Im z_j)`.
pub mod fd {
    use super::*;

    pub const DEFAULT_STEP: f64 = 1e-4;

    fn shifted(pt: &ChartPoint, shifts: &[(usize, f64)]) -> ChartPoint {
        let mut q = pt.clone();
        for &(axis, h) in shifts {
            let j = axis / 2;
            if axis % 2 == 0 {
                q.z[j].re += h;
            } else {
                q.z[j].im += h;
            }
        }
        q
    }

    fn first<W: Weight + ?Sized>(w: &W, pt: &ChartPoint, a: usize, h: f64) -> f64 {
        (w.value(&shifted(pt, &[(a, h)])) - w.value(&shifted(pt, &[(a, -h)]))) / (2.0 * h)
    }

    fn second<W: Weight + ?Sized>(w: &W, pt: &ChartPoint, a: usize, b: usize, h: f64) -> f64 {
        if a == b {
            let f0 = w.value(pt);
            (w.value(&shifted(pt, &[(a, h)])) - 2.0 * f0 + w.value(&shifted(pt, &[(a, -h)])))
                / (h * h)
        } else {
            (w.value(&shifted(pt, &[(a, h), (b, h)])) - w.value(&shifted(pt, &[(a, h), (b, -h)]))
                - w.value(&shifted(pt, &[(a, -h), (b, h)]))
                + w.value(&shifted(pt, &[(a, -h), (b, -h)])))
                / (4.0 * h * h)
        }
    }

    fn richardson(coarse: f64, fine: f64) -> f64 {
        (4.0 * fine - coarse) / 3.0
    }

    /// Real gradient, Richardson-extrapolated.
    pub fn real_gradient<W: Weight + ?Sized>(w: &W, pt: &ChartPoint, h: f64) -> Vec<f64> {
        (0..2 * pt.dim())
            .map(|a| richardson(first(w, pt, a, h), first(w, pt, a, h / 2.0)))
            .collect()
    }

    /// Real `2n x 2n` Hessian, Richardson-extrapolated and exactly symmetric.
    pub fn real_hessian<W: Weight + ?Sized>(w: &W, pt: &ChartPoint, h: f64) -> DMatrix<f64> {
        let m = 2 * pt.dim();
        let mut out = DMatrix::zeros(m, m);
        for a in 0..m {
            for b in a..m {
                let v = richardson(second(w, pt, a, b, h), second(w, pt, a, b, h / 2.0));
                out[(a, b)] = v;
                out[(b, a)] = v;
            }
        }
        out
    }

    pub fn gradient<W: Weight + ?Sized>(w: &W, pt: &ChartPoint, h: f64) -> Vec<C64> {
        let g = real_gradient(w, pt, h);
        (0..pt.dim()).map(|j| C64::new(g[2 * j], -g[2 * j + 1]) * 0.5).collect()
    }

    /// `(1/4) [H(x_j,x_k) + H(y_j,y_k) + i (H(x_j,y_k) - H(y_j,x_k))]`.
    pub fn complex_hessian_from_real(hr: &DMatrix<f64>) -> DMatrix<C64> {
        let n = hr.nrows() / 2;
        DMatrix::from_fn(n, n, |j, k| {
            let (xj, yj, xk, yk) = (2 * j, 2 * j + 1, 2 * k, 2 * k + 1);
            C64::new(hr[(xj, xk)] + hr[(yj, yk)], hr[(xj, yk)] - hr[(yj, xk)]) * 0.25
        })
    }

    /// `(1/4) [H(x_j,x_k) - H(y_j,y_k) - i (H(x_j,y_k) + H(y_j,x_k))]`.
    pub fn holomorphic_hessian_from_real(hr: &DMatrix<f64>) -> DMatrix<C64> {
        let n = hr.nrows() / 2;
        DMatrix::from_fn(n, n, |j, k| {
            let (xj, yj, xk, yk) = (2 * j, 2 * j + 1, 2 * k, 2 * k + 1);
            C64::new(hr[(xj, xk)] - hr[(yj, yk)], -(hr[(xj, yk)] + hr[(yj, xk)])) * 0.25
        })
    }

    pub fn complex_hessian<W: Weight + ?Sized>(w: &W, pt: &ChartPoint, h: f64) -> DMatrix<C64> {
        complex_hessian_from_real(&real_hessian(w, pt, h))
    }

    pub fn holomorphic_hessian<W: Weight + ?Sized>(w: &W, pt: &ChartPoint, h: f64) -> DMatrix<C64> {
        holomorphic_hessian_from_real(&real_hessian(w, pt, h))
    }

    /// `d^(i+j) phi / dx^i dy^j` for `n = 1` via the tensor product of the
    /// second-order central stencils `sum_l (-1)^l C(m,l) f(x + (m/2 - l) h) / h^m`.
    pub fn mixed_partial<W: Weight + ?Sized>(w: &W, pt: &ChartPoint, i: u32, j: u32, h: f64) -> f64 {
        let mut acc = 0.0;
        for lx in 0..=i {
            let cx = sign(lx) * crate::binomial(i as u64, lx as u64) as f64;
            let ox = (i as f64 / 2.0 - lx as f64) * h;
            for ly in 0..=j {
                let cy = sign(ly) * crate::binomial(j as u64, ly as u64) as f64;
                let oy = (j as f64 / 2.0 - ly as f64) * h;
                acc += cx * cy * w.value(&pt.translated(&[C64::new(ox, oy)]));
            }
        }
        acc / h.powi((i + j) as i32)
    }

    fn sign(l: u32) -> f64 {
        if l % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

/// `phi = 0`.
#[derive(Clone, Debug)]
pub struct ZeroWeight {
    n: usize,
}

impl ZeroWeight {
    pub fn new(n: usize) -> Self {
        Self { n }
    }
}

impl Weight for ZeroWeight {
    fn label(&self) -> String {
        "zero".into()
    }
    fn dim(&self) -> usize {
        self.n
    }
    fn value(&self, _pt: &ChartPoint) -> f64 {
        0.0
    }
    fn gradient(&self, pt: &ChartPoint) -> Vec<C64> {
        vec![C64::new(0.0, 0.0); pt.dim()]
    }
    fn complex_hessian(&self, pt: &ChartPoint) -> DMatrix<C64> {
        DMatrix::zeros(pt.dim(), pt.dim())
    }
    fn holomorphic_hessian(&self, pt: &ChartPoint) -> DMatrix<C64> {
        DMatrix::zeros(pt.dim(), pt.dim())
    }
    fn is_rotation_invariant(&self) -> bool {
        true
    }
}

/// `phi = sum_k c_k u^k` with `u = |z|^2 / (1 + |z|^2)` the height function.
///
/// For `n = 1` the generalized eigenvalue of `omega` against `theta` is
/// `1 + 2 (u (1 - u) f'(u))'`; the coefficients `[0, -1/2]` give `2u`,
/// which vanishes only at `z = 0`.
#[derive(Clone, Debug)]
pub struct HeightWeight {
    n: usize,
    coeffs: Vec<f64>,
}

impl HeightWeight {
    pub fn new(n: usize, coeffs: Vec<f64>) -> Self {
        Self { n, coeffs }
    }

    /// The shipped degenerate `omega_0`-psh potential `psi = -u/2`.
    pub fn degenerate_default(n: usize) -> Self {
        Self::new(n, vec![0.0, -0.5])
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    fn profile(&self, u: f64) -> (f64, f64, f64) {
        let (mut f, mut df, mut d2f) = (0.0, 0.0, 0.0);
        for (k, &c) in self.coeffs.iter().enumerate().rev() {
            d2f = d2f * u + df * 2.0;
            df = df * u + f;
            f = f * u + c;
            let _ = k;
        }
        (f, df, d2f)
    }

    /// `(F'(t), F''(t))` for `F(t) = f(u(t))` in the chart of `pt`.
    fn radial_derivatives(&self, pt: &ChartPoint) -> (f64, f64) {
        let t1 = 1.0 + pt.norm_sqr();
        let (du, d2u) = match pt.chart {
            Chart::Affine => (t1.powi(-2), -2.0 * t1.powi(-3)),
            Chart::Antipodal => (-t1.powi(-2), 2.0 * t1.powi(-3)),
        };
        let (_, df, d2f) = self.profile(pt.height());
        (df * du, d2f * du * du + df * d2u)
    }
}

impl Weight for HeightWeight {
    fn label(&self) -> String {
        let cs: Vec<String> = self.coeffs.iter().map(|c| format!("{c}")).collect();
        format!("height[{}]", cs.join(","))
    }
    fn dim(&self) -> usize {
        self.n
    }
    fn value(&self, pt: &ChartPoint) -> f64 {
        self.profile(pt.height()).0
    }
    fn gradient(&self, pt: &ChartPoint) -> Vec<C64> {
        let (d1, _) = self.radial_derivatives(pt);
        pt.z.iter().map(|z| z.conj() * d1).collect()
    }
    fn complex_hessian(&self, pt: &ChartPoint) -> DMatrix<C64> {
        let (d1, d2) = self.radial_derivatives(pt);
        let n = pt.dim();
        DMatrix::from_fn(n, n, |j, k| {
            let delta = if j == k { d1 } else { 0.0 };
            C64::new(delta, 0.0) + pt.z[j].conj() * pt.z[k] * d2
        })
    }
    fn holomorphic_hessian(&self, pt: &ChartPoint) -> DMatrix<C64> {
        let (_, d2) = self.radial_derivatives(pt);
        let n = pt.dim();
        DMatrix::from_fn(n, n, |j, k| pt.z[j].conj() * pt.z[k].conj() * d2)
    }
    fn is_rotation_invariant(&self) -> bool {
        true
    }
}

/// `phi = c x_1` with `x_1 = 2 Re z / (1 + |z|^2)` a coordinate of the round
/// sphere; invariant under `z -> 1/z`, so the same formula holds in both
/// charts. Positive for `|c| < 1/4`, where the eigenvalue is `1 - 4 c x_1`.
#[derive(Clone, Debug)]
pub struct TiltWeight {
    coef: f64,
}

impl TiltWeight {
    pub fn new(coef: f64) -> Self {
        Self { coef }
    }
}

impl Weight for TiltWeight {
    fn label(&self) -> String {
        format!("tilt[{}]", self.coef)
    }
    fn dim(&self) -> usize {
        1
    }
    fn value(&self, pt: &ChartPoint) -> f64 {
        let z = pt.z[0];
        self.coef * 2.0 * z.re / (1.0 + z.norm_sqr())
    }
    fn gradient(&self, pt: &ChartPoint) -> Vec<C64> {
        let z = pt.z[0];
        let t1 = 1.0 + z.norm_sqr();
        vec![(C64::new(1.0, 0.0) - z.conj() * z.conj()) * (self.coef / (t1 * t1))]
    }
    fn complex_hessian(&self, pt: &ChartPoint) -> DMatrix<C64> {
        let z = pt.z[0];
        let t1 = 1.0 + z.norm_sqr();
        DMatrix::from_element(1, 1, C64::new(-4.0 * z.re * self.coef / t1.powi(3), 0.0))
    }
    fn holomorphic_hessian(&self, pt: &ChartPoint) -> DMatrix<C64> {
        let z = pt.z[0];
        let t1 = 1.0 + z.norm_sqr();
        let v = -(z.conj() * 2.0) * (C64::new(1.0, 0.0) - z.conj() * z.conj()) / t1.powi(3);
        DMatrix::from_element(1, 1, v * self.coef)
    }
}

/// A chart-local quadratic polynomial in `(x, y) = (Re z, Im z)` on `C`.
/// Not a global weight; used to exercise Taylor jets.
#[derive(Clone, Debug)]
pub struct QuadraticWeight {
    /// `[c, c_x, c_y, c_xx, c_xy, c_yy]`
    pub coeffs: [f64; 6],
}

impl Weight for QuadraticWeight {
    fn label(&self) -> String {
        format!("quadratic{:?}", self.coeffs)
    }
    fn dim(&self) -> usize {
        1
    }
    fn value(&self, pt: &ChartPoint) -> f64 {
        let [c, cx, cy, cxx, cxy, cyy] = self.coeffs;
        let (x, y) = (pt.z[0].re, pt.z[0].im);
        c + cx * x + cy * y + cxx * x * x + cxy * x * y + cyy * y * y
    }
    fn gradient(&self, pt: &ChartPoint) -> Vec<C64> {
        let [_, cx, cy, cxx, cxy, cyy] = self.coeffs;
        let (x, y) = (pt.z[0].re, pt.z[0].im);
        let gx = cx + 2.0 * cxx * x + cxy * y;
        let gy = cy + cxy * x + 2.0 * cyy * y;
        vec![C64::new(gx, -gy) * 0.5]
    }
    fn complex_hessian(&self, _pt: &ChartPoint) -> DMatrix<C64> {
        let [_, _, _, cxx, _, cyy] = self.coeffs;
        DMatrix::from_element(1, 1, C64::new(0.5 * (cxx + cyy), 0.0))
    }
    fn holomorphic_hessian(&self, _pt: &ChartPoint) -> DMatrix<C64> {
        let [_, _, _, cxx, cxy, cyy] = self.coeffs;
        DMatrix::from_element(1, 1, C64::new(0.5 * (cxx - cyy), -0.5 * cxy))
    }
}

/// `phi = factor * inner`; produced by [`build_family_weight`].
#[derive(Clone, Debug)]
pub struct ScaledWeight {
    inner: Arc<dyn Weight>,
    factor: f64,
    zeta: Option<f64>,
}

impl ScaledWeight {
    pub fn new(inner: Arc<dyn Weight>, factor: f64) -> Self {
        Self { inner, factor, zeta: None }
    }

    pub fn factor(&self) -> f64 {
        self.factor
    }

    pub fn inner(&self) -> &Arc<dyn Weight> {
        &self.inner
    }
}

impl Weight for ScaledWeight {
    fn label(&self) -> String {
        match self.zeta {
            Some(z) => format!("family[zeta={z}]({})", self.inner.label()),
            None => format!("{}*{}", self.factor, self.inner.label()),
        }
    }
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn value(&self, pt: &ChartPoint) -> f64 {
        self.factor * self.inner.value(pt)
    }
    fn gradient(&self, pt: &ChartPoint) -> Vec<C64> {
        self.inner.gradient(pt).into_iter().map(|g| g * self.factor).collect()
    }
    fn complex_hessian(&self, pt: &ChartPoint) -> DMatrix<C64> {
        self.inner.complex_hessian(pt) * C64::new(self.factor, 0.0)
    }
    fn holomorphic_hessian(&self, pt: &ChartPoint) -> DMatrix<C64> {
        self.inner.holomorphic_hessian(pt) * C64::new(self.factor, 0.0)
    }
    fn family_param(&self) -> Option<f64> {
        self.zeta
    }
    fn is_rotation_invariant(&self) -> bool {
        self.factor == 0.0 || self.inner.is_rotation_invariant()
    }
}

pub type WeightFn = dyn Fn(&ChartPoint) -> f64 + Send + Sync;

/// A weight given only by its values; derivatives use finite differences.
#[derive(Clone)]
pub struct FnWeight {
    n: usize,
    label: String,
    f: Arc<WeightFn>,
}

impl FnWeight {
    pub fn new(n: usize, label: impl Into<String>, f: Arc<WeightFn>) -> Self {
        Self { n, label: label.into(), f }
    }
}

impl fmt::Debug for FnWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnWeight").field("n", &self.n).field("label", &self.label).finish()
    }
}

impl Weight for FnWeight {
    fn label(&self) -> String {
        self.label.clone()
    }
    fn dim(&self) -> usize {
        self.n
    }
    fn value(&self, pt: &ChartPoint) -> f64 {
        (self.f)(pt)
    }
}

#[derive(Clone, Debug)]
pub struct CurvatureSample {
    pub point: ChartPoint,
    pub omega_matrix: DMatrix<C64>,
    pub theta_matrix: DMatrix<C64>,
    /// Smallest generalized eigenvalue of `(omega, theta)`.
    pub zeta_local: f64,
    /// `omega^n / theta^n = det(omega) / det(theta)`.
    pub volume_ratio: f64,
}

fn hermitize(m: &DMatrix<C64>) -> DMatrix<C64> {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// Generalized eigen-decomposition of Hermitian `(a, b)` with `b` positive
/// definite: returns eigenvalues (ascending) and `b`-orthonormal eigenvectors.
pub(crate) fn generalized_eigh(
    a: &DMatrix<C64>,
    b: &DMatrix<C64>,
) -> Option<(Vec<f64>, DMatrix<C64>)> {
    let chol = b.clone().cholesky()?;
    let l = chol.l();
    let linv = l.solve_lower_triangular(&DMatrix::identity(b.nrows(), b.ncols()))?;
    let c = hermitize(&(&linv * a * linv.adjoint()));
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = linv.adjoint() * &eig.eigenvectors;
    let sorted = DMatrix::from_fn(vecs.nrows(), vecs.ncols(), |r, c| vecs[(r, order[c])]);
    Some((values, sorted))
}

pub fn curvature_at(
    surface: &ModelSurface,
    weight: &dyn Weight,
    pt: &ChartPoint,
) -> Result<CurvatureSample> {
    surface.check_point(pt)?;
    let theta = surface.theta_matrix(pt);
    let hess = weight.complex_hessian(pt);
    if hess.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(GeometryError::NonFinite { what: "weight Hessian", point: pt.to_string() });
    }
    let omega = hermitize(&(&theta + hess / C64::new(PI, 0.0)));
    let (zeta_local, volume_ratio) = if surface.dim() == 1 {
        let th = theta[(0, 0)].re;
        if th <= 0.0 {
            return Err(GeometryError::ReferenceMetric { point: pt.to_string() });
        }
        let r = omega[(0, 0)].re / th;
        (r, r)
    } else {
        let (values, _) = generalized_eigh(&omega, &theta)
            .ok_or_else(|| GeometryError::ReferenceMetric { point: pt.to_string() })?;
        let ratio = (omega.determinant() / theta.determinant()).re;
        (values[0], ratio)
    };
    Ok(CurvatureSample {
        point: pt.clone(),
        omega_matrix: omega,
        theta_matrix: theta,
        zeta_local,
        volume_ratio,
    })
}

/// Fixed sample grids in compactified coordinates.
#[derive(Clone, Debug)]
pub struct SampleGrid {
    pub resolution: usize,
    pub points: Vec<ChartPoint>,
}

impl SampleGrid {
    /// `resolution` heights `u in [0, 1/2]` times `resolution` angles in each
    /// chart of `CP^1` (the shared circle `|z| = 1` kept once, the poles once).
    /// For `CP^2`, a triangular lattice of heights in the affine chart.
    pub fn compact(surface: &ModelSurface, resolution: usize) -> Self {
        let res = resolution.max(2);
        let mut points = Vec::new();
        if surface.dim() == 1 {
            for (chart, rings) in [(Chart::Affine, res), (Chart::Antipodal, res - 1)] {
                for i in 0..rings {
                    let u = 0.5 * i as f64 / (res - 1) as f64;
                    let r = (u / (1.0 - u)).sqrt();
                    let angles = if i == 0 { 1 } else { res };
                    for k in 0..angles {
                        let z = C64::from_polar(r, 2.0 * PI * k as f64 / res as f64);
                        points.push(ChartPoint { chart, z: vec![z] });
                    }
                }
            }
        } else {
            let levels = (res / 4).max(2);
            let angles = 8;
            for i in 0..levels {
                for j in 0..levels - i {
                    let u1 = 0.9 * i as f64 / levels as f64;
                    let u2 = 0.9 * j as f64 / levels as f64;
                    let rest = 1.0 - u1 - u2;
                    let (r1, r2) = ((u1 / rest).sqrt(), (u2 / rest).sqrt());
                    let a1 = if i == 0 { 1 } else { angles };
                    let a2 = if j == 0 { 1 } else { angles };
                    for k1 in 0..a1 {
                        for k2 in 0..a2 {
                            let z1 = C64::from_polar(r1, 2.0 * PI * k1 as f64 / angles as f64);
                            let z2 = C64::from_polar(r2, 2.0 * PI * (k2 as f64 + 0.5) / angles as f64);
                            points.push(ChartPoint::affine(&[z1, z2]));
                        }
                    }
                }
            }
        }
        Self { resolution: res, points }
    }

    /// The 48 x 48 two-chart grid used for sup-norm residuals.
    pub fn residual_default(surface: &ModelSurface) -> Self {
        Self::compact(surface, 48)
    }

    /// Grid of at least `10^4` points (for `n = 1`) used to certify weights.
    pub fn certification(surface: &ModelSurface) -> Self {
        Self::compact(surface, 72)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Minimum of `zeta_local` over a grid, with its location.
pub fn zeta_floor(
    surface: &ModelSurface,
    weight: &dyn Weight,
    grid: &SampleGrid,
) -> Result<(f64, ChartPoint)> {
    let mut best = (f64::INFINITY, grid.points[0].clone());
    for pt in &grid.points {
        let s = curvature_at(surface, weight, pt)?;
        if s.zeta_local < best.0 {
            best = (s.zeta_local, pt.clone());
        }
    }
    Ok(best)
}

const PSH_TOLERANCE: f64 = 1e-8;
const DEGENERACY_TOLERANCE: f64 = 1e-6;

/// Builds `phi_zeta = (1 - zeta) psi` from an `omega_0`-psh `psi` whose
/// curvature degenerates on the certification grid; then
/// `dd^c phi_zeta + omega_0 = (1 - zeta)(dd^c psi + omega_0) + zeta omega_0 >= zeta theta`.
pub fn build_family_weight(
    surface: &ModelSurface,
    zeta: f64,
    psi: Arc<dyn Weight>,
) -> Result<ScaledWeight> {
    if !(zeta > 0.0 && zeta <= 1.0) {
        return Err(GeometryError::InvalidZeta(zeta));
    }
    let grid = SampleGrid::certification(surface);
    let (floor, at) = zeta_floor(surface, psi.as_ref(), &grid)?;
    if floor < -PSH_TOLERANCE {
        return Err(GeometryError::NotSemiPositive { value: floor, point: at.to_string() });
    }
    if floor > DEGENERACY_TOLERANCE {
        return Err(GeometryError::NotDegenerate { floor, point: at.to_string() });
    }
    Ok(ScaledWeight { inner: psi, factor: 1.0 - zeta, zeta: Some(zeta) })
}

/// Constant and first/second order Taylor parts of a weight at a base point:
/// `phi^[1](Z) = sum_j (phi_{z_j} z_j + phi_{zbar_j} zbar_j)` and
/// `phi^[2](Z) = Re sum_{j,k} (phi_{z_j z_k} z_j z_k + phi_{z_j zbar_k} z_j zbar_k)`.
#[derive(Clone, Debug)]
pub struct TaylorJet {
    pub base: ChartPoint,
    pub value: f64,
    pub gradient: Vec<C64>,
    pub holomorphic_hessian: DMatrix<C64>,
    pub complex_hessian: DMatrix<C64>,
}

impl TaylorJet {
    pub fn linear(&self, dz: &[C64]) -> f64 {
        2.0 * self.gradient.iter().zip(dz).map(|(g, z)| (g * z).re).sum::<f64>()
    }

    pub fn quadratic(&self, dz: &[C64]) -> f64 {
        let n = dz.len();
        let mut acc = C64::new(0.0, 0.0);
        for j in 0..n {
            for k in 0..n {
                acc += self.holomorphic_hessian[(j, k)] * dz[j] * dz[k]
                    + self.complex_hessian[(j, k)] * dz[j] * dz[k].conj();
            }
        }
        acc.re
    }

    pub fn eval(&self, dz: &[C64]) -> f64 {
        self.value + self.linear(dz) + self.quadratic(dz)
    }
}

pub fn taylor_jet(weight: &dyn Weight, base: &ChartPoint) -> TaylorJet {
    TaylorJet {
        base: base.clone(),
        value: weight.value(base),
        gradient: weight.gradient(base),
        holomorphic_hessian: weight.holomorphic_hessian(base),
        complex_hessian: weight.complex_hessian(base),
    }
}

pub const JET_RADIUS_LIMIT: f64 = 1.0;

/// `sup_{0 < |Z| <= radius} |phi(x_0 + Z) - jet(Z)| / |Z|^3` over a fixed
/// polar sample.
pub fn remainder_check(weight: &dyn Weight, base: &ChartPoint, radius: f64) -> Result<f64> {
    if !(radius > 0.0 && radius <= JET_RADIUS_LIMIT) {
        return Err(GeometryError::RadiusTooLarge { radius, limit: JET_RADIUS_LIMIT });
    }
    let jet = taylor_jet(weight, base);
    let directions = jet_directions(base.dim());
    let mut sup = 0.0f64;
    for s in 1..=8 {
        let r = radius * s as f64 / 8.0;
        for dir in &directions {
            let dz: Vec<C64> = dir.iter().map(|c| c * r).collect();
            let q = (weight.value(&base.translated(&dz)) - jet.eval(&dz)).abs() / r.powi(3);
            sup = sup.max(q);
        }
    }
    Ok(sup)
}

fn jet_directions(n: usize) -> Vec<Vec<C64>> {
    let angles: Vec<f64> = (0..32).map(|k| 2.0 * PI * k as f64 / 32.0).collect();
    if n == 1 {
        return angles.iter().map(|&a| vec![C64::from_polar(1.0, a)]).collect();
    }
    let mut out = Vec::new();
    for m in 0..5 {
        let alpha = 0.5 * PI * m as f64 / 4.0;
        for k1 in 0..8 {
            for k2 in 0..8 {
                out.push(vec![
                    C64::from_polar(alpha.cos(), angles[4 * k1]),
                    C64::from_polar(alpha.sin(), angles[4 * k2]),
                ]);
            }
        }
    }
    out
}

/// Chart sup norms of derivatives of a weight on the two-chart grid of `CP^1`.
///
/// `per_order[m]` is the sup over the grid of all order-`m` partials in
/// `(Re z, Im z)`; `seminorm(k) = max_{1 <= m <= k+1} per_order[m]` is the
/// `C^k` norm of `d phi`, and `bar_norm(k) = 1 + seminorm(k)`.
#[derive(Clone, Debug, Serialize)]
pub struct NormReport {
    pub per_order: Vec<f64>,
    pub grid_points: usize,
    pub step: f64,
}

impl NormReport {
    pub fn seminorm(&self, k: usize) -> f64 {
        self.per_order[1..=(k + 1).min(self.per_order.len() - 1)]
            .iter()
            .cloned()
            .fold(0.0, f64::max)
    }

    pub fn bar_norm(&self, k: usize) -> f64 {
        1.0 + self.seminorm(k)
    }
}

pub const NORM_STEP: f64 = 0.05;

pub fn measure_norms(surface: &ModelSurface, weight: &dyn Weight, k_max: usize) -> Result<NormReport> {
    if surface.dim() != 1 {
        return Err(GeometryError::Unsupported(
            "derivative norms are measured on CP^1 only".into(),
        ));
    }
    let grid = SampleGrid::compact(surface, 24);
    let mut per_order = vec![0.0f64; k_max + 2];
    for pt in &grid.points {
        per_order[0] = per_order[0].max(weight.value(pt).abs());
        for (m, slot) in per_order.iter_mut().enumerate().skip(1) {
            for i in 0..=m as u32 {
                let d = fd::mixed_partial(weight, pt, i, m as u32 - i, NORM_STEP);
                *slot = slot.max(d.abs());
            }
        }
    }
    Ok(NormReport { per_order, grid_points: grid.len(), step: NORM_STEP })
}
