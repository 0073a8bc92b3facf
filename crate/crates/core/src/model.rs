//! The Gaussian model kernel, the volume factor `kappa`, and the comparison of
//! rescaled Bergman kernels with the model near the diagonal.
//!
//! At a base point `x_0` the generalized eigenvectors of `(omega, theta)` give a
//! frame `F` in which the Riemannian metric `2 theta` is the identity and
//! `omega` is diagonal; the model parameters are `a_i = 2 pi lambda_i`. Chart
//! points near `x_0` are `x_0 + F Z` with `Z` in `C^n`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::bergman::{BergmanError, BergmanEvaluator};
use crate::geometry::{
    curvature_at, generalized_eigh, ChartPoint, GeometryError, ModelSurface, SampleGrid, Weight,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("curvature is not positive at {point}: zeta_local = {zeta_local:.3e}")]
    NotPositive { zeta_local: f64, point: String },
    #[error("comparison radius sigma / sqrt(p) = {radius:.3} exceeds {limit}")]
    RadiusTooLarge { radius: f64, limit: f64 },
    #[error("grid point has {got} coordinates, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Bergman(#[from] BergmanError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Largest admissible `sigma / sqrt(p)` in frame units.
pub const COMPARISON_RADIUS: f64 = 1.0;

#[derive(Clone, Debug)]
pub struct ModelKernelParams {
    pub x0: ChartPoint,
    /// `a_i = 2 pi lambda_i`, ascending.
    pub a: Vec<f64>,
    /// Columns span the chart; `F^H (2 theta) F = I`, `F^H omega F = diag(lambda) / 2`.
    pub frame: DMatrix<C64>,
    theta_det: f64,
}

pub fn model_params(surface: &ModelSurface, weight: &dyn Weight, x0: &ChartPoint) -> Result<ModelKernelParams> {
    let c = curvature_at(surface, weight, x0)?;
    if !(c.zeta_local > 0.0) {
        return Err(ModelError::NotPositive { zeta_local: c.zeta_local, point: x0.to_string() });
    }
    let (lambda, v) = generalized_eigh(&c.omega_matrix, &c.theta_matrix)
        .ok_or_else(|| GeometryError::ReferenceMetric { point: x0.to_string() })?;
    Ok(ModelKernelParams {
        x0: x0.clone(),
        a: lambda.iter().map(|l| 2.0 * PI * l).collect(),
        frame: v * C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0),
        theta_det: c.theta_matrix.determinant().re,
    })
}

impl ModelKernelParams {
    pub fn dim(&self) -> usize {
        self.a.len()
    }

    /// `x_0 + F Z`.
    pub fn chart_point(&self, z: &[C64]) -> ChartPoint {
        let dz = &self.frame * nalgebra::DVector::from_column_slice(z);
        self.x0.translated(dz.as_slice())
    }

    /// `max |F^H (2 theta(x_0)) F - I|`.
    pub fn frame_defect(&self, surface: &ModelSurface) -> f64 {
        let g = surface.metric_matrix(&self.x0);
        let r = self.frame.adjoint() * g * &self.frame - DMatrix::<C64>::identity(self.dim(), self.dim());
        r.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// `kappa(Z) = det theta(x_0 + F Z) / det theta(x_0)`: the curved volume
    /// density against the flat one in frame coordinates; `kappa(0) = 1`.
    pub fn kappa(&self, surface: &ModelSurface, z: &[C64]) -> f64 {
        if z.iter().all(|c| *c == C64::new(0.0, 0.0)) {
            return 1.0;
        }
        surface.theta_matrix(&self.chart_point(z)).determinant().re / self.theta_det
    }
}

/// `prod(a_i / 2 pi) exp(-1/4 sum a_i (|z_i|^2 + |z'_i|^2 - 2 z_i conj(z'_i)))`.
pub fn model_kernel(a: &[f64], z: &[C64], z2: &[C64]) -> C64 {
    let mut pre = 1.0;
    let mut expo = C64::new(0.0, 0.0);
    for ((ai, zi), wi) in a.iter().zip(z).zip(z2) {
        pre *= ai / (2.0 * PI);
        expo += (C64::new(zi.norm_sqr() + wi.norm_sqr(), 0.0) - zi * wi.conj() * 2.0) * (-0.25 * ai);
    }
    expo.exp() * pre
}

/// Comparison points `|Z| <= sigma` in frame coordinates.
#[derive(Clone, Debug)]
pub struct ZGrid {
    pub sigma: f64,
    pub points: Vec<Vec<C64>>,
}

impl ZGrid {
    /// `radial` radii in `[0, sigma]` times `angular` directions (the origin once).
    pub fn polar(n: usize, sigma: f64, radial: usize, angular: usize) -> Self {
        let mut points = vec![vec![C64::new(0.0, 0.0); n]];
        for i in 1..radial {
            let r = sigma * i as f64 / (radial - 1) as f64;
            for k in 0..angular {
                let t = 2.0 * PI * k as f64 / angular as f64;
                let dir = if n == 1 {
                    vec![C64::from_polar(1.0, t)]
                } else {
                    let alpha = 0.5 * PI * (k as f64 + 0.5) / angular as f64;
                    vec![C64::from_polar(alpha.cos(), t), C64::from_polar(alpha.sin(), -t)]
                };
                points.push(dir.into_iter().map(|c| c * r).collect());
            }
        }
        Self { sigma, points }
    }

    /// `sigma = 3`, 25 radii times 8 directions.
    pub fn default_for(n: usize) -> Self {
        Self::polar(n, 3.0, 25, 8)
    }

    pub fn origin(n: usize) -> Self {
        Self { sigma: 0.0, points: vec![vec![C64::new(0.0, 0.0); n]] }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct NearDiagonalReport {
    pub p: u32,
    pub sup: f64,
    pub argmax: usize,
    pub residuals: Vec<f64>,
}

/// `sup_Z | p^{-n} |P_p(x_0 + F Z / sqrt p, x_0)| kappa^{1/2}(Z / sqrt p) kappa^{1/2}(0) - |P(Z, 0)| |`.
pub fn near_diagonal_residual(
    ev: &BergmanEvaluator,
    surface: &ModelSurface,
    params: &ModelKernelParams,
    grid: &ZGrid,
) -> Result<NearDiagonalReport> {
    let p = ev.p;
    let sp = (p as f64).sqrt();
    let radius = grid.sigma / sp;
    if radius > COMPARISON_RADIUS {
        return Err(ModelError::RadiusTooLarge { radius, limit: COMPARISON_RADIUS });
    }
    let n = params.dim();
    let scale = (p as f64).powi(-(n as i32));
    let zero = vec![C64::new(0.0, 0.0); n];
    let residuals: Vec<Result<f64>> = grid
        .points
        .par_iter()
        .map(|z| {
            if z.len() != n {
                return Err(ModelError::DimensionMismatch { expected: n, got: z.len() });
            }
            let zs: Vec<C64> = z.iter().map(|c| c / sp).collect();
            let x = params.chart_point(&zs);
            let k = ev.kernel_offdiag_modulus(&x, &params.x0)?;
            let lhs = scale * k * params.kappa(surface, &zs).sqrt();
            Ok((lhs - model_kernel(&params.a, z, &zero).norm()).abs())
        })
        .collect();
    let residuals = residuals.into_iter().collect::<Result<Vec<f64>>>()?;
    let (argmax, sup) = residuals
        .iter()
        .copied()
        .enumerate()
        .fold((0, 0.0), |best, (i, r)| if r > best.1 { (i, r) } else { best });
    Ok(NearDiagonalReport { p, sup, argmax, residuals })
}

#[derive(Clone, Debug, Serialize)]
pub struct DiagonalField {
    pub p: u32,
    /// `|p^{-n} P_p(x, x) - omega^n / theta^n (x)|` per grid point.
    pub residuals: Vec<f64>,
    pub sup: f64,
    pub argmax: usize,
}

pub fn diagonal_residual_field(
    ev: &BergmanEvaluator,
    surface: &ModelSurface,
    weight: &dyn Weight,
    grid: &SampleGrid,
) -> Result<DiagonalField> {
    let scale = (ev.p as f64).powi(-(surface.dim() as i32));
    let residuals: Vec<Result<f64>> = grid
        .points
        .par_iter()
        .map(|x| {
            let ratio = curvature_at(surface, weight, x)?.volume_ratio;
            Ok((scale * ev.kernel_diagonal(x)? - ratio).abs())
        })
        .collect();
    let residuals = residuals.into_iter().collect::<Result<Vec<f64>>>()?;
    let (argmax, sup) = residuals
        .iter()
        .copied()
        .enumerate()
        .fold((0, 0.0), |best, (i, r)| if r > best.1 { (i, r) } else { best });
    Ok(DiagonalField { p: ev.p, residuals, sup, argmax })
}
