//! Python bindings: weights, Bergman evaluators, the model kernel, spectral
//! gaps, the Fourier filter and the experiment runner.

use std::sync::Arc;

use bergman_core::bergman::{BergmanEvaluator as CoreEvaluator, PrecisionPolicy};
use bergman_core::geometry::{
    build_family_weight, curvature_at, Chart, ChartPoint, HeightWeight, ModelSurface, TiltWeight, Weight as CoreWeight,
    ZeroWeight,
};
use bergman_core::quadrature::QuadratureRule;
use bergman_core::{lab, model, spectral};
use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn surface(n: usize) -> PyResult<ModelSurface> {
    ModelSurface::new(n).map_err(value_err)
}

fn point(z: Vec<Complex64>, chart: &str) -> PyResult<ChartPoint> {
    let chart = match chart {
        "affine" => Chart::Affine,
        "antipodal" => Chart::Antipodal,
        other => return Err(PyValueError::new_err(format!("unknown chart {other:?}"))),
    };
    Ok(ChartPoint { chart, z })
}

/// A weight `phi`; build with `zero`, `height`, `tilt` or `family`.
#[pyclass(frozen, module = "bergman_lab")]
struct Weight {
    inner: Arc<dyn CoreWeight>,
}

#[pymethods]
impl Weight {
    #[staticmethod]
    #[pyo3(signature = (n=1))]
    fn zero(n: usize) -> Self {
        Self { inner: Arc::new(ZeroWeight::new(n)) }
    }

    /// `phi = sum_k c_k u^k` with `u = |z|^2 / (1 + |z|^2)`.
    #[staticmethod]
    #[pyo3(signature = (coeffs, n=1))]
    fn height(coeffs: Vec<f64>, n: usize) -> Self {
        Self { inner: Arc::new(HeightWeight::new(n, coeffs)) }
    }

    #[staticmethod]
    fn tilt(coef: f64) -> Self {
        Self { inner: Arc::new(TiltWeight::new(coef)) }
    }

    /// `(1 - zeta) psi` for a degenerate height potential `psi` (default `-u/2`).
    #[staticmethod]
    #[pyo3(signature = (zeta, n=1, psi=None))]
    fn family(zeta: f64, n: usize, psi: Option<Vec<f64>>) -> PyResult<Self> {
        let psi: Arc<dyn CoreWeight> = Arc::new(HeightWeight::new(n, psi.unwrap_or_else(|| vec![0.0, -0.5])));
        let w = build_family_weight(&surface(n)?, zeta, psi).map_err(value_err)?;
        Ok(Self { inner: Arc::new(w) })
    }

    #[getter]
    fn label(&self) -> String {
        self.inner.label()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[pyo3(signature = (z, chart="affine"))]
    fn value(&self, z: Vec<Complex64>, chart: &str) -> PyResult<f64> {
        Ok(self.inner.value(&point(z, chart)?))
    }

    /// `(zeta_local, omega^n / theta^n)` at a point.
    #[pyo3(signature = (z, chart="affine"))]
    fn curvature(&self, z: Vec<Complex64>, chart: &str) -> PyResult<(f64, f64)> {
        let s = surface(self.inner.dim())?;
        let c = curvature_at(&s, self.inner.as_ref(), &point(z, chart)?).map_err(value_err)?;
        Ok((c.zeta_local, c.volume_ratio))
    }

    fn __repr__(&self) -> String {
        format!("Weight({})", self.inner.label())
    }
}

/// Orthonormalised section basis of `L^p` for a weight.
#[pyclass(frozen, module = "bergman_lab")]
struct BergmanEvaluator {
    inner: CoreEvaluator,
    rule: QuadratureRule,
    surface: ModelSurface,
}

#[pymethods]
impl BergmanEvaluator {
    /// `precision` is `"auto"`, `"double"` or `"extended"`.
    #[new]
    #[pyo3(signature = (weight, p, precision="auto"))]
    fn new(py: Python<'_>, weight: &Weight, p: u32, precision: &str) -> PyResult<Self> {
        let policy = match precision {
            "auto" => PrecisionPolicy::default(),
            "double" => PrecisionPolicy { extra_bits: 0, ..PrecisionPolicy::default() },
            "extended" => PrecisionPolicy { force_extended: true, ..PrecisionPolicy::default() },
            other => return Err(PyValueError::new_err(format!("unknown precision {other:?}"))),
        };
        let s = surface(weight.inner.dim())?;
        let w = weight.inner.clone();
        let (inner, rule) = py
            .detach(|| bergman_core::bergman::evaluator_for(&s, w, p, &policy))
            .map_err(runtime_err)?;
        Ok(Self { inner, rule, surface: s })
    }

    #[getter]
    fn p(&self) -> u32 {
        self.inner.p
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn condition_estimate(&self) -> f64 {
        self.inner.condition_estimate
    }

    #[getter]
    fn precision(&self) -> String {
        format!("{:?}", self.inner.precision)
    }

    /// `|P_p(z, z)|` in the metric `h^p`.
    #[pyo3(signature = (z, chart="affine"))]
    fn kernel_diagonal(&self, z: Vec<Complex64>, chart: &str) -> PyResult<f64> {
        self.inner.kernel_diagonal(&point(z, chart)?).map_err(runtime_err)
    }

    #[pyo3(signature = (z, w, chart="affine"))]
    fn kernel_offdiag_modulus(&self, z: Vec<Complex64>, w: Vec<Complex64>, chart: &str) -> PyResult<f64> {
        self.inner
            .kernel_offdiag_modulus(&point(z, chart)?, &point(w, chart)?)
            .map_err(runtime_err)
    }

    /// `int P_p(x, x) theta^n / n!`; equals the number of sections.
    fn trace(&self, py: Python<'_>) -> PyResult<f64> {
        py.detach(|| self.inner.trace(&self.rule)).map_err(runtime_err)
    }

    /// Sup over `|Z| <= sigma` of the rescaled near-diagonal residual at `x0`.
    #[pyo3(signature = (x0, sigma=3.0, chart="affine"))]
    fn near_diagonal_residual(&self, py: Python<'_>, x0: Vec<Complex64>, sigma: f64, chart: &str) -> PyResult<f64> {
        let x0 = point(x0, chart)?;
        let params = model::model_params(&self.surface, self.inner.weight.as_ref(), &x0).map_err(value_err)?;
        let grid = model::ZGrid::polar(self.surface.dim(), sigma, 25, 8);
        py.detach(|| model::near_diagonal_residual(&self.inner, &self.surface, &params, &grid))
            .map(|r| r.sup)
            .map_err(runtime_err)
    }
}

/// Gaussian model kernel with curvature parameters `a`.
#[pyfunction]
fn model_kernel(a: Vec<f64>, z: Vec<Complex64>, w: Vec<Complex64>) -> PyResult<Complex64> {
    if z.len() != a.len() || w.len() != a.len() {
        return Err(PyValueError::new_err("a, z and w must have equal length"));
    }
    Ok(model::model_kernel(&a, &z, &w))
}

/// Galerkin gap study of `D_p^2` on `CP^1`.
#[pyfunction]
#[pyo3(signature = (weight, p, ladder=None, zeta=None))]
fn gap_report<'py>(
    py: Python<'py>,
    weight: &Weight,
    p: u32,
    ladder: Option<Vec<u32>>,
    zeta: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let s = surface(weight.inner.dim())?;
    let ladder = ladder.unwrap_or_else(|| spectral::default_ladder(p));
    let w = weight.inner.clone();
    let study = py
        .detach(|| spectral::gap_report(&s, w.as_ref(), p, &ladder, zeta))
        .map_err(runtime_err)?;
    let last = study.last();
    let d = PyDict::new(py);
    d.set_item("zeta", study.zeta)?;
    d.set_item("kernel_dim", last.kernel_dim)?;
    d.set_item("gap", last.gap)?;
    d.set_item("bound", last.bound)?;
    d.set_item("ratio", last.ratio)?;
    d.set_item("movement", study.movement)?;
    d.set_item("converged", study.status == spectral::GapStatus::Converged)?;
    d.set_item("monotone", study.monotone)?;
    d.set_item("eigenvalues", last.eigenvalues.clone())?;
    Ok(d)
}

/// Fourier filter profile on the given `a` samples.
#[pyclass(frozen, module = "bergman_lab")]
struct FilterProfile {
    inner: spectral::FilterProfile,
}

#[pymethods]
impl FilterProfile {
    #[new]
    #[pyo3(signature = (eps, zeta, grid=None))]
    fn new(py: Python<'_>, eps: f64, zeta: f64, grid: Option<Vec<f64>>) -> PyResult<Self> {
        let grid = grid.unwrap_or_else(|| spectral::default_filter_grid(zeta));
        let inner = py.detach(|| spectral::filter_build(eps, zeta, &grid)).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn a(&self) -> Vec<f64> {
        self.inner.a.clone()
    }

    #[getter]
    fn values(&self) -> Vec<Complex64> {
        self.inner.values.clone()
    }

    #[getter]
    fn moments(&self) -> Vec<f64> {
        self.inner.moments.to_vec()
    }

    /// `sup_{|a| >= sqrt(zeta p)} |F(a)|`.
    fn projector_gap_bound(&self, p: u32) -> PyResult<f64> {
        spectral::projector_gap_bound(&self.inner, p, self.inner.zeta).map_err(value_err)
    }
}

/// `(C, alpha, R^2)` of `E_p ~ C p^{-alpha}`.
#[pyfunction]
fn fit_power_law(pairs: Vec<(u32, f64)>) -> PyResult<(f64, f64, f64)> {
    let f = lab::fit_power_law(&pairs).map_err(value_err)?;
    Ok((f.c, f.alpha, f.r2))
}

/// Runs a TOML experiment config and returns the CSV text.
#[pyfunction]
fn run_config(py: Python<'_>, toml: &str) -> PyResult<String> {
    let cfg = lab::ExperimentConfig::from_toml(toml).map_err(value_err)?;
    let res = py.detach(|| lab::run(&cfg)).map_err(runtime_err)?;
    lab::render_csv(&res).map_err(runtime_err)
}

#[pymodule]
fn bergman_lab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Weight>()?;
    m.add_class::<BergmanEvaluator>()?;
    m.add_class::<FilterProfile>()?;
    m.add_function(wrap_pyfunction!(model_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(gap_report, m)?)?;
    m.add_function(wrap_pyfunction!(fit_power_law, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
