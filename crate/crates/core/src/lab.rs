//! Experiment runner: configuration, sweeps over `(p, zeta)` cells, power-law
//! fits and CSV/JSON output.
//!
//! Configs are TOML or JSON with the same schema:
//!
//! ```toml
//! kind = "diagonal"            # diagonal | near-diagonal | spectrum | filter | zeta-sweep
//! n = 1
//! p = [16, 32, 64, 128]
//!
//! [weight]
//! name = "family"              # zero | height | tilt | family
//! zeta = [0.5]
//! psi = [0.0, -0.5]            # height coefficients of the degenerate potential
//!
//! [grid]
//! resolution = 48
//!
//! [output]
//! dir = "out"
//! json = true
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bergman::{BergmanEvaluator, PrecisionPolicy};
use crate::geometry::{
    build_family_weight, measure_norms, zeta_floor, Chart, ChartPoint, HeightWeight, ModelSurface, SampleGrid,
    TiltWeight, Weight, ZeroWeight,
};
use crate::model::{diagonal_residual_field, model_params, near_diagonal_residual, ZGrid};
use crate::quadrature::{build_rule_with, QuadratureOptions};
use crate::sections::basis_for;
use crate::spectral::{default_filter_grid, default_ladder, filter_build, gap_report, projector_gap_bound, GapStatus};

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("p = {p}, zeta = {zeta:?}: {message}")]
    Cell { p: u32, zeta: Option<f64>, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Diagonal,
    NearDiagonal,
    Spectrum,
    Filter,
    ZetaSweep,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Diagonal => "diagonal",
            Self::NearDiagonal => "near-diagonal",
            Self::Spectrum => "spectrum",
            Self::Filter => "filter",
            Self::ZetaSweep => "zeta-sweep",
        }
    }
}

fn default_psi() -> Vec<f64> {
    vec![0.0, -0.5]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WeightSpec {
    Zero,
    Height { coeffs: Vec<f64> },
    Tilt { coef: f64 },
    /// `phi_zeta = (1 - zeta) psi` with `psi` a degenerate height potential.
    Family {
        zeta: Vec<f64>,
        #[serde(default = "default_psi")]
        psi: Vec<f64>,
    },
}

impl Default for WeightSpec {
    fn default() -> Self {
        Self::Zero
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    /// Resolution of the compact sample grid (diagonal residuals).
    pub resolution: usize,
    /// Radius of the `Z`-disc (near-diagonal).
    pub sigma: f64,
    pub radial: usize,
    pub angular: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { resolution: 48, sigma: 3.0, radial: 25, angular: 8 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NearDiagonalSpec {
    /// Base point `[re, im]` per coordinate in the affine chart; defaults to
    /// the degeneracy point of a family weight, else the origin.
    pub x0: Option<Vec<[f64; 2]>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralSpec {
    /// Truncation degrees; defaults to `{p/2, p, 3p/2}`.
    pub ladder: Option<Vec<u32>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSpec {
    pub eps: f64,
    pub zeta: Vec<f64>,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self { eps: 0.5, zeta: vec![1.0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
    /// File stem; defaults to the experiment kind.
    pub stem: Option<String>,
    pub json: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), stem: None, json: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default = "one")]
    pub n: usize,
    pub p: Vec<u32>,
    #[serde(default)]
    pub weight: WeightSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub quadrature: QuadratureOptions,
    #[serde(default)]
    pub precision: PrecisionPolicy,
    #[serde(default)]
    pub near_diagonal: NearDiagonalSpec,
    #[serde(default)]
    pub spectral: SpectralSpec,
    #[serde(default)]
    pub filter: FilterSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

fn one() -> usize {
    1
}

fn check_zeta(z: f64) -> Result<()> {
    if z > 0.0 && z <= 1.0 {
        Ok(())
    } else {
        Err(LabError::Config(format!("zeta = {z} is outside (0, 1]")))
    }
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind, p: Vec<u32>) -> Self {
        Self {
            kind,
            n: 1,
            p,
            weight: WeightSpec::Zero,
            grid: GridSpec::default(),
            quadrature: QuadratureOptions::default(),
            precision: PrecisionPolicy::default(),
            near_diagonal: NearDiagonalSpec::default(),
            spectral: SpectralSpec::default(),
            filter: FilterSpec::default(),
            output: OutputSpec::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Chooses the parser by extension (`.json`, else TOML).
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Config(format!("cannot read {}: {e}", path.display())))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json(&text),
            _ => Self::from_toml(&text),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n != 1 && self.n != 2 {
            return Err(LabError::Config(format!("n = {} is not supported (1 or 2)", self.n)));
        }
        if self.p.is_empty() {
            return Err(LabError::Config("p list is empty".into()));
        }
        if self.p[0] < 1 || self.p.windows(2).any(|w| w[1] <= w[0]) {
            return Err(LabError::Config("p list must be positive and strictly increasing".into()));
        }
        match &self.weight {
            WeightSpec::Family { zeta, psi } => {
                if zeta.is_empty() {
                    return Err(LabError::Config("family weight needs at least one zeta".into()));
                }
                zeta.iter().try_for_each(|&z| check_zeta(z))?;
                if psi.is_empty() {
                    return Err(LabError::Config("psi coefficients are empty".into()));
                }
            }
            WeightSpec::Tilt { .. } if self.n != 1 => {
                return Err(LabError::Config("the tilt weight is defined on CP^1 only".into()));
            }
            _ => {}
        }
        if self.kind == ExperimentKind::ZetaSweep && !matches!(self.weight, WeightSpec::Family { .. }) {
            return Err(LabError::Config("zeta-sweep requires a family weight".into()));
        }
        if self.kind == ExperimentKind::Spectrum && self.n != 1 {
            return Err(LabError::Config("spectrum experiments run on CP^1 only".into()));
        }
        if self.kind == ExperimentKind::Filter {
            if self.filter.zeta.is_empty() {
                return Err(LabError::Config("filter needs at least one zeta".into()));
            }
            self.filter.zeta.iter().try_for_each(|&z| check_zeta(z))?;
            if !(self.filter.eps > 0.0 && self.filter.eps <= 1.0) {
                return Err(LabError::Config(format!("eps = {} is outside (0, 1]", self.filter.eps)));
            }
        }
        if self.grid.resolution < 2 || self.grid.radial < 2 || self.grid.angular < 1 {
            return Err(LabError::Config("grid is too coarse".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, output section excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputSpec::default();
        let text = serde_json::to_string(&c).expect("config serialises");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Requested `(p, zeta)` cells in output order.
    pub fn cells(&self) -> Vec<(u32, Option<f64>)> {
        let zetas: Vec<Option<f64>> = match (&self.kind, &self.weight) {
            (ExperimentKind::Filter, _) => self.filter.zeta.iter().map(|&z| Some(z)).collect(),
            (_, WeightSpec::Family { zeta, .. }) => zeta.iter().map(|&z| Some(z)).collect(),
            _ => vec![None],
        };
        let mut out = Vec::new();
        for z in &zetas {
            for &p in &self.p {
                out.push((p, *z));
            }
        }
        out
    }

    pub fn surface(&self) -> ModelSurface {
        ModelSurface::new(self.n).expect("validated")
    }

    /// The weight of one cell; family weights are certified degenerate first.
    pub fn build_weight(&self, zeta: Option<f64>) -> Result<Arc<dyn Weight>> {
        let surface = self.surface();
        Ok(match &self.weight {
            WeightSpec::Zero => Arc::new(ZeroWeight::new(self.n)),
            WeightSpec::Height { coeffs } => Arc::new(HeightWeight::new(self.n, coeffs.clone())),
            WeightSpec::Tilt { coef } => Arc::new(TiltWeight::new(*coef)),
            WeightSpec::Family { psi, .. } => {
                let z = zeta.ok_or_else(|| LabError::Parameter("family weight needs zeta".into()))?;
                let psi: Arc<dyn Weight> = Arc::new(HeightWeight::new(self.n, psi.clone()));
                Arc::new(
                    build_family_weight(&surface, z, psi).map_err(|e| LabError::Config(e.to_string()))?,
                )
            }
        })
    }

    pub fn stem(&self) -> String {
        self.output.stem.clone().unwrap_or_else(|| self.kind.name().to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RowStatus {
    Ok,
    Inconclusive,
    Error,
}

impl RowStatus {
    fn as_str(&self) -> &'static str {
        match self {
            Self::Ok => "ok",
            Self::Inconclusive => "inconclusive",
            Self::Error => "error",
        }
    }
}

/// One `(p, zeta)` cell. Fields that do not apply to the experiment stay empty.
#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub config_hash: String,
    pub kind: ExperimentKind,
    pub weight: String,
    pub p: u32,
    pub zeta: Option<f64>,
    pub status: RowStatus,
    pub residual: Option<f64>,
    pub argmax: Option<String>,
    pub kernel_dim: Option<usize>,
    pub gap: Option<f64>,
    pub bound: Option<f64>,
    pub ratio: Option<f64>,
    pub galerkin_d: Option<u32>,
    pub movement: Option<f64>,
    pub monotone: Option<bool>,
    pub f0: Option<f64>,
    pub max_imag: Option<f64>,
    pub moments: Option<[f64; 5]>,
    pub projector_bound: Option<f64>,
    pub condition: Option<f64>,
    pub raw_condition: Option<f64>,
    pub precision: Option<String>,
    pub quad_nodes: Option<usize>,
    pub message: Option<String>,
    /// Kept out of the CSV so that identical configs give identical files.
    #[serde(skip)]
    pub wall_seconds: f64,
}

impl SweepRow {
    fn empty(hash: &str, kind: ExperimentKind, p: u32, zeta: Option<f64>) -> Self {
        Self {
            config_hash: hash.to_string(),
            kind,
            weight: String::new(),
            p,
            zeta,
            status: RowStatus::Ok,
            residual: None,
            argmax: None,
            kernel_dim: None,
            gap: None,
            bound: None,
            ratio: None,
            galerkin_d: None,
            movement: None,
            monotone: None,
            f0: None,
            max_imag: None,
            moments: None,
            projector_bound: None,
            condition: None,
            raw_condition: None,
            precision: None,
            quad_nodes: None,
            message: None,
            wall_seconds: 0.0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingFit {
    /// `E_p ~ C p^{-alpha}`.
    pub c: f64,
    pub alpha: f64,
    pub r2: f64,
    /// Largest `|log E_p - log (C p^{-alpha})|` over the fitted points.
    pub band: f64,
    pub points: Vec<(u32, f64)>,
    /// Dropped points with the reason.
    pub excluded: Vec<(u32, String)>,
}

/// Least squares of `log E_p` on `log p`; nonpositive values are dropped with a warning.
pub fn fit_power_law(pairs: &[(u32, f64)]) -> Result<ScalingFit> {
    let mut excluded = Vec::new();
    let mut points = Vec::new();
    for &(p, e) in pairs {
        if e > 0.0 && e.is_finite() && p > 0 {
            points.push((p, e));
        } else {
            log::warn!("fit: dropping p = {p} with nonpositive residual {e}");
            excluded.push((p, format!("nonpositive residual {e}")));
        }
    }
    if points.len() < 3 {
        return Err(LabError::Parameter(format!("power-law fit needs 3 points, got {}", points.len())));
    }
    let xs: Vec<f64> = points.iter().map(|(p, _)| (*p as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, e)| e.ln()).collect();
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(LabError::Parameter("power-law fit needs distinct p".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let resid: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y - (intercept + slope * x)).collect();
    let ss_res: f64 = resid.iter().map(|r| r * r).sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(ScalingFit {
        c: intercept.exp(),
        alpha: -slope,
        r2,
        band: resid.iter().fold(0.0, |m, r| m.max(r.abs())),
        points,
        excluded,
    })
}

/// Smallest `zeta p` the fits accept.
pub const FIT_ZETA_P_MIN: f64 = 16.0;

/// [`fit_power_law`] after dropping the cells with `zeta p < 16`.
pub fn fit_above_gap(pairs: &[(u32, f64)], zeta: f64) -> Result<ScalingFit> {
    let (keep, drop): (Vec<_>, Vec<_>) = pairs.iter().partition(|(p, _)| zeta * *p as f64 >= FIT_ZETA_P_MIN);
    let mut fit = fit_power_law(&keep)?;
    for (p, _) in drop {
        fit.excluded.push((p, format!("zeta p = {} < {FIT_ZETA_P_MIN}", zeta * p as f64)));
    }
    fit.excluded.sort_by_key(|e| e.0);
    Ok(fit)
}

#[derive(Clone, Debug, Serialize)]
pub struct ZetaBoundRow {
    pub zeta: f64,
    pub measured_c: f64,
    pub norm: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ZetaBoundReport {
    pub n: usize,
    /// Calibrated so that the inequality is an equality at `zeta = 1`.
    pub c: f64,
    pub rows: Vec<ZetaBoundRow>,
    /// Slope of `log C(zeta)` against `log zeta`.
    pub empirical_exponent: f64,
    pub envelope_exponent: f64,
    pub holds: bool,
}

/// Checks `C(zeta) <= c zeta^{-(6n+9)} N^{8n+30}` with `c` calibrated at `zeta = 1`,
/// `N` the measured `|d phi|` norm of each level.
pub fn zeta_bound_check(n: usize, fits: &[(f64, ScalingFit)], norms: &[(f64, f64)]) -> Result<ZetaBoundReport> {
    let norm_of = |z: f64| {
        norms
            .iter()
            .find(|(zz, _)| (zz - z).abs() < 1e-12)
            .map(|(_, v)| *v)
            .ok_or_else(|| LabError::Parameter(format!("no norm measured for zeta = {z}")))
    };
    let base = fits
        .iter()
        .find(|(z, _)| (*z - 1.0).abs() < 1e-12)
        .ok_or_else(|| LabError::Parameter("zeta = 1 calibration level is missing".into()))?;
    if fits.len() < 2 {
        return Err(LabError::Parameter("need at least one zeta level besides 1".into()));
    }
    let ez = -(6.0 * n as f64 + 9.0);
    let en = 8.0 * n as f64 + 30.0;
    let c = base.1.c / norm_of(1.0)?.powf(en);
    let mut rows = Vec::new();
    for (z, fit) in fits {
        let norm = norm_of(*z)?;
        let bound = c * z.powf(ez) * norm.powf(en);
        rows.push(ZetaBoundRow { zeta: *z, measured_c: fit.c, norm, bound, holds: fit.c <= bound * (1.0 + 1e-12) });
    }
    let xs: Vec<f64> = fits.iter().map(|(z, _)| z.ln()).collect();
    let ys: Vec<f64> = fits.iter().map(|(_, f)| f.c.ln()).collect();
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let holds = rows.iter().all(|r| r.holds);
    Ok(ZetaBoundReport { n, c, rows, empirical_exponent: sxy / sxx, envelope_exponent: ez, holds })
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepResult {
    pub config_hash: String,
    pub version: String,
    pub rows: Vec<SweepRow>,
    /// Power-law fits per zeta level (diagonal-type experiments).
    pub fits: Vec<(Option<f64>, ScalingFit)>,
    pub zeta_bound: Option<ZetaBoundReport>,
}

impl SweepResult {
    pub fn has_errors(&self) -> bool {
        self.rows.iter().any(|r| r.status == RowStatus::Error)
    }

    pub fn is_inconclusive(&self) -> bool {
        self.rows.iter().any(|r| r.status == RowStatus::Inconclusive)
    }
}

fn cell_error(p: u32, zeta: Option<f64>, e: impl std::fmt::Display) -> LabError {
    LabError::Cell { p, zeta, message: e.to_string() }
}

/// Base point of the near-diagonal comparison.
fn base_point(cfg: &ExperimentConfig, surface: &ModelSurface) -> Result<ChartPoint> {
    if let Some(x0) = &cfg.near_diagonal.x0 {
        if x0.len() != cfg.n {
            return Err(LabError::Config(format!("x0 has {} coordinates, expected {}", x0.len(), cfg.n)));
        }
        let z: Vec<C64> = x0.iter().map(|[a, b]| C64::new(*a, *b)).collect();
        return Ok(ChartPoint { chart: Chart::Affine, z });
    }
    if let WeightSpec::Family { psi, .. } = &cfg.weight {
        let psi = HeightWeight::new(cfg.n, psi.clone());
        let (_, at) = zeta_floor(surface, &psi, &SampleGrid::residual_default(surface))
            .map_err(|e| LabError::Config(e.to_string()))?;
        return Ok(at);
    }
    Ok(ChartPoint { chart: Chart::Affine, z: vec![C64::new(0.0, 0.0); cfg.n] })
}

fn run_cell(cfg: &ExperimentConfig, hash: &str, p: u32, zeta: Option<f64>) -> Result<SweepRow> {
    let surface = cfg.surface();
    let mut row = SweepRow::empty(hash, cfg.kind, p, zeta);
    if cfg.kind == ExperimentKind::Filter {
        let z = zeta.expect("filter cells carry zeta");
        let prof = filter_build(cfg.filter.eps, z, &default_filter_grid(z)).map_err(|e| cell_error(p, zeta, e))?;
        row.weight = format!("bump[eps={}]", cfg.filter.eps);
        row.f0 = Some(prof.values[0].re);
        row.max_imag = Some(prof.max_imag());
        row.moments = Some(prof.moments);
        row.projector_bound = Some(projector_gap_bound(&prof, p, z).map_err(|e| cell_error(p, zeta, e))?);
        return Ok(row);
    }
    let weight = cfg.build_weight(zeta)?;
    row.weight = weight.label();
    if row.zeta.is_none() {
        let (z, _) = zeta_floor(&surface, weight.as_ref(), &SampleGrid::certification(&surface))
            .map_err(|e| cell_error(p, zeta, e))?;
        row.zeta = Some(z);
    }
    if cfg.kind == ExperimentKind::Spectrum {
        let ladder = cfg.spectral.ladder.clone().unwrap_or_else(|| default_ladder(p));
        let study =
            gap_report(&surface, weight.as_ref(), p, &ladder, row.zeta).map_err(|e| cell_error(p, zeta, e))?;
        let last = study.last();
        row.kernel_dim = Some(last.kernel_dim);
        row.gap = Some(last.gap);
        row.bound = Some(last.bound);
        row.ratio = Some(last.ratio);
        row.galerkin_d = Some(last.d);
        row.movement = Some(study.movement);
        row.monotone = Some(study.monotone);
        if study.status == GapStatus::Inconclusive {
            row.status = RowStatus::Inconclusive;
            row.message = Some(format!("gap moved {:.3e} on the last refinement", study.movement));
        }
        return Ok(row);
    }
    let basis = basis_for(&surface, p).map_err(|e| cell_error(p, zeta, e))?;
    let rule = build_rule_with(&surface, p, &cfg.quadrature).map_err(|e| cell_error(p, zeta, e))?;
    let ev = BergmanEvaluator::build(basis, weight.clone(), &rule, &cfg.precision)
        .map_err(|e| cell_error(p, zeta, e))?;
    row.condition = Some(ev.condition_estimate);
    row.raw_condition = Some(ev.raw_condition);
    row.precision = Some(format!("{:?}", ev.precision));
    row.quad_nodes = Some(rule.len());
    match cfg.kind {
        ExperimentKind::Diagonal | ExperimentKind::ZetaSweep => {
            let grid = SampleGrid::compact(&surface, cfg.grid.resolution);
            let field =
                diagonal_residual_field(&ev, &surface, weight.as_ref(), &grid).map_err(|e| cell_error(p, zeta, e))?;
            row.residual = Some(field.sup);
            row.argmax = Some(grid.points[field.argmax].to_string());
        }
        ExperimentKind::NearDiagonal => {
            let x0 = base_point(cfg, &surface)?;
            let params = model_params(&surface, weight.as_ref(), &x0).map_err(|e| cell_error(p, zeta, e))?;
            let grid = ZGrid::polar(cfg.n, cfg.grid.sigma, cfg.grid.radial, cfg.grid.angular);
            let rep = near_diagonal_residual(&ev, &surface, &params, &grid).map_err(|e| cell_error(p, zeta, e))?;
            row.residual = Some(rep.sup);
            let z: Vec<String> = grid.points[rep.argmax].iter().map(|c| format!("{c}")).collect();
            row.argmax = Some(format!("Z=({}) at {x0}", z.join(", ")));
        }
        _ => unreachable!("handled above"),
    }
    Ok(row)
}

/// Runs every cell concurrently; failures become error rows in place.
pub fn run(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let hash = cfg.hash();
    let cells = cfg.cells();
    let rows: Vec<SweepRow> = cells
        .par_iter()
        .map(|&(p, zeta)| {
            let start = Instant::now();
            let mut row = match run_cell(cfg, &hash, p, zeta) {
                Ok(r) => r,
                Err(LabError::Config(m)) => {
                    let mut r = SweepRow::empty(&hash, cfg.kind, p, zeta);
                    r.status = RowStatus::Error;
                    r.message = Some(format!("configuration: {m}"));
                    r
                }
                Err(e) => {
                    log::error!("{e}");
                    let mut r = SweepRow::empty(&hash, cfg.kind, p, zeta);
                    r.status = RowStatus::Error;
                    r.message = Some(e.to_string());
                    r
                }
            };
            row.wall_seconds = start.elapsed().as_secs_f64();
            row
        })
        .collect();
    if let Some(r) = rows.iter().find(|r| r.message.as_deref().is_some_and(|m| m.starts_with("configuration: "))) {
        return Err(LabError::Config(r.message.clone().unwrap_or_default()));
    }

    let mut fits = Vec::new();
    if matches!(cfg.kind, ExperimentKind::Diagonal | ExperimentKind::ZetaSweep) {
        let mut levels: Vec<Option<f64>> = Vec::new();
        for (_, z) in &cells {
            if !levels.contains(z) {
                levels.push(*z);
            }
        }
        for level in levels {
            let pairs: Vec<(u32, f64)> = rows
                .iter()
                .filter(|r| r.status == RowStatus::Ok && cells_match(r, level))
                .filter_map(|r| r.residual.map(|e| (r.p, e)))
                .collect();
            let zeta = level.or_else(|| rows.iter().find(|r| r.status == RowStatus::Ok).and_then(|r| r.zeta));
            let fit = match zeta {
                Some(z) => fit_above_gap(&pairs, z),
                None => fit_power_law(&pairs),
            };
            match fit {
                Ok(f) => fits.push((level, f)),
                Err(e) => log::info!("no fit at zeta = {level:?}: {e}"),
            }
        }
    }

    let zeta_bound = if cfg.kind == ExperimentKind::ZetaSweep {
        let surface = cfg.surface();
        let mut norms = Vec::new();
        let mut level_fits = Vec::new();
        for (level, fit) in &fits {
            let z = level.expect("family levels carry zeta");
            let w = cfg.build_weight(Some(z))?;
            let rep = measure_norms(&surface, w.as_ref(), cfg.n + 5).map_err(|e| LabError::Parameter(e.to_string()))?;
            norms.push((z, rep.bar_norm(cfg.n + 5)));
            level_fits.push((z, fit.clone()));
        }
        Some(zeta_bound_check(cfg.n, &level_fits, &norms)?)
    } else {
        None
    };

    Ok(SweepResult { config_hash: hash, version: env!("CARGO_PKG_VERSION").into(), rows, fits, zeta_bound })
}

fn cells_match(r: &SweepRow, level: Option<f64>) -> bool {
    match level {
        Some(z) => r.zeta == Some(z),
        None => true,
    }
}

/// 17 significant digits in scientific notation.
pub fn sci(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt<T>(v: &Option<T>, f: impl Fn(&T) -> String) -> String {
    v.as_ref().map(f).unwrap_or_default()
}

pub const CSV_COLUMNS: [&str; 27] = [
    "config_hash",
    "kind",
    "weight",
    "p",
    "zeta",
    "status",
    "residual",
    "argmax",
    "kernel_dim",
    "gap",
    "bound",
    "ratio",
    "galerkin_d",
    "movement",
    "monotone",
    "f0",
    "max_imag",
    "moment0",
    "moment1",
    "moment2",
    "moment3",
    "moment4",
    "projector_bound",
    "condition",
    "raw_condition",
    "precision",
    "message",
];

fn header_line(result: &SweepResult) -> String {
    format!("# bergman-lab {} config_hash={}\n", result.version, result.config_hash)
}

fn row_record(r: &SweepRow) -> Vec<String> {
    let m = |i: usize| opt(&r.moments, |m| sci(m[i]));
    vec![
        r.config_hash.clone(),
        r.kind.name().into(),
        r.weight.clone(),
        r.p.to_string(),
        opt(&r.zeta, |v| sci(*v)),
        r.status.as_str().into(),
        opt(&r.residual, |v| sci(*v)),
        opt(&r.argmax, |s| s.clone()),
        opt(&r.kernel_dim, |v| v.to_string()),
        opt(&r.gap, |v| sci(*v)),
        opt(&r.bound, |v| sci(*v)),
        opt(&r.ratio, |v| sci(*v)),
        opt(&r.galerkin_d, |v| v.to_string()),
        opt(&r.movement, |v| sci(*v)),
        opt(&r.monotone, |v| v.to_string()),
        opt(&r.f0, |v| sci(*v)),
        opt(&r.max_imag, |v| sci(*v)),
        m(0),
        m(1),
        m(2),
        m(3),
        m(4),
        opt(&r.projector_bound, |v| sci(*v)),
        opt(&r.condition, |v| sci(*v)),
        opt(&r.raw_condition, |v| sci(*v)),
        opt(&r.precision, |s| s.clone()),
        opt(&r.message, |s| s.clone()),
    ]
}

/// The main CSV as a string (header comment, column names, one line per cell).
pub fn render_csv(result: &SweepResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS)?;
    for r in &result.rows {
        w.write_record(row_record(r))?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| LabError::Io(e.into_error()))?)
        .expect("csv output is UTF-8");
    Ok(header_line(result) + &body)
}

fn render_fits(result: &SweepResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["zeta", "c", "alpha", "r2", "band", "points", "excluded"])?;
    for (z, f) in &result.fits {
        let pts: Vec<String> = f.points.iter().map(|(p, _)| p.to_string()).collect();
        let exc: Vec<String> = f.excluded.iter().map(|(p, why)| format!("{p}: {why}")).collect();
        w.write_record([
            opt(z, |v| sci(*v)),
            sci(f.c),
            sci(f.alpha),
            sci(f.r2),
            sci(f.band),
            pts.join(" "),
            exc.join("; "),
        ])?;
    }
    if let Some(zb) = &result.zeta_bound {
        w.flush()?;
        w.write_record(["# zeta", "measured_c", "norm", "bound", "holds", "", ""])?;
        for r in &zb.rows {
            w.write_record([sci(r.zeta), sci(r.measured_c), sci(r.norm), sci(r.bound), r.holds.to_string(), "".into(), "".into()])?;
        }
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| LabError::Io(e.into_error()))?)
        .expect("csv output is UTF-8");
    Ok(header_line(result) + &body)
}

/// Writes `<stem>.csv`, `<stem>_timing.csv`, `<stem>_fits.csv` when fits exist,
/// and `<stem>.json` when requested. Returns the written paths.
pub fn write_outputs(cfg: &ExperimentConfig, result: &SweepResult) -> Result<Vec<PathBuf>> {
    let dir = &cfg.output.dir;
    std::fs::create_dir_all(dir)?;
    let stem = cfg.stem();
    let mut written = Vec::new();
    let main = dir.join(format!("{stem}.csv"));
    std::fs::write(&main, render_csv(result)?)?;
    written.push(main);

    let mut timing = String::from("p,zeta,wall_seconds\n");
    for r in &result.rows {
        let _ = writeln!(timing, "{},{},{}", r.p, opt(&r.zeta, |v| sci(*v)), sci(r.wall_seconds));
    }
    let tpath = dir.join(format!("{stem}_timing.csv"));
    std::fs::write(&tpath, timing)?;
    written.push(tpath);

    if !result.fits.is_empty() {
        let fpath = dir.join(format!("{stem}_fits.csv"));
        std::fs::write(&fpath, render_fits(result)?)?;
        written.push(fpath);
    }
    if cfg.output.json {
        let jpath = dir.join(format!("{stem}.json"));
        std::fs::write(&jpath, serde_json::to_string_pretty(result)?)?;
        written.push(jpath);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn exact_power_laws() {
        let f = fit_power_law(&[(8, 1.0 / 8.0), (16, 1.0 / 16.0), (32, 1.0 / 32.0)]).unwrap();
        assert_abs_diff_eq!(f.alpha, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(f.c, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(f.r2, 1.0, epsilon = 1e-10);
        let f = fit_power_law(&[(8, 3.0 / 8f64.sqrt()), (16, 0.75), (32, 3.0 / 32f64.sqrt())]).unwrap();
        assert_abs_diff_eq!(f.alpha, 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(f.c, 3.0, epsilon = 1e-10);
    }

    #[test]
    fn fit_exclusions_are_recorded() {
        let pairs = [(4, 0.0), (8, 0.125), (16, 0.0625), (32, 0.03125), (64, 1.0 / 64.0)];
        let f = fit_power_law(&pairs).unwrap();
        assert_eq!(f.excluded.len(), 1);
        let g = fit_above_gap(&pairs[1..], 1.0).unwrap();
        assert_eq!(g.points.len(), 3);
        assert_eq!(g.excluded[0].0, 8);
        assert!(fit_power_law(&pairs[..3]).is_err());
    }

    #[test]
    fn config_parsing_and_validation() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            kind = "diagonal"
            p = [8, 16]
            [weight]
            name = "family"
            zeta = [0.5, 0.25]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.cells().len(), 4);
        assert_eq!(cfg.weight, WeightSpec::Family { zeta: vec![0.5, 0.25], psi: vec![0.0, -0.5] });
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&json).unwrap().hash(), cfg.hash());
        for bad in [
            "kind = \"diagonal\"\np = [16, 8]",
            "kind = \"diagonal\"\np = [8]\n[weight]\nname = \"family\"\nzeta = [1.5]",
            "kind = \"diagonal\"\np = [8]\n[weight]\nname = \"mystery\"",
            "kind = \"wobble\"\np = [8]",
            "kind = \"zeta-sweep\"\np = [8]",
        ] {
            assert!(matches!(ExperimentConfig::from_toml(bad), Err(LabError::Config(_))), "{bad}");
        }
    }

    #[test]
    fn diagonal_sweep_reproduces_fubini_study() {
        let cfg = ExperimentConfig::new(ExperimentKind::Diagonal, vec![8, 16, 32]);
        let res = run(&cfg).unwrap();
        for r in &res.rows {
            assert_abs_diff_eq!(r.residual.unwrap(), 1.0 / r.p as f64, epsilon = 1e-8);
        }
        // p = 8 sits below the fit threshold zeta p >= 16.
        assert!(res.fits.is_empty());
        let res2 = run(&ExperimentConfig::new(ExperimentKind::Diagonal, vec![16, 32, 64])).unwrap();
        assert_abs_diff_eq!(res2.fits[0].1.alpha, 1.0, epsilon = 1e-6);
        let csv = render_csv(&res).unwrap();
        assert!(csv.starts_with(&format!("# bergman-lab {} config_hash=", env!("CARGO_PKG_VERSION"))));
        assert_eq!(csv, render_csv(&run(&cfg).unwrap()).unwrap());
    }

    #[test]
    fn error_rows_keep_their_place() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::Diagonal, vec![4, 8]);
        cfg.quadrature.node_cap = Some(1000);
        let res = run(&cfg).unwrap();
        assert_eq!(res.rows.len(), 2);
        assert_eq!(res.rows[0].status, RowStatus::Ok);
        assert_eq!(res.rows[1].status, RowStatus::Error);
        assert!(res.has_errors());
    }

    #[test]
    fn zeta_bound_is_tight_at_calibration() {
        let fit = |c: f64| ScalingFit { c, alpha: 1.0, r2: 1.0, band: 0.0, points: vec![], excluded: vec![] };
        let r = zeta_bound_check(1, &[(1.0, fit(1.0)), (0.5, fit(3.0))], &[(1.0, 1.0), (0.5, 1.2)]).unwrap();
        assert!(r.holds);
        assert_abs_diff_eq!(r.rows[0].bound, r.rows[0].measured_c, epsilon = 1e-14);
        assert!(zeta_bound_check(1, &[(0.5, fit(3.0))], &[(0.5, 1.0)]).is_err());
    }
}
