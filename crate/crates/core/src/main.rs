use std::path::PathBuf;
use std::process::ExitCode;

use bergman_core::bergman::PrecisionPolicy;
use bergman_core::lab::{run, write_outputs, ExperimentConfig, ExperimentKind, LabError, WeightSpec};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Numerical experiments on Bergman kernels of `L^p` over `CP^1` / `CP^2`.
#[derive(Parser, Debug)]
#[command(name = "bergman-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sup-grid residual of `p^{-n} P_p(x, x)` against `omega^n / theta^n`.
    Diagonal(Common),
    /// Rescaled kernel against the Gaussian model near a base point.
    NearDiagonal(Common),
    /// Galerkin spectral gap of `D_p^2` on `CP^1`.
    Spectrum(Common),
    /// Fourier filter profile and projector bounds.
    Filter(Common),
    /// Run whatever the config file describes (any kind, incl. zeta-sweep).
    Sweep(Common),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PrecisionMode {
    /// Double precision, escalating when ill-conditioned.
    Auto,
    /// Double precision only; fail instead of escalating.
    Double,
    /// Always use the extended-precision path.
    Extended,
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated tensor powers.
    #[arg(long, value_delimiter = ',')]
    p: Option<Vec<u32>>,
    /// Comma-separated positivity floors; selects the shipped family weight
    /// (or the filter levels for `filter`).
    #[arg(long, value_delimiter = ',')]
    zeta: Option<Vec<f64>>,
    /// Sample-grid resolution.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long, value_enum)]
    precision: Option<PrecisionMode>,
    #[arg(long, env = "BERGMAN_LAB_THREADS")]
    threads: Option<usize>,
    /// Also write a JSON mirror.
    #[arg(long)]
    json: bool,
}

fn build_config(kind: Option<ExperimentKind>, c: &Common) -> Result<ExperimentConfig, LabError> {
    let mut cfg = match &c.config {
        Some(path) => ExperimentConfig::from_path(path)?,
        None => {
            let kind = kind.ok_or_else(|| LabError::Config("sweep needs --config".into()))?;
            ExperimentConfig::new(kind, vec![8, 16, 32])
        }
    };
    if let Some(k) = kind {
        cfg.kind = k;
    }
    if let Some(p) = &c.p {
        cfg.p = p.clone();
    }
    if let Some(z) = &c.zeta {
        if cfg.kind == ExperimentKind::Filter {
            cfg.filter.zeta = z.clone();
        } else {
            let psi = match &cfg.weight {
                WeightSpec::Family { psi, .. } => psi.clone(),
                _ => vec![0.0, -0.5],
            };
            cfg.weight = WeightSpec::Family { zeta: z.clone(), psi };
        }
    }
    if let Some(g) = c.grid {
        cfg.grid.resolution = g;
    }
    if let Some(mode) = c.precision {
        cfg.precision = match mode {
            PrecisionMode::Auto => PrecisionPolicy::default(),
            PrecisionMode::Double => PrecisionPolicy { extra_bits: 0, ..PrecisionPolicy::default() },
            PrecisionMode::Extended => PrecisionPolicy { force_extended: true, ..PrecisionPolicy::default() },
        };
    }
    if let Some(out) = &c.out {
        cfg.output.dir = out.clone();
    }
    cfg.output.json |= c.json;
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (kind, common) = match &cli.command {
        Command::Diagonal(c) => (Some(ExperimentKind::Diagonal), c),
        Command::NearDiagonal(c) => (Some(ExperimentKind::NearDiagonal), c),
        Command::Spectrum(c) => (Some(ExperimentKind::Spectrum), c),
        Command::Filter(c) => (Some(ExperimentKind::Filter), c),
        Command::Sweep(c) => (None, c),
    };
    if let Some(t) = common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: cannot configure {t} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let cfg = match build_config(kind, common) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match run(&cfg) {
        Ok(r) => r,
        Err(e @ LabError::Config(_)) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    };
    match write_outputs(&cfg, &result) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    }
    for (z, f) in &result.fits {
        println!(
            "fit zeta={}: C={:.4e} alpha={:.4} R^2={:.5} ({} points, {} excluded)",
            z.map_or("-".into(), |z| z.to_string()),
            f.c,
            f.alpha,
            f.r2,
            f.points.len(),
            f.excluded.len()
        );
    }
    if let Some(zb) = &result.zeta_bound {
        println!(
            "zeta bound holds: {} (empirical exponent {:.3}, envelope {})",
            zb.holds, zb.empirical_exponent, zb.envelope_exponent
        );
    }
    if result.has_errors() {
        ExitCode::from(3)
    } else if result.is_inconclusive() {
        ExitCode::from(4)
    } else {
        ExitCode::SUCCESS
    }
}
