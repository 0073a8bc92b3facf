//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use bergman_core::bergman::{evaluator_for, BergmanEvaluator, PrecisionPolicy};
use bergman_core::geometry::{
    build_family_weight, zeta_floor, ChartPoint, HeightWeight, ModelSurface, SampleGrid, TiltWeight, Weight,
    ZeroWeight,
};
use bergman_core::lab::{fit_power_law, render_csv, run, ExperimentConfig, ExperimentKind, WeightSpec};
use bergman_core::model::{diagonal_residual_field, model_kernel, model_params, near_diagonal_residual, ZGrid};
use bergman_core::quadrature::build_rule;
use bergman_core::sections::basis_for;
use bergman_core::spectral::{default_filter_grid, default_ladder, filter_build, gap_report, projector_gap_bound, GapStatus};
use bergman_core::C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn line() -> ModelSurface {
    ModelSurface::projective_line()
}

fn family(zeta: f64) -> Arc<dyn Weight> {
    Arc::new(build_family_weight(&line(), zeta, Arc::new(HeightWeight::degenerate_default(1))).unwrap())
}

/// `sum_k |z|^{2k} (1 + |z|^2)^{-p} / B_k` with `B_k = int |z^k|^2 e^{-2p phi_0} theta`
/// the beta integral `k! (p - k)! / (p + 1)!`.
fn fs_diagonal_oracle(p: u32, t: f64) -> f64 {
    let mut ln_b: Vec<f64> = Vec::new();
    let lf = |k: u32| (1..=k).map(|i| (i as f64).ln()).sum::<f64>();
    for k in 0..=p {
        ln_b.push(lf(k) + lf(p - k) - lf(p + 1));
    }
    (0..=p)
        .map(|k| {
            let ln_term = if k == 0 { 0.0 } else { k as f64 * t.ln() } - p as f64 * (1.0 + t).ln() - ln_b[k as usize];
            ln_term.exp()
        })
        .sum()
}

fn fubini_study_exactness() -> Outcome {
    let s = line();
    let grid = SampleGrid::residual_default(&s);
    let mut worst: f64 = 0.0;
    let mut worst_oracle: f64 = 0.0;
    for p in [2u32, 8, 16, 32, 64] {
        let (ev, _) = evaluator_for(&s, Arc::new(ZeroWeight::new(1)), p, &PrecisionPolicy::default()).unwrap();
        for x in &grid.points {
            let k = ev.kernel_diagonal(x).unwrap();
            worst = worst.max((k - (p + 1) as f64).abs());
            let t = x.norm_sqr();
            let t = if x.chart == bergman_core::geometry::Chart::Affine { t } else if t == 0.0 { f64::INFINITY } else { 1.0 / t };
            if t.is_finite() {
                worst_oracle = worst_oracle.max((k - fs_diagonal_oracle(p, t)).abs());
            }
        }
        let field = diagonal_residual_field(&ev, &s, &ZeroWeight::new(1), &grid).unwrap();
        worst = worst.max(p as f64 * (field.sup - 1.0 / p as f64).abs());
    }
    Outcome {
        pass: worst < 1e-8 && worst_oracle < 1e-8,
        detail: format!("max |P - (p+1)| = {worst:.2e}, max |P - beta oracle| = {worst_oracle:.2e} over {} points", grid.len()),
    }
}

fn diagonal_sup(p: u32, w: Arc<dyn Weight>) -> f64 {
    let s = line();
    let (ev, _) = evaluator_for(&s, w.clone(), p, &PrecisionPolicy::default()).unwrap();
    diagonal_residual_field(&ev, &s, w.as_ref(), &SampleGrid::residual_default(&s)).unwrap().sup
}

fn diagonal_rate() -> Outcome {
    let w = family(0.5);
    let ps = [16u32, 32, 64, 128];
    let e: Vec<f64> = ps.iter().map(|&p| diagonal_sup(p, w.clone())).collect();
    let r1 = e[2] / e[1];
    let r2 = e[3] / e[2];
    let pairs: Vec<(u32, f64)> = ps.iter().copied().zip(e.iter().copied()).collect();
    let fit = fit_power_law(&pairs).unwrap();
    let pass = (0.35..=0.65).contains(&r1)
        && (0.35..=0.65).contains(&r2)
        && (0.8..=1.2).contains(&fit.alpha)
        && fit.r2 >= 0.98;
    Outcome {
        pass,
        detail: format!(
            "E_p = {:.4e} {:.4e} {:.4e} {:.4e}; ratios {r1:.3} {r2:.3}; alpha = {:.3}, R^2 = {:.5}",
            e[0], e[1], e[2], e[3], fit.alpha, fit.r2
        ),
    }
}

fn near_diagonal_gaussian() -> Outcome {
    let s = line();
    let mut pass = true;
    let mut parts = Vec::new();
    let psi = HeightWeight::degenerate_default(1);
    let (_, degenerate_at) = zeta_floor(&s, &psi, &SampleGrid::certification(&s)).unwrap();
    for (name, w, x0) in [
        ("zero", Arc::new(ZeroWeight::new(1)) as Arc<dyn Weight>, ChartPoint::line(C64::new(0.0, 0.0))),
        ("family 0.5", family(0.5), degenerate_at.clone()),
    ] {
        let params = model_params(&s, w.as_ref(), &x0).unwrap();
        let grid = ZGrid::default_for(1);
        let ps = [16u32, 32, 64, 128];
        let r: Vec<f64> = ps
            .iter()
            .map(|&p| {
                let (ev, _) = evaluator_for(&s, w.clone(), p, &PrecisionPolicy::default()).unwrap();
                near_diagonal_residual(&ev, &s, &params, &grid).unwrap().sup
            })
            .collect();
        let ratios: Vec<f64> = r.windows(2).map(|w| w[1] / w[0]).collect();
        let fit = fit_power_law(&ps.iter().copied().zip(r.iter().copied()).collect::<Vec<_>>()).unwrap();
        pass &= ratios.iter().all(|q| *q <= 0.8) && fit.alpha >= 0.4;
        parts.push(format!(
            "{name}: ratios {:.3} {:.3} {:.3}, exponent {:.3}",
            ratios[0], ratios[1], ratios[2], fit.alpha
        ));
    }
    Outcome { pass, detail: parts.join("; ") }
}

fn model_kernel_units() -> Outcome {
    let mut worst: f64 = 0.0;
    let z0 = [C64::new(0.0, 0.0), C64::new(0.0, 0.0)];
    for a in [vec![2.0 * PI], vec![PI], vec![2.0 * PI, 3.0], vec![0.7, 5.5]] {
        let n = a.len();
        let prod: f64 = a.iter().map(|ai| ai / (2.0 * PI)).product();
        worst = worst.max((model_kernel(&a, &z0[..n], &z0[..n]) - prod).norm());
        for z in [[C64::new(0.3, -1.1), C64::new(2.0, 0.5)], [C64::new(-1.7, 0.2), C64::new(0.0, 0.9)]] {
            worst = worst.max((model_kernel(&a, &z[..n], &z[..n]) - prod).norm());
        }
    }
    let a = [2.0 * PI];
    let v = model_kernel(&a, &[C64::new(1.0, 0.0)], &[C64::new(0.0, 0.0)]).norm();
    worst = worst.max((v - (-PI / 2.0).exp()).abs());
    Outcome { pass: worst < 1e-12, detail: format!("max deviation {worst:.2e}") }
}

fn spectral_gap() -> Outcome {
    let s = line();
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, w) in [("zero", Arc::new(ZeroWeight::new(1)) as Arc<dyn Weight>), ("family 0.5", family(0.5))] {
        for p in [16u32, 32] {
            let study = gap_report(&s, w.as_ref(), p, &default_ladder(p), None).unwrap();
            let last = study.last();
            let ok = study.status == GapStatus::Converged
                && study.monotone
                && last.kernel_dim == p as usize + 1
                && last.ratio >= 0.9;
            pass &= ok;
            parts.push(format!(
                "{name} p={p}: zeta={:.3} ratio={:.3} kernel={} movement={:.1e}",
                study.zeta, last.ratio, last.kernel_dim, study.movement
            ));
        }
    }
    Outcome { pass, detail: parts.join("; ") }
}

fn filter_calculus() -> Outcome {
    let eps = 0.5;
    let one = filter_build(eps, 1.0, &default_filter_grid(1.0)).unwrap();
    let half = filter_build(eps, 0.5, &default_filter_grid(0.5)).unwrap();
    let probes: Vec<f64> = vec![0.3, 1.7, 6.0, 13.25, 40.0];
    let plus = filter_build(eps, 1.0, &probes).unwrap();
    let minus = filter_build(eps, 1.0, &probes.iter().map(|a| -a).collect::<Vec<_>>()).unwrap();
    let even = plus.values.iter().zip(&minus.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    let f0 = (one.values[0] - 1.0).norm();
    let imag = one.max_imag().max(half.max_imag());
    let growth = half.moments[2] / one.moments[2];
    let bounds: Vec<f64> = [25u32, 100, 400].iter().map(|&p| projector_gap_bound(&one, p, 1.0).unwrap()).collect();
    let monotone = bounds.windows(2).all(|w| w[1] < w[0]);
    let small = bounds[1] < 1e-3;
    let pass = f0 <= 1e-10 && imag < 1e-12 && even < 1e-12 && (3.5..=4.5).contains(&growth) && monotone && small;
    Outcome {
        pass,
        detail: format!(
            "|F(0)-1| = {f0:.1e}, max|Im F| = {imag:.1e}, odd part {even:.1e}, moment-2 growth {growth:.3}, \
             projector bounds {:.3e} {:.3e} {:.3e} (monotone: {monotone}, < 1e-3 at zeta p = 100: {small})",
            bounds[0], bounds[1], bounds[2]
        ),
    }
}

fn zeta_envelope() -> Outcome {
    let mut cfg = ExperimentConfig::new(ExperimentKind::ZetaSweep, vec![16, 32, 64, 128, 256]);
    cfg.weight = WeightSpec::Family { zeta: vec![1.0, 0.5, 0.25], psi: vec![0.0, -0.5] };
    let res = run(&cfg).unwrap();
    let zb = res.zeta_bound.as_ref().unwrap();
    let ok_rows = zb.rows.len() == 3 && !res.has_errors();
    let cs: Vec<String> = zb.rows.iter().map(|r| format!("C({})={:.3}", r.zeta, r.measured_c)).collect();
    Outcome {
        pass: zb.holds && ok_rows,
        detail: format!(
            "{}; empirical zeta-exponent {:.3} (envelope {})",
            cs.join(" "),
            zb.empirical_exponent,
            zb.envelope_exponent
        ),
    }
}

fn random_point(rng: &mut ChaCha8Rng) -> ChartPoint {
    let z = C64::from_polar(rng.gen_range(0.0..1.0f64).sqrt(), rng.gen_range(0.0..2.0 * PI));
    if rng.gen_bool(0.5) {
        ChartPoint::line(z)
    } else {
        ChartPoint::antipodal(z)
    }
}

fn structural_invariants() -> Outcome {
    let s = line();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let tilt: Arc<dyn Weight> = Arc::new(TiltWeight::new(0.15));
    let p = 16;
    let (ev, rule) = evaluator_for(&s, tilt.clone(), p, &PrecisionPolicy::default()).unwrap();

    let g = ev.gram();
    let herm = (g - g.adjoint()).iter().map(|c| c.norm()).fold(0.0, f64::max);
    let pd = g.clone().cholesky().is_some() && ev.orthonormality_defect() < 1e-8;

    let mut extremal: f64 = 0.0;
    let mut cs_violation: f64 = 0.0;
    let pts: Vec<ChartPoint> = (0..100).map(|_| random_point(&mut rng)).collect();
    for (i, x) in pts.iter().enumerate() {
        let a = ev.kernel_diagonal(x).unwrap();
        let b = ev.kernel_diagonal_extremal(x).unwrap();
        extremal = extremal.max((a - b).abs() / a);
        let y = &pts[(i + 37) % pts.len()];
        let off = ev.kernel_offdiag_modulus(x, y).unwrap();
        let bound = (a * ev.kernel_diagonal(y).unwrap()).sqrt();
        cs_violation = cs_violation.max(off / bound - 1.0);
    }

    let mut trace_err: f64 = 0.0;
    for (surface, w, p, expected) in [
        (line(), family(0.5), 32u32, 33.0),
        (line(), tilt.clone(), 16, 17.0),
        (ModelSurface::projective_plane(), Arc::new(ZeroWeight::new(2)) as Arc<dyn Weight>, 6, 28.0),
    ] {
        let (e, r) = evaluator_for(&surface, w, p, &PrecisionPolicy::default()).unwrap();
        trace_err = trace_err.max((e.trace(&r).unwrap() - expected).abs() / expected);
    }

    let finer = build_rule(&s, p + 8).unwrap();
    let ev2 = BergmanEvaluator::build(basis_for(&s, p).unwrap(), tilt.clone(), &finer, &PrecisionPolicy::default()).unwrap();
    let mut refine: f64 = 0.0;
    for x in pts.iter().take(30) {
        let a = ev.kernel_diagonal(x).unwrap();
        refine = refine.max((a - ev2.kernel_diagonal(x).unwrap()).abs() / a);
    }
    let _ = rule;

    let mut cfg = ExperimentConfig::new(ExperimentKind::Diagonal, vec![8, 16]);
    cfg.weight = WeightSpec::Family { zeta: vec![0.5], psi: vec![0.0, -0.5] };
    let c1 = render_csv(&run(&cfg).unwrap()).unwrap();
    let c2 = render_csv(&run(&cfg.clone()).unwrap()).unwrap();
    let reproducible = c1 == c2;

    let pass = herm == 0.0 || herm < 1e-14 * g.norm();
    let pass = pass && pd && extremal < 1e-8 && cs_violation < 1e-10 && trace_err < 1e-8 && refine < 1e-10 && reproducible;
    Outcome {
        pass,
        detail: format!(
            "hermitian defect {herm:.1e}, PD {pd}, extremal-vs-sum {extremal:.1e}, Cauchy-Schwarz excess {cs_violation:.1e}, \
             trace rel err {trace_err:.1e}, refinement {refine:.1e}, reproducible CSV {reproducible}"
        ),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("fubini-study exactness", fubini_study_exactness),
        ("diagonal convergence rate", diagonal_rate),
        ("near-diagonal gaussian", near_diagonal_gaussian),
        ("model kernel unit values", model_kernel_units),
        ("spectral gap", spectral_gap),
        ("filter calculus", filter_calculus),
        ("zeta envelope", zeta_envelope),
        ("structural invariants", structural_invariants),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let out = check();
        let tag = if out.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {}. {name} ({:.1}s): {}", i + 1, start.elapsed().as_secs_f64(), out.detail);
        if !out.pass {
            failed += 1;
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
