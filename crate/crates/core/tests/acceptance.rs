//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//! Expected values are computed here from closed forms and elementary
//! identities, independent of the code under test.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use mvslab::diagnostics::{
    as_stability_report, bound_check, moment_curve, supermartingale_check, ItoAccumulator, ItoReport, ItoSeries,
    StabilityThresholds,
};
use mvslab::lyapunov::{
    check_certificate, default_certificate_measures, integrated_generator_margin, validate_derivatives,
    GeneratorContext, LyapunovSpec, StabilityCertificate,
};
use mvslab::measure::{
    rho_lower_bound, wasserstein1, wasserstein1_upper, EmpiricalMeasure, MeasureView, TestDictionary,
    DEFAULT_PROJECTIONS,
};
use mvslab::model::{audit_samples, ModelSpec};
use mvslab::oracle::{ou_moments, OUParams};
use mvslab::rng::{CounterRng, Domain};
use mvslab::simulate::{run_ensemble, run_replicas, InitLaw, SimConfig};

type Outcome = Result<(bool, String), String>;

/// `Σ_{k≤n} k⁻³` summed from the small end.
fn zeta3(n: usize) -> f64 {
    (1..=n).rev().map(|k| 1.0 / (k as f64).powi(3)).sum()
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// 1. Envelope of the example model.
fn envelope_reproduction() -> Outcome {
    let (m, l) = (0.25, 50);
    let cert = StabilityCertificate::example61(m, l).map_err(err)?;
    let z = zeta3(l);
    let constants_ok = cert.alpha == 1.5
        && cert.a1 == 7.0 / 16.0
        && cert.a2 == 17.0 / 8.0
        && (cert.m1 - z).abs() <= 1e-15
        && (cert.envelope_factor() - 34.0 / 7.0).abs() <= 1e-14
        && (cert.envelope_offset() - 32.0 * z / 21.0).abs() <= 1e-14;
    let cfg = SimConfig::new(2000, 32, 1e-3, 10.0, 61, InitLaw::gaussian(1, 0.0, 1.0)).with_stride(100);
    let ens = run_ensemble(&ModelSpec::example61(m, l), &cfg).map_err(err)?;
    let curve = moment_curve(&ens, 2).map_err(err)?;
    let v = bound_check(&curve, &cert, curve.values[0]).map_err(err)?;
    Ok((
        constants_ok && v.pass && ens.failures().is_empty(),
        format!(
            "constants {}; {} times, {} violations, worst slack {:.4} at t = {}",
            if constants_ok { "match" } else { "MISMATCH" },
            curve.times.len(),
            v.n_violations,
            v.worst_slack,
            curve.times[v.worst_index]
        ),
    ))
}

/// 2. Certificate audit on 100 measures plus the origin.
fn certificate_audit() -> Outcome {
    let v = LyapunovSpec::mean_centered(0.25);
    let model = ModelSpec::example61(0.25, 50);
    let cert = StabilityCertificate::example61(0.25, 50).map_err(err)?;
    let measures = default_certificate_measures(1, 100, 2024);
    let r = check_certificate(&v, &model, &cert, &measures).map_err(err)?;
    let origin = EmpiricalMeasure::dirac(&[0.0]).map_err(err)?;
    let at_origin = integrated_generator_margin(&v, &model, &origin, cert.alpha).map_err(err)?;
    let bound = zeta3(50) + 1e-9;
    Ok((
        r.pass && r.worst_margin <= bound && at_origin.abs() <= 1e-12,
        format!(
            "{} measures, worst margin {:.6} (bound {:.6}), origin margin {:e}",
            r.n_samples, r.worst_margin, bound, at_origin
        ),
    ))
}

/// 3. Second moment of the mean-field OU against its closed form.
fn oracle_equivalence() -> Outcome {
    let (m, s, x0) = (0.25, 0.5, 1000.0);
    let model = ModelSpec::meanfield_ou(m, s);
    let params = OUParams::new(m, s, x0, x0 * x0).map_err(err)?;
    let run = |dt: f64, stride: usize| -> Result<(Vec<f64>, Vec<f64>), String> {
        let cfg = SimConfig::new(10_000, 16, dt, 5.0, 3, InitLaw::point(&[x0])).with_stride(stride);
        let curve = moment_curve(&run_ensemble(&model, &cfg).map_err(err)?, 2).map_err(err)?;
        Ok((curve.times, curve.values))
    };
    let (times, coarse) = run(1e-3, 100)?;
    let exact = ou_moments(&params, &times).map_err(err)?.m2;
    let worst_rel = coarse
        .iter()
        .zip(&exact)
        .map(|(a, b)| ((a - b) / b).abs())
        .fold(0.0, f64::max);
    let (times_fine, fine) = run(5e-4, 200)?;
    if times_fine.len() != times.len() {
        return Err("grids differ between step sizes".into());
    }
    let last = times.len() - 1;
    let ratio = (coarse[last] - exact[last]).abs() / (fine[last] - exact[last]).abs();
    Ok((
        worst_rel <= 0.02 && (1.5..=2.5).contains(&ratio),
        format!("worst relative error {worst_rel:.2e} over {} times; halving ratio at t = 5: {ratio:.3}", times.len()),
    ))
}

/// 4. Finite-difference lift checks of the mean-centered functional.
fn derivative_validation() -> Outcome {
    let points = audit_samples(1, 50, 16, 3.0, 404);
    let r = validate_derivatives(&LyapunovSpec::mean_centered(0.25), &points, None).map_err(err)?;
    let fields = [&r.grad_x, &r.hess_x, &r.lions, &r.lions_jac];
    let all = fields.iter().all(|f| f.pass && f.max_rel_error <= 1e-5);
    Ok((
        all && r.pass && r.lions_jac.max_fd_magnitude <= 1e-7,
        format!(
            "{} points; relative errors grad {:.1e} hess {:.1e} lions {:.1e} lions_jac {:.1e}; lions_jac |FD| {:.1e}",
            r.n_points,
            r.grad_x.max_rel_error,
            r.hess_x.max_rel_error,
            r.lions.max_rel_error,
            r.lions_jac.max_rel_error,
            r.lions_jac.max_fd_magnitude
        ),
    ))
}

fn random_measure(rng: &mut CounterRng, dim: usize, max_atoms: usize, spread: f64) -> EmpiricalMeasure {
    let n = 1 + rng.below(max_atoms);
    let pts: Vec<f64> = (0..n * dim).map(|_| spread * rng.normal()).collect();
    let w: Vec<f64> = (0..n).map(|_| 0.1 + rng.uniform()).collect();
    EmpiricalMeasure::normalized(dim, pts, w).expect("valid random measure")
}

/// 5. Distribution-free reduction and linearity of the generator.
fn generator_reduction_and_linearity() -> Outcome {
    let mut rng = CounterRng::new(5, Domain::Scratch, 0);
    let mut worst_reduction: f64 = 0.0;
    for i in 0..100 {
        let dim = 1 + i % 3;
        let eps = 0.5 + rng.uniform();
        let model = ModelSpec::contractive_dim(eps, dim);
        let v = LyapunovSpec::quad_dim(dim);
        let x: Vec<f64> = (0..dim).map(|_| 2.0 * rng.normal()).collect();
        // b·∇v + ½tr(σσ*∇²v) with b = −x, σ = eps·diag(sin x), v = |x|².
        let classical: f64 = x.iter().map(|xi| -2.0 * xi * xi + eps * eps * xi.sin().powi(2)).sum();
        for _ in 0..2 {
            let mu = random_measure(&mut rng, dim, 8, 2.0);
            let ctx = GeneratorContext::new(&v, &model, &mu).map_err(err)?;
            let g = ctx.generator(&v, &model, &x).map_err(err)?;
            worst_reduction = worst_reduction.max((g - classical).abs() / classical.abs().max(1.0));
        }
    }
    let mut worst_linearity: f64 = 0.0;
    let models = [ModelSpec::example61(0.25, 50), ModelSpec::meanfield_ou(0.3, 0.7)];
    for i in 0..100 {
        let model = &models[i % 2];
        let pick = |k: usize, p: f64| match k % 3 {
            0 => LyapunovSpec::quad(),
            1 => LyapunovSpec::mean_centered(p),
            _ => LyapunovSpec::spread(p, 1),
        };
        let (a, b) = (rng.normal(), rng.normal());
        let v1 = pick(rng.below(3), rng.uniform());
        let v2 = pick(rng.below(3), rng.uniform());
        let combo = LyapunovSpec::linear_combination(vec![(a, v1.clone()), (b, v2.clone())]).map_err(err)?;
        let mu = random_measure(&mut rng, 1, 12, 1.5);
        let x = [1.5 * rng.normal()];
        let view = MeasureView::new(&mu);
        let gen = |v: &LyapunovSpec| -> Result<f64, String> {
            GeneratorContext::from_view(v, model, view.clone())
                .and_then(|c| c.generator(v, model, &x))
                .map_err(err)
        };
        let (g1, g2, g12) = (gen(&v1)?, gen(&v2)?, gen(&combo)?);
        let scale = (a * g1).abs() + (b * g2).abs();
        let diff = (g12 - (a * g1 + b * g2)).abs();
        worst_linearity = worst_linearity.max(if scale > 0.0 { diff / scale } else { diff });
    }
    Ok((
        worst_reduction <= 1e-12 && worst_linearity <= 1e-10,
        format!("reduction error {worst_reduction:.1e} on 200 evaluations; linearity error {worst_linearity:.1e} on 100 pairs"),
    ))
}

/// 6. Both sides of the expectation identity for `|x|²` under `dX = −X dt + dW`.
fn ito_consistency_check() -> Outcome {
    let model = ModelSpec::meanfield_ou(0.0, 1.0);
    let v = LyapunovSpec::quad();
    let run = |dt: f64| -> Result<ItoReport, String> {
        let cfg = SimConfig::new(1000, 200, dt, 2.0, 6, InitLaw::point(&[0.0]));
        let runs = run_replicas(&model, &cfg, |_| ItoAccumulator::new(&v, &model, Some(dt)).expect("1-d fixture"))
            .map_err(err)?;
        let series: Vec<ItoSeries> = runs.into_iter().map(|r| r.observer.into_series()).collect();
        ItoReport::from_series(v.label(), model.label(), cfg.n_particles, &series).map_err(err)
    };
    let final_corrected = |r: &ItoReport| -> Result<f64, String> {
        r.corrected
            .as_ref()
            .and_then(|c| c.last().copied())
            .ok_or_else(|| "control variate unavailable".to_string())
    };
    let coarse = run(1e-3)?;
    let fine = run(5e-4)?;
    let (dc, df) = (final_corrected(&coarse)?, final_corrected(&fine)?);
    let ratio = dc.abs() / df.abs();
    Ok((
        dc.abs() <= 0.01 && (1.5..=2.5).contains(&ratio),
        format!(
            "N·M = {}; discrepancy at T = 2: {dc:.3e} (raw {:.3e}), halving ratio {ratio:.3}",
            1000 * 200,
            coarse.discrepancy.last().copied().unwrap_or(f64::NAN)
        ),
    ))
}

fn contractive_config() -> SimConfig {
    SimConfig::new(500, 32, 1e-3, 10.0, 7, InitLaw::point(&[2.0])).with_stride(10)
}

/// 7 and 8 share one contractive run.
fn contractive_criteria() -> (Outcome, Outcome) {
    let ens = match run_ensemble(&ModelSpec::contractive(1.0), &contractive_config()) {
        Ok(e) => e,
        Err(e) => return (Err(err(&e)), Err(err(e))),
    };
    let quad = LyapunovSpec::quad();
    let decay = (|| -> Outcome {
        let cert = StabilityCertificate::h21(1.0, 1.0, 1.0).map_err(err)?;
        let curve = moment_curve(&ens, 2).map_err(err)?;
        let env = bound_check(&curve, &cert, 4.0).map_err(err)?;
        let sm = supermartingale_check(&ens, &quad, 1.0).map_err(err)?;
        Ok((
            env.pass && sm.pass,
            format!(
                "envelope 4e^(-t): {} violations over {} times, worst slack {:.3e}; supermartingale worst excess {:.3e}",
                env.n_violations,
                curve.times.len(),
                env.worst_slack,
                sm.worst_excess
            ),
        ))
    })();
    let proxy = (|| -> Outcome {
        let thresholds = StabilityThresholds {
            t_tail: 8.0,
            eps_levels: vec![0.1, 0.5],
        };
        let r = as_stability_report(&ens, &quad, &thresholds, &[]).map_err(err)?;
        let conv = r
            .converged
            .iter()
            .find(|c| c.epsilon == 0.1)
            .ok_or("no fraction at 0.1")?;
        let cross = r
            .crossings
            .iter()
            .find(|c| c.epsilon1 == 0.5)
            .ok_or("no crossings at 0.5")?;
        Ok((
            conv.wilson_lower >= 0.95 && cross.mean <= 1.0,
            format!(
                "converged fraction {:.4} (Wilson lower {:.4}) over {} paths; mean crossings {:.4}",
                conv.fraction, conv.wilson_lower, r.n_paths, cross.mean
            ),
        ))
    })();
    (decay, proxy)
}

/// 9. Dictionary lower bound against `W₁`, and the triangle inequality.
fn metric_bracket() -> Outcome {
    let mut rng = CounterRng::new(9, Domain::Scratch, 0);
    let mut worst_gap = f64::NEG_INFINITY;
    for dim in [1, 2] {
        let dict = TestDictionary::standard(dim).map_err(err)?;
        for _ in 0..200 {
            let mu = random_measure(&mut rng, dim, 30, 2.0);
            let nu = random_measure(&mut rng, dim, 30, 2.0);
            let lower = rho_lower_bound(&mu, &nu, &dict).map_err(err)?;
            // Exact in one dimension; a coupling cost, hence an upper bound, in two.
            let w1 = if dim == 1 {
                wasserstein1(&mu, &nu, DEFAULT_PROJECTIONS)
            } else {
                wasserstein1_upper(&mu, &nu, DEFAULT_PROJECTIONS)
            }
            .map_err(err)?;
            worst_gap = worst_gap.max(lower - w1);
        }
    }
    let mut worst_triangle = f64::NEG_INFINITY;
    for _ in 0..100 {
        let a = random_measure(&mut rng, 1, 30, 2.0);
        let b = random_measure(&mut rng, 1, 30, 2.0);
        let c = random_measure(&mut rng, 1, 30, 2.0);
        let w = |p: &EmpiricalMeasure, q: &EmpiricalMeasure| wasserstein1(p, q, 0).map_err(err);
        worst_triangle = worst_triangle.max(w(&a, &c)? - w(&a, &b)? - w(&b, &c)?);
    }
    Ok((
        worst_gap <= 0.0 && worst_triangle <= 1e-12,
        format!("max(lower − W1) = {worst_gap:.3e} on 400 pairs; max triangle excess {worst_triangle:.1e} on 100 triples"),
    ))
}

/// 10. CSV outputs do not depend on `--threads`.
fn determinism() -> Outcome {
    let cfg = serde_json::json!({
        "model": {"builtin": "contractive", "eps": 1.0},
        "lyapunov": {"builtin": "quad"},
        "certificate": {"mode": "H21", "alpha": 1.0, "a1": 1.0, "a2": 1.0},
        "sim": contractive_config(),
        "diagnostics": {"moments": [1, 2], "t_tail": 8.0, "eps_levels": [0.1, 0.5], "ito": true}
    });
    let small = serde_json::json!({
        "model": {"builtin": "example61", "m": 0.25, "l": 50},
        "sim": SimConfig::new(200, 8, 1e-2, 1.0, 61, InitLaw::gaussian(1, 0.0, 1.0)),
    });
    let work = tempfile::tempdir().map_err(err)?;
    let runs: [(&str, &serde_json::Value, &[&str]); 2] =
        [("diagnose", &cfg, &[]), ("simulate", &small, &["--format", "csv"])];
    let mut compared = 0;
    for (k, (cmd, config, extra)) in runs.iter().enumerate() {
        let path = work.path().join(format!("config{k}.json"));
        std::fs::write(&path, config.to_string()).map_err(err)?;
        let mut outputs = Vec::new();
        for threads in ["1", "2", "4"] {
            let out = work.path().join(format!("out{k}_{threads}"));
            let status = Command::new(env!("CARGO_BIN_EXE_mvslab"))
                .arg(cmd)
                .arg("--config")
                .arg(&path)
                .args(["--threads", threads])
                .args(*extra)
                .env("MVSLAB_OUT", &out)
                .output()
                .map_err(err)?;
            if !status.status.success() {
                return Err(format!("{cmd} exited {:?}", status.status.code()));
            }
            outputs.push(out);
        }
        let csvs = |dir: &Path| -> Result<Vec<(String, Vec<u8>)>, String> {
            let mut v: Vec<_> = std::fs::read_dir(dir)
                .map_err(err)?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
                .collect();
            v.sort();
            Ok(v)
        };
        let base = csvs(&outputs[0])?;
        if base.is_empty() {
            return Err(format!("{cmd} wrote no CSV"));
        }
        for other in &outputs[1..] {
            if csvs(other)? != base {
                return Ok((false, format!("{cmd} CSV differs across thread counts")));
            }
        }
        compared += base.len();
    }
    Ok((true, format!("{compared} CSV files byte-identical across --threads 1, 2, 4")))
}

fn main() {
    let criteria: Vec<(&str, Box<dyn Fn() -> Vec<Outcome>>)> = vec![
        ("1 envelope reproduction", Box::new(|| vec![envelope_reproduction()])),
        ("2 certificate audit", Box::new(|| vec![certificate_audit()])),
        ("3 oracle equivalence", Box::new(|| vec![oracle_equivalence()])),
        ("4 derivative validation", Box::new(|| vec![derivative_validation()])),
        ("5 generator reduction and linearity", Box::new(|| vec![generator_reduction_and_linearity()])),
        ("6 Itô consistency", Box::new(|| vec![ito_consistency_check()])),
        ("7+8 contractive decay and stability proxy", Box::new(|| {
            let (a, b) = contractive_criteria();
            vec![a, b]
        })),
        ("9 metric bracket", Box::new(|| vec![metric_bracket()])),
        ("10 determinism", Box::new(|| vec![determinism()])),
    ];
    let mut failures = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let results = run();
        let secs = start.elapsed().as_secs_f64();
        let names: Vec<String> = if results.len() == 2 {
            vec!["7 contractive decay".into(), "8 stability proxy".into()]
        } else {
            vec![name.to_string()]
        };
        for (label, r) in names.iter().zip(results) {
            let (pass, detail) = r.unwrap_or_else(|e| (false, format!("error: {e}")));
            if !pass {
                failures += 1;
            }
            println!("acceptance {label}: {} ({detail}) [{secs:.1}s]", if pass { "PASS" } else { "FAIL" });
        }
    }
    println!("acceptance summary: {} failed", failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
