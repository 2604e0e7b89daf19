//! Command-line front end. Every command reads one JSON config, writes its
//! artifacts and a `manifest.json` with content hashes to the output
//! directory, and prints a short verdict summary.
//!
//! Exit codes: 0 every verdict passed, 1 a verdict failed, 2 usage or
//! configuration error, 3 numeric or integration failure (including any
//! replica blow-up).

pub mod config;
pub mod svg;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::diagnostics::{
    as_stability_report, bound_check, fit_decay_rate, ito_consistency, lyapunov_curve, moment_curve, stride_guidance,
    supermartingale_check, write_curve_csv, MomentCurve, StabilityThresholds,
};
use crate::error::{Error, Result};
use crate::lyapunov::{
    check_certificate_with, default_certificate_measures, default_pointwise_grid, validate_derivatives, CertificateMode,
    LyapunovSpec, StabilityCertificate,
};
use crate::model::{
    audit_samples, check_bounded_diffusion_growth, check_linear_growth, check_monotone_nonlipschitz,
    default_audit_pairs, default_audit_samples, ModelSpec, AUDIT_STD,
};
use crate::simulate::{read_ensemble, run_ensemble, write_ensemble, EnsembleFormat, PathEnsemble, PACKED_MAGIC};

pub use config::RunConfig;

/// Environment variable that overrides `output.directory`.
pub const OUT_ENV: &str = "MVSLAB_OUT";

/// Particles per derivative-validation measure.
const DERIVATIVE_ATOMS: usize = 16;
/// Points of the pointwise certificate audit per measure family.
const POINTWISE_POINTS: usize = 200;

#[derive(Parser, Debug)]
#[command(name = "mvslab", version, about = "Mean-field SDE laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON run configuration (a manifest from an earlier run also works).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set sim.seed=7`; repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    threads: Option<usize>,
    /// Ensemble file encoding.
    #[arg(long, value_name = "csv|packed")]
    format: Option<EnsembleFormat>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate an ensemble and write it with its moment curves.
    Simulate(Common),
    /// Audit the coefficient assumptions on sampled points and measures.
    CheckAssumptions(Common),
    /// Validate Lyapunov derivatives and audit the stability certificate.
    CheckLyapunov(Common),
    /// Curves, envelope, supermartingale, Itô and stability diagnostics.
    Diagnose {
        #[command(flatten)]
        common: Common,
        /// Read a stored ensemble instead of simulating.
        #[arg(long)]
        ensemble: Option<PathBuf>,
    },
    /// Run a built-in reproduction end to end.
    Reproduce {
        #[command(flatten)]
        common: Common,
        /// Name of the reproduction; `example61` is the only one.
        #[arg(long)]
        example: String,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Simulate(c) | Command::CheckAssumptions(c) | Command::CheckLyapunov(c) => c,
            Command::Diagnose { common, .. } | Command::Reproduce { common, .. } => common,
        }
    }
}

/// One named pass/fail line of the summary.
#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

/// What a command produced.
#[derive(Debug, Default)]
pub struct Outcome {
    pub verdicts: Vec<Verdict>,
    pub notes: Vec<String>,
    /// First replica blow-up, if any: `(replica, step, message)`.
    pub blowup: Option<(usize, usize, String)>,
    pub directory: PathBuf,
    pub files: Vec<String>,
}

impl Outcome {
    fn verdict(&mut self, name: &str, pass: bool, detail: String) {
        self.verdicts.push(Verdict {
            name: name.to_string(),
            pass,
            detail,
        });
    }

    pub fn exit_code(&self) -> i32 {
        if self.blowup.is_some() {
            3
        } else if self.verdicts.iter().all(|v| v.pass) {
            0
        } else {
            1
        }
    }

    fn summary(&self, command: &str, model: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mvslab {command}: {model}");
        for v in &self.verdicts {
            let _ = writeln!(s, "  {:<5} {:<24} {}", if v.pass { "PASS" } else { "FAIL" }, v.name, v.detail);
        }
        for n in &self.notes {
            let _ = writeln!(s, "  note: {n}");
        }
        if let Some((r, step, msg)) = &self.blowup {
            let _ = writeln!(s, "  replica {r} blew up at step {step}: {msg}");
        }
        let _ = writeln!(s, "  artifacts: {} files in {}", self.files.len(), self.directory.display());
        let word = match self.exit_code() {
            0 => "PASS",
            1 => "FAIL",
            _ => "INTEGRATION FAILURE",
        };
        let _ = writeln!(s, "verdict: {word}");
        s
    }
}

/// Collects emitted files and their hashes, then writes the manifest.
struct Artifacts {
    dir: PathBuf,
    files: Vec<(String, String, u64)>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Artifacts {
    fn new(dir: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&dir)
            .map_err(|e| Error::usage(format!("cannot create output directory {}: {e}", dir.display())))?;
        Ok(Self { dir, files: Vec::new() })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        std::fs::write(self.dir.join(name), bytes)?;
        self.files.push((name.to_string(), sha256_hex(bytes), bytes.len() as u64));
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    /// Manifest with the config echo and hashes of every file written so
    /// far. It carries no timestamps or thread counts, so reruns match.
    fn finish(mut self, command: &str, cfg: &RunConfig, extra: serde_json::Value) -> Result<Outcome> {
        let files: Vec<_> = self
            .files
            .iter()
            .map(|(name, sha, size)| json!({"path": name, "sha256": sha, "bytes": size}))
            .collect();
        let manifest = json!({
            "manifest_version": 1,
            "tool": "mvslab",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "seed": cfg.sim.as_ref().map(|s| s.seed),
            "config": cfg,
            "run": extra,
            "files": files,
        });
        self.write_json("manifest.json", &manifest)?;
        Ok(Outcome {
            directory: self.dir,
            files: self.files.into_iter().map(|f| f.0).collect(),
            ..Default::default()
        })
    }
}

fn ensemble_file(format: EnsembleFormat) -> &'static str {
    match format {
        EnsembleFormat::Csv => "ensemble.csv",
        EnsembleFormat::Packed => "ensemble.mvse",
    }
}

/// Reads an ensemble in either encoding, recognised by the packed magic.
pub fn load_ensemble(path: &Path) -> Result<PathEnsemble> {
    let bytes = std::fs::read(path).map_err(|e| Error::usage(format!("cannot read ensemble {}: {e}", path.display())))?;
    let format = if bytes.starts_with(PACKED_MAGIC) {
        EnsembleFormat::Packed
    } else {
        EnsembleFormat::Csv
    };
    read_ensemble(format, bytes.as_slice())
}

fn curve_csv(curve: &MomentCurve, envelope: Option<&[f64]>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_curve_csv(curve, envelope, &mut buf)?;
    Ok(buf)
}

fn fmt_g(v: f64) -> String {
    if v == 0.0 || (1e-3..1e4).contains(&v.abs()) {
        format!("{v:.4}")
    } else {
        format!("{v:.3e}")
    }
}

/// Ensemble products shared by `simulate`, `diagnose` and `reproduce`:
/// moment curves (with the certificate envelope on the second moment),
/// plot, and optional Lyapunov diagnostics.
struct EnsembleStage<'a> {
    cfg: &'a RunConfig,
    model: Option<&'a ModelSpec>,
    vspec: Option<&'a LyapunovSpec>,
    full: bool,
}

impl EnsembleStage<'_> {
    fn run(&self, ens: &PathEnsemble, art: &mut Artifacts, out: &mut Outcome, report: &mut serde_json::Value) -> Result<()> {
        let cfg = self.cfg;
        let diag = &cfg.diagnostics;
        if let Some(f) = ens.failures().first() {
            out.blowup = Some((f.replica, f.step, f.message.clone()));
        }
        out.notes.extend(ens.warnings.iter().cloned());
        let mut m2_curve = None;
        for &p in &diag.moments {
            let curve = moment_curve(ens, p)?;
            let envelope = match (&cfg.certificate, p) {
                (Some(cert), 2) if self.full => {
                    let init_m2 = curve.values[0];
                    let v = bound_check(&curve, cert, init_m2)?;
                    let detail = if v.vacuous {
                        "certificate is vacuous (a1 <= 0)".to_string()
                    } else {
                        format!(
                            "{} of {} times violate; worst slack {} at t = {}",
                            v.n_violations,
                            curve.times.len(),
                            fmt_g(v.worst_slack),
                            fmt_g(curve.times[v.worst_index])
                        )
                    };
                    out.verdict("envelope", v.pass, detail);
                    let env = v.envelope.clone();
                    report["envelope"] = serde_json::to_value(&v)?;
                    Some(env)
                }
                _ => None,
            };
            if cfg.output.wants("csv") {
                art.write(&format!("moments_p{p}.csv"), &curve_csv(&curve, envelope.as_deref())?)?;
            }
            if let Some(window) = diag.fit_window.filter(|_| self.full) {
                match fit_decay_rate(&curve, window) {
                    Ok(fit) => {
                        out.notes.push(format!(
                            "decay fit of moment {p} on [{}, {}]: rate {} (r2 {})",
                            window.0,
                            window.1,
                            fmt_g(fit.alpha_hat),
                            fmt_g(fit.r2)
                        ));
                        report[format!("decay_fit_p{p}")] = serde_json::to_value(fit)?;
                    }
                    Err(e) => out.notes.push(format!("decay fit of moment {p} skipped: {e}")),
                }
            }
            if p == 2 {
                m2_curve = Some((curve, envelope));
            }
        }
        if cfg.output.wants("svg") {
            if let Some((curve, envelope)) = &m2_curve {
                let mut series = vec![svg::Series {
                    label: "E|X|^2",
                    x: &curve.times,
                    y: &curve.values,
                    dashed: false,
                }];
                if let Some(e) = envelope {
                    series.push(svg::Series {
                        label: "envelope",
                        x: &curve.times,
                        y: e,
                        dashed: true,
                    });
                }
                let title = format!("second moment, {}", ens.model_label);
                art.write("moments.svg", svg::line_chart(&title, "t", &series, diag.log_scale).as_bytes())?;
            }
        }
        if !self.full {
            return Ok(());
        }
        let Some(vspec) = self.vspec else { return Ok(()) };
        let vcurve = lyapunov_curve(ens, vspec)?;
        if cfg.output.wants("csv") {
            art.write("lyapunov.csv", &curve_csv(&vcurve, None)?)?;
        }
        let alpha = diag.alpha.or_else(|| {
            cfg.certificate
                .as_ref()
                .filter(|c| c.m1 == 0.0 && c.m2 == 0.0 && c.m3 == 0.0)
                .map(|c| c.alpha)
        });
        if let Some(alpha) = alpha {
            let v = supermartingale_check(ens, vspec, alpha)?;
            out.verdict(
                "supermartingale",
                v.pass,
                format!("worst excess {} at t = {}", fmt_g(v.worst_excess), fmt_g(v.times[v.worst_index + 1])),
            );
            report["supermartingale"] = serde_json::to_value(&v)?;
        }
        if diag.ito {
            let model = self.model.ok_or_else(|| Error::config("model", "the Itô check needs the model"))?;
            let r = ito_consistency(ens, vspec, model)?;
            let final_abs = r.final_discrepancy().abs();
            out.notes.push(format!(
                "Itô identity: final discrepancy {} ({}), worst {} at t = {}",
                fmt_g(final_abs),
                if r.corrected.is_some() { "control-variate corrected" } else { "raw" },
                fmt_g(r.max_abs_corrected.unwrap_or(r.max_abs_discrepancy)),
                fmt_g(r.worst_time)
            ));
            report["ito"] = serde_json::to_value(&r)?;
        }
        if let Some(t_tail) = diag.t_tail {
            let thresholds = StabilityThresholds {
                t_tail,
                eps_levels: diag.eps_levels.clone(),
            };
            let s = as_stability_report(ens, vspec, &thresholds, &diag.radii)?;
            for c in &s.converged {
                out.notes.push(format!(
                    "converged below {} after t = {t_tail}: {} (Wilson 95% [{}, {}])",
                    c.epsilon,
                    fmt_g(c.fraction),
                    fmt_g(c.wilson_lower),
                    fmt_g(c.wilson_upper)
                ));
            }
            for c in &s.crossings {
                out.notes.push(format!(
                    "crossings at level {}: mean {} per path, max {}",
                    c.epsilon1,
                    fmt_g(c.mean),
                    c.max
                ));
            }
            out.notes.extend(s.warnings.iter().cloned());
            report["stability"] = serde_json::to_value(&s)?;
        } else if let Some(g) = ens.config.as_ref().and_then(stride_guidance) {
            out.notes.push(g);
        }
        Ok(())
    }
}

fn output_dir(cfg: &RunConfig) -> PathBuf {
    match std::env::var_os(OUT_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => cfg.output.directory.clone(),
    }
}

fn ensemble_format(common: &Common, cfg: &RunConfig) -> EnsembleFormat {
    common.format.or(cfg.output.ensemble).unwrap_or(EnsembleFormat::Csv)
}

fn simulate_validated(model: &ModelSpec, cfg: &RunConfig) -> Result<PathEnsemble> {
    let sim = cfg.sim()?;
    sim.validate(model.dim_state())?;
    run_ensemble(model, sim)
}

fn cmd_simulate(common: &Common, cfg: &RunConfig) -> Result<(Outcome, String)> {
    let model = cfg.model()?;
    let ens = simulate_validated(&model, cfg)?;
    let mut art = Artifacts::new(output_dir(cfg))?;
    let format = ensemble_format(common, cfg);
    let mut buf = Vec::new();
    write_ensemble(&ens, format, &mut buf)?;
    art.write(ensemble_file(format), &buf)?;
    let mut out = Outcome::default();
    let mut report = json!({"model": model.label(), "failures": ens.failures(), "warnings": ens.warnings});
    EnsembleStage {
        cfg,
        model: Some(&model),
        vspec: None,
        full: false,
    }
    .run(&ens, &mut art, &mut out, &mut report)?;
    out.verdict(
        "integration",
        ens.failures().is_empty(),
        format!("{} of {} replicas completed", ens.completed().len(), ens.n_paths()),
    );
    if cfg.output.wants("json") {
        art.write_json("simulate.json", &report)?;
    }
    finish(art, out, "simulate", cfg, json!({"ensemble_format": format}), model.label())
}

fn finish(
    art: Artifacts,
    mut out: Outcome,
    command: &str,
    cfg: &RunConfig,
    extra: serde_json::Value,
    model: &str,
) -> Result<(Outcome, String)> {
    let done = art.finish(command, cfg, extra)?;
    out.directory = done.directory;
    out.files = done.files;
    let summary = out.summary(command, model);
    Ok((out, summary))
}

fn cmd_check_assumptions(cfg: &RunConfig) -> Result<(Outcome, String)> {
    let model = cfg.model()?;
    let spec = cfg.assumptions()?;
    let seed = cfg.diagnostics.audit_seed;
    let dim = model.dim_state();
    let samples = default_audit_samples(dim, seed);
    let pairs = default_audit_pairs(dim, seed);
    let mut reports = vec![
        check_linear_growth(&model, &spec, &samples, Some(seed))?,
        check_monotone_nonlipschitz(&model, &spec, &pairs, Some(seed))?,
    ];
    if spec.sigma_bound.is_some() || spec.l1_prime.is_some() {
        reports.push(check_bounded_diffusion_growth(&model, &spec, &samples, Some(seed))?);
    }
    let mut out = Outcome::default();
    for r in &reports {
        out.verdict(
            &r.check,
            r.status != crate::model::AuditStatus::Fail,
            format!("{:?} on {} samples; worst {} at sample {}", r.status, r.n_samples, fmt_g(r.worst_value), r.worst_index),
        );
        if r.status == crate::model::AuditStatus::Indicative {
            out.notes.push(format!("{} is indicative only: the sampled bound could not be certified", r.check));
        }
    }
    let mut art = Artifacts::new(output_dir(cfg))?;
    if cfg.output.wants("json") {
        art.write_json("assumptions.json", &json!({"spec": spec, "reports": reports}))?;
    }
    finish(art, out, "check-assumptions", cfg, json!({"audit_seed": seed}), model.label())
}

fn certificate_stage(
    model: &ModelSpec,
    vspec: &LyapunovSpec,
    cert: &StabilityCertificate,
    cfg: &RunConfig,
    out: &mut Outcome,
) -> Result<crate::lyapunov::CertificateReport> {
    let seed = cfg.diagnostics.audit_seed;
    let dim = model.dim_state();
    let measures = default_certificate_measures(dim, cfg.diagnostics.certificate_measures, seed);
    let grid = (cert.mode == CertificateMode::H23).then(|| default_pointwise_grid(dim, POINTWISE_POINTS, seed));
    let r = check_certificate_with(vspec, model, cert, &measures, grid.as_deref(), Some(seed))?;
    let detail = if r.vacuous {
        "certificate is vacuous (a1 <= 0)".to_string()
    } else {
        format!(
            "{:?} on {} samples; worst generator margin {} (bound {}), {} violations",
            r.mode,
            r.n_samples,
            fmt_g(r.worst_margin),
            fmt_g(if cert.mode == CertificateMode::H23 { 0.0 } else { cert.m1 }),
            r.violations
        )
    };
    out.verdict("certificate", r.pass, detail);
    Ok(r)
}

fn cmd_check_lyapunov(cfg: &RunConfig) -> Result<(Outcome, String)> {
    let model = cfg.model()?;
    let vspec = cfg.lyapunov(model.dim_state())?;
    let cert = cfg
        .certificate
        .as_ref()
        .ok_or_else(|| Error::config("certificate", "section is required"))?;
    let mut out = Outcome::default();
    let points = audit_samples(
        model.dim_state(),
        cfg.diagnostics.derivative_points,
        DERIVATIVE_ATOMS,
        AUDIT_STD,
        cfg.diagnostics.audit_seed,
    );
    let deriv = validate_derivatives(&vspec, &points, None)?;
    out.verdict(
        "derivatives",
        deriv.pass,
        format!(
            "max relative error grad {} hess {} lions {} lions_jac {}",
            fmt_g(deriv.grad_x.max_rel_error),
            fmt_g(deriv.hess_x.max_rel_error),
            fmt_g(deriv.lions.max_rel_error),
            fmt_g(deriv.lions_jac.max_rel_error)
        ),
    );
    let report = certificate_stage(&model, &vspec, cert, cfg, &mut out)?;
    let mut art = Artifacts::new(output_dir(cfg))?;
    if cfg.output.wants("json") {
        art.write_json("lyapunov.json", &json!({"derivatives": deriv, "certificate": report}))?;
    }
    let extra = json!({"audit_seed": cfg.diagnostics.audit_seed});
    finish(art, out, "check-lyapunov", cfg, extra, model.label())
}

fn cmd_diagnose(common: &Common, cfg: &RunConfig, ensemble: Option<&Path>) -> Result<(Outcome, String)> {
    let model = cfg.model.as_ref().map(|m| m.build()).transpose()?;
    let ens = match ensemble {
        Some(path) => load_ensemble(path)?,
        None => simulate_validated(
            model.as_ref().ok_or_else(|| Error::config("model", "needed when no --ensemble is given"))?,
            cfg,
        )?,
    };
    let vspec = cfg.lyapunov.as_ref().map(|l| l.build(ens.dim())).transpose()?;
    if let Some(m) = &model {
        if m.dim_state() != ens.dim() {
            return Err(Error::config(
                "model",
                format!("model dim {} differs from ensemble dim {}", m.dim_state(), ens.dim()),
            ));
        }
    }
    let mut art = Artifacts::new(output_dir(cfg))?;
    let mut out = Outcome::default();
    if ensemble.is_none() && common.format.is_some() {
        let format = ensemble_format(common, cfg);
        let mut buf = Vec::new();
        write_ensemble(&ens, format, &mut buf)?;
        art.write(ensemble_file(format), &buf)?;
    }
    let mut report = json!({"model": ens.model_label, "failures": ens.failures()});
    EnsembleStage {
        cfg,
        model: model.as_ref(),
        vspec: vspec.as_ref(),
        full: true,
    }
    .run(&ens, &mut art, &mut out, &mut report)?;
    if cfg.output.wants("json") {
        art.write_json("diagnose.json", &report)?;
    }
    let label = ens.model_label.clone();
    let extra = json!({"ensemble": ensemble.map(|p| p.display().to_string())});
    finish(art, out, "diagnose", cfg, extra, &label)
}

/// Accepts `example61` and names ending in `6.1`.
fn known_example(name: &str) -> bool {
    name == "example61" || name == "6.1" || name.ends_with("-6.1")
}

fn cmd_reproduce(common: &Common, cfg: &RunConfig, example: &str) -> Result<(Outcome, String)> {
    if !known_example(example) {
        return Err(Error::usage(format!("unknown example {example:?}; available: example61")));
    }
    let model = cfg.model()?;
    let vspec = cfg.lyapunov(model.dim_state())?;
    let cert = cfg
        .certificate
        .as_ref()
        .ok_or_else(|| Error::config("certificate", "section is required"))?;
    let mut out = Outcome::default();
    let cert_report = certificate_stage(&model, &vspec, cert, cfg, &mut out)?;
    let ens = simulate_validated(&model, cfg)?;
    let mut art = Artifacts::new(output_dir(cfg))?;
    if let Some(format) = common.format.or(cfg.output.ensemble) {
        let mut buf = Vec::new();
        write_ensemble(&ens, format, &mut buf)?;
        art.write(ensemble_file(format), &buf)?;
    }
    let mut report = json!({"model": model.label(), "certificate": cert_report, "failures": ens.failures()});
    EnsembleStage {
        cfg,
        model: Some(&model),
        vspec: Some(&vspec),
        full: true,
    }
    .run(&ens, &mut art, &mut out, &mut report)?;
    if cfg.output.wants("json") {
        art.write_json("reproduce.json", &report)?;
    }
    finish(art, out, "reproduce", cfg, json!({"example": "example61"}), model.label())
}

fn load_config(common: &Common, fallback: Option<RunConfig>) -> Result<RunConfig> {
    match (&common.config, fallback) {
        (Some(path), _) => RunConfig::load(path, &common.set),
        (None, Some(base)) => base.with_overrides(&common.set),
        (None, None) => Err(Error::usage("--config FILE is required")),
    }
}

fn dispatch(cmd: &Command) -> Result<(Outcome, String)> {
    let common = cmd.common();
    match cmd {
        Command::Simulate(c) => cmd_simulate(c, &load_config(c, None)?),
        Command::CheckAssumptions(c) => cmd_check_assumptions(&load_config(c, None)?),
        Command::CheckLyapunov(c) => cmd_check_lyapunov(&load_config(c, None)?),
        Command::Diagnose { ensemble, .. } => {
            let cfg = load_config(common, ensemble.as_ref().map(|_| RunConfig::default()))?;
            cmd_diagnose(common, &cfg, ensemble.as_deref())
        }
        Command::Reproduce { example, .. } => {
            let cfg = load_config(common, Some(RunConfig::example61()))?;
            cmd_reproduce(common, &cfg, example)
        }
    }
}

/// Runs one command and returns its outcome without printing.
pub fn execute<I, T>(argv: I) -> Result<(Outcome, String)>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| Error::usage(e.to_string()))?;
    let threads = cli.command.common().threads;
    if threads == Some(0) {
        return Err(Error::usage("--threads must be positive"));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::usage(format!("cannot start worker pool: {e}")))?;
    pool.install(|| dispatch(&cli.command))
}

/// Parses `argv` (program name first), runs the command, prints the
/// summary and returns the process exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    if let Err(e) = Cli::try_parse_from(&argv) {
        let code = if e.use_stderr() { 2 } else { 0 };
        let _ = e.print();
        return code;
    }
    match execute(argv) {
        Ok((outcome, summary)) => {
            print!("{summary}");
            outcome.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Integration { step, .. } = &e {
                eprintln!("integration failed at step {step}");
            }
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_names() {
        assert!(known_example("example61"));
        assert!(known_example("someone-6.1"));
        assert!(!known_example("example62"));
    }

    #[test]
    fn exit_code_priorities() {
        let mut o = Outcome::default();
        assert_eq!(o.exit_code(), 0);
        o.verdict("a", false, String::new());
        assert_eq!(o.exit_code(), 1);
        o.blowup = Some((0, 5, "overflow".into()));
        assert_eq!(o.exit_code(), 3);
        assert!(o.summary("simulate", "m").contains("step 5"));
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run_command(["mvslab", "simulate"]), 2);
        assert_eq!(run_command(["mvslab", "frobnicate"]), 2);
        assert_eq!(run_command(["mvslab", "simulate", "--config", "/nonexistent/x.json"]), 2);
        assert_eq!(run_command(["mvslab", "reproduce", "--example", "nope"]), 2);
    }

    #[test]
    fn hashes_are_hex_sha256() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
