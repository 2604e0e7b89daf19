//! Run configuration: one JSON document with `model`, `lyapunov`,
//! `certificate`, `assumptions`, `sim`, `diagnostics` and `output` sections.
//! Unknown keys are errors. `--set section.key=value` edits the document
//! before it is validated; the value is parsed as JSON and taken as a string
//! when that fails.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::lyapunov::{LyapunovSpec, StabilityCertificate};
use crate::model::{AssumptionSpec, ExprModel, ModelSpec};
use crate::simulate::{EnsembleFormat, InitLaw, SimConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

impl OneOrMany {
    fn to_vec(&self) -> Vec<String> {
        match self {
            OneOrMany::One(s) => vec![s.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

/// A built-in model by name with its parameters, or expression
/// coefficients (`expr_diffusion` is the `d × l` matrix, row-major).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expr_drift: Option<OneOrMany>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expr_diffusion: Option<OneOrMany>,
}

fn need<T: Copy>(v: Option<T>, key: &str) -> Result<T> {
    v.ok_or_else(|| Error::config(format!("model.{key}"), "required for this model"))
}

impl ModelSection {
    pub fn build(&self) -> Result<ModelSpec> {
        let dim = self.d.unwrap_or(1);
        if dim == 0 {
            return Err(Error::config("model.d", "must be positive"));
        }
        match (&self.builtin, &self.expr_drift, &self.expr_diffusion) {
            (Some(name), None, None) => {
                let unused = |keys: &[(&str, bool)]| -> Result<()> {
                    match keys.iter().find(|(_, set)| *set) {
                        Some((k, _)) => Err(Error::config(format!("model.{k}"), format!("not a parameter of {name}"))),
                        None => Ok(()),
                    }
                };
                let (m, l, s, eps, a, d) = (
                    self.m.is_some(),
                    self.l.is_some(),
                    self.s.is_some(),
                    self.eps.is_some(),
                    self.a.is_some(),
                    self.d.is_some(),
                );
                match name.as_str() {
                    "example61" => {
                        unused(&[("s", s), ("eps", eps), ("a", a), ("d", d)])?;
                        let l = need(self.l, "l")?;
                        if l == 0 {
                            return Err(Error::config("model.l", "must be positive"));
                        }
                        Ok(ModelSpec::example61(need(self.m, "m")?, l))
                    }
                    "meanfield_ou" => {
                        unused(&[("l", l), ("eps", eps), ("a", a)])?;
                        Ok(ModelSpec::meanfield_ou_dim(need(self.m, "m")?, need(self.s, "s")?, dim))
                    }
                    "contractive" => {
                        unused(&[("m", m), ("l", l), ("s", s), ("a", a)])?;
                        Ok(ModelSpec::contractive_dim(need(self.eps, "eps")?, dim))
                    }
                    "linear" => {
                        unused(&[("m", m), ("l", l), ("eps", eps)])?;
                        Ok(ModelSpec::linear(need(self.a, "a")?, need(self.s, "s")?, dim))
                    }
                    "zero" => {
                        unused(&[("m", m), ("l", l), ("s", s), ("eps", eps), ("a", a)])?;
                        Ok(ModelSpec::zero(dim))
                    }
                    other => Err(Error::config(
                        "model.builtin",
                        format!("unknown model {other:?}; expected example61, meanfield_ou, contractive, linear or zero"),
                    )),
                }
            }
            (None, Some(drift), Some(diffusion)) => {
                if self.m.is_some() || self.s.is_some() || self.eps.is_some() || self.a.is_some() {
                    return Err(Error::config("model", "expression models take only expr_drift, expr_diffusion, d, l"));
                }
                let (drift, diffusion) = (drift.to_vec(), diffusion.to_vec());
                let l = self.l.unwrap_or(1);
                let coeffs = ExprModel::parse(&drift, &diffusion, dim, l)?;
                let label = format!("expr(drift=[{}], diffusion=[{}])", drift.join("; "), diffusion.join("; "));
                Ok(ModelSpec::new(label, Arc::new(coeffs)))
            }
            (None, None, None) => Err(Error::config("model", "give either builtin or expr_drift and expr_diffusion")),
            _ => Err(Error::config(
                "model",
                "builtin excludes expressions, and expr_drift needs expr_diffusion",
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovSection {
    pub builtin: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
}

impl LyapunovSection {
    pub fn build(&self, dim: usize) -> Result<LyapunovSpec> {
        match (self.builtin.as_str(), self.m, self.c) {
            ("quad", None, None) => Ok(LyapunovSpec::quad_dim(dim)),
            ("mean_centered", Some(m), None) => Ok(LyapunovSpec::mean_centered_dim(m, dim)),
            ("spread", None, Some(c)) => Ok(LyapunovSpec::spread(c, dim)),
            ("quad" | "mean_centered" | "spread", _, _) => Err(Error::config(
                "lyapunov",
                "quad takes no parameters, mean_centered takes m, spread takes c",
            )),
            (other, _, _) => Err(Error::config(
                "lyapunov.builtin",
                format!("unknown functional {other:?}; expected quad, mean_centered or spread"),
            )),
        }
    }
}

fn default_moments() -> Vec<u32> {
    vec![2]
}

fn default_audit_seed() -> u64 {
    0
}

fn default_certificate_measures() -> usize {
    100
}

fn default_derivative_points() -> usize {
    50
}

/// Windows, thresholds and sample sizes for checks and diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    /// Moment orders for curves; the second moment drives the envelope.
    #[serde(default = "default_moments")]
    pub moments: Vec<u32>,
    /// Window `[t_lo, t_hi]` for the advisory decay-rate fit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_window: Option<(f64, f64)>,
    /// Rate for the supermartingale check; defaults to the certificate's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_tail: Option<f64>,
    #[serde(default)]
    pub eps_levels: Vec<f64>,
    #[serde(default)]
    pub radii: Vec<f64>,
    #[serde(default)]
    pub ito: bool,
    /// Seed of the audit sample sets.
    #[serde(default = "default_audit_seed")]
    pub audit_seed: u64,
    #[serde(default = "default_certificate_measures")]
    pub certificate_measures: usize,
    #[serde(default = "default_derivative_points")]
    pub derivative_points: usize,
    /// Plot moment curves on a logarithmic axis.
    #[serde(default)]
    pub log_scale: bool,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        serde_json::from_value(Value::Object(Default::default())).expect("defaults deserialize")
    }
}

fn default_directory() -> PathBuf {
    PathBuf::from("mvslab-out")
}

fn default_formats() -> Vec<String> {
    vec!["csv".into(), "json".into(), "svg".into()]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    /// Any of `csv`, `json`, `svg`.
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
    /// Encoding of the ensemble file written by `simulate` and, when set,
    /// by `diagnose`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleFormat>,
}

impl Default for OutputSection {
    fn default() -> Self {
        serde_json::from_value(Value::Object(Default::default())).expect("defaults deserialize")
    }
}

impl OutputSection {
    pub fn wants(&self, format: &str) -> bool {
        self.formats.iter().any(|f| f == format)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lyapunov: Option<LyapunovSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<StabilityCertificate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assumptions: Option<AssumptionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimConfig>,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default)]
    pub output: OutputSection,
}

const SECTIONS: [&str; 7] = ["model", "lyapunov", "certificate", "assumptions", "sim", "diagnostics", "output"];

impl RunConfig {
    pub fn model(&self) -> Result<ModelSpec> {
        self.model
            .as_ref()
            .ok_or_else(|| Error::config("model", "section is required"))?
            .build()
    }

    pub fn lyapunov(&self, dim: usize) -> Result<LyapunovSpec> {
        self.lyapunov
            .as_ref()
            .ok_or_else(|| Error::config("lyapunov", "section is required"))?
            .build(dim)
    }

    pub fn sim(&self) -> Result<&SimConfig> {
        self.sim.as_ref().ok_or_else(|| Error::config("sim", "section is required"))
    }

    /// Declared assumption constants, or the certified ones for the example
    /// model (`η = 0.1`, `C = 4`).
    pub fn assumptions(&self) -> Result<AssumptionSpec> {
        if let Some(a) = &self.assumptions {
            return Ok(a.clone());
        }
        match &self.model {
            Some(ModelSection {
                builtin: Some(name),
                m: Some(m),
                ..
            }) if name == "example61" => Ok(AssumptionSpec::example61(*m, 0.1, 4.0)),
            _ => Err(Error::config("assumptions", "section is required for this model")),
        }
    }

    /// Parses a document, applying `--set` overrides first. A manifest
    /// written by an earlier run is accepted and its config echo used.
    pub fn from_json(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
            position: e.line(),
            message: format!("config line {} column {}: {e}", e.line(), e.column()),
        })?;
        if let Some(echo) = doc.get("manifest_version").and(doc.get("config")) {
            doc = echo.clone();
        }
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: RunConfig = serde_path_to_error::deserialize(doc).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text, overrides)
    }

    /// Section-level checks that need no model construction.
    pub fn validate(&self) -> Result<()> {
        if let Some(c) = &self.certificate {
            c.validate().map_err(|e| Error::config("certificate", e.to_string()))?;
        }
        if let Some(a) = &self.assumptions {
            for (k, m) in [("kappa1", &a.kappa1), ("kappa2", &a.kappa2)] {
                m.audit(100.0, 1000)
                    .map_err(|e| Error::config(format!("assumptions.{k}"), e))?;
            }
        }
        let d = &self.diagnostics;
        if d.moments.iter().any(|&p| p == 0) {
            return Err(Error::config("diagnostics.moments", "orders must be positive"));
        }
        if let Some((lo, hi)) = d.fit_window {
            if !(lo < hi) {
                return Err(Error::config("diagnostics.fit_window", "needs t_lo < t_hi"));
            }
        }
        if d.eps_levels.iter().chain(&d.radii).any(|v| !(*v > 0.0)) {
            return Err(Error::config("diagnostics", "eps_levels and radii must be positive"));
        }
        for f in &self.output.formats {
            if !["csv", "json", "svg"].contains(&f.as_str()) {
                return Err(Error::config("output.formats", format!("unknown format {f:?}")));
            }
        }
        Ok(())
    }

    /// Configuration of the example-model reproduction.
    pub fn example61() -> Self {
        let m = 0.25;
        Self {
            model: Some(ModelSection {
                builtin: Some("example61".into()),
                m: Some(m),
                l: Some(50),
                ..Default::default()
            }),
            lyapunov: Some(LyapunovSection {
                builtin: "mean_centered".into(),
                m: Some(m),
                c: None,
            }),
            certificate: Some(StabilityCertificate::example61(m, 50).expect("example constants are valid")),
            assumptions: None,
            sim: Some(SimConfig::new(2000, 32, 1e-3, 10.0, 61, InitLaw::gaussian(1, 0.0, 1.0)).with_stride(100)),
            diagnostics: DiagnosticsSection {
                log_scale: true,
                ..Default::default()
            },
            output: OutputSection::default(),
        }
    }

    /// Applies overrides to an in-memory config.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        Self::from_json(&serde_json::to_string(self)?, overrides)
    }
}

/// `section.key[.sub…]=value`.
fn apply_override(doc: &mut Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::usage(format!("--set expects section.key=value, got {spec:?}")))?;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.len() < 2 || keys.iter().any(|k| k.is_empty()) {
        return Err(Error::usage(format!("--set path {path:?} must be section.key")));
    }
    if !SECTIONS.contains(&keys[0]) {
        return Err(Error::config(keys[0], format!("unknown section; expected one of {}", SECTIONS.join(", "))));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    if !doc.is_object() {
        return Err(Error::config("", "config must be a JSON object"));
    }
    let mut cur = doc;
    for k in &keys[..keys.len() - 1] {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::config(path, format!("{k:?} is not inside an object")))?;
        cur = obj.entry(k.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    cur.as_object_mut()
        .ok_or_else(|| Error::config(path, "parent is not an object"))?
        .insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}
