//! Candidate Lyapunov functionals `v(x, μ)` with their flat derivatives and
//! Lions derivative, the measure-dependent generator
//!
//! ```text
//! 𝓛^μ v(x, μ) = b·∂ₓv + ½ tr(σσ* ∂ₓ²v)
//!             + ∫ b(y, μ)·∂_μv(x, μ)(y) μ(dy)
//!             + ½ ∫ tr(σσ*(y, μ) ∂_y∂_μv(x, μ)(y)) μ(dy),
//! ```
//!
//! and audits of the certificate inequalities built on it.

mod certificate;
mod derivatives;

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::measure::{EmpiricalMeasure, MeasureView};
use crate::model::ModelSpec;
use crate::numeric::pairwise_sum;

pub use certificate::{
    check_certificate, check_certificate_with, default_certificate_measures, default_pointwise_grid, CertificateMode,
    CertificateReport, Gamma, MarginKind, MarginRecord, StabilityCertificate,
};
pub use derivatives::{validate_derivatives, DerivativeReport, FieldCheck, DERIVATIVE_TOLERANCE};

/// How the Lions derivative depends on its arguments. Lets the generator skip
/// integrals that are identically zero or collapse to a mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LionsDependence {
    /// `v` does not depend on `μ`: both measure integrals vanish.
    None,
    /// `∂_μv(x, μ)(y)` does not depend on `y`, so `∂_y∂_μv = 0` and the drift
    /// integral reduces to `∂_μv · ∫b dμ`.
    ConstantInY,
    General,
}

/// A scalar functional of `(x, μ)` with its four derivative fields.
///
/// Matrices are row-major `d × d`. `lions_jac(x, μ, y)[i·d + j]` is
/// `∂_{y_i} (∂_μv)_j`. Implementations must be pure and re-entrant.
pub trait LyapunovFunctional: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64], mu: &MeasureView<'_>) -> f64;
    fn grad_x(&self, x: &[f64], mu: &MeasureView<'_>, out: &mut [f64]);
    fn hess_x(&self, x: &[f64], mu: &MeasureView<'_>, out: &mut [f64]);
    fn lions(&self, x: &[f64], mu: &MeasureView<'_>, y: &[f64], out: &mut [f64]);
    fn lions_jac(&self, x: &[f64], mu: &MeasureView<'_>, y: &[f64], out: &mut [f64]);

    fn lions_dependence(&self) -> LionsDependence {
        LionsDependence::General
    }
}

/// A labelled Lyapunov candidate.
#[derive(Clone, Debug)]
pub struct LyapunovSpec {
    label: String,
    functional: Arc<dyn LyapunovFunctional>,
}

impl LyapunovSpec {
    pub fn new(label: impl Into<String>, functional: Arc<dyn LyapunovFunctional>) -> Self {
        Self {
            label: label.into(),
            functional,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.functional.dim()
    }

    pub fn functional(&self) -> &dyn LyapunovFunctional {
        self.functional.as_ref()
    }

    pub fn lions_dependence(&self) -> LionsDependence {
        self.functional.lions_dependence()
    }

    /// `v(x, μ) = |x|²` on `ℝ¹`.
    pub fn quad() -> Self {
        Self::quad_dim(1)
    }

    pub fn quad_dim(dim: usize) -> Self {
        Self::new("quad", Arc::new(Quad { dim }))
    }

    /// `v(x, μ) = |∫(x − m y) μ(dy)|² = |x − m·mean(μ)|²` on `ℝ¹`.
    pub fn mean_centered(m: f64) -> Self {
        Self::mean_centered_dim(m, 1)
    }

    pub fn mean_centered_dim(m: f64, dim: usize) -> Self {
        Self::new(format!("mean_centered(m={m})"), Arc::new(MeanCentered { m, dim }))
    }

    /// `v(x, μ) = |x|² + c ∫|x − y|² μ(dy)`, a fixture whose Lions derivative
    /// genuinely depends on `y`.
    pub fn spread(c: f64, dim: usize) -> Self {
        Self::new(format!("spread(c={c})"), Arc::new(Spread { c, dim }))
    }

    /// `Σ cᵢ vᵢ`. All terms must share one dimension.
    pub fn linear_combination(terms: Vec<(f64, LyapunovSpec)>) -> Result<Self> {
        let dim = terms
            .first()
            .map(|(_, v)| v.dim())
            .ok_or_else(|| Error::usage("linear combination needs at least one term"))?;
        if terms.iter().any(|(_, v)| v.dim() != dim) {
            return Err(Error::structural("linear combination mixes dimensions"));
        }
        let label = terms
            .iter()
            .map(|(c, v)| format!("{c}*{}", v.label))
            .collect::<Vec<_>>()
            .join(" + ");
        Ok(Self::new(label, Arc::new(Combination { dim, terms })))
    }

    /// `v(x, μ)` with shape checks.
    pub fn value(&self, x: &[f64], mu: &EmpiricalMeasure) -> Result<f64> {
        let view = MeasureView::new(mu);
        self.check(x, &view)?;
        Ok(self.functional.value(x, &view))
    }

    pub(crate) fn check(&self, x: &[f64], view: &MeasureView<'_>) -> Result<()> {
        if x.len() != self.dim() || view.dim() != self.dim() {
            return Err(Error::structural(format!(
                "{} has dim {}; got x of length {} and measure of dim {}",
                self.label,
                self.dim(),
                x.len(),
                view.dim()
            )));
        }
        Ok(())
    }
}

#[derive(Debug)]
struct Quad {
    dim: usize,
}

impl LyapunovFunctional for Quad {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64], _mu: &MeasureView<'_>) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    fn grad_x(&self, x: &[f64], _mu: &MeasureView<'_>, out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(x) {
            *o = 2.0 * v;
        }
    }

    fn hess_x(&self, _x: &[f64], _mu: &MeasureView<'_>, out: &mut [f64]) {
        scaled_identity(out, self.dim, 2.0);
    }

    fn lions(&self, _x: &[f64], _mu: &MeasureView<'_>, _y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn lions_jac(&self, _x: &[f64], _mu: &MeasureView<'_>, _y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn lions_dependence(&self) -> LionsDependence {
        LionsDependence::None
    }
}

#[derive(Debug)]
struct MeanCentered {
    m: f64,
    dim: usize,
}

impl MeanCentered {
    fn centered(&self, x: &[f64], mu: &MeasureView<'_>, k: usize) -> f64 {
        x[k] - self.m * mu.mean()[k]
    }
}

impl LyapunovFunctional for MeanCentered {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64], mu: &MeasureView<'_>) -> f64 {
        (0..self.dim).map(|k| self.centered(x, mu, k).powi(2)).sum()
    }

    fn grad_x(&self, x: &[f64], mu: &MeasureView<'_>, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = 2.0 * self.centered(x, mu, k);
        }
    }

    fn hess_x(&self, _x: &[f64], _mu: &MeasureView<'_>, out: &mut [f64]) {
        scaled_identity(out, self.dim, 2.0);
    }

    fn lions(&self, x: &[f64], mu: &MeasureView<'_>, _y: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = -2.0 * self.m * self.centered(x, mu, k);
        }
    }

    fn lions_jac(&self, _x: &[f64], _mu: &MeasureView<'_>, _y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn lions_dependence(&self) -> LionsDependence {
        if self.m == 0.0 {
            LionsDependence::None
        } else {
            LionsDependence::ConstantInY
        }
    }
}

#[derive(Debug)]
struct Spread {
    c: f64,
    dim: usize,
}

impl LyapunovFunctional for Spread {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64], mu: &MeasureView<'_>) -> f64 {
        // ∫|x − y|² dμ = |x|² − 2x·mean + mom2
        let x2: f64 = x.iter().map(|v| v * v).sum();
        let xm: f64 = x.iter().zip(mu.mean()).map(|(a, b)| a * b).sum();
        x2 + self.c * (x2 - 2.0 * xm + mu.mom2())
    }

    fn grad_x(&self, x: &[f64], mu: &MeasureView<'_>, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = 2.0 * x[k] + 2.0 * self.c * (x[k] - mu.mean()[k]);
        }
    }

    fn hess_x(&self, _x: &[f64], _mu: &MeasureView<'_>, out: &mut [f64]) {
        scaled_identity(out, self.dim, 2.0 + 2.0 * self.c);
    }

    fn lions(&self, x: &[f64], _mu: &MeasureView<'_>, y: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = -2.0 * self.c * (x[k] - y[k]);
        }
    }

    fn lions_jac(&self, _x: &[f64], _mu: &MeasureView<'_>, _y: &[f64], out: &mut [f64]) {
        scaled_identity(out, self.dim, 2.0 * self.c);
    }
}

#[derive(Debug)]
struct Combination {
    dim: usize,
    terms: Vec<(f64, LyapunovSpec)>,
}

impl Combination {
    fn accumulate(&self, out: &mut [f64], mut f: impl FnMut(&dyn LyapunovFunctional, &mut [f64])) {
        let mut buf = vec![0.0; out.len()];
        out.fill(0.0);
        for (c, v) in &self.terms {
            f(v.functional(), &mut buf);
            for (o, b) in out.iter_mut().zip(&buf) {
                *o += c * b;
            }
        }
    }
}

impl LyapunovFunctional for Combination {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64], mu: &MeasureView<'_>) -> f64 {
        self.terms.iter().map(|(c, v)| c * v.functional().value(x, mu)).sum()
    }

    fn grad_x(&self, x: &[f64], mu: &MeasureView<'_>, out: &mut [f64]) {
        self.accumulate(out, |v, o| v.grad_x(x, mu, o));
    }

    fn hess_x(&self, x: &[f64], mu: &MeasureView<'_>, out: &mut [f64]) {
        self.accumulate(out, |v, o| v.hess_x(x, mu, o));
    }

    fn lions(&self, x: &[f64], mu: &MeasureView<'_>, y: &[f64], out: &mut [f64]) {
        self.accumulate(out, |v, o| v.lions(x, mu, y, o));
    }

    fn lions_jac(&self, x: &[f64], mu: &MeasureView<'_>, y: &[f64], out: &mut [f64]) {
        self.accumulate(out, |v, o| v.lions_jac(x, mu, y, o));
    }

    fn lions_dependence(&self) -> LionsDependence {
        use LionsDependence::*;
        self.terms.iter().fold(None, |acc, (_, v)| match (acc, v.lions_dependence()) {
            (General, _) | (_, General) => General,
            (ConstantInY, _) | (_, ConstantInY) => ConstantInY,
            _ => None,
        })
    }
}

fn scaled_identity(out: &mut [f64], dim: usize, c: f64) {
    out.fill(0.0);
    for i in 0..dim {
        out[i * dim + i] = c;
    }
}

/// Coefficient values at the atoms of one measure, shared by every generator
/// evaluation against that measure.
pub struct GeneratorContext<'a> {
    view: MeasureView<'a>,
    dependence: LionsDependence,
    /// `b(y_j, μ)` row-major, present for general dependence.
    drift_atoms: Vec<f64>,
    /// `σσ*(y_j, μ)` row-major, present for general dependence.
    gram_atoms: Vec<f64>,
    /// `∫b dμ`, present unless the functional ignores `μ`.
    mean_drift: Vec<f64>,
}

impl<'a> GeneratorContext<'a> {
    pub fn new(vspec: &LyapunovSpec, model: &ModelSpec, mu: &'a EmpiricalMeasure) -> Result<Self> {
        Self::from_view(vspec, model, MeasureView::new(mu))
    }

    pub fn from_view(vspec: &LyapunovSpec, model: &ModelSpec, view: MeasureView<'a>) -> Result<Self> {
        let d = model.dim_state();
        if vspec.dim() != d || view.dim() != d {
            return Err(Error::structural(format!(
                "{} (dim {}) against {} (dim {d}) on a measure of dim {}",
                vspec.label(),
                vspec.dim(),
                model.label(),
                view.dim()
            )));
        }
        let dependence = vspec.lions_dependence();
        let mu = view.measure();
        let mut drift_atoms = Vec::new();
        let mut gram_atoms = Vec::new();
        let mut mean_drift = Vec::new();
        if dependence != LionsDependence::None {
            let coeffs = model.coefficients();
            let mut b = vec![0.0; d];
            let mut g = vec![0.0; d * d];
            let mut weighted: Vec<Vec<f64>> = vec![Vec::with_capacity(mu.len()); d];
            for (y, w) in mu.atoms() {
                coeffs.drift(y, &view, &mut b);
                for k in 0..d {
                    weighted[k].push(w * b[k]);
                }
                if dependence == LionsDependence::General {
                    drift_atoms.extend_from_slice(&b);
                    coeffs.diffusion_gram(y, &view, &mut g);
                    gram_atoms.extend_from_slice(&g);
                }
            }
            mean_drift = weighted.iter().map(|t| pairwise_sum(t)).collect();
            if !mean_drift.iter().all(|v| v.is_finite()) {
                return Err(Error::numeric("lions_drift", "drift integral over the measure is not finite"));
            }
        }
        Ok(Self {
            view,
            dependence,
            drift_atoms,
            gram_atoms,
            mean_drift,
        })
    }

    pub fn view(&self) -> &MeasureView<'a> {
        &self.view
    }

    /// The four generator terms at `x`, in order: drift, diffusion, Lions
    /// drift integral, Lions diffusion integral.
    pub fn terms(&self, vspec: &LyapunovSpec, model: &ModelSpec, x: &[f64]) -> Result<[f64; 4]> {
        let d = model.dim_state();
        let v = vspec.functional();
        let coeffs = model.coefficients();
        let view = &self.view;

        let mut b = vec![0.0; d];
        let mut grad = vec![0.0; d];
        coeffs.drift(x, view, &mut b);
        v.grad_x(x, view, &mut grad);
        let drift_term = dot(&b, &grad);
        finite("drift", drift_term, x)?;

        let mut g = vec![0.0; d * d];
        let mut hess = vec![0.0; d * d];
        coeffs.diffusion_gram(x, view, &mut g);
        v.hess_x(x, view, &mut hess);
        let diffusion_term = 0.5 * dot(&g, &hess);
        finite("diffusion", diffusion_term, x)?;

        let (lions_drift, lions_diffusion) = match self.dependence {
            LionsDependence::None => (0.0, 0.0),
            LionsDependence::ConstantInY => {
                let mut l = vec![0.0; d];
                v.lions(x, view, view.measure().point(0), &mut l);
                (dot(&self.mean_drift, &l), 0.0)
            }
            LionsDependence::General => {
                let mu = view.measure();
                let mut l = vec![0.0; d];
                let mut jac = vec![0.0; d * d];
                let mut t3 = Vec::with_capacity(mu.len());
                let mut t4 = Vec::with_capacity(mu.len());
                for (j, (y, w)) in mu.atoms().enumerate() {
                    v.lions(x, view, y, &mut l);
                    v.lions_jac(x, view, y, &mut jac);
                    t3.push(w * dot(&self.drift_atoms[j * d..(j + 1) * d], &l));
                    // tr(A J) for symmetric A = σσ*
                    t4.push(w * dot(&self.gram_atoms[j * d * d..(j + 1) * d * d], &jac));
                }
                (pairwise_sum(&t3), 0.5 * pairwise_sum(&t4))
            }
        };
        finite("lions_drift", lions_drift, x)?;
        finite("lions_diffusion", lions_diffusion, x)?;
        Ok([drift_term, diffusion_term, lions_drift, lions_diffusion])
    }

    /// `𝓛^μ v(x, μ)`.
    pub fn generator(&self, vspec: &LyapunovSpec, model: &ModelSpec, x: &[f64]) -> Result<f64> {
        let t = self.terms(vspec, model, x)?;
        Ok((t[0] + t[1]) + (t[2] + t[3]))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn finite(term: &str, value: f64, x: &[f64]) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::numeric(term, format!("generator term is {value} at x = {x:?}")))
    }
}

/// `𝓛^μ v(x, μ)` with both measure integrals taken as weighted sums over the
/// atoms of `mu`.
pub fn eval_generator(vspec: &LyapunovSpec, model: &ModelSpec, x: &[f64], mu: &EmpiricalMeasure) -> Result<f64> {
    if x.len() != model.dim_state() {
        return Err(Error::structural(format!(
            "x has length {}, model state dim is {}",
            x.len(),
            model.dim_state()
        )));
    }
    GeneratorContext::new(vspec, model, mu)?.generator(vspec, model, x)
}

/// `𝓛^μ v` at every atom of `mu`, against `mu` itself.
pub fn generator_on_measure(vspec: &LyapunovSpec, model: &ModelSpec, mu: &EmpiricalMeasure) -> Result<Vec<f64>> {
    let ctx = GeneratorContext::new(vspec, model, mu)?;
    mu.atoms().map(|(x, _)| ctx.generator(vspec, model, x)).collect()
}

/// `∫(𝓛^μ v(x, μ) + α v(x, μ)) μ(dx)`.
pub fn integrated_generator_margin(
    vspec: &LyapunovSpec,
    model: &ModelSpec,
    mu: &EmpiricalMeasure,
    alpha: f64,
) -> Result<f64> {
    let ctx = GeneratorContext::new(vspec, model, mu)?;
    integrated_margin_in(&ctx, vspec, model, alpha)
}

pub(crate) fn integrated_margin_in(
    ctx: &GeneratorContext<'_>,
    vspec: &LyapunovSpec,
    model: &ModelSpec,
    alpha: f64,
) -> Result<f64> {
    let mu = ctx.view().measure();
    let terms = mu
        .atoms()
        .map(|(x, w)| {
            let lv = ctx.generator(vspec, model, x)?;
            Ok(w * (lv + alpha * vspec.functional().value(x, ctx.view())))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(pairwise_sum(&terms))
}
