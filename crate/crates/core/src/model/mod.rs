//! Coefficient pairs `(b, σ)` of a mean-field SDE
//! `dX_t = b(X_t, μ_t) dt + σ(X_t, μ_t) dW_t`, `μ_t = Law(X_t)`.
//!
//! Coefficients receive the current measure through a [`MeasureView`], which
//! carries the measure together with precomputed `mean(μ)` and `∫|x|² dμ`, so
//! a full particle system can be evaluated in linear time.

mod audit;
mod expr;

use std::fmt;
use std::sync::Arc;

pub use audit::{
    audit_samples, check_bounded_diffusion_growth, check_linear_growth, check_monotone_nonlipschitz, default_audit_pairs,
    default_audit_samples, kappa_tilde, AssumptionSpec, AuditEntry, AuditReport, AuditStatus, Modulus,
    RhoEnd, AUDIT_PARTICLES, AUDIT_POINTS, AUDIT_STD,
};
pub use expr::{Expr, ExprModel};

use crate::error::{Error, Result};
use crate::measure::{EmpiricalMeasure, MeasureView};

/// Drift and diffusion callbacks. Implementations must be pure and
/// re-entrant: they are called concurrently from simulation workers.
pub trait Coefficients: Send + Sync + fmt::Debug {
    fn dim_state(&self) -> usize;
    fn dim_noise(&self) -> usize;

    /// Writes `b(x, μ)` into `out` (length `d`).
    fn drift(&self, x: &[f64], mu: &MeasureView<'_>, out: &mut [f64]);

    /// Writes `σ(x, μ)` row-major into `out` (length `d·l`).
    fn diffusion(&self, x: &[f64], mu: &MeasureView<'_>, out: &mut [f64]);

    /// Writes `σσ*(x, μ)` row-major into `out` (length `d·d`).
    fn diffusion_gram(&self, x: &[f64], mu: &MeasureView<'_>, out: &mut [f64]) {
        let (d, l) = (self.dim_state(), self.dim_noise());
        let mut s = vec![0.0; d * l];
        self.diffusion(x, mu, &mut s);
        gram(&s, d, l, out);
    }

    /// True when neither coefficient depends on the measure.
    fn is_distribution_free(&self) -> bool {
        false
    }
}

/// `σσ*` for a row-major `d × l` matrix.
pub(crate) fn gram(s: &[f64], d: usize, l: usize, out: &mut [f64]) {
    for i in 0..d {
        for j in 0..=i {
            let v: f64 = (0..l).map(|k| s[i * l + k] * s[j * l + k]).sum();
            out[i * d + j] = v;
            out[j * d + i] = v;
        }
    }
}

/// A labelled, immutable coefficient pair.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    label: String,
    coeffs: Arc<dyn Coefficients>,
}

impl ModelSpec {
    pub fn new(label: impl Into<String>, coeffs: Arc<dyn Coefficients>) -> Self {
        Self {
            label: label.into(),
            coeffs,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim_state(&self) -> usize {
        self.coeffs.dim_state()
    }

    pub fn dim_noise(&self) -> usize {
        self.coeffs.dim_noise()
    }

    pub fn coefficients(&self) -> &dyn Coefficients {
        self.coeffs.as_ref()
    }

    pub fn is_distribution_free(&self) -> bool {
        self.coeffs.is_distribution_free()
    }

    /// The example model with drift `−∫(x − m y) μ(dy)` and diffusion row
    /// `(k^{-3/2} sin(k x))_{k=1..l}`.
    pub fn example61(m: f64, l: usize) -> Self {
        Self::new(format!("example61(m={m}, l={l})"), Arc::new(Example61::new(m, l)))
    }

    /// One-dimensional mean-field Ornstein–Uhlenbeck: drift `−(x − m·mean(μ))`,
    /// constant diffusion `s`.
    pub fn meanfield_ou(m: f64, s: f64) -> Self {
        Self::meanfield_ou_dim(m, s, 1)
    }

    /// Mean-field OU in `d` dimensions with diffusion `s·I`.
    pub fn meanfield_ou_dim(m: f64, s: f64, dim: usize) -> Self {
        Self::new(
            format!("meanfield_ou(m={m}, s={s})"),
            Arc::new(MeanFieldOu { m, s, dim }),
        )
    }

    /// Distribution-free contraction: drift `−x`, diffusion `eps·sin(x)`.
    pub fn contractive(eps: f64) -> Self {
        Self::contractive_dim(eps, 1)
    }

    pub fn contractive_dim(eps: f64, dim: usize) -> Self {
        Self::new(format!("contractive(eps={eps})"), Arc::new(Contractive { eps, dim }))
    }

    /// Linear fixture: drift `a·x`, diffusion `s·I`. With `a = s = 0` this is
    /// the zero model; `a > 0` gives an expanding drift.
    pub fn linear(a: f64, s: f64, dim: usize) -> Self {
        Self::new(format!("linear(a={a}, s={s})"), Arc::new(Linear { a, s, dim }))
    }

    pub fn zero(dim: usize) -> Self {
        Self::linear(0.0, 0.0, dim)
    }

    /// `b(x, μ)` with shape and finiteness checks.
    pub fn eval_drift(&self, x: &[f64], mu: &EmpiricalMeasure) -> Result<Vec<f64>> {
        self.drift_at(x, &MeasureView::new(mu))
    }

    /// `σ(x, μ)` as a row-major `d × l` matrix.
    pub fn eval_diffusion(&self, x: &[f64], mu: &EmpiricalMeasure) -> Result<Vec<f64>> {
        self.diffusion_at(x, &MeasureView::new(mu))
    }

    pub fn drift_at(&self, x: &[f64], view: &MeasureView<'_>) -> Result<Vec<f64>> {
        self.check_shapes(x, view)?;
        let mut out = vec![0.0; self.dim_state()];
        self.coeffs.drift(x, view, &mut out);
        self.check_finite("drift", x, &out)?;
        Ok(out)
    }

    pub fn diffusion_at(&self, x: &[f64], view: &MeasureView<'_>) -> Result<Vec<f64>> {
        self.check_shapes(x, view)?;
        let mut out = vec![0.0; self.dim_state() * self.dim_noise()];
        self.coeffs.diffusion(x, view, &mut out);
        self.check_finite("diffusion", x, &out)?;
        Ok(out)
    }

    pub fn diffusion_gram_at(&self, x: &[f64], view: &MeasureView<'_>) -> Result<Vec<f64>> {
        self.check_shapes(x, view)?;
        let d = self.dim_state();
        let mut out = vec![0.0; d * d];
        self.coeffs.diffusion_gram(x, view, &mut out);
        self.check_finite("diffusion_gram", x, &out)?;
        Ok(out)
    }

    fn check_shapes(&self, x: &[f64], view: &MeasureView<'_>) -> Result<()> {
        let d = self.dim_state();
        if x.len() != d || view.dim() != d {
            return Err(Error::structural(format!(
                "model {} has state dim {d}; got x of length {} and measure of dim {}",
                self.label,
                x.len(),
                view.dim()
            )));
        }
        Ok(())
    }

    fn check_finite(&self, what: &str, x: &[f64], out: &[f64]) -> Result<()> {
        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Model {
                message: format!("{} of {} is not finite", what, self.label),
                input: format!("x = {x:?}"),
            })
        }
    }
}

#[derive(Debug)]
struct Example61 {
    m: f64,
    l: usize,
    inv_k32: Vec<f64>,
    inv_k3: Vec<f64>,
    sum_inv_k3: f64,
}

impl Example61 {
    fn new(m: f64, l: usize) -> Self {
        let inv_k32 = (1..=l).map(|k| (k as f64).powf(-1.5)).collect();
        let inv_k3: Vec<f64> = (1..=l).map(|k| (k as f64).powi(-3)).collect();
        let sum_inv_k3 = crate::numeric::pairwise_sum(&inv_k3);
        Self { m, l, inv_k32, inv_k3, sum_inv_k3 }
    }
}

impl Coefficients for Example61 {
    fn dim_state(&self) -> usize {
        1
    }

    fn dim_noise(&self) -> usize {
        self.l
    }

    fn drift(&self, x: &[f64], mu: &MeasureView<'_>, out: &mut [f64]) {
        out[0] = -(x[0] - self.m * mu.mean()[0]);
    }

    fn diffusion(&self, x: &[f64], _mu: &MeasureView<'_>, out: &mut [f64]) {
        for (k, (o, c)) in out.iter_mut().zip(&self.inv_k32).enumerate() {
            *o = c * ((k + 1) as f64 * x[0]).sin();
        }
    }

    fn diffusion_gram(&self, x: &[f64], _mu: &MeasureView<'_>, out: &mut [f64]) {
        // Σ w_k sin²(kx) = ½Σ w_k − ½Σ w_k cos(kθ) with θ = 2x; cos(kθ) runs
        // as four interleaved chains cos((k+4)θ) = 2cos(4θ)cos(kθ) − cos((k−4)θ).
        let c1 = (2.0 * x[0]).cos();
        let c2 = 2.0 * c1 * c1 - 1.0;
        let c3 = 2.0 * c1 * c2 - c1;
        let c4 = 2.0 * c2 * c2 - 1.0;
        let two_c4 = 2.0 * c4;
        let mut cur = [c1, c2, c3, c4];
        let mut prev = [c3, c2, c1, 1.0];
        let mut acc = [0.0; 4];
        let mut blocks = self.inv_k3.chunks_exact(4);
        for w in &mut blocks {
            for j in 0..4 {
                acc[j] += w[j] * cur[j];
                let next = two_c4 * cur[j] - prev[j];
                prev[j] = cur[j];
                cur[j] = next;
            }
        }
        for (j, w) in blocks.remainder().iter().enumerate() {
            acc[j] += w * cur[j];
        }
        let acc = 0.5 * (self.sum_inv_k3 - (acc[0] + acc[1]) - (acc[2] + acc[3]));
        out[0] = acc;
    }
}

#[derive(Debug)]
struct MeanFieldOu {
    m: f64,
    s: f64,
    dim: usize,
}

impl Coefficients for MeanFieldOu {
    fn dim_state(&self) -> usize {
        self.dim
    }

    fn dim_noise(&self) -> usize {
        self.dim
    }

    fn drift(&self, x: &[f64], mu: &MeasureView<'_>, out: &mut [f64]) {
        for ((o, xi), mi) in out.iter_mut().zip(x).zip(mu.mean()) {
            *o = -(xi - self.m * mi);
        }
    }

    fn diffusion(&self, _x: &[f64], _mu: &MeasureView<'_>, out: &mut [f64]) {
        diagonal(out, self.dim, |_| self.s);
    }

    fn diffusion_gram(&self, _x: &[f64], _mu: &MeasureView<'_>, out: &mut [f64]) {
        diagonal(out, self.dim, |_| self.s * self.s);
    }

    fn is_distribution_free(&self) -> bool {
        self.m == 0.0
    }
}

#[derive(Debug)]
struct Contractive {
    eps: f64,
    dim: usize,
}

impl Coefficients for Contractive {
    fn dim_state(&self) -> usize {
        self.dim
    }

    fn dim_noise(&self) -> usize {
        self.dim
    }

    fn drift(&self, x: &[f64], _mu: &MeasureView<'_>, out: &mut [f64]) {
        for (o, xi) in out.iter_mut().zip(x) {
            *o = -xi;
        }
    }

    fn diffusion(&self, x: &[f64], _mu: &MeasureView<'_>, out: &mut [f64]) {
        diagonal(out, self.dim, |i| self.eps * x[i].sin());
    }

    fn diffusion_gram(&self, x: &[f64], _mu: &MeasureView<'_>, out: &mut [f64]) {
        diagonal(out, self.dim, |i| {
            let s = self.eps * x[i].sin();
            s * s
        });
    }

    fn is_distribution_free(&self) -> bool {
        true
    }
}

#[derive(Debug)]
struct Linear {
    a: f64,
    s: f64,
    dim: usize,
}

impl Coefficients for Linear {
    fn dim_state(&self) -> usize {
        self.dim
    }

    fn dim_noise(&self) -> usize {
        self.dim
    }

    fn drift(&self, x: &[f64], _mu: &MeasureView<'_>, out: &mut [f64]) {
        for (o, xi) in out.iter_mut().zip(x) {
            *o = self.a * xi;
        }
    }

    fn diffusion(&self, _x: &[f64], _mu: &MeasureView<'_>, out: &mut [f64]) {
        diagonal(out, self.dim, |_| self.s);
    }

    fn is_distribution_free(&self) -> bool {
        true
    }
}

fn diagonal(out: &mut [f64], dim: usize, value: impl Fn(usize) -> f64) {
    out.fill(0.0);
    for i in 0..dim {
        out[i * dim + i] = value(i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn dirac(x: f64) -> EmpiricalMeasure {
        EmpiricalMeasure::dirac(&[x]).unwrap()
    }

    #[test]
    fn drift_examples() {
        let ex = ModelSpec::example61(0.25, 3);
        assert_eq!(ex.eval_drift(&[0.0], &dirac(0.0)).unwrap(), vec![0.0]);
        assert_eq!(ex.eval_drift(&[1.0], &dirac(0.0)).unwrap(), vec![-1.0]);
        let c = ModelSpec::contractive(0.7);
        assert_eq!(c.eval_drift(&[2.0], &dirac(5.0)).unwrap(), vec![-2.0]);
    }

    #[test]
    fn diffusion_examples() {
        let ex2 = ModelSpec::example61(0.25, 2);
        assert_eq!(ex2.eval_diffusion(&[0.0], &dirac(0.0)).unwrap(), vec![0.0, 0.0]);
        let ex1 = ModelSpec::example61(0.25, 1);
        assert_eq!(ex1.eval_diffusion(&[FRAC_PI_2], &dirac(0.0)).unwrap(), vec![1.0]);
        let ou = ModelSpec::meanfield_ou(0.3, 0.5);
        assert_eq!(ou.eval_diffusion(&[-7.0], &dirac(2.0)).unwrap(), vec![0.5]);
    }

    #[test]
    fn example61_drift_is_affine_in_mean() {
        let ex = ModelSpec::example61(0.25, 4);
        let mu = EmpiricalMeasure::uniform(1, vec![-1.0, 0.5, 3.0, 2.0]).unwrap();
        let mean = mu.mean()[0];
        for x in [-3.0, 0.0, 0.7, 12.0] {
            assert_eq!(ex.eval_drift(&[x], &mu).unwrap()[0], -x + 0.25 * mean);
        }
    }

    #[test]
    fn example61_gram_recurrence_matches_direct() {
        let mu = dirac(0.0);
        let view = MeasureView::new(&mu);
        for (l, x) in [1, 2, 3, 5, 7, 50, 203].into_iter().flat_map(|l| {
            [-31.4, -2.0, -1e-3, 0.0, 0.3, 1.0, 3.14159, 17.0].map(|x| (l, x))
        }) {
            let ex = ModelSpec::example61(0.25, l);
            let s = ex.diffusion_at(&[x], &view).unwrap();
            let direct: f64 = s.iter().map(|v| v * v).sum();
            let fast = ex.diffusion_gram_at(&[x], &view).unwrap()[0];
            assert!((direct - fast).abs() < 1e-13, "x={x}: {direct} vs {fast}");
        }
    }

    #[test]
    fn example61_diffusion_bounded_by_linear_growth() {
        // ‖σ‖² ≤ S|x| ≤ (S/2)(1+|x|²) with S = Σ_{k≤l} k^{-2}.
        let l = 50;
        let ex = ModelSpec::example61(0.25, l);
        let s_sum: f64 = (1..=l).map(|k| (k as f64).powi(-2)).sum();
        let mu = dirac(0.0);
        let view = MeasureView::new(&mu);
        for i in 0..4001 {
            let x = -20.0 + i as f64 * 0.01;
            let g = ex.diffusion_gram_at(&[x], &view).unwrap()[0];
            assert!(g <= s_sum * x.abs() + 1e-15);
            assert!(g <= 0.5 * s_sum * (1.0 + x * x) + 1e-15);
        }
    }

    #[test]
    fn shape_errors_and_nonfinite_outputs() {
        let ex = ModelSpec::example61(0.25, 2);
        assert!(matches!(ex.eval_drift(&[0.0, 1.0], &dirac(0.0)), Err(Error::Structural(_))));
        let blow = ModelSpec::linear(1e308, 0.0, 1);
        let err = blow.eval_drift(&[1e10], &dirac(0.0)).unwrap_err();
        match err {
            Error::Model { input, .. } => assert!(input.contains("1e10") || input.contains("10000000000")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
