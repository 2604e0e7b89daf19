//! Sampled audits of the coefficient assumptions: linear growth, the
//! one-sided non-Lipschitz monotonicity condition with concave moduli, and the
//! bounded-diffusion variant of linear growth.
//!
//! These are audits on a finite sample, not proofs. Failures are report
//! content, never errors.

use serde::{Deserialize, Serialize};

use crate::measure::{lambda2_norm_sq, rho_lower_bound, wasserstein1_upper, EmpiricalMeasure, MeasureView, TestDictionary, DEFAULT_PROJECTIONS};
use crate::rng::{CounterRng, Domain};
use crate::Result;

use super::ModelSpec;

/// Number of state points in the default audit set.
pub const AUDIT_POINTS: usize = 2_000;
/// Particles per audit measure.
pub const AUDIT_PARTICLES: usize = 64;
/// Standard deviation of the audit Gaussian, `N(0, 9 I)`.
pub const AUDIT_STD: f64 = 3.0;

/// The logarithmic modulus `κ̃` for `0 < η < 1/e`: `log(1/x)` up to `η`, then
/// the quadratic-over-`x²` continuation that keeps `x²κ̃(x)` smooth.
pub fn kappa_tilde(x: f64, eta: f64) -> f64 {
    if x <= eta {
        -x.ln()
    } else {
        let l = -eta.ln();
        let a = l.sqrt() - 0.5 / l.sqrt();
        let b = 0.5 * eta / l.sqrt();
        let v = a * x + b;
        v * v / (x * x)
    }
}

/// Concave moduli `κ: ℝ₊ → ℝ₊` applied to squared distances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Modulus {
    /// `κ(u) = c·u`.
    Linear { coeff: f64 },
    /// `κ(u) = u + u κ̃(√u)`, i.e. `r² + r² κ̃(r)` at `r = √u`.
    LogLipschitz { eta: f64 },
}

impl Modulus {
    pub fn identity() -> Self {
        Modulus::Linear { coeff: 1.0 }
    }

    pub fn eval(&self, u: f64) -> f64 {
        match self {
            Modulus::Linear { coeff } => coeff * u,
            Modulus::LogLipschitz { eta } => {
                if u <= 0.0 {
                    0.0
                } else {
                    u + u * kappa_tilde(u.sqrt(), *eta)
                }
            }
        }
    }

    /// Checks `κ(0) = 0`, strict increase and midpoint concavity on the grid
    /// `u_i = i·h`, `i = 1..=n`. Returns a description of the first violation.
    pub fn audit(&self, upper: f64, n: usize) -> std::result::Result<(), String> {
        if self.eval(0.0) != 0.0 {
            return Err(format!("κ(0) = {}", self.eval(0.0)));
        }
        if let Modulus::LogLipschitz { eta } = self {
            if !(*eta > 0.0 && *eta < (-1.0f64).exp()) {
                return Err(format!("η = {eta} outside (0, 1/e)"));
            }
        }
        let h = upper / n as f64;
        let vals: Vec<f64> = (0..=n).map(|i| self.eval(i as f64 * h)).collect();
        for i in 1..=n {
            if vals[i] <= vals[i - 1] {
                return Err(format!("not strictly increasing at u = {}", i as f64 * h));
            }
        }
        for i in 1..n {
            let scale = vals[i].abs().max(1.0);
            if vals[i] < 0.5 * (vals[i - 1] + vals[i + 1]) - 1e-12 * scale {
                return Err(format!("not concave at u = {}", i as f64 * h));
            }
        }
        Ok(())
    }
}

/// Constants and moduli of the coefficient assumptions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssumptionSpec {
    #[serde(rename = "L1")]
    pub l1: f64,
    #[serde(rename = "L2")]
    pub l2: f64,
    pub kappa1: Modulus,
    pub kappa2: Modulus,
    /// Constant of the bounded-diffusion growth variant; defaults to `L1`.
    #[serde(rename = "L1_prime", default, skip_serializing_if = "Option::is_none")]
    pub l1_prime: Option<f64>,
    /// Declared bound on `‖σ‖` for the bounded-diffusion variant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_bound: Option<f64>,
}

impl AssumptionSpec {
    pub fn new(l1: f64, l2: f64, kappa1: Modulus, kappa2: Modulus) -> Self {
        Self {
            l1,
            l2,
            kappa1,
            kappa2,
            l1_prime: None,
            sigma_bound: None,
        }
    }

    /// The constants certified for the example model with parameter `m`:
    /// `L₁ = 2 + S/2 + 2m²` with `S = π²/6`, and the log-Lipschitz modulus
    /// with the given `η` and `L₂ = 3 + 2m² + C` for a user-chosen `C`.
    pub fn example61(m: f64, eta: f64, c: f64) -> Self {
        let s = std::f64::consts::PI.powi(2) / 6.0;
        Self::new(
            2.0 + s / 2.0 + 2.0 * m * m,
            3.0 + 2.0 * m * m + c,
            Modulus::LogLipschitz { eta },
            Modulus::identity(),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditStatus {
    Pass,
    /// Holds with the largest admissible `ρ` but not the smallest.
    Indicative,
    Fail,
}

impl AuditStatus {
    fn worst(self, other: AuditStatus) -> AuditStatus {
        use AuditStatus::*;
        match (self, other) {
            (Fail, _) | (_, Fail) => Fail,
            (Indicative, _) | (_, Indicative) => Indicative,
            _ => Pass,
        }
    }
}

/// Which end of the `ρ` bracket entered the right-hand side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoEnd {
    NotUsed,
    /// Both ends evaluated: `rhs` uses the `W₁` upper bound, `rhs_lower` the
    /// dictionary lower bound.
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub lhs: f64,
    pub rhs: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rhs_lower: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
    pub status: AuditStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub check: String,
    pub model: String,
    pub status: AuditStatus,
    pub n_samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Largest `lhs − rhs` (or, for growth checks, the largest ratio).
    pub worst_value: f64,
    pub worst_index: usize,
    pub rho_end: RhoEnd,
    pub entries: Vec<AuditEntry>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.status == AuditStatus::Pass
    }
}

/// Default audit set: `x ~ N(0, 9 I)` paired with 64-particle measures drawn
/// from the same law.
pub fn default_audit_samples(dim: usize, seed: u64) -> Vec<(Vec<f64>, EmpiricalMeasure)> {
    audit_samples(dim, AUDIT_POINTS, AUDIT_PARTICLES, AUDIT_STD, seed)
}

pub fn audit_samples(dim: usize, n: usize, particles: usize, std: f64, seed: u64) -> Vec<(Vec<f64>, EmpiricalMeasure)> {
    let mut rng = CounterRng::new(seed, Domain::Audit, 0);
    (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..dim).map(|_| std * rng.normal()).collect();
            let pts: Vec<f64> = (0..dim * particles).map(|_| std * rng.normal()).collect();
            (x, EmpiricalMeasure::uniform(dim, pts).expect("nonempty audit measure"))
        })
        .collect()
}

/// Consecutive pairs of the default audit set.
pub fn default_audit_pairs(dim: usize, seed: u64) -> Vec<((Vec<f64>, EmpiricalMeasure), (Vec<f64>, EmpiricalMeasure))> {
    let s = default_audit_samples(dim, seed);
    s.chunks_exact(2).map(|c| (c[0].clone(), c[1].clone())).collect()
}

/// `|b|² + ‖σ‖² ≤ L₁(1 + |x|² + ‖μ‖²_{λ²})` on every sample.
pub fn check_linear_growth(
    model: &ModelSpec,
    spec: &AssumptionSpec,
    samples: &[(Vec<f64>, EmpiricalMeasure)],
    seed: Option<u64>,
) -> Result<AuditReport> {
    growth_audit("linear_growth", model, spec.l1, samples, seed, true)
}

/// The bounded-diffusion variant: `|b|² ≤ L₁'(1 + |x|² + ‖μ‖²_{λ²})` and
/// `‖σ‖ ≤ sigma_bound` on every sample. Without a declared bound only the
/// drift part is audited and the report is at best indicative.
pub fn check_bounded_diffusion_growth(
    model: &ModelSpec,
    spec: &AssumptionSpec,
    samples: &[(Vec<f64>, EmpiricalMeasure)],
    seed: Option<u64>,
) -> Result<AuditReport> {
    let l1p = spec.l1_prime.unwrap_or(spec.l1);
    let mut report = growth_audit("drift_growth_bounded_diffusion", model, l1p, samples, seed, false)?;
    let mut sigma_max: f64 = 0.0;
    for (x, mu) in samples {
        let g = model.diffusion_gram_at(x, &MeasureView::new(mu))?;
        let d = model.dim_state();
        let frob2: f64 = (0..d).map(|i| g[i * d + i]).sum();
        sigma_max = sigma_max.max(frob2.sqrt());
    }
    report.status = match spec.sigma_bound {
        Some(bound) if sigma_max > bound => AuditStatus::Fail,
        Some(_) => report.status,
        None => report.status.worst(AuditStatus::Indicative),
    };
    Ok(report)
}

fn growth_audit(
    name: &str,
    model: &ModelSpec,
    bound: f64,
    samples: &[(Vec<f64>, EmpiricalMeasure)],
    seed: Option<u64>,
    include_diffusion: bool,
) -> Result<AuditReport> {
    let d = model.dim_state();
    let mut entries = Vec::with_capacity(samples.len());
    for (x, mu) in samples {
        let view = MeasureView::new(mu);
        let b = model.drift_at(x, &view)?;
        let mut lhs: f64 = b.iter().map(|v| v * v).sum();
        if include_diffusion {
            let g = model.diffusion_gram_at(x, &view)?;
            lhs += (0..d).map(|i| g[i * d + i]).sum::<f64>();
        }
        let scale = 1.0 + x.iter().map(|v| v * v).sum::<f64>() + lambda2_norm_sq(mu);
        let ratio = lhs / scale;
        entries.push(AuditEntry {
            lhs,
            rhs: bound * scale,
            rhs_lower: None,
            ratio: Some(ratio),
            status: if ratio <= bound { AuditStatus::Pass } else { AuditStatus::Fail },
        });
    }
    let (worst_index, worst_value) = entries
        .iter()
        .enumerate()
        .map(|(i, e)| (i, e.ratio.unwrap_or(0.0)))
        .fold((0, f64::NEG_INFINITY), |acc, v| if v.1 > acc.1 { v } else { acc });
    let status = entries.iter().fold(AuditStatus::Pass, |s, e| s.worst(e.status));
    Ok(AuditReport {
        check: name.to_string(),
        model: model.label().to_string(),
        status,
        n_samples: entries.len(),
        seed,
        worst_value: if entries.is_empty() { 0.0 } else { worst_value },
        worst_index,
        rho_end: RhoEnd::NotUsed,
        entries,
    })
}

/// `2⟨x₁−x₂, b₁−b₂⟩ + ‖σ₁−σ₂‖² ≤ L₂(κ₁(|x₁−x₂|²) + κ₂(ρ²(μ₁,μ₂)))`.
///
/// `ρ` is bracketed: the right-hand side is evaluated with the `W₁` upper
/// bound (`rhs`) and the dictionary lower bound (`rhs_lower`). A pair passes
/// when it holds against the lower end, fails when it violates the upper end,
/// and is indicative in between.
pub fn check_monotone_nonlipschitz(
    model: &ModelSpec,
    spec: &AssumptionSpec,
    pairs: &[((Vec<f64>, EmpiricalMeasure), (Vec<f64>, EmpiricalMeasure))],
    seed: Option<u64>,
) -> Result<AuditReport> {
    let d = model.dim_state();
    let l = model.dim_noise();
    let dict = TestDictionary::standard(d)?;
    let mut entries = Vec::with_capacity(pairs.len());
    for ((x1, mu1), (x2, mu2)) in pairs {
        let (v1, v2) = (MeasureView::new(mu1), MeasureView::new(mu2));
        let (b1, b2) = (model.drift_at(x1, &v1)?, model.drift_at(x2, &v2)?);
        let (s1, s2) = (model.diffusion_at(x1, &v1)?, model.diffusion_at(x2, &v2)?);
        let inner: f64 = (0..d).map(|i| (x1[i] - x2[i]) * (b1[i] - b2[i])).sum();
        let sdiff: f64 = (0..d * l).map(|k| (s1[k] - s2[k]) * (s1[k] - s2[k])).sum();
        let lhs = 2.0 * inner + sdiff;
        let dx2: f64 = (0..d).map(|i| (x1[i] - x2[i]) * (x1[i] - x2[i])).sum();
        let rho_hi = wasserstein1_upper(mu1, mu2, DEFAULT_PROJECTIONS)?;
        let rho_lo = rho_lower_bound(mu1, mu2, &dict)?;
        let k1 = spec.kappa1.eval(dx2);
        let rhs = spec.l2 * (k1 + spec.kappa2.eval(rho_hi * rho_hi));
        let rhs_lower = spec.l2 * (k1 + spec.kappa2.eval(rho_lo * rho_lo));
        let status = if lhs <= rhs_lower {
            AuditStatus::Pass
        } else if lhs <= rhs {
            AuditStatus::Indicative
        } else {
            AuditStatus::Fail
        };
        entries.push(AuditEntry {
            lhs,
            rhs,
            rhs_lower: Some(rhs_lower),
            ratio: None,
            status,
        });
    }
    let (worst_index, worst_value) = entries
        .iter()
        .enumerate()
        .map(|(i, e)| (i, e.lhs - e.rhs_lower.unwrap_or(e.rhs)))
        .fold((0, f64::NEG_INFINITY), |acc, v| if v.1 > acc.1 { v } else { acc });
    let status = entries.iter().fold(AuditStatus::Pass, |s, e| s.worst(e.status));
    Ok(AuditReport {
        check: "monotone_nonlipschitz".into(),
        model: model.label().to_string(),
        status,
        n_samples: entries.len(),
        seed,
        worst_value: if entries.is_empty() { 0.0 } else { worst_value },
        worst_index,
        rho_end: RhoEnd::Both,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ExprModel;
    use std::sync::Arc;

    fn point(x: f64) -> (Vec<f64>, EmpiricalMeasure) {
        (vec![x], EmpiricalMeasure::dirac(&[0.0]).unwrap())
    }

    #[test]
    fn kappa_tilde_branches_meet_at_eta() {
        for eta in [0.01, 0.1, 0.2, 0.36] {
            let below = -(eta as f64).ln();
            let above = kappa_tilde(eta * (1.0 + 1e-15), eta);
            assert!((below - above).abs() < 1e-9, "eta={eta}: {below} vs {above}");
            assert_eq!(kappa_tilde(eta, eta), below);
        }
    }

    #[test]
    fn log_modulus_is_increasing_and_concave_in_squared_distance() {
        let k = Modulus::LogLipschitz { eta: 0.1 };
        // r ∈ (0, 10] ⇔ u = r² ∈ (0, 100]
        k.audit(100.0, 20_000).unwrap();
        Modulus::identity().audit(100.0, 100).unwrap();
        assert!(Modulus::LogLipschitz { eta: 0.5 }.audit(1.0, 10).is_err());
    }

    #[test]
    fn log_modulus_in_distance_is_increasing_but_not_concave_near_zero() {
        // r ↦ r² + r²κ̃(r) has second derivative 2 log(1/r) − 1 > 0 for small r.
        let k = |r: f64| r * r + r * r * kappa_tilde(r, 0.1);
        let h = 1e-3;
        let r = 0.01;
        assert!(k(r + h) + k(r - h) - 2.0 * k(r) > 0.0);
        let mut prev = 0.0;
        for i in 1..=10_000 {
            let v = k(i as f64 * 1e-3);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn example61_passes_linear_growth() {
        let model = ModelSpec::example61(0.25, 50);
        let spec = AssumptionSpec::example61(0.25, 0.1, 1.0);
        assert!((spec.l1 - (2.0 + std::f64::consts::PI.powi(2) / 12.0 + 0.125)).abs() < 1e-15);
        let samples = default_audit_samples(1, 11);
        let r = check_linear_growth(&model, &spec, &samples, Some(11)).unwrap();
        assert_eq!(r.status, AuditStatus::Pass);
        assert_eq!(r.n_samples, AUDIT_POINTS);
        assert!(r.worst_value <= spec.l1);
    }

    #[test]
    fn zero_model_has_zero_ratio() {
        let spec = AssumptionSpec::new(1.0, 1.0, Modulus::identity(), Modulus::identity());
        let r = check_linear_growth(&ModelSpec::zero(1), &spec, &default_audit_samples(1, 3), None).unwrap();
        assert_eq!(r.status, AuditStatus::Pass);
        assert_eq!(r.worst_value, 0.0);
    }

    #[test]
    fn quadratic_drift_fails_linear_growth() {
        let model = ModelSpec::new("x^2", Arc::new(ExprModel::parse(&["x*x"], &["0"], 1, 1).unwrap()));
        let spec = AssumptionSpec::new(1.0, 1.0, Modulus::identity(), Modulus::identity());
        let r = check_linear_growth(&model, &spec, &[point(10.0)], None).unwrap();
        assert_eq!(r.status, AuditStatus::Fail);
        // μ = δ₀ contributes ‖μ‖² = 1: ratio 10⁴ / 102.
        assert!((r.worst_value - 1e4 / 102.0).abs() < 1e-9);
    }

    #[test]
    fn meanfield_ou_growth_ratio_bound() {
        for (m, s) in [(0.25, 0.5), (0.9, 2.0), (-0.5, 0.0)] {
            let model = ModelSpec::meanfield_ou(m, s);
            let spec = AssumptionSpec::new(2.0 * (m * m + 1.0) + s * s, 1.0, Modulus::identity(), Modulus::identity());
            let r = check_linear_growth(&model, &spec, &default_audit_samples(1, 5), None).unwrap();
            assert!(r.worst_value <= 2.0 * (m * m + 1.0) + s * s);
        }
    }

    #[test]
    fn monotone_examples() {
        let spec = AssumptionSpec::new(1.0, 3.0, Modulus::identity(), Modulus::identity());
        let c = ModelSpec::contractive(1.0);
        let same = (point(0.3), point(0.3));
        let r = check_monotone_nonlipschitz(&c, &spec, &[same], None).unwrap();
        assert_eq!(r.status, AuditStatus::Pass);
        assert_eq!(r.entries[0].lhs, 0.0);
        assert_eq!(r.entries[0].rhs, 0.0);

        let r = check_monotone_nonlipschitz(&c, &spec, &[(point(1.0), point(0.0))], None).unwrap();
        let expect = -2.0 + 1f64.sin().powi(2);
        assert!((r.entries[0].lhs - expect).abs() < 1e-15);
        assert_eq!(r.status, AuditStatus::Pass);

        let spec1 = AssumptionSpec::new(1.0, 1.0, Modulus::identity(), Modulus::identity());
        let expanding = ModelSpec::linear(1.0, 0.0, 1);
        let r = check_monotone_nonlipschitz(&expanding, &spec1, &[(point(1.0), point(0.0))], None).unwrap();
        assert_eq!(r.entries[0].lhs, 2.0);
        assert_eq!(r.status, AuditStatus::Fail);
    }

    #[test]
    fn example61_monotone_audit_with_log_modulus() {
        // Constant C chosen generously; the audit reports the worst pair.
        let model = ModelSpec::example61(0.25, 50);
        let spec = AssumptionSpec::example61(0.25, 0.1, 4.0);
        let pairs: Vec<_> = default_audit_pairs(1, 9).into_iter().take(200).collect();
        let r = check_monotone_nonlipschitz(&model, &spec, &pairs, Some(9)).unwrap();
        assert_ne!(r.status, AuditStatus::Fail, "worst {}", r.worst_value);
    }
}
