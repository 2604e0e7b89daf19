//! Certificate constants and the sampled audit of their inequalities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{EmpiricalMeasure, MeasureView};
use crate::model::{ModelSpec, AUDIT_STD};
use crate::numeric::{pairwise_sum, zeta_partial};
use crate::rng::{CounterRng, Domain};

use super::{integrated_margin_in, GeneratorContext, LyapunovSpec};

/// Which family of inequalities a certificate claims.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CertificateMode {
    /// Integrated generator inequality with zero right-hand side and a pure
    /// second-moment sandwich.
    H21,
    /// Integrated inequality bounded by `M₁`, sandwich widened by `M₂`, `M₃`.
    H22,
    /// Pointwise generator inequality and the radial sandwich `γ₁ ≤ v ≤ γ₂`.
    H23,
}

/// Radial comparison functions, continuous, strictly increasing, zero at
/// zero and unbounded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Gamma {
    /// `coeff · r^exponent`.
    Power { coeff: f64, exponent: f64 },
}

impl Gamma {
    pub fn eval(&self, r: f64) -> f64 {
        match self {
            Gamma::Power { coeff, exponent } => {
                if r == 0.0 {
                    0.0
                } else {
                    coeff * r.powf(*exponent)
                }
            }
        }
    }

    fn audit(&self, grid: &[f64]) -> std::result::Result<(), String> {
        if self.eval(0.0) != 0.0 {
            return Err("γ(0) ≠ 0".into());
        }
        let mut prev = 0.0;
        for &r in grid {
            let g = self.eval(r);
            if !(g > prev) {
                return Err(format!("not strictly increasing at r = {r}"));
            }
            prev = g;
        }
        Ok(())
    }
}

/// Radii on which comparison functions are audited.
fn gamma_grid() -> Vec<f64> {
    (1..=1000).map(|i| i as f64 * 0.1).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityCertificate {
    pub mode: CertificateMode,
    pub alpha: f64,
    pub a1: f64,
    pub a2: f64,
    #[serde(rename = "M1", default)]
    pub m1: f64,
    #[serde(rename = "M2", default)]
    pub m2: f64,
    #[serde(rename = "M3", default)]
    pub m3: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma1: Option<Gamma>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma2: Option<Gamma>,
}

impl StabilityCertificate {
    pub fn h21(alpha: f64, a1: f64, a2: f64) -> Result<Self> {
        Self::h22(alpha, a1, a2, 0.0, 0.0, 0.0).map(|c| Self {
            mode: CertificateMode::H21,
            ..c
        })
    }

    pub fn h22(alpha: f64, a1: f64, a2: f64, m1: f64, m2: f64, m3: f64) -> Result<Self> {
        let c = Self {
            mode: CertificateMode::H22,
            alpha,
            a1,
            a2,
            m1,
            m2,
            m3,
            gamma1: None,
            gamma2: None,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn h23(alpha: f64, a1: f64, a2: f64, gamma1: Gamma, gamma2: Gamma) -> Result<Self> {
        let c = Self {
            mode: CertificateMode::H23,
            alpha,
            a1,
            a2,
            m1: 0.0,
            m2: 0.0,
            m3: 0.0,
            gamma1: Some(gamma1),
            gamma2: Some(gamma2),
        };
        c.validate()?;
        Ok(c)
    }

    /// Constants for the mean-centered functional on the example model with
    /// coupling `m` and `l` noise components: `α = 2 − 2m`,
    /// `a₁ = 1 − 2m − m²`, `a₂ = 2 + 2m²`, `M₁ = Σ_{k≤l} k⁻³`, `M₂ = M₃ = 0`.
    /// For `m ≥ √2 − 1` the lower constant is nonpositive and the
    /// certificate is vacuous.
    pub fn example61(m: f64, l: usize) -> Result<Self> {
        Self::h22(2.0 - 2.0 * m, 1.0 - 2.0 * m - m * m, 2.0 + 2.0 * m * m, zeta_partial(3.0, l), 0.0, 0.0)
    }

    /// Structural checks. A nonpositive `a₁` is accepted here and reported as
    /// vacuous by the audit.
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.a1, self.a2, self.m1, self.m2, self.m3];
        if !all.iter().all(|v| v.is_finite()) {
            return Err(Error::usage("certificate constants must be finite"));
        }
        if self.alpha <= 0.0 {
            return Err(Error::usage(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.a2 <= 0.0 {
            return Err(Error::usage(format!("a2 must be positive, got {}", self.a2)));
        }
        if self.a1 > self.a2 {
            return Err(Error::usage(format!("a1 = {} exceeds a2 = {}", self.a1, self.a2)));
        }
        if self.m1 < 0.0 || self.m2 < 0.0 || self.m3 < 0.0 {
            return Err(Error::usage("M1, M2, M3 must be nonnegative"));
        }
        match self.mode {
            CertificateMode::H21 => {
                if self.m1 != 0.0 || self.m2 != 0.0 || self.m3 != 0.0 {
                    return Err(Error::usage("mode H21 requires M1 = M2 = M3 = 0"));
                }
            }
            CertificateMode::H22 => {}
            CertificateMode::H23 => {
                let (g1, g2) = match (&self.gamma1, &self.gamma2) {
                    (Some(a), Some(b)) => (a, b),
                    _ => return Err(Error::usage("mode H23 requires gamma1 and gamma2")),
                };
                let grid = gamma_grid();
                for (name, g) in [("gamma1", g1), ("gamma2", g2)] {
                    g.audit(&grid).map_err(|e| Error::usage(format!("{name}: {e}")))?;
                }
                if let Some(r) = grid.iter().find(|&&r| g1.eval(r) > g2.eval(r)) {
                    return Err(Error::usage(format!("gamma1 exceeds gamma2 at r = {r}")));
                }
            }
        }
        Ok(())
    }

    pub fn is_vacuous(&self) -> bool {
        self.a1 <= 0.0
    }

    /// `a₂ / a₁`.
    pub fn envelope_factor(&self) -> f64 {
        self.a2 / self.a1
    }

    /// `(α(M₂ + M₃) + M₁) / (α a₁)`.
    pub fn envelope_offset(&self) -> f64 {
        (self.alpha * (self.m2 + self.m3) + self.m1) / (self.alpha * self.a1)
    }

    /// `(a₂/a₁) e^{−αt} m₂(0) + offset`.
    pub fn envelope(&self, t: f64, init_m2: f64) -> f64 {
        self.envelope_factor() * (-self.alpha * t).exp() * init_m2 + self.envelope_offset()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginKind {
    /// Generator inequality (integrated or pointwise).
    Generator,
    LowerSandwich,
    UpperSandwich,
}

/// One audited inequality `lhs ≤ rhs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginRecord {
    pub kind: MarginKind,
    pub measure_index: usize,
    /// Evaluation point for pointwise checks.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub point: Option<Vec<f64>>,
    pub lhs: f64,
    pub rhs: f64,
}

impl MarginRecord {
    pub fn excess(&self) -> f64 {
        self.lhs - self.rhs
    }

    fn holds(&self) -> bool {
        self.excess() <= ROUNDOFF * (1.0 + self.lhs.abs() + self.rhs.abs())
    }
}

/// Relative slack granted to audited inequalities for floating-point error.
const ROUNDOFF: f64 = 1e-12;
/// Number of worst records echoed in a report.
const ECHO: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub mode: CertificateMode,
    pub pass: bool,
    /// Set when `a₁ ≤ 0`; such a certificate never passes.
    pub vacuous: bool,
    /// Largest generator left-hand side: `∫(𝓛v + αv)dμ` for the integrated
    /// modes, `𝓛v + αv` for the pointwise mode.
    pub worst_margin: f64,
    pub worst_location: Option<MarginRecord>,
    /// Largest `lhs − rhs` over every audited inequality.
    pub worst_excess: f64,
    pub n_samples: usize,
    pub seed: Option<u64>,
    pub violations: usize,
    /// Up to ten records with the largest excess.
    pub worst: Vec<MarginRecord>,
    /// Left-hand sides of the generator inequality, one per measure (or per
    /// point-measure pair in pointwise mode).
    pub generator_margins: Vec<f64>,
}

/// The default audit family: `count` equal-weight measures of 64 atoms, each
/// Gaussian with its own random center and spread.
pub fn default_certificate_measures(dim: usize, count: usize, seed: u64) -> Vec<EmpiricalMeasure> {
    let mut rng = CounterRng::new(seed, Domain::Audit, 1);
    (0..count)
        .map(|_| {
            let center: Vec<f64> = (0..dim).map(|_| 2.0 * rng.normal()).collect();
            let spread = 0.2 + 2.8 * rng.uniform();
            let pts: Vec<f64> = (0..64 * dim).map(|i| center[i % dim] + spread * rng.normal()).collect();
            EmpiricalMeasure::uniform(dim, pts).expect("nonempty")
        })
        .collect()
}

/// Points for the pointwise audit, drawn from `N(0, 9 I)`.
pub fn default_pointwise_grid(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = CounterRng::new(seed, Domain::Audit, 2);
    (0..count)
        .map(|_| (0..dim).map(|_| AUDIT_STD * rng.normal()).collect())
        .collect()
}

/// Audits `cert` on `measures`. Pointwise mode evaluates at the atoms of
/// each measure; use [`check_certificate_with`] to supply an `x` grid.
pub fn check_certificate(
    vspec: &LyapunovSpec,
    model: &ModelSpec,
    cert: &StabilityCertificate,
    measures: &[EmpiricalMeasure],
) -> Result<CertificateReport> {
    check_certificate_with(vspec, model, cert, measures, None, None)
}

pub fn check_certificate_with(
    vspec: &LyapunovSpec,
    model: &ModelSpec,
    cert: &StabilityCertificate,
    measures: &[EmpiricalMeasure],
    points: Option<&[Vec<f64>]>,
    seed: Option<u64>,
) -> Result<CertificateReport> {
    cert.validate()?;
    if measures.is_empty() {
        return Err(Error::usage("certificate audit needs at least one measure"));
    }
    let v = vspec.functional();
    let mut records = Vec::new();
    let mut generator_margins = Vec::new();
    for (idx, mu) in measures.iter().enumerate() {
        let ctx = GeneratorContext::new(vspec, model, mu)?;
        let view = ctx.view();
        match cert.mode {
            CertificateMode::H21 | CertificateMode::H22 => {
                let margin = integrated_margin_in(&ctx, vspec, model, cert.alpha)?;
                generator_margins.push(margin);
                records.push(MarginRecord {
                    kind: MarginKind::Generator,
                    measure_index: idx,
                    point: None,
                    lhs: margin,
                    rhs: cert.m1,
                });
                let integral = integral_of_v(vspec, view);
                let mom2 = view.mom2();
                records.push(MarginRecord {
                    kind: MarginKind::LowerSandwich,
                    measure_index: idx,
                    point: None,
                    lhs: cert.a1 * mom2 - cert.m2,
                    rhs: integral,
                });
                records.push(MarginRecord {
                    kind: MarginKind::UpperSandwich,
                    measure_index: idx,
                    point: None,
                    lhs: integral,
                    rhs: cert.a2 * mom2 + cert.m3,
                });
            }
            CertificateMode::H23 => {
                let (g1, g2) = (cert.gamma1.as_ref().unwrap(), cert.gamma2.as_ref().unwrap());
                let atoms: Vec<Vec<f64>>;
                let xs: &[Vec<f64>] = match points {
                    Some(p) => p,
                    None => {
                        atoms = mu.atoms().map(|(p, _)| p.to_vec()).collect();
                        &atoms
                    }
                };
                for x in xs {
                    let value = v.value(x, view);
                    let margin = ctx.generator(vspec, model, x)? + cert.alpha * value;
                    generator_margins.push(margin);
                    let r = x.iter().map(|c| c * c).sum::<f64>().sqrt();
                    for (kind, lhs, rhs) in [
                        (MarginKind::Generator, margin, 0.0),
                        (MarginKind::LowerSandwich, g1.eval(r), value),
                        (MarginKind::UpperSandwich, value, g2.eval(r)),
                    ] {
                        records.push(MarginRecord {
                            kind,
                            measure_index: idx,
                            point: Some(x.clone()),
                            lhs,
                            rhs,
                        });
                    }
                }
            }
        }
    }

    let violations = records.iter().filter(|r| !r.holds()).count();
    let worst_gen = records
        .iter()
        .filter(|r| r.kind == MarginKind::Generator)
        .max_by(|a, b| a.lhs.total_cmp(&b.lhs))
        .cloned();
    let mut sorted: Vec<&MarginRecord> = records.iter().collect();
    sorted.sort_by(|a, b| b.excess().total_cmp(&a.excess()));
    let worst_excess = sorted.first().map_or(f64::NEG_INFINITY, |r| r.excess());
    let vacuous = cert.is_vacuous();
    Ok(CertificateReport {
        mode: cert.mode,
        pass: violations == 0 && !vacuous,
        vacuous,
        worst_margin: worst_gen.as_ref().map_or(f64::NEG_INFINITY, |r| r.lhs),
        worst_location: worst_gen,
        worst_excess,
        n_samples: generator_margins.len(),
        seed,
        violations,
        worst: sorted.into_iter().take(ECHO).cloned().collect(),
        generator_margins,
    })
}

fn integral_of_v(vspec: &LyapunovSpec, view: &MeasureView<'_>) -> f64 {
    let terms: Vec<f64> = view
        .measure()
        .atoms()
        .map(|(x, w)| w * vspec.functional().value(x, view))
        .collect();
    pairwise_sum(&terms)
}
