//! Finite-difference validation of user-supplied derivative fields.
//!
//! The Lions derivative is checked through the empirical lift
//! `V(x; x₁..x_N) = v(x, Σ w_j δ_{x_j})`, for which
//! `∂V/∂x_{j,k} = w_j (∂_μv)_k(x, μ)(x_j)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{EmpiricalMeasure, MeasureView};
use crate::model::AuditStatus;

use super::LyapunovSpec;

/// Default pass threshold on the relative error of every field.
pub const DERIVATIVE_TOLERANCE: f64 = 1e-5;
/// Tolerance on `|H − Hᵀ|`.
const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// Errors of one derivative field. Relative errors are measured against
/// `max(1, |analytic|)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FieldCheck {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Largest finite-difference magnitude seen.
    pub max_fd_magnitude: f64,
    pub comparisons: usize,
    pub pass: bool,
}

impl FieldCheck {
    fn record(&mut self, fd: f64, analytic: f64) {
        let abs = (fd - analytic).abs();
        self.max_abs_error = self.max_abs_error.max(abs);
        self.max_rel_error = self.max_rel_error.max(abs / analytic.abs().max(1.0));
        self.max_fd_magnitude = self.max_fd_magnitude.max(fd.abs());
        self.comparisons += 1;
    }

    fn finish(&mut self, tol: f64) {
        self.pass = self.max_rel_error <= tol;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivativeReport {
    pub label: String,
    pub n_points: usize,
    pub tolerance: f64,
    pub grad_x: FieldCheck,
    pub hess_x: FieldCheck,
    pub lions: FieldCheck,
    pub lions_jac: FieldCheck,
    pub max_hess_asymmetry: f64,
    pub pass: bool,
    /// Regularity-class membership is only sampled, never proven.
    pub class_membership: AuditStatus,
}

fn step_for(x: f64, h: Option<f64>) -> f64 {
    h.unwrap_or(1e-4) * x.abs().max(1.0)
}

/// Compares analytic derivative fields with central finite differences at
/// each `(x, μ)`. The step at a coordinate `c` is `h·max(1, |c|)`; `h`
/// defaults to `1e-4`. Every measure needs at least two atoms.
pub fn validate_derivatives(
    vspec: &LyapunovSpec,
    points: &[(Vec<f64>, EmpiricalMeasure)],
    h: Option<f64>,
) -> Result<DerivativeReport> {
    if let Some(h) = h {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::usage(format!("finite-difference step must be positive, got {h}")));
        }
    }
    let d = vspec.dim();
    let v = vspec.functional();
    let mut grad = FieldCheck::default();
    let mut hess = FieldCheck::default();
    let mut lions = FieldCheck::default();
    let mut jac = FieldCheck::default();
    let mut asym: f64 = 0.0;

    for (x, mu) in points {
        if mu.len() < 2 {
            return Err(Error::usage("derivative validation needs measures with at least two atoms"));
        }
        let view = MeasureView::new(mu);
        vspec.check(x, &view)?;
        let value_at = |y: &[f64]| {
            let r = v.value(y, &view);
            if r.is_finite() {
                Ok(r)
            } else {
                Err(Error::numeric("value", format!("v is {r} at x = {y:?}")))
            }
        };

        let mut g = vec![0.0; d];
        v.grad_x(x, &view, &mut g);
        let mut hx = vec![0.0; d * d];
        v.hess_x(x, &view, &mut hx);
        for i in 0..d {
            for j in 0..i {
                asym = asym.max((hx[i * d + j] - hx[j * d + i]).abs());
            }
        }

        let f0 = value_at(x)?;
        let mut xp = x.clone();
        for i in 0..d {
            let hi = step_for(x[i], h);
            xp[i] = x[i] + hi;
            let fp = value_at(&xp)?;
            xp[i] = x[i] - hi;
            let fm = value_at(&xp)?;
            xp[i] = x[i];
            grad.record((fp - fm) / (2.0 * hi), g[i]);
            hess.record((fp - 2.0 * f0 + fm) / (hi * hi), hx[i * d + i]);
            for j in 0..i {
                let hj = step_for(x[j], h);
                let mut corner = |si: f64, sj: f64| {
                    xp[i] = x[i] + si * hi;
                    xp[j] = x[j] + sj * hj;
                    let r = value_at(&xp);
                    xp[i] = x[i];
                    xp[j] = x[j];
                    r
                };
                let fd = (corner(1.0, 1.0)? - corner(1.0, -1.0)? - corner(-1.0, 1.0)? + corner(-1.0, -1.0)?)
                    / (4.0 * hi * hj);
                hess.record(fd, hx[i * d + j]);
                hess.record(fd, hx[j * d + i]);
            }
        }

        // Lions derivative through the lift.
        let weights = mu.weights().to_vec();
        let mut lifted = mu.points_flat().to_vec();
        let mut analytic = vec![0.0; d];
        let mut analytic_jac = vec![0.0; d * d];
        let mut l_plus = vec![0.0; d];
        let mut l_minus = vec![0.0; d];
        for j in 0..mu.len() {
            let yj = mu.point(j).to_vec();
            v.lions(x, &view, &yj, &mut analytic);
            v.lions_jac(x, &view, &yj, &mut analytic_jac);
            for k in 0..d {
                let idx = j * d + k;
                let hk = step_for(yj[k], h);
                let mut at = |shift: f64| -> Result<f64> {
                    lifted[idx] = yj[k] + shift;
                    let m = EmpiricalMeasure::from_flat(d, lifted.clone(), weights.clone())?;
                    lifted[idx] = yj[k];
                    let r = v.value(x, &MeasureView::new(&m));
                    if r.is_finite() {
                        Ok(r)
                    } else {
                        Err(Error::numeric("lions", format!("lifted v is {r}")))
                    }
                };
                let dv = (at(hk)? - at(-hk)?) / (2.0 * hk);
                lions.record(dv / weights[j], analytic[k]);

                // ∂_{y_k} of the Lions field at fixed μ.
                let mut y = yj.clone();
                y[k] = yj[k] + hk;
                v.lions(x, &view, &y, &mut l_plus);
                y[k] = yj[k] - hk;
                v.lions(x, &view, &y, &mut l_minus);
                for c in 0..d {
                    let fd = (l_plus[c] - l_minus[c]) / (2.0 * hk);
                    if !fd.is_finite() {
                        return Err(Error::numeric("lions_jac", format!("difference is {fd}")));
                    }
                    jac.record(fd, analytic_jac[k * d + c]);
                }
            }
        }
    }

    let tol = DERIVATIVE_TOLERANCE;
    for f in [&mut grad, &mut hess, &mut lions, &mut jac] {
        f.finish(tol);
    }
    let pass = grad.pass && hess.pass && lions.pass && jac.pass && asym <= SYMMETRY_TOLERANCE;
    Ok(DerivativeReport {
        label: vspec.label().to_string(),
        n_points: points.len(),
        tolerance: tol,
        grad_x: grad,
        hess_x: hess,
        lions,
        lions_jac: jac,
        max_hess_asymmetry: asym,
        pass,
        class_membership: AuditStatus::Indicative,
    })
}
