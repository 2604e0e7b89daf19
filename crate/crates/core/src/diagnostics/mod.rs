//! Verdicts from path ensembles: moment and Lyapunov curves, decay envelopes,
//! supermartingale and Itô-consistency checks, exit and crossing statistics.
//!
//! Every estimate is a mean across replicas, which are the only independent
//! unit; standard errors are across replicas and verdicts allow 3 of them.
//! Reductions use pairwise summation in a fixed order, so results do not
//! depend on the thread count.

mod ito;
mod stability;

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lyapunov::{LyapunovSpec, StabilityCertificate};
use crate::measure::{EmpiricalMeasure, MeasureView};
use crate::numeric::{mean_and_se, pairwise_sum};
use crate::simulate::{PathEnsemble, SimConfig};

pub use ito::{fit_ito_tolerance, ito_consistency, ItoAccumulator, ItoReport, ItoSeries, ItoTolerance};
pub use stability::{
    as_stability_report, crossing_count, ConvergedFraction, CrossingReport, EscapeFraction, StabilityReport,
    StabilityThresholds,
};

/// Number of standard errors a verdict tolerates.
pub const VERDICT_SE: f64 = 3.0;

/// Largest `dt · record_stride` at which sampled-grid crossing detection is
/// considered reliable.
pub const MAX_RECORD_SPACING: f64 = 0.1;

/// An estimated curve `t ↦ E f(X_t, μ_t)` with standard errors across
/// replicas. `se` is absent when fewer than two replicas completed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentCurve {
    pub label: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub se: Option<Vec<f64>>,
    pub n_replicas: usize,
}

impl MomentCurve {
    /// Standard error at index `k`, zero when absent.
    pub fn se_at(&self, k: usize) -> f64 {
        self.se.as_ref().map_or(0.0, |s| s[k])
    }
}

/// Per completed replica, the particle average of `f` at every recorded
/// time (replica × time).
fn replica_series<F>(ens: &PathEnsemble, f: F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[f64], &mut Vec<f64>) -> Result<()> + Sync,
{
    let completed = ens.completed();
    if completed.is_empty() {
        return Err(Error::structural("ensemble has no completed replica"));
    }
    let n = ens.n_particles() as f64;
    completed
        .par_iter()
        .map(|&r| {
            let mut vals = Vec::with_capacity(ens.n_particles());
            (0..ens.n_frames(r))
                .map(|k| {
                    vals.clear();
                    f(ens.frame(r, k), &mut vals)?;
                    Ok(pairwise_sum(&vals) / n)
                })
                .collect()
        })
        .collect()
}

fn curve_from_series(label: String, times: &[f64], series: &[Vec<f64>]) -> MomentCurve {
    let mut values = Vec::with_capacity(times.len());
    let mut se = Vec::with_capacity(times.len());
    let mut column = Vec::with_capacity(series.len());
    for k in 0..times.len() {
        column.clear();
        column.extend(series.iter().map(|s| s[k]));
        let (m, e) = mean_and_se(&column);
        values.push(m);
        se.push(e);
    }
    MomentCurve {
        label,
        times: times.to_vec(),
        values,
        se: se.into_iter().collect(),
        n_replicas: series.len(),
    }
}

/// `E|X_t|^p`: within-replica particle mean, then mean and standard error
/// across completed replicas.
pub fn moment_curve(ens: &PathEnsemble, p: u32) -> Result<MomentCurve> {
    if p == 0 {
        return Err(Error::usage("moment order must be positive"));
    }
    let d = ens.dim();
    let series = replica_series(ens, |frame, out| {
        out.extend(frame.chunks_exact(d).map(|x| {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            if p % 2 == 0 {
                r2.powi(p as i32 / 2)
            } else {
                r2.sqrt().powi(p as i32)
            }
        }));
        Ok(())
    })?;
    Ok(curve_from_series(format!("E|X|^{p}"), ens.times(), &series))
}

fn lyapunov_series(ens: &PathEnsemble, vspec: &LyapunovSpec) -> Result<Vec<Vec<f64>>> {
    if vspec.dim() != ens.dim() {
        return Err(Error::structural(format!(
            "{} has dim {}, ensemble has dim {}",
            vspec.label(),
            vspec.dim(),
            ens.dim()
        )));
    }
    let d = ens.dim();
    let v = vspec.functional();
    replica_series(ens, |frame, out| {
        let mu = EmpiricalMeasure::uniform_trusted(d, frame.to_vec());
        let view = MeasureView::new(&mu);
        for x in frame.chunks_exact(d) {
            let val = v.value(x, &view);
            if !val.is_finite() {
                return Err(Error::numeric("value", format!("{} is {val} at x = {x:?}", vspec.label())));
            }
            out.push(val);
        }
        Ok(())
    })
}

/// `E v(X_t, μ_t)` with `μ_t` the within-replica empirical measure.
pub fn lyapunov_curve(ens: &PathEnsemble, vspec: &LyapunovSpec) -> Result<MomentCurve> {
    let series = lyapunov_series(ens, vspec)?;
    Ok(curve_from_series(format!("E {}", vspec.label()), ens.times(), &series))
}

/// Least-squares line through `(t, ln value)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub alpha_hat: f64,
    pub c_hat: f64,
    /// Coefficient of determination; 0 when the values are constant.
    pub r2: f64,
    pub n_points: usize,
}

/// Fits `value ≈ c·e^{−αt}` on `window`. Advisory only: with an
/// ultimate-boundedness offset the fitted rate is biased low, so envelope
/// verdicts come from [`bound_check`].
pub fn fit_decay_rate(curve: &MomentCurve, window: (f64, f64)) -> Result<DecayFit> {
    let (lo, hi) = window;
    let pts: Vec<(f64, f64)> = curve
        .times
        .iter()
        .zip(&curve.values)
        .filter(|(&t, _)| t >= lo && t <= hi)
        .map(|(&t, &v)| (t, v))
        .collect();
    if pts.len() < 3 {
        return Err(Error::Fit(format!(
            "window [{lo}, {hi}] holds {} points; need at least 3",
            pts.len()
        )));
    }
    if let Some(&(t, v)) = pts.iter().find(|(_, v)| !(*v > 0.0)) {
        return Err(Error::Fit(format!(
            "value {v} at t = {t} is not positive; a curve that settles near zero or a band \
             is better judged by an ultimate-boundedness envelope (bound_check) than by a rate fit"
        )));
    }
    let n = pts.len() as f64;
    let ts: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    if ys.iter().all(|&y| y == ys[0]) {
        return Ok(DecayFit {
            alpha_hat: 0.0,
            c_hat: pts[0].1,
            r2: 0.0,
            n_points: pts.len(),
        });
    }
    let t_bar = pairwise_sum(&ts) / n;
    let y_bar = pairwise_sum(&ys) / n;
    let sxy: Vec<f64> = ts.iter().zip(&ys).map(|(t, y)| (t - t_bar) * (y - y_bar)).collect();
    let sxx: Vec<f64> = ts.iter().map(|t| (t - t_bar) * (t - t_bar)).collect();
    let slope = pairwise_sum(&sxy) / pairwise_sum(&sxx);
    let intercept = y_bar - slope * t_bar;
    let res: Vec<f64> = ts.iter().zip(&ys).map(|(t, y)| (y - intercept - slope * t).powi(2)).collect();
    let tot: Vec<f64> = ys.iter().map(|y| (y - y_bar).powi(2)).collect();
    let (ss_res, ss_tot) = (pairwise_sum(&res), pairwise_sum(&tot));
    Ok(DecayFit {
        alpha_hat: -slope,
        c_hat: intercept.exp(),
        r2: if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 0.0 },
        n_points: pts.len(),
    })
}

/// Comparison of an estimated second-moment curve with the envelope
/// `K e^{−αt} m₂(0) + offset`, `K = a₂/a₁`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeVerdict {
    pub factor: f64,
    pub rate: f64,
    pub offset: f64,
    pub init_m2: f64,
    pub times: Vec<f64>,
    pub envelope: Vec<f64>,
    /// `envelope − estimate` per time.
    pub margins: Vec<f64>,
    /// `margin + 3·SE`; negative entries are violations.
    pub slack: Vec<f64>,
    pub pass: bool,
    /// The certificate's lower constant is nonpositive, so no envelope exists.
    pub vacuous: bool,
    pub worst_index: usize,
    pub worst_slack: f64,
    pub min_margin: f64,
    pub n_violations: usize,
}

/// Envelope verdict: pass iff every margin is at least `−3·SE`. A vacuous
/// certificate never passes.
pub fn bound_check(curve: &MomentCurve, cert: &StabilityCertificate, init_m2: f64) -> Result<EnvelopeVerdict> {
    if !(init_m2 >= 0.0) || !init_m2.is_finite() {
        return Err(Error::usage(format!("initial second moment must be finite and nonnegative, got {init_m2}")));
    }
    let vacuous = cert.is_vacuous();
    let (factor, offset) = (cert.envelope_factor(), cert.envelope_offset());
    let envelope: Vec<f64> = curve.times.iter().map(|&t| cert.envelope(t, init_m2)).collect();
    let margins: Vec<f64> = envelope.iter().zip(&curve.values).map(|(e, v)| e - v).collect();
    let slack: Vec<f64> = margins
        .iter()
        .enumerate()
        .map(|(k, m)| m + VERDICT_SE * curve.se_at(k))
        .collect();
    let (worst_index, worst_slack) = slack
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (k, s)| if s < acc.1 { (k, s) } else { acc });
    let n_violations = slack.iter().filter(|s| !(**s >= 0.0)).count();
    Ok(EnvelopeVerdict {
        factor,
        rate: cert.alpha,
        offset,
        init_m2,
        times: curve.times.clone(),
        min_margin: margins.iter().copied().fold(f64::INFINITY, f64::min),
        envelope,
        margins,
        slack,
        pass: !vacuous && n_violations == 0,
        vacuous,
        worst_index,
        worst_slack,
        n_violations,
    })
}

/// Monotonicity of `t ↦ e^{αt} E v(X_t, μ_t)` between consecutive times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupermartingaleVerdict {
    pub label: String,
    pub alpha: f64,
    pub times: Vec<f64>,
    /// `e^{αt} Ê v` per time.
    pub weighted: Vec<f64>,
    /// Per step, `increment − 3·SE(increment)`; positive entries violate.
    pub excess: Vec<f64>,
    pub pass: bool,
    pub worst_index: usize,
    pub worst_excess: f64,
}

/// Relative allowance for rounding in the weighted sequence.
const ROUNDOFF: f64 = 1e-12;

/// Checks that `e^{αt} Ê v` does not increase by more than 3 standard
/// errors of the paired per-replica increment between recorded times.
pub fn supermartingale_check(ens: &PathEnsemble, vspec: &LyapunovSpec, alpha: f64) -> Result<SupermartingaleVerdict> {
    if !alpha.is_finite() {
        return Err(Error::usage("alpha must be finite"));
    }
    let series = lyapunov_series(ens, vspec)?;
    let times = ens.times();
    let scale: Vec<f64> = times.iter().map(|&t| (alpha * t).exp()).collect();
    let weighted_series: Vec<Vec<f64>> = series
        .iter()
        .map(|s| s.iter().zip(&scale).map(|(v, w)| v * w).collect())
        .collect();
    let weighted = curve_from_series(String::new(), times, &weighted_series).values;
    let mut excess = Vec::with_capacity(times.len().saturating_sub(1));
    let mut incs = Vec::with_capacity(series.len());
    for k in 1..times.len() {
        incs.clear();
        incs.extend(weighted_series.iter().map(|s| s[k] - s[k - 1]));
        let (m, se) = mean_and_se(&incs);
        let allowance = ROUNDOFF * weighted[k].abs().max(weighted[k - 1].abs());
        excess.push(m - VERDICT_SE * se.unwrap_or(0.0) - allowance);
    }
    let (worst_index, worst_excess) = excess
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (k, e)| if e > acc.1 { (k + 1, e) } else { acc });
    Ok(SupermartingaleVerdict {
        label: vspec.label().to_string(),
        alpha,
        times: times.to_vec(),
        weighted,
        pass: excess.iter().all(|e| *e <= 0.0),
        excess,
        worst_index,
        worst_excess,
    })
}

/// Guidance when the recorded grid is too coarse for crossing detection.
pub fn stride_guidance(config: &SimConfig) -> Option<String> {
    let spacing = config.dt * config.record_stride as f64;
    (spacing > MAX_RECORD_SPACING).then(|| {
        let stride = ((MAX_RECORD_SPACING / config.dt).floor() as usize).max(1);
        format!(
            "recorded spacing dt·record_stride = {spacing} exceeds {MAX_RECORD_SPACING}; excursions between \
             recorded times are invisible to crossing and exit statistics; use record_stride ≤ {stride}"
        )
    })
}

/// Writes `t,value,se,envelope`; `se` is empty when absent and `envelope`
/// when not supplied.
pub fn write_curve_csv<W: Write>(curve: &MomentCurve, envelope: Option<&[f64]>, mut w: W) -> Result<()> {
    if envelope.is_some_and(|e| e.len() != curve.times.len()) {
        return Err(Error::structural("envelope length differs from the curve grid"));
    }
    writeln!(w, "t,value,se,envelope")?;
    for (k, (t, v)) in curve.times.iter().zip(&curve.values).enumerate() {
        write!(w, "{t},{v},")?;
        if let Some(se) = &curve.se {
            write!(w, "{}", se[k])?;
        }
        write!(w, ",")?;
        if let Some(e) = envelope {
            write!(w, "{}", e[k])?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;
    use crate::simulate::{run_ensemble, InitLaw};

    fn constant_ensemble(values: &[f64], n: usize, times: usize) -> PathEnsemble {
        let grid = (0..times).map(|k| k as f64 * 0.1).collect();
        let reps = values.iter().map(|&v| vec![v; n * times]).collect();
        PathEnsemble::from_frames(1, n, grid, reps).unwrap()
    }

    fn curve(times: &[f64], values: Vec<f64>) -> MomentCurve {
        MomentCurve {
            label: "fixture".into(),
            times: times.to_vec(),
            values,
            se: None,
            n_replicas: 1,
        }
    }

    #[test]
    fn zero_ensemble_gives_zero_curve() {
        let c = moment_curve(&constant_ensemble(&[0.0, 0.0], 3, 4), 2).unwrap();
        assert!(c.values.iter().all(|v| *v == 0.0));
        assert!(c.se.unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn two_replica_hand_arithmetic() {
        let c = moment_curve(&constant_ensemble(&[0.0, 2.0], 5, 3), 1).unwrap();
        assert_eq!(c.values, vec![1.0; 3]);
        assert_eq!(c.se.unwrap(), vec![1.0; 3]);
    }

    #[test]
    fn single_replica_has_absent_errors() {
        let c = moment_curve(&constant_ensemble(&[1.5], 2, 3), 2).unwrap();
        assert_eq!(c.se, None);
        assert_eq!(c.values, vec![2.25; 3]);
    }

    #[test]
    fn deterministic_decay_matches_ode() {
        let cfg = SimConfig::new(4, 2, 1e-3, 2.0, 1, InitLaw::point(&[1.0])).with_stride(100);
        let ens = run_ensemble(&ModelSpec::meanfield_ou(0.25, 0.0), &cfg).unwrap();
        let c = moment_curve(&ens, 2).unwrap();
        for (t, v) in c.times.iter().zip(&c.values) {
            assert!((v - (-1.5 * t).exp()).abs() < 2e-3, "t={t}: {v}");
        }
    }

    #[test]
    fn quad_curve_is_moment_curve() {
        let cfg = SimConfig::new(50, 3, 0.01, 0.5, 9, InitLaw::gaussian(1, 0.3, 1.0)).with_stride(5);
        let ens = run_ensemble(&ModelSpec::example61(0.25, 10), &cfg).unwrap();
        let a = lyapunov_curve(&ens, &LyapunovSpec::quad()).unwrap();
        let b = moment_curve(&ens, 2).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.se, b.se);
    }

    #[test]
    fn mean_centered_on_point_mass() {
        let c = lyapunov_curve(&constant_ensemble(&[1.0], 4, 3), &LyapunovSpec::mean_centered(0.25)).unwrap();
        assert!(c.values.iter().all(|v| (v - 0.5625).abs() < 1e-15));
        let z = lyapunov_curve(&constant_ensemble(&[0.0], 4, 3), &LyapunovSpec::mean_centered(0.25)).unwrap();
        assert!(z.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn decay_fit_examples() {
        let ts: Vec<f64> = (0..20).map(|k| k as f64 * 0.1).collect();
        let f = fit_decay_rate(&curve(&ts, ts.iter().map(|t| 3.0 * (-1.5 * t).exp()).collect()), (0.0, 2.0)).unwrap();
        assert!((f.alpha_hat - 1.5).abs() < 1e-12 && (f.c_hat - 3.0).abs() < 1e-12 && (f.r2 - 1.0).abs() < 1e-12);
        let f = fit_decay_rate(&curve(&ts, vec![2.0; 20]), (0.0, 2.0)).unwrap();
        assert_eq!((f.alpha_hat, f.c_hat, f.r2), (0.0, 2.0, 0.0));
        let f = fit_decay_rate(&curve(&ts, ts.iter().map(|t| (-t).exp() + 1.8).collect()), (0.0, 1.0)).unwrap();
        assert!(f.alpha_hat < 1.0);
        let mut v: Vec<f64> = vec![1.0; 20];
        v[3] = 0.0;
        assert!(matches!(fit_decay_rate(&curve(&ts, v), (0.0, 2.0)), Err(Error::Fit(_))));
        assert!(fit_decay_rate(&curve(&ts, vec![1.0; 20]), (0.0, 0.15)).is_err());
    }

    #[test]
    fn envelope_examples() {
        let ts: Vec<f64> = (0..100).map(|k| k as f64 * 0.1).collect();
        let cert = StabilityCertificate::example61(0.25, 50).unwrap();
        let v = bound_check(&curve(&ts, vec![0.0; 100]), &cert, 1.0).unwrap();
        assert!(v.pass);
        assert!((v.factor - 34.0 / 7.0).abs() < 1e-14);
        let zeta = crate::numeric::zeta_partial(3.0, 50);
        assert!((v.offset - 32.0 * zeta / 21.0).abs() < 1e-14);
        assert!((v.envelope[0] - (34.0 / 7.0 + 32.0 * zeta / 21.0)).abs() < 1e-13);
        let v = bound_check(&curve(&ts, vec![10.0; 100]), &cert, 1.0).unwrap();
        assert!(!v.pass && v.worst_index == 99 && v.n_violations > 0);
        let vac = StabilityCertificate::example61(0.5, 5).unwrap();
        let v = bound_check(&curve(&ts, vec![0.0; 100]), &vac, 1.0).unwrap();
        assert!(v.vacuous && !v.pass);
        assert!(bound_check(&curve(&ts, vec![0.0; 100]), &cert, -1.0).is_err());
    }

    #[test]
    fn envelope_allows_three_standard_errors() {
        let ts = [0.0, 1.0];
        let cert = StabilityCertificate::h21(1.0, 1.0, 1.0).unwrap();
        let mut c = curve(&ts, vec![1.0 + 0.29, (-1.0f64).exp() + 0.29]);
        c.se = Some(vec![0.1, 0.1]);
        assert!(bound_check(&c, &cert, 1.0).unwrap().pass);
        c.se = Some(vec![0.1, 0.09]);
        assert!(!bound_check(&c, &cert, 1.0).unwrap().pass);
    }

    #[test]
    fn deterministic_ou_passes_exact_rate_envelope() {
        let m = 0.25;
        let cfg = SimConfig::new(3, 2, 1e-2, 5.0, 1, InitLaw::point(&[1.5])).with_stride(10);
        let ens = run_ensemble(&ModelSpec::meanfield_ou(m, 0.0), &cfg).unwrap();
        let c = moment_curve(&ens, 2).unwrap();
        let cert = StabilityCertificate::h21(2.0 * (1.0 - m) - 1e-9, 1.0, 1.0).unwrap();
        assert!(bound_check(&c, &cert, 2.25).unwrap().pass);
        let too_fast = StabilityCertificate::h21(2.0 * (1.0 - m) + 0.05, 1.0, 1.0).unwrap();
        assert!(!bound_check(&c, &too_fast, 2.25).unwrap().pass);
    }

    #[test]
    fn supermartingale_examples() {
        let cfg = SimConfig::new(2, 2, 1e-2, 2.0, 1, InitLaw::point(&[2.0])).with_stride(10);
        let det = run_ensemble(&ModelSpec::contractive(0.0), &cfg).unwrap();
        let s = supermartingale_check(&det, &LyapunovSpec::quad(), 2.0).unwrap();
        assert!(s.pass, "{:?}", s.excess);
        let grow = run_ensemble(&ModelSpec::linear(1.0, 0.0, 1), &cfg).unwrap();
        let s = supermartingale_check(&grow, &LyapunovSpec::quad(), 0.0).unwrap();
        assert!(!s.pass && s.worst_excess > 0.0);
    }

    #[test]
    fn exact_constant_sequence_passes() {
        // e^{2t} · e^{−2t}x₀² built exactly.
        let ts: Vec<f64> = (0..11).map(|k| k as f64 * 0.1).collect();
        let frames: Vec<f64> = ts.iter().map(|t| 2.0 * (-t).exp()).collect();
        let ens = PathEnsemble::from_frames(1, 1, ts, vec![frames.clone(), frames]).unwrap();
        assert!(supermartingale_check(&ens, &LyapunovSpec::quad(), 2.0).unwrap().pass);
    }

    #[test]
    fn curve_csv_columns() {
        let mut c = curve(&[0.0, 0.5], vec![1.0, 0.5]);
        let mut buf = Vec::new();
        write_curve_csv(&c, Some(&[2.0, 1.0]), &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,value,se,envelope\n0,1,,2\n0.5,0.5,,1\n");
        c.se = Some(vec![0.1, 0.2]);
        let mut buf = Vec::new();
        write_curve_csv(&c, None, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,value,se,envelope\n0,1,0.1,\n0.5,0.5,0.2,\n");
    }

    #[test]
    fn guidance_threshold() {
        let c = SimConfig::new(1, 1, 0.01, 1.0, 1, InitLaw::point(&[0.0]));
        assert!(stride_guidance(&c.clone().with_stride(10)).is_none());
        assert!(stride_guidance(&c.with_stride(11)).unwrap().contains("record_stride ≤ 10"));
    }
}
