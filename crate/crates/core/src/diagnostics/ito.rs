//! Expectation form of the Itô formula along simulated paths:
//! `Ê v(X_t, μ_t) − Ê v(X_0, μ_0) ≈ ∫₀ᵗ Ê 𝓛^μv ds` (trapezoid rule on the
//! recorded grid).
//!
//! The raw difference carries the Monte Carlo noise of the martingale term.
//! When frames are consecutive steps, each step also accumulates the
//! zero-mean control variate
//! `∇v·ΔM + ½ tr(∇²v (ΔM ΔMᵀ − σσ* dt))` with `ΔM = ΔX − b dt`,
//! whose subtraction removes that noise to leading order and leaves the
//! time-discretization bias visible.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lyapunov::{GeneratorContext, LyapunovSpec};
use crate::measure::{EmpiricalMeasure, MeasureView};
use crate::model::ModelSpec;
use crate::numeric::{mean_and_se, pairwise_sum};
use crate::simulate::{PathEnsemble, StepObserver};

/// Per-replica running sums on the recorded grid.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ItoSeries {
    pub times: Vec<f64>,
    /// Particle mean of `v(X_t, μ_t)`.
    pub v_mean: Vec<f64>,
    /// Particle mean of `𝓛^μv(X_t, μ_t)`.
    pub generator_mean: Vec<f64>,
    /// Cumulative particle-mean control variate; absent once a gap between
    /// frames is not a single step.
    pub control_variate: Option<Vec<f64>>,
}

impl ItoSeries {
    /// `(v̄(t) − v̄(0)) − ∫₀ᵗ 𝓛v̄`, trapezoid rule.
    pub fn discrepancy(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.times.len());
        let mut integral = 0.0;
        for k in 0..self.times.len() {
            if k > 0 {
                let h = self.times[k] - self.times[k - 1];
                integral += 0.5 * h * (self.generator_mean[k - 1] + self.generator_mean[k]);
            }
            out.push((self.v_mean[k] - self.v_mean[0]) - integral);
        }
        out
    }

    /// Discrepancy minus the cumulative control variate.
    pub fn corrected(&self) -> Option<Vec<f64>> {
        let cv = self.control_variate.as_ref()?;
        Some(self.discrepancy().iter().zip(cv).map(|(d, c)| d - c).collect())
    }
}

/// Coefficient values at the previous frame, needed for the next step's
/// control variate.
struct Pending {
    step: usize,
    states: Vec<f64>,
    drift: Vec<f64>,
    gram: Vec<f64>,
    grad: Vec<f64>,
    hess: Vec<f64>,
}

/// Streaming observer that accumulates an [`ItoSeries`] for one replica
/// without storing frames.
pub struct ItoAccumulator {
    vspec: LyapunovSpec,
    model: ModelSpec,
    dt: Option<f64>,
    pending: Option<Pending>,
    series: ItoSeries,
    scratch: Vec<f64>,
}

impl ItoAccumulator {
    /// `dt` is the simulation step; without it no control variate is formed.
    pub fn new(vspec: &LyapunovSpec, model: &ModelSpec, dt: Option<f64>) -> Result<Self> {
        if vspec.dim() != model.dim_state() {
            return Err(Error::structural(format!(
                "{} has dim {}, {} has state dim {}",
                vspec.label(),
                vspec.dim(),
                model.label(),
                model.dim_state()
            )));
        }
        Ok(Self {
            vspec: vspec.clone(),
            model: model.clone(),
            dt,
            pending: None,
            series: ItoSeries {
                control_variate: dt.map(|_| Vec::new()),
                ..Default::default()
            },
            scratch: Vec::new(),
        })
    }

    pub fn series(&self) -> &ItoSeries {
        &self.series
    }

    pub fn into_series(self) -> ItoSeries {
        self.series
    }
}

/// Particle mean of the control variate over one step from `p` to `states`.
fn control_increment(scratch: &mut Vec<f64>, d: usize, p: &Pending, states: &[f64], dt: f64) -> f64 {
    scratch.clear();
    let mut dm = vec![0.0; d];
    for (i, (x0, x1)) in p.states.chunks_exact(d).zip(states.chunks_exact(d)).enumerate() {
        let b = &p.drift[i * d..(i + 1) * d];
        let g = &p.gram[i * d * d..(i + 1) * d * d];
        let grad = &p.grad[i * d..(i + 1) * d];
        let hess = &p.hess[i * d * d..(i + 1) * d * d];
        for a in 0..d {
            dm[a] = x1[a] - x0[a] - b[a] * dt;
        }
        let mut cv: f64 = grad.iter().zip(&dm).map(|(g, m)| g * m).sum();
        let mut quad = 0.0;
        for a in 0..d {
            for c in 0..d {
                quad += hess[a * d + c] * (dm[a] * dm[c] - g[a * d + c] * dt);
            }
        }
        cv += 0.5 * quad;
        scratch.push(cv);
    }
    pairwise_sum(scratch) / scratch.len() as f64
}

impl StepObserver for ItoAccumulator {
    fn observe(&mut self, step: usize, time: f64, states: &[f64]) -> Result<()> {
        let d = self.model.dim_state();
        let n = states.len() / d;
        let mu = EmpiricalMeasure::uniform_trusted(d, states.to_vec());
        let view = MeasureView::new(&mu);
        let ctx = GeneratorContext::from_view(&self.vspec, &self.model, view)?;
        let v = self.vspec.functional();
        let view = ctx.view();

        let mut vals = Vec::with_capacity(n);
        let mut gens = Vec::with_capacity(n);
        for x in states.chunks_exact(d) {
            vals.push(v.value(x, view));
            gens.push(ctx.generator(&self.vspec, &self.model, x)?);
        }
        if let Some(bad) = vals.iter().find(|v| !v.is_finite()) {
            return Err(Error::numeric("value", format!("{} is {bad} at t = {time}", self.vspec.label())));
        }

        if let (Some(dt), Some(p)) = (self.dt, self.pending.take()) {
            if step == p.step + 1 {
                let inc = control_increment(&mut self.scratch, d, &p, states, dt);
                if let Some(cv) = self.series.control_variate.as_mut() {
                    let prev = cv.last().copied().unwrap_or(0.0);
                    cv.push(prev + inc);
                }
                self.pending = Some(p);
            } else {
                self.series.control_variate = None;
            }
        } else if let Some(cv) = self.series.control_variate.as_mut() {
            cv.push(0.0);
        }

        self.series.times.push(time);
        self.series.v_mean.push(pairwise_sum(&vals) / n as f64);
        self.series.generator_mean.push(pairwise_sum(&gens) / n as f64);

        if self.series.control_variate.is_some() {
            let coeffs = self.model.coefficients();
            let mut p = self.pending.take().unwrap_or(Pending {
                step,
                states: Vec::new(),
                drift: Vec::new(),
                gram: Vec::new(),
                grad: Vec::new(),
                hess: Vec::new(),
            });
            p.step = step;
            p.states.clear();
            p.states.extend_from_slice(states);
            p.drift.resize(n * d, 0.0);
            p.gram.resize(n * d * d, 0.0);
            p.grad.resize(n * d, 0.0);
            p.hess.resize(n * d * d, 0.0);
            for (i, x) in states.chunks_exact(d).enumerate() {
                coeffs.drift(x, view, &mut p.drift[i * d..(i + 1) * d]);
                coeffs.diffusion_gram(x, view, &mut p.gram[i * d * d..(i + 1) * d * d]);
                v.grad_x(x, view, &mut p.grad[i * d..(i + 1) * d]);
                v.hess_x(x, view, &mut p.hess[i * d * d..(i + 1) * d * d]);
            }
            self.pending = Some(p);
        }
        Ok(())
    }
}

/// Replica-level comparison of both sides of the identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItoReport {
    pub label: String,
    pub model: String,
    pub times: Vec<f64>,
    /// `Ê v(t) − Ê v(0)`.
    pub lhs: Vec<f64>,
    /// `∫₀ᵗ Ê 𝓛v`.
    pub rhs: Vec<f64>,
    pub discrepancy: Vec<f64>,
    pub discrepancy_se: Option<Vec<f64>>,
    pub max_abs_discrepancy: f64,
    pub worst_time: f64,
    /// Control-variate corrected discrepancy, when frames are single steps.
    pub corrected: Option<Vec<f64>>,
    pub corrected_se: Option<Vec<f64>>,
    pub max_abs_corrected: Option<f64>,
    /// Largest spacing of the recorded grid.
    pub grid_dt: f64,
    pub n_particles: usize,
    pub n_replicas: usize,
    pub tolerance: ItoTolerance,
}

/// Split of the worst discrepancy into a discretization part `c₁·dt` and a
/// statistical part `c₂/√(NM)`, the latter from 3 replica standard errors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItoTolerance {
    pub c1: f64,
    pub c2: f64,
    pub value: f64,
}

fn column_stats(series: &[Vec<f64>], k: usize) -> (f64, Option<f64>) {
    let col: Vec<f64> = series.iter().map(|s| s[k]).collect();
    mean_and_se(&col)
}

fn worst(values: &[f64]) -> (usize, f64) {
    values
        .iter()
        .map(|v| v.abs())
        .enumerate()
        .fold((0, 0.0), |acc, (k, v)| if v > acc.1 { (k, v) } else { acc })
}

impl ItoReport {
    /// Combines per-replica series recorded on a common grid.
    pub fn from_series(
        label: &str,
        model: &str,
        n_particles: usize,
        series: &[ItoSeries],
    ) -> Result<Self> {
        let first = series.first().ok_or_else(|| Error::structural("no replica series to combine"))?;
        let times = first.times.clone();
        if times.is_empty() || series.iter().any(|s| s.times != times) {
            return Err(Error::structural("replica series must share one nonempty grid"));
        }
        let nt = times.len();
        let lhs_series: Vec<Vec<f64>> = series
            .iter()
            .map(|s| s.v_mean.iter().map(|v| v - s.v_mean[0]).collect())
            .collect();
        let disc_series: Vec<Vec<f64>> = series.iter().map(ItoSeries::discrepancy).collect();
        let rhs_series: Vec<Vec<f64>> = lhs_series
            .iter()
            .zip(&disc_series)
            .map(|(l, d)| l.iter().zip(d).map(|(a, b)| a - b).collect())
            .collect();
        let corr_series: Option<Vec<Vec<f64>>> = series.iter().map(ItoSeries::corrected).collect();

        let mean_of = |s: &[Vec<f64>]| (0..nt).map(|k| column_stats(s, k).0).collect::<Vec<f64>>();
        let se_of = |s: &[Vec<f64>]| (0..nt).map(|k| column_stats(s, k).1).collect::<Option<Vec<f64>>>();

        let discrepancy = mean_of(&disc_series);
        let discrepancy_se = se_of(&disc_series);
        let (wk, max_abs) = worst(&discrepancy);
        let corrected = corr_series.as_deref().map(mean_of);
        let corrected_se = corr_series.as_deref().and_then(se_of);
        let max_abs_corrected = corrected.as_deref().map(|c| worst(c).1);

        let grid_dt = times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        let nm = (n_particles * series.len()) as f64;
        // The tolerance split uses the corrected series when available.
        let (basis, basis_se) = match (&corrected, &corrected_se) {
            (Some(c), se) => (c.clone(), se.clone()),
            (None, _) => (discrepancy.clone(), discrepancy_se.clone()),
        };
        let (bk, bval) = worst(&basis);
        let stat = super::VERDICT_SE * basis_se.as_ref().map_or(0.0, |s| s[bk]);
        let c2 = stat * nm.sqrt();
        let c1 = if grid_dt > 0.0 { (bval - stat).max(0.0) / grid_dt } else { 0.0 };
        Ok(Self {
            label: label.to_string(),
            model: model.to_string(),
            lhs: mean_of(&lhs_series),
            rhs: mean_of(&rhs_series),
            worst_time: times[wk],
            times,
            discrepancy,
            discrepancy_se,
            max_abs_discrepancy: max_abs,
            corrected,
            corrected_se,
            max_abs_corrected,
            grid_dt,
            n_particles,
            n_replicas: series.len(),
            tolerance: ItoTolerance {
                c1,
                c2,
                value: c1 * grid_dt + c2 / nm.sqrt(),
            },
        })
    }

    /// The discrepancy at the final time: corrected when available.
    pub fn final_discrepancy(&self) -> f64 {
        self.corrected
            .as_ref()
            .unwrap_or(&self.discrepancy)
            .last()
            .copied()
            .unwrap_or(0.0)
    }
}

/// Itô consistency on a stored ensemble. The control variate is formed when
/// the ensemble records every simulation step.
pub fn ito_consistency(ens: &PathEnsemble, vspec: &LyapunovSpec, model: &ModelSpec) -> Result<ItoReport> {
    if ens.dim() != model.dim_state() {
        return Err(Error::structural(format!(
            "ensemble dim {} differs from {} state dim {}",
            ens.dim(),
            model.label(),
            model.dim_state()
        )));
    }
    let sim = ens.config.as_ref().map(|c| (c.dt, c.record_stride));
    let dt = sim.filter(|&(_, stride)| stride == 1).map(|(dt, _)| dt);
    let completed = ens.completed();
    if completed.is_empty() {
        return Err(Error::structural("ensemble has no completed replica"));
    }
    let series = completed
        .par_iter()
        .map(|&r| {
            let mut acc = ItoAccumulator::new(vspec, model, dt)?;
            for (k, &t) in ens.times().iter().enumerate() {
                let step = match sim {
                    Some((dt, _)) => (t / dt).round() as usize,
                    None => k,
                };
                acc.observe(step, t, ens.frame(r, k))?;
            }
            Ok(acc.into_series())
        })
        .collect::<Result<Vec<_>>>()?;
    ItoReport::from_series(vspec.label(), model.label(), ens.n_particles(), &series)
}

/// Joint fit of `|discrepancy| ≈ c₁·dt + c₂/√(NM)` over several runs, by
/// nonnegative least squares on the two coefficients.
pub fn fit_ito_tolerance(reports: &[ItoReport]) -> Result<ItoTolerance> {
    if reports.is_empty() {
        return Err(Error::Fit("no reports to fit".into()));
    }
    let rows: Vec<(f64, f64, f64)> = reports
        .iter()
        .map(|r| {
            let nm = (r.n_particles * r.n_replicas) as f64;
            let y = r.max_abs_corrected.unwrap_or(r.max_abs_discrepancy);
            (r.grid_dt, 1.0 / nm.sqrt(), y)
        })
        .collect();
    let one = |col: usize| -> f64 {
        let num: f64 = rows.iter().map(|r| [r.0, r.1][col] * r.2).sum();
        let den: f64 = rows.iter().map(|r| [r.0, r.1][col].powi(2)).sum();
        if den > 0.0 {
            (num / den).max(0.0)
        } else {
            0.0
        }
    };
    let (s11, s22, s12) = rows.iter().fold((0.0, 0.0, 0.0), |a, r| (a.0 + r.0 * r.0, a.1 + r.1 * r.1, a.2 + r.0 * r.1));
    let (y1, y2) = rows.iter().fold((0.0, 0.0), |a, r| (a.0 + r.0 * r.2, a.1 + r.1 * r.2));
    let det = s11 * s22 - s12 * s12;
    let (c1, c2) = if det.abs() > 1e-12 * (s11 * s22).max(f64::MIN_POSITIVE) {
        let c1 = (s22 * y1 - s12 * y2) / det;
        let c2 = (s11 * y2 - s12 * y1) / det;
        if c1 >= 0.0 && c2 >= 0.0 {
            (c1, c2)
        } else {
            best_single(&rows, one(0), one(1))
        }
    } else {
        best_single(&rows, one(0), one(1))
    };
    let value = rows.iter().map(|r| c1 * r.0 + c2 * r.1).fold(0.0, f64::max);
    Ok(ItoTolerance { c1, c2, value })
}

fn best_single(rows: &[(f64, f64, f64)], c1: f64, c2: f64) -> (f64, f64) {
    let sse = |a: f64, b: f64| rows.iter().map(|r| (r.2 - a * r.0 - b * r.1).powi(2)).sum::<f64>();
    if sse(c1, 0.0) <= sse(0.0, c2) {
        (c1, 0.0)
    } else {
        (0.0, c2)
    }
}
