//! Weighted empirical measures standing in for laws with finite second
//! moment, the quadratic-growth norm `∫(1+|x|)² dμ`, and a computable bracket
//! for the dual test-function metric `ρ`.
//!
//! `ρ` is a supremum over the unit ball of Lipschitz functions with quadratic
//! growth and cannot be evaluated exactly. Every such test function is
//! 1-Lipschitz, so `ρ ≤ W₁`; a finite certified dictionary of test functions
//! yields the lower side of the bracket.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::numeric::{inverse_normal_cdf, pairwise_sum};

/// Absolute tolerance on the total mass of a measure.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// A discrete probability measure `Σ w_i δ_{x_i}` on `ℝ^d`.
///
/// Points are stored row-major in one flat buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl EmpiricalMeasure {
    /// Builds a measure from a flat row-major point buffer and weights that
    /// must already sum to one.
    pub fn from_flat(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::structural("measure dimension must be positive"));
        }
        if points.is_empty() {
            return Err(Error::structural("measure needs at least one point"));
        }
        if points.len() % dim != 0 {
            return Err(Error::structural(format!(
                "point buffer of length {} is not a multiple of dim {dim}",
                points.len()
            )));
        }
        let n = points.len() / dim;
        if weights.len() != n {
            return Err(Error::structural(format!(
                "{} weights for {n} points",
                weights.len()
            )));
        }
        if let Some(i) = points.iter().position(|v| !v.is_finite()) {
            return Err(Error::structural(format!(
                "non-finite coordinate in point {}",
                i / dim
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::structural(format!("invalid weight {w}")));
        }
        let total = pairwise_sum(&weights);
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::structural(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(Self {
            dim,
            points,
            weights,
        })
    }

    /// Builds a measure from a list of points, checking that every point has
    /// the same length.
    pub fn new(points: &[Vec<f64>], weights: Vec<f64>) -> Result<Self> {
        let dim = points
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::structural("measure needs at least one point"))?;
        if let Some((i, p)) = points.iter().enumerate().find(|(_, p)| p.len() != dim) {
            return Err(Error::structural(format!(
                "point {i} has length {}, expected {dim}",
                p.len()
            )));
        }
        Self::from_flat(dim, points.concat(), weights)
    }

    /// Normalizes arbitrary nonnegative weights to unit mass.
    pub fn normalized(dim: usize, points: Vec<f64>, raw_weights: Vec<f64>) -> Result<Self> {
        let total = pairwise_sum(&raw_weights);
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::structural(format!("total weight {total} is not positive")));
        }
        let weights = raw_weights.into_iter().map(|w| w / total).collect();
        Self::from_flat(dim, points, weights)
    }

    /// Equal-weight measure over the rows of `points`.
    pub fn uniform(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.len() % dim != 0 || points.is_empty() {
            return Err(Error::structural("uniform measure needs a nonempty point buffer"));
        }
        let n = points.len() / dim;
        Self::from_flat(dim, points, vec![1.0 / n as f64; n])
    }

    /// Equal-weight measure over rows the caller has already checked to be
    /// finite and nonempty.
    pub(crate) fn uniform_trusted(dim: usize, points: Vec<f64>) -> Self {
        let n = points.len() / dim;
        Self {
            dim,
            points,
            weights: vec![1.0 / n as f64; n],
        }
    }

    /// Point mass at `x`.
    pub fn dirac(x: &[f64]) -> Result<Self> {
        Self::from_flat(x.len(), x.to_vec(), vec![1.0])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points_flat(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Iterates over `(point, weight)` pairs.
    pub fn atoms(&self) -> impl ExactSizeIterator<Item = (&[f64], f64)> + '_ {
        self.points
            .chunks_exact(self.dim)
            .zip(self.weights.iter().copied())
    }

    /// Weighted mean `∫x μ(dx)`.
    pub fn mean(&self) -> Vec<f64> {
        (0..self.dim)
            .map(|k| {
                let terms: Vec<f64> = self.atoms().map(|(p, w)| w * p[k]).collect();
                pairwise_sum(&terms)
            })
            .collect()
    }

    /// Weighted sum of `f` over the atoms, with pairwise summation.
    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        let terms: Vec<f64> = self.atoms().map(|(p, w)| w * f(p)).collect();
        pairwise_sum(&terms)
    }
}

impl Serialize for EmpiricalMeasure {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        MeasureRepr {
            dim: self.dim,
            points: self.points.chunks_exact(self.dim).map(<[f64]>::to_vec).collect(),
            weights: self.weights.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for EmpiricalMeasure {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = MeasureRepr::deserialize(deserializer)?;
        if let Some(p) = repr.points.iter().find(|p| p.len() != repr.dim) {
            return Err(serde::de::Error::custom(format!(
                "point of length {} in a measure of dim {}",
                p.len(),
                repr.dim
            )));
        }
        EmpiricalMeasure::from_flat(repr.dim, repr.points.concat(), repr.weights)
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeasureRepr {
    dim: usize,
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

/// A measure together with the statistics coefficient functions typically
/// need (`mean(μ)`, `∫|x|² dμ`), computed once and shared by every evaluation
/// against the same measure.
#[derive(Clone, Debug)]
pub struct MeasureView<'a> {
    measure: &'a EmpiricalMeasure,
    mean: Vec<f64>,
    mom2: f64,
}

impl<'a> MeasureView<'a> {
    pub fn new(measure: &'a EmpiricalMeasure) -> Self {
        let mean = measure.mean();
        let mom2 = measure.integrate(|p| p.iter().map(|v| v * v).sum());
        Self {
            measure,
            mean,
            mom2,
        }
    }

    pub fn measure(&self) -> &'a EmpiricalMeasure {
        self.measure
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// `∫|x|² μ(dx)`.
    pub fn mom2(&self) -> f64 {
        self.mom2
    }

    pub fn dim(&self) -> usize {
        self.measure.dim
    }
}

/// `‖μ‖²_{λ²} = ∫(1+|x|)² μ(dx)`.
pub fn lambda2_norm_sq(mu: &EmpiricalMeasure) -> f64 {
    mu.integrate(|p| {
        let r = norm(p);
        (1.0 + r) * (1.0 + r)
    })
}

/// `∫|x|^p μ(dx)` for `p ∈ 1..=4`.
pub fn raw_moment(mu: &EmpiricalMeasure, p: u32) -> Result<f64> {
    if !(1..=4).contains(&p) {
        return Err(Error::usage(format!("moment order {p} outside 1..=4")));
    }
    Ok(mu.integrate(|x| {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        match p {
            2 => r2,
            4 => r2 * r2,
            _ => r2.sqrt().powi(p as i32),
        }
    }))
}

/// Wasserstein-1 distance. Exact for `d = 1` (integral of the CDF
/// difference); for `d > 1` the sliced estimate averaged over `projections`
/// deterministic directions, which is a lower bound on the true `W₁`.
pub fn wasserstein1(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, projections: usize) -> Result<f64> {
    check_same_dim(mu, nu)?;
    if mu.dim == 1 {
        return Ok(w1_line(&line_atoms(mu, |p| p[0]), &line_atoms(nu, |p| p[0])));
    }
    if projections == 0 {
        return Err(Error::usage("sliced W1 needs at least one projection"));
    }
    let dirs = slicing_directions(mu.dim, projections);
    let dists: Vec<f64> = dirs
        .iter()
        .map(|theta| w1_line(&line_atoms(mu, |p| dot(p, theta)), &line_atoms(nu, |p| dot(p, theta))))
        .collect();
    Ok(pairwise_sum(&dists) / projections as f64)
}

/// A guaranteed upper bound on `W₁` in any dimension: the cost of the
/// monotone coupling induced by sorting both measures along a direction,
/// minimized over the deterministic direction set (plus the coordinate axes).
/// Equals the exact distance when `d = 1`.
pub fn wasserstein1_upper(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, projections: usize) -> Result<f64> {
    check_same_dim(mu, nu)?;
    if mu.dim == 1 {
        return wasserstein1(mu, nu, 0);
    }
    let mut dirs = slicing_directions(mu.dim, projections.max(1));
    for k in 0..mu.dim {
        let mut e = vec![0.0; mu.dim];
        e[k] = 1.0;
        dirs.push(e);
    }
    let best = dirs
        .iter()
        .map(|theta| monotone_coupling_cost(mu, nu, theta))
        .fold(f64::INFINITY, f64::min);
    Ok(best)
}

/// `max_φ |∫φ dμ − ∫φ dν|` over a certified dictionary; a lower bound on
/// `ρ(μ, ν)`.
pub fn rho_lower_bound(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, dict: &TestDictionary) -> Result<f64> {
    check_same_dim(mu, nu)?;
    if dict.functions.is_empty() {
        return Err(Error::usage("empty test dictionary"));
    }
    if dict.dim != mu.dim {
        return Err(Error::structural(format!(
            "dictionary is for dim {}, measures have dim {}",
            dict.dim, mu.dim
        )));
    }
    Ok(dict
        .functions
        .iter()
        .map(|f| (mu.integrate(|x| f.eval(x)) - nu.integrate(|x| f.eval(x))).abs())
        .fold(0.0, f64::max))
}

/// The bracket `[lower, upper]` around `ρ(μ, ν)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RhoBracket {
    pub lower: f64,
    pub upper: f64,
}

impl RhoBracket {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

pub fn rho_bracket(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, dict: &TestDictionary) -> Result<RhoBracket> {
    Ok(RhoBracket {
        lower: rho_lower_bound(mu, nu, dict)?,
        upper: wasserstein1_upper(mu, nu, DEFAULT_PROJECTIONS)?,
    })
}

/// Projection count used where callers do not choose one.
pub const DEFAULT_PROJECTIONS: usize = 64;

fn check_same_dim(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<()> {
    if mu.dim != nu.dim {
        return Err(Error::structural(format!(
            "dimension mismatch: {} vs {}",
            mu.dim, nu.dim
        )));
    }
    Ok(())
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn line_atoms(mu: &EmpiricalMeasure, project: impl Fn(&[f64]) -> f64) -> Vec<(f64, f64)> {
    let mut atoms: Vec<(f64, f64)> = mu.atoms().map(|(p, w)| (project(p), w)).collect();
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    atoms
}

/// `∫|F − G| dt` for two sorted weighted atom lists.
fn w1_line(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let (mut i, mut j) = (0, 0);
    let (mut cdf_a, mut cdf_b) = (0.0f64, 0.0f64);
    let mut pieces = Vec::with_capacity(a.len() + b.len());
    let mut last: Option<f64> = None;
    while i < a.len() || j < b.len() {
        let t = match (a.get(i), b.get(j)) {
            (Some(x), Some(y)) => x.0.min(y.0),
            (Some(x), None) => x.0,
            (None, Some(y)) => y.0,
            (None, None) => unreachable!(),
        };
        if let Some(prev) = last {
            pieces.push((cdf_a - cdf_b).abs() * (t - prev));
        }
        while i < a.len() && a[i].0 == t {
            cdf_a += a[i].1;
            i += 1;
        }
        while j < b.len() && b[j].0 == t {
            cdf_b += b[j].1;
            j += 1;
        }
        last = Some(t);
    }
    pairwise_sum(&pieces)
}

fn monotone_coupling_cost(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, theta: &[f64]) -> f64 {
    let order = |m: &EmpiricalMeasure| {
        let mut idx: Vec<usize> = (0..m.len()).collect();
        idx.sort_by(|&a, &b| dot(m.point(a), theta).total_cmp(&dot(m.point(b), theta)));
        idx
    };
    let (oa, ob) = (order(mu), order(nu));
    let (mut i, mut j) = (0, 0);
    let (mut left_a, mut left_b) = (mu.weights[oa[0]], nu.weights[ob[0]]);
    let mut costs = Vec::with_capacity(oa.len() + ob.len());
    while i < oa.len() && j < ob.len() {
        let flow = left_a.min(left_b);
        let d: f64 = mu
            .point(oa[i])
            .iter()
            .zip(nu.point(ob[j]))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        costs.push(flow * d);
        left_a -= flow;
        left_b -= flow;
        if left_a <= left_b {
            i += 1;
            if i < oa.len() {
                left_a = mu.weights[oa[i]];
            }
        } else {
            j += 1;
            if j < ob.len() {
                left_b = nu.weights[ob[j]];
            }
        }
    }
    pairwise_sum(&costs)
}

/// Unit directions from the generalized golden-ratio (R_d) sequence, mapped to
/// the sphere through the Gaussian quantile function.
pub fn slicing_directions(dim: usize, count: usize) -> Vec<Vec<f64>> {
    // φ_d is the positive root of x^{d+1} = x + 1.
    let mut phi: f64 = 2.0;
    for _ in 0..64 {
        let f = phi.powi(dim as i32 + 1) - phi - 1.0;
        let df = (dim as f64 + 1.0) * phi.powi(dim as i32) - 1.0;
        phi -= f / df;
    }
    let alpha: Vec<f64> = (1..=dim).map(|k| phi.powi(-(k as i32))).collect();
    let mut dirs = Vec::with_capacity(count);
    let mut n = 1u64;
    while dirs.len() < count {
        let g: Vec<f64> = alpha
            .iter()
            .map(|a| {
                let u = (0.5 + n as f64 * a).fract().clamp(1e-12, 1.0 - 1e-12);
                inverse_normal_cdf(u)
            })
            .collect();
        n += 1;
        let r = norm(&g);
        if r > 1e-12 {
            dirs.push(g.into_iter().map(|v| v / r).collect());
        }
    }
    dirs
}

/// Test function of `C_ρ` with analytically declared Lipschitz constant and
/// growth factor `sup|φ(x)|/(1+|x|)²`.
#[derive(Clone)]
pub enum TestFunction {
    /// `scale · (a·x + offset)`.
    Linear {
        direction: Vec<f64>,
        offset: f64,
        scale: f64,
    },
    /// `scale · |x − center|`.
    Distance { center: Vec<f64>, scale: f64 },
    /// `scale · tanh(rate · x_axis)`.
    Tanh { axis: usize, rate: f64, scale: f64 },
    Constant(f64),
    Custom {
        label: String,
        f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
        lipschitz: f64,
        growth: f64,
    },
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestFunction::Linear { direction, offset, scale } => f
                .debug_struct("Linear")
                .field("direction", direction)
                .field("offset", offset)
                .field("scale", scale)
                .finish(),
            TestFunction::Distance { center, scale } => f
                .debug_struct("Distance")
                .field("center", center)
                .field("scale", scale)
                .finish(),
            TestFunction::Tanh { axis, rate, scale } => f
                .debug_struct("Tanh")
                .field("axis", axis)
                .field("rate", rate)
                .field("scale", scale)
                .finish(),
            TestFunction::Constant(c) => f.debug_tuple("Constant").field(c).finish(),
            TestFunction::Custom { label, lipschitz, growth, .. } => f
                .debug_struct("Custom")
                .field("label", label)
                .field("lipschitz", lipschitz)
                .field("growth", growth)
                .finish(),
        }
    }
}

/// `sup_{r ≥ 0} (A r + C)/(1 + r)²` for `A, C ≥ 0`.
fn affine_growth_bound(a: f64, c: f64) -> f64 {
    if a > 2.0 * c {
        a * a / (4.0 * (a - c))
    } else {
        c
    }
}

impl TestFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            TestFunction::Linear { direction, offset, scale } => scale * (dot(direction, x) + offset),
            TestFunction::Distance { center, scale } => {
                scale * x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
            }
            TestFunction::Tanh { axis, rate, scale } => scale * (rate * x[*axis]).tanh(),
            TestFunction::Constant(c) => *c,
            TestFunction::Custom { f, .. } => f(x),
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match self {
            TestFunction::Linear { direction, scale, .. } => scale.abs() * norm(direction),
            TestFunction::Distance { scale, .. } => scale.abs(),
            TestFunction::Tanh { rate, scale, .. } => (scale * rate).abs(),
            TestFunction::Constant(_) => 0.0,
            TestFunction::Custom { lipschitz, .. } => *lipschitz,
        }
    }

    pub fn growth(&self) -> f64 {
        match self {
            TestFunction::Linear { direction, offset, scale } => {
                scale.abs() * affine_growth_bound(norm(direction), offset.abs())
            }
            TestFunction::Distance { center, scale } => scale.abs() * affine_growth_bound(1.0, norm(center)),
            TestFunction::Tanh { rate, scale, .. } => scale.abs() * (rate.abs() / 4.0).min(1.0),
            TestFunction::Constant(c) => c.abs(),
            TestFunction::Custom { growth, .. } => *growth,
        }
    }

    /// Declared `‖φ‖_{C_ρ}` bound.
    pub fn norm_bound(&self) -> f64 {
        self.lipschitz() + self.growth()
    }

    /// Rescales `self` so its declared norm bound is exactly one.
    pub fn normalized(self) -> Self {
        let b = self.norm_bound();
        if b == 0.0 {
            return self;
        }
        match self {
            TestFunction::Linear { direction, offset, scale } => TestFunction::Linear {
                direction,
                offset,
                scale: scale / b,
            },
            TestFunction::Distance { center, scale } => TestFunction::Distance { center, scale: scale / b },
            TestFunction::Tanh { axis, rate, scale } => TestFunction::Tanh {
                axis,
                rate,
                scale: scale / b,
            },
            TestFunction::Constant(c) => TestFunction::Constant(c / b),
            TestFunction::Custom { label, f, lipschitz, growth } => TestFunction::Custom {
                label,
                f: Arc::new(move |x| f(x) / b),
                lipschitz: lipschitz / b,
                growth: growth / b,
            },
        }
    }
}

/// Half-width of the certification grid.
pub const CERTIFY_RADIUS: f64 = 10.0;
/// Number of certification grid points.
pub const CERTIFY_POINTS: usize = 10_000;

/// A finite family of test functions, each certified to lie in the unit ball
/// of `C_ρ`.
#[derive(Clone, Debug)]
pub struct TestDictionary {
    dim: usize,
    functions: Vec<TestFunction>,
}

impl TestDictionary {
    /// Certifies every function: declared `Lip + growth ≤ 1`, and neither
    /// declared constant is contradicted on a grid over `[−10, 10]^d`.
    pub fn new(dim: usize, functions: Vec<TestFunction>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::structural("dictionary dimension must be positive"));
        }
        let grid = certification_grid(dim);
        for (idx, f) in functions.iter().enumerate() {
            certify(idx, f, dim, &grid)?;
        }
        Ok(Self { dim, functions })
    }

    /// Linear functionals along the axes and slicing directions, distance
    /// functions to a few centers, and saturating coordinate functions.
    pub fn standard(dim: usize) -> Result<Self> {
        let mut fs = Vec::new();
        let mut dirs = slicing_directions(dim, 8);
        for k in 0..dim {
            let mut e = vec![0.0; dim];
            e[k] = 1.0;
            dirs.push(e);
        }
        for d in &dirs {
            for offset in [0.0, 0.5, -0.5] {
                fs.push(
                    TestFunction::Linear {
                        direction: d.clone(),
                        offset,
                        scale: 1.0,
                    }
                    .normalized(),
                );
            }
        }
        for c in [-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0] {
            for k in 0..dim {
                let mut center = vec![0.0; dim];
                center[k] = c;
                fs.push(TestFunction::Distance { center, scale: 1.0 }.normalized());
            }
        }
        for rate in [0.5, 1.0, 2.0, 4.0] {
            for axis in 0..dim {
                fs.push(TestFunction::Tanh { axis, rate, scale: 1.0 }.normalized());
            }
        }
        Self::new(dim, fs)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn functions(&self) -> &[TestFunction] {
        &self.functions
    }
}

fn certification_grid(dim: usize) -> (usize, Vec<f64>) {
    let per_axis = ((CERTIFY_POINTS as f64).powf(1.0 / dim as f64).floor() as usize).max(2);
    let axis: Vec<f64> = (0..per_axis)
        .map(|i| -CERTIFY_RADIUS + 2.0 * CERTIFY_RADIUS * i as f64 / (per_axis - 1) as f64)
        .collect();
    let total = per_axis.pow(dim as u32);
    let mut pts = Vec::with_capacity(total * dim);
    for mut idx in 0..total {
        for _ in 0..dim {
            pts.push(axis[idx % per_axis]);
            idx /= per_axis;
        }
    }
    (per_axis, pts)
}

fn certify(idx: usize, f: &TestFunction, dim: usize, grid: &(usize, Vec<f64>)) -> Result<()> {
    const SLACK: f64 = 1e-9;
    let (lip, growth) = (f.lipschitz(), f.growth());
    if !(lip.is_finite() && growth.is_finite() && lip >= 0.0 && growth >= 0.0) {
        return Err(Error::usage(format!("test function {idx}: invalid declared constants")));
    }
    if lip + growth > 1.0 + MASS_TOLERANCE {
        return Err(Error::usage(format!(
            "test function {idx}: declared norm {} exceeds 1",
            lip + growth
        )));
    }
    if let TestFunction::Linear { direction, .. } | TestFunction::Distance { center: direction, .. } = f {
        if direction.len() != dim {
            return Err(Error::structural(format!("test function {idx}: wrong dimension")));
        }
    }
    if let TestFunction::Tanh { axis, .. } = f {
        if *axis >= dim {
            return Err(Error::structural(format!("test function {idx}: axis out of range")));
        }
    }
    let (per_axis, pts) = grid;
    let values: Vec<f64> = pts.chunks_exact(dim).map(|x| f.eval(x)).collect();
    for (x, v) in pts.chunks_exact(dim).zip(&values) {
        let r = norm(x);
        if !v.is_finite() || v.abs() / ((1.0 + r) * (1.0 + r)) > growth + SLACK {
            return Err(Error::usage(format!(
                "test function {idx}: growth bound violated at {x:?}"
            )));
        }
    }
    let step = 2.0 * CERTIFY_RADIUS / (*per_axis - 1) as f64;
    let n = values.len();
    for i in 0..n {
        let mut stride = 1;
        for axis in 0..dim {
            let coord = (i / stride) % per_axis;
            if coord + 1 < *per_axis {
                let j = i + stride;
                if (values[j] - values[i]).abs() / step > lip + SLACK {
                    return Err(Error::usage(format!(
                        "test function {idx}: Lipschitz bound violated along axis {axis}"
                    )));
                }
            }
            stride *= per_axis;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[f64]) -> EmpiricalMeasure {
        EmpiricalMeasure::uniform(1, points.to_vec()).unwrap()
    }

    #[test]
    fn lambda2_examples() {
        assert_eq!(lambda2_norm_sq(&EmpiricalMeasure::dirac(&[0.0]).unwrap()), 1.0);
        assert_eq!(lambda2_norm_sq(&EmpiricalMeasure::dirac(&[1.0]).unwrap()), 4.0);
        assert!((lambda2_norm_sq(&line(&[0.0, 1.0])) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn raw_moment_examples() {
        assert_eq!(raw_moment(&EmpiricalMeasure::dirac(&[0.0]).unwrap(), 2).unwrap(), 0.0);
        assert_eq!(raw_moment(&line(&[-1.0, 1.0]), 2).unwrap(), 1.0);
        assert_eq!(raw_moment(&line(&[0.0, 2.0]), 4).unwrap(), 8.0);
        assert!(matches!(raw_moment(&line(&[0.0]), 5), Err(Error::Usage(_))));
        assert!(matches!(raw_moment(&line(&[0.0]), 0), Err(Error::Usage(_))));
    }

    #[test]
    fn w1_examples() {
        let d0 = EmpiricalMeasure::dirac(&[0.0]).unwrap();
        let d1 = EmpiricalMeasure::dirac(&[1.0]).unwrap();
        assert_eq!(wasserstein1(&d0, &d1, 0).unwrap(), 1.0);
        let mu = line(&[0.3, -1.2, 4.0]);
        assert_eq!(wasserstein1(&mu, &mu, 0).unwrap(), 0.0);
        assert!((wasserstein1(&line(&[0.0, 2.0]), &line(&[1.0, 3.0]), 0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn w1_unequal_weights() {
        // 0.25 at 0, 0.75 at 4 versus δ₂: cost 0.25·2 + 0.75·2.
        let a = EmpiricalMeasure::from_flat(1, vec![0.0, 4.0], vec![0.25, 0.75]).unwrap();
        let b = EmpiricalMeasure::dirac(&[2.0]).unwrap();
        assert!((wasserstein1(&a, &b, 0).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn w1_dimension_mismatch() {
        let a = EmpiricalMeasure::dirac(&[0.0]).unwrap();
        let b = EmpiricalMeasure::dirac(&[0.0, 1.0]).unwrap();
        assert!(matches!(wasserstein1(&a, &b, 4), Err(Error::Structural(_))));
    }

    #[test]
    fn sliced_and_upper_in_2d() {
        let a = EmpiricalMeasure::dirac(&[0.0, 0.0]).unwrap();
        let b = EmpiricalMeasure::dirac(&[3.0, 4.0]).unwrap();
        let sliced = wasserstein1(&a, &b, 256).unwrap();
        let upper = wasserstein1_upper(&a, &b, 16).unwrap();
        // Point masses: every coupling costs 5; the sliced average is 5·E|cos θ|.
        assert!((upper - 5.0).abs() < 1e-12);
        assert!(sliced < 5.0 && sliced > 5.0 * 2.0 / std::f64::consts::PI * 0.95);
    }

    #[test]
    fn rho_examples() {
        let d0 = EmpiricalMeasure::dirac(&[0.0]).unwrap();
        let d1 = EmpiricalMeasure::dirac(&[1.0]).unwrap();
        let lin = TestDictionary::new(
            1,
            vec![TestFunction::Linear {
                direction: vec![1.0],
                offset: 0.0,
                scale: 1.0 / 1.25,
            }],
        )
        .unwrap();
        assert!((lin.functions()[0].norm_bound() - 1.0).abs() < 1e-15);
        assert!((rho_lower_bound(&d0, &d1, &lin).unwrap() - 0.8).abs() < 1e-15);
        let zero = TestDictionary::new(1, vec![TestFunction::Constant(0.0)]).unwrap();
        assert_eq!(rho_lower_bound(&d0, &d1, &zero).unwrap(), 0.0);
        let std = TestDictionary::standard(1).unwrap();
        assert_eq!(rho_lower_bound(&d1, &d1, &std).unwrap(), 0.0);
        let empty = TestDictionary::new(1, vec![]).unwrap();
        assert!(matches!(rho_lower_bound(&d0, &d1, &empty), Err(Error::Usage(_))));
    }

    #[test]
    fn dictionary_rejects_uncertified_functions() {
        let too_steep = TestFunction::Linear {
            direction: vec![1.0],
            offset: 0.0,
            scale: 1.0,
        };
        assert!(TestDictionary::new(1, vec![too_steep]).is_err());
        // Declared constants that lie about the function are caught on the grid.
        let liar = TestFunction::Custom {
            label: "x^2".into(),
            f: Arc::new(|x: &[f64]| x[0] * x[0]),
            lipschitz: 0.5,
            growth: 0.5,
        };
        assert!(TestDictionary::new(1, vec![liar]).is_err());
        assert!(TestDictionary::standard(3).is_ok());
    }

    #[test]
    fn invalid_measures_rejected() {
        assert!(EmpiricalMeasure::from_flat(1, vec![0.0, 1.0], vec![0.5, 0.6]).is_err());
        assert!(EmpiricalMeasure::from_flat(1, vec![f64::NAN], vec![1.0]).is_err());
        assert!(EmpiricalMeasure::from_flat(1, vec![], vec![]).is_err());
        assert!(EmpiricalMeasure::new(&[vec![0.0], vec![1.0, 2.0]], vec![0.5, 0.5]).is_err());
        assert!(EmpiricalMeasure::from_flat(1, vec![0.0, 1.0], vec![-0.5, 1.5]).is_err());
    }

    #[test]
    fn json_round_trip_and_rejections() {
        let mu = EmpiricalMeasure::from_flat(2, vec![0.0, 1.0, 2.0, 3.0], vec![0.25, 0.75]).unwrap();
        let text = serde_json::to_string(&mu).unwrap();
        assert_eq!(text, r#"{"dim":2,"points":[[0.0,1.0],[2.0,3.0]],"weights":[0.25,0.75]}"#);
        let back: EmpiricalMeasure = serde_json::from_str(&text).unwrap();
        assert_eq!(back, mu);
        assert!(serde_json::from_str::<EmpiricalMeasure>(r#"{"dim":1,"points":[[1e999]],"weights":[1]}"#).is_err());
        assert!(serde_json::from_str::<EmpiricalMeasure>(r#"{"dim":2,"points":[[1]],"weights":[1]}"#).is_err());
    }
}
