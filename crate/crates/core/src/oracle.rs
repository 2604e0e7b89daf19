//! Closed-form first and second moments of the one-dimensional mean-field
//! Ornstein–Uhlenbeck law `dX = −(X − m·E X) dt + s dW`.
//!
//! The moments solve `ṁ₁ = −(1−m) m₁` and `ṁ₂ = −2m₂ + 2m m₁² + s²`, whose
//! solution is
//!
//! ```text
//! m₁(t) = m₁(0) e^{−(1−m)t}
//! m₂(t) = (m₂(0) − m₁(0)²) e^{−2t} + m₁(0)² e^{−2(1−m)t} + s²(1 − e^{−2t})/2
//! ```
//!
//! i.e. variance plus squared mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OUParams {
    pub m: f64,
    pub s: f64,
    pub m1_0: f64,
    pub m2_0: f64,
}

impl OUParams {
    pub fn new(m: f64, s: f64, m1_0: f64, m2_0: f64) -> Result<Self> {
        let p = Self { m, s, m1_0, m2_0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.m, self.s, self.m1_0, self.m2_0].iter().all(|v| v.is_finite()) {
            return Err(Error::usage("oracle parameters must be finite"));
        }
        if self.s < 0.0 {
            return Err(Error::usage("diffusion amplitude must be nonnegative"));
        }
        if self.m2_0 < self.m1_0 * self.m1_0 {
            return Err(Error::usage(format!(
                "m2_0 = {} is below m1_0² = {}",
                self.m2_0,
                self.m1_0 * self.m1_0
            )));
        }
        Ok(())
    }

    pub fn m1(&self, t: f64) -> f64 {
        self.m1_0 * (-(1.0 - self.m) * t).exp()
    }

    pub fn m2(&self, t: f64) -> f64 {
        let e2 = (-2.0 * t).exp();
        let mean2 = self.m1_0 * self.m1_0;
        (self.m2_0 - mean2) * e2 + mean2 * (-2.0 * (1.0 - self.m) * t).exp() + 0.5 * self.s * self.s * (-(-2.0 * t).exp_m1())
    }
}

/// First and second moment curves on `times`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OUMoments {
    pub times: Vec<f64>,
    pub m1: Vec<f64>,
    pub m2: Vec<f64>,
}

/// Evaluates the closed form on an increasing grid starting at zero.
pub fn ou_moments(params: &OUParams, times: &[f64]) -> Result<OUMoments> {
    params.validate()?;
    if times.first().is_some_and(|&t| t != 0.0) {
        return Err(Error::usage("oracle time grid must start at 0"));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::usage("oracle time grid must be strictly increasing"));
    }
    Ok(OUMoments {
        times: times.to_vec(),
        m1: times.iter().map(|&t| params.m1(t)).collect(),
        m2: times.iter().map(|&t| params.m2(t)).collect(),
    })
}
