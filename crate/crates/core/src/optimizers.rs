//! Update rules: plain SSM, clipped SSM, and the iterate moving average (IMA).

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::norm;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    Ssm,
    ClippedSsm,
    Ima,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Ssm => "ssm",
            OptimizerKind::ClippedSsm => "clipped_ssm",
            OptimizerKind::Ima => "ima",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ssm" => Ok(OptimizerKind::Ssm),
            "clipped_ssm" => Ok(OptimizerKind::ClippedSsm),
            "ima" => Ok(OptimizerKind::Ima),
            other => Err(Error::InvalidConfig(format!("unknown optimizer `{other}`"))),
        }
    }
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

fn check_finite(x: &[f64], step: u64) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(coordinate) => Err(Error::NonFinite { step, coordinate }),
        None => Ok(()),
    }
}

/// Iterate of the (clipped) stochastic subgradient method.
#[derive(Clone, Debug, PartialEq)]
pub struct SsmState {
    pub x: Vec<f64>,
    pub t: u64,
}

impl SsmState {
    pub fn new(x0: Vec<f64>) -> Self {
        SsmState { x: x0, t: 0 }
    }

    /// `x ← x − γ g`
    pub fn step(&mut self, g: &[f64], gamma: f64) -> Result<()> {
        check_dim(self.x.len(), g.len())?;
        for (xi, gi) in self.x.iter_mut().zip(g) {
            *xi -= gamma * gi;
        }
        self.t += 1;
        check_finite(&self.x, self.t)
    }

    /// `x ← x − γ̃ clip_c(g)`
    pub fn clipped_step(&mut self, g: &[f64], gamma: f64, c: f64) -> Result<()> {
        check_dim(self.x.len(), g.len())?;
        let scale = clip_scale(norm(g), c);
        for (xi, gi) in self.x.iter_mut().zip(g) {
            *xi -= gamma * (scale * gi);
        }
        self.t += 1;
        check_finite(&self.x, self.t)
    }
}

/// `min(1, c/‖g‖)`, with `1` for the zero vector.
#[inline]
fn clip_scale(g_norm: f64, c: f64) -> f64 {
    if g_norm > c {
        c / g_norm
    } else {
        1.0
    }
}

/// `clip_c(g) = min(1, c/‖g‖) g`. The result has norm `min(‖g‖, c)`.
pub fn clip_op(g: &[f64], c: f64) -> Vec<f64> {
    let scale = clip_scale(norm(g), c);
    g.iter().map(|v| scale * v).collect()
}

/// Two-sequence momentum state `(x^t, x^{t−1}, z^t)`.
///
/// Starts with `z^0 = x^{−1} = x^0`, so the momentum term of the first
/// step vanishes.
#[derive(Clone, Debug, PartialEq)]
pub struct ImaState {
    pub x: Vec<f64>,
    pub x_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub t: u64,
}

impl ImaState {
    pub fn new(x0: Vec<f64>) -> Self {
        ImaState {
            x_prev: x0.clone(),
            z: x0.clone(),
            x: x0,
            t: 0,
        }
    }

    /// `z ← z − η g`, then `x ← (λ_{t+1} x + z) / (λ_{t+1} + 1)`.
    ///
    /// `g` must be a subgradient taken at `self.x`.
    pub fn step(&mut self, g: &[f64], eta: f64, lambda_next: f64) -> Result<()> {
        check_dim(self.x.len(), g.len())?;
        let denom = lambda_next + 1.0;
        for (((x, xp), z), gi) in self.x.iter_mut().zip(&mut self.x_prev).zip(&mut self.z).zip(g) {
            *z -= eta * gi;
            *xp = *x;
            *x = (lambda_next * *x + *z) / denom;
        }
        self.t += 1;
        check_finite(&self.x, self.t)?;
        check_finite(&self.z, self.t)
    }
}

/// Momentum weights `λ_t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LambdaSchedule {
    Constant(f64),
    /// `λ_t = t`
    Linear,
}

impl LambdaSchedule {
    pub fn at(self, t: u64) -> f64 {
        match self {
            LambdaSchedule::Constant(l) => l,
            LambdaSchedule::Linear => t as f64,
        }
    }

    pub fn validate(self) -> Result<()> {
        if let LambdaSchedule::Constant(l) = self {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {l}")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for LambdaSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LambdaSchedule::Constant(l) => write!(f, "{l}"),
            LambdaSchedule::Linear => f.write_str("t"),
        }
    }
}

impl FromStr for LambdaSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "t" || s == "linear" {
            return Ok(LambdaSchedule::Linear);
        }
        let l: f64 = s
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad lambda `{s}` (number or `t`)")))?;
        let sched = LambdaSchedule::Constant(l);
        sched.validate()?;
        Ok(sched)
    }
}

/// Heavy-ball parameters equivalent to an IMA step:
/// `γ̂_t = η_t / (1 + λ_{t+1})` and `β_t = (1 + λ_{t+1}) / λ_t`.
///
/// `β_t` is `None` when `λ_t = 0`.
pub fn shb_params_from_ima(lambda_t: f64, lambda_next: f64, eta_t: f64) -> (f64, Option<f64>) {
    let step = eta_t / (1.0 + lambda_next);
    let beta = (lambda_t > 0.0).then(|| (1.0 + lambda_next) / lambda_t);
    (step, beta)
}
