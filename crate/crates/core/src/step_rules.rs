//! Polyak-type step-size rules.
//!
//! Every rule is a pure function of the sampled loss value, its lower bound
//! (or the oracle value `f_i(x*)`), and the sampled subgradient. Rules that
//! carry memory across iterations (the smoothed `SPS_max` bound, the EMA
//! safeguard, and the clip counters) keep it in a [`RuleState`].

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::norm_sq;

/// Default floor substituted for a zero first EMA safeguard.
pub const DEFAULT_EMA_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RuleKind {
    /// `(f − ℓ) / max(‖g‖², M)`
    SpsSafe,
    /// `SpsSafe` with `M` replaced by an EMA of past `‖g‖²`.
    SpsSafeEma,
    /// `min((f − ℓ) / (c‖g‖²), γ_b)`
    SpsMax,
    /// `min((f − ℓ) / (c‖g‖²), τ^{b/n} γ_{t−1})`
    SmoothSpsMax,
    /// `[f − f(x*)]₊ / ‖g‖²`
    SpsStar,
    /// `[f − ℓ + λ_t⟨g, x_t − x_{t−1}⟩]₊ / max(‖g‖², M)`
    ImaSpsSafe,
    /// `[f − f(x*) + λ_t⟨g, x_t − x_{t−1}⟩]₊ / ‖g‖²`
    ImaSps,
    /// `(f − ℓ) / (c · max(c, ‖g‖))`, paired with clipped SSM.
    ClippedAdaptive,
    Constant,
}

impl RuleKind {
    pub const ALL: [RuleKind; 9] = [
        RuleKind::SpsSafe,
        RuleKind::SpsSafeEma,
        RuleKind::SpsMax,
        RuleKind::SmoothSpsMax,
        RuleKind::SpsStar,
        RuleKind::ImaSpsSafe,
        RuleKind::ImaSps,
        RuleKind::ClippedAdaptive,
        RuleKind::Constant,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RuleKind::SpsSafe => "sps_safe",
            RuleKind::SpsSafeEma => "sps_safe_ema",
            RuleKind::SpsMax => "sps_max",
            RuleKind::SmoothSpsMax => "smooth_sps_max",
            RuleKind::SpsStar => "sps_star",
            RuleKind::ImaSpsSafe => "ima_sps_safe",
            RuleKind::ImaSps => "ima_sps",
            RuleKind::ClippedAdaptive => "clipped_adaptive",
            RuleKind::Constant => "constant",
        }
    }

    /// Rules that need the per-sample oracle values `f_i(x*)`.
    pub fn needs_reference(self) -> bool {
        matches!(self, RuleKind::SpsStar | RuleKind::ImaSps)
    }

    /// Rules whose step can select a constant upper bound.
    pub fn has_constant_branch(self) -> bool {
        matches!(self, RuleKind::SpsMax | RuleKind::SmoothSpsMax)
    }
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RuleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RuleKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown rule `{s}`")))
    }
}

/// Immutable rule parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct RuleConfig {
    pub kind: RuleKind,
    /// Safeguard `M`.
    pub safeguard: f64,
    /// Polyak scaling for `SPS_max`, or the clip threshold for the clipped rule.
    pub c: f64,
    pub gamma_b: f64,
    pub tau: f64,
    /// Batch size over dataset size, the exponent of `τ`.
    pub batch_frac: f64,
    /// Initial bound `γ_0` of the smoothed `SPS_max` recursion.
    pub gamma0: f64,
    /// EMA coefficient for the adaptive safeguard.
    pub beta: f64,
    pub ema_floor: f64,
    pub gamma_const: f64,
}

impl RuleConfig {
    pub fn new(kind: RuleKind) -> Self {
        RuleConfig {
            kind,
            ..RuleConfig::default()
        }
    }

    pub fn sps_safe(safeguard: f64) -> Self {
        RuleConfig {
            safeguard,
            ..RuleConfig::new(RuleKind::SpsSafe)
        }
    }

    pub fn ima_sps_safe(safeguard: f64) -> Self {
        RuleConfig {
            safeguard,
            ..RuleConfig::new(RuleKind::ImaSpsSafe)
        }
    }

    pub fn constant(gamma: f64) -> Self {
        RuleConfig {
            gamma_const: gamma,
            ..RuleConfig::new(RuleKind::Constant)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must be > 0, got {v}")))
            }
        };
        match self.kind {
            RuleKind::SpsSafe | RuleKind::ImaSpsSafe => positive("M", self.safeguard)?,
            RuleKind::SpsSafeEma => {
                if !(0.0..1.0).contains(&self.beta) {
                    return Err(Error::InvalidConfig(format!(
                        "beta must lie in [0, 1), got {}",
                        self.beta
                    )));
                }
                positive("ema_floor", self.ema_floor)?;
            }
            RuleKind::SpsMax => {
                positive("c", self.c)?;
                positive("gamma_b", self.gamma_b)?;
            }
            RuleKind::SmoothSpsMax => {
                positive("c", self.c)?;
                positive("gamma0", self.gamma0)?;
                if !(self.tau > 1.0 && self.tau.is_finite()) {
                    return Err(Error::InvalidConfig(format!("tau must be > 1, got {}", self.tau)));
                }
                if !(self.batch_frac > 0.0 && self.batch_frac <= 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "batch_frac must lie in (0, 1], got {}",
                        self.batch_frac
                    )));
                }
            }
            RuleKind::ClippedAdaptive => positive("c", self.c)?,
            RuleKind::Constant => {
                if !(self.gamma_const >= 0.0 && self.gamma_const.is_finite()) {
                    return Err(Error::InvalidConfig(format!(
                        "gamma_const must be >= 0, got {}",
                        self.gamma_const
                    )));
                }
            }
            RuleKind::SpsStar | RuleKind::ImaSps => {}
        }
        Ok(())
    }

    /// Emits the step size for one iteration and updates `state`.
    pub fn step(&self, state: &mut RuleState, input: &StepInput) -> Result<f64> {
        let oracle = || {
            input.f_at_xstar.ok_or_else(|| {
                Error::InvalidConfig(format!("rule {} requires f_i(x*) values", self.kind))
            })
        };
        let gamma = match self.kind {
            RuleKind::SpsSafe => {
                state.steps_total += 1;
                sps_safe(input.f_val, input.lower, input.g_norm_sq, self.safeguard)
            }
            RuleKind::SpsSafeEma => {
                state.steps_total += 1;
                let m = update_safeguard_ema(state, input.g_norm_sq, self.beta, self.ema_floor);
                sps_safe(input.f_val, input.lower, input.g_norm_sq, m.max(self.ema_floor))
            }
            RuleKind::SpsMax => sps_max(input.f_val, input.lower, input.g_norm_sq, self.c, self.gamma_b, state),
            RuleKind::SmoothSpsMax => smooth_sps_max(
                input.f_val,
                input.lower,
                input.g_norm_sq,
                self.c,
                self.tau,
                self.batch_frac,
                self.gamma0,
                state,
            ),
            RuleKind::SpsStar => {
                state.steps_total += 1;
                sps_star(input.f_val, oracle()?, input.g_norm_sq)?
            }
            RuleKind::ImaSpsSafe => {
                state.steps_total += 1;
                safeguarded_momentum_step(
                    input.f_val - input.lower,
                    input.momentum,
                    input.g_norm_sq,
                    self.safeguard,
                )
            }
            RuleKind::ImaSps => {
                state.steps_total += 1;
                oracle_momentum_step(input.f_val - oracle()?, input.momentum, input.g_norm_sq)?
            }
            RuleKind::ClippedAdaptive => {
                state.steps_total += 1;
                clipped_adaptive_gamma(input.f_val, input.lower, input.g_norm_sq.sqrt(), self.c)
            }
            RuleKind::Constant => {
                state.steps_total += 1;
                self.gamma_const
            }
        };
        Ok(gamma)
    }
}

impl Default for RuleConfig {
    fn default() -> Self {
        RuleConfig {
            kind: RuleKind::SpsSafe,
            safeguard: 1.0,
            c: 1.0,
            gamma_b: 1.0,
            tau: 2.0,
            batch_frac: 1.0,
            gamma0: 1.0,
            beta: 0.9,
            ema_floor: DEFAULT_EMA_FLOOR,
            gamma_const: 1e-2,
        }
    }
}

/// What a rule sees at one iteration. All quantities are batch means.
#[derive(Clone, Copy, Debug)]
pub struct StepInput {
    pub f_val: f64,
    pub lower: f64,
    /// Batch mean of `f_i(x*)`, when a reference solution is loaded.
    pub f_at_xstar: Option<f64>,
    pub g_norm_sq: f64,
    /// `λ_t⟨g, x_t − x_{t−1}⟩`; zero outside IMA.
    pub momentum: f64,
}

/// Mutable per-run rule memory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RuleState {
    /// Last positive step emitted by the smoothed `SPS_max` recursion.
    pub gamma_prev: Option<f64>,
    /// Current EMA safeguard `M_t`.
    pub ema_safeguard: Option<f64>,
    pub steps_total: u64,
    /// Iterations on which the constant branch (`γ_b` or `γ_b^t`) was selected.
    pub steps_clipped: u64,
}

impl RuleState {
    pub fn clip_fraction(&self) -> f64 {
        if self.steps_total == 0 {
            0.0
        } else {
            self.steps_clipped as f64 / self.steps_total as f64
        }
    }
}

/// Safeguarded stochastic Polyak step `(f − ℓ) / max(‖g‖², M)`.
#[inline]
pub fn sps_safe(f_val: f64, lower: f64, g_norm_sq: f64, safeguard: f64) -> f64 {
    (f_val - lower) / g_norm_sq.max(safeguard)
}

/// Polyak step capped by a fixed bound; ties count as clipped.
pub fn sps_max(f_val: f64, lower: f64, g_norm_sq: f64, c: f64, gamma_b: f64, state: &mut RuleState) -> f64 {
    let (gamma, clipped) = capped_polyak(f_val - lower, c * g_norm_sq, gamma_b);
    state.steps_total += 1;
    state.steps_clipped += u64::from(clipped);
    gamma
}

/// Polyak step capped by the geometrically growing bound `τ^{b/n} γ_{t−1}`.
///
/// The first call uses `γ_{−1} = gamma0`. Only positive steps are remembered
/// as `γ_{t−1}`, so a zero-loss batch does not freeze the bound at zero.
#[allow(clippy::too_many_arguments)]
pub fn smooth_sps_max(
    f_val: f64,
    lower: f64,
    g_norm_sq: f64,
    c: f64,
    tau: f64,
    batch_frac: f64,
    gamma0: f64,
    state: &mut RuleState,
) -> f64 {
    let prev = state.gamma_prev.unwrap_or(gamma0);
    let bound = tau.powf(batch_frac) * prev;
    let (gamma, clipped) = capped_polyak(f_val - lower, c * g_norm_sq, bound);
    state.steps_total += 1;
    state.steps_clipped += u64::from(clipped);
    if gamma > 0.0 {
        state.gamma_prev = Some(gamma);
    } else if state.gamma_prev.is_none() {
        state.gamma_prev = Some(gamma0);
    }
    gamma
}

/// `min(numerator / denom, bound)` with the clipped flag. A zero numerator
/// yields zero (not clipped); a zero denominator with a positive numerator
/// yields the bound (clipped).
fn capped_polyak(numerator: f64, denom: f64, bound: f64) -> (f64, bool) {
    if numerator <= 0.0 {
        return (0.0, false);
    }
    if denom <= 0.0 {
        return (bound, true);
    }
    let polyak = numerator / denom;
    if polyak >= bound {
        (bound, true)
    } else {
        (polyak, false)
    }
}

/// Oracle Polyak step `[f − f(x*)]₊ / ‖g‖²`.
pub fn sps_star(f_val: f64, f_at_xstar: f64, g_norm_sq: f64) -> Result<f64> {
    oracle_momentum_step(f_val - f_at_xstar, 0.0, g_norm_sq)
}

fn oracle_momentum_step(gap: f64, momentum: f64, g_norm_sq: f64) -> Result<f64> {
    let numerator = (gap + momentum).max(0.0);
    if numerator == 0.0 {
        return Ok(0.0);
    }
    if g_norm_sq == 0.0 {
        return Err(Error::ZeroSubgradient { numerator });
    }
    Ok(numerator / g_norm_sq)
}

#[inline]
fn safeguarded_momentum_step(gap: f64, momentum: f64, g_norm_sq: f64, safeguard: f64) -> f64 {
    (gap + momentum).max(0.0) / g_norm_sq.max(safeguard)
}

fn check_same_len(g: &[f64], x_t: &[f64], x_prev: &[f64]) -> Result<()> {
    for v in [x_t, x_prev] {
        if v.len() != g.len() {
            return Err(Error::DimensionMismatch {
                expected: g.len(),
                found: v.len(),
            });
        }
    }
    Ok(())
}

fn momentum_term(g: &[f64], x_t: &[f64], x_prev: &[f64], lambda: f64) -> f64 {
    let inner: f64 = g
        .iter()
        .zip(x_t.iter().zip(x_prev))
        .map(|(gi, (a, b))| gi * (a - b))
        .sum();
    lambda * inner
}

/// Safeguarded IMA step `[f − ℓ + λ⟨g, x_t − x_{t−1}⟩]₊ / max(‖g‖², M)`.
pub fn ima_sps_safe(
    f_val: f64,
    lower: f64,
    g: &[f64],
    x_t: &[f64],
    x_prev: &[f64],
    lambda: f64,
    safeguard: f64,
) -> Result<f64> {
    check_same_len(g, x_t, x_prev)?;
    Ok(safeguarded_momentum_step(
        f_val - lower,
        momentum_term(g, x_t, x_prev, lambda),
        norm_sq(g),
        safeguard,
    ))
}

/// Oracle IMA step `[f − f(x*) + λ⟨g, x_t − x_{t−1}⟩]₊ / ‖g‖²`.
pub fn ima_sps(f_val: f64, f_at_xstar: f64, g: &[f64], x_t: &[f64], x_prev: &[f64], lambda: f64) -> Result<f64> {
    check_same_len(g, x_t, x_prev)?;
    oracle_momentum_step(f_val - f_at_xstar, momentum_term(g, x_t, x_prev, lambda), norm_sq(g))
}

/// Adaptive step `(f − ℓ) / (c · max(c, ‖g‖))` for clipped SSM.
#[inline]
pub fn clipped_adaptive_gamma(f_val: f64, lower: f64, g_norm: f64, c: f64) -> f64 {
    (f_val - lower) / (c * c.max(g_norm))
}

/// Advances the EMA safeguard `M_t = β M_{t−1} + (1 − β)‖g‖²` and returns it.
///
/// The first call sets `M_0 = ‖g‖²`, or `floor` when that is zero.
pub fn update_safeguard_ema(state: &mut RuleState, g_norm_sq: f64, beta: f64, floor: f64) -> f64 {
    let m = match state.ema_safeguard {
        None => {
            if g_norm_sq > 0.0 {
                g_norm_sq
            } else {
                floor
            }
        }
        Some(prev) => beta * prev + (1.0 - beta) * g_norm_sq,
    };
    state.ema_safeguard = Some(m);
    m
}

/// `λ⟨g, x_t − x_{t−1}⟩` for use in [`StepInput::momentum`].
pub fn momentum_input(g: &[f64], x_t: &[f64], x_prev: &[f64], lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    momentum_term(g, x_t, x_prev, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sps_safe_examples() {
        assert_eq!(sps_safe(3.0, 3.0, 5.0, 1.0), 0.0);
        assert_eq!(sps_safe(2.0, 0.0, 4.0, 1.0), 0.5);
        assert_eq!(sps_safe(2.0, 0.0, 0.0, 1.0), 2.0);
    }

    #[test]
    fn sps_max_examples() {
        let mut st = RuleState::default();
        // (f−ℓ)/(c‖g‖²) = 0.1
        assert_eq!(sps_max(0.1, 0.0, 1.0, 1.0, 1.0, &mut st), 0.1);
        assert_eq!((st.steps_total, st.steps_clipped), (1, 0));
        // Polyak branch 3 > γ_b = 1
        assert_eq!(sps_max(3.0, 0.0, 1.0, 1.0, 1.0, &mut st), 1.0);
        assert_eq!((st.steps_total, st.steps_clipped), (2, 1));
        // zero numerator
        assert_eq!(sps_max(0.5, 0.5, 1.0, 1.0, 1.0, &mut st), 0.0);
        assert_eq!((st.steps_total, st.steps_clipped), (3, 1));
        // tie counts as clipped
        assert_eq!(sps_max(2.0, 0.0, 2.0, 1.0, 1.0, &mut st), 1.0);
        assert_eq!(st.steps_clipped, 2);
        // zero subgradient with positive numerator
        assert_eq!(sps_max(2.0, 0.0, 0.0, 1.0, 1.0, &mut st), 1.0);
        assert_eq!(st.steps_clipped, 3);
        // c scales the denominator
        assert_eq!(sps_max(1.0, 0.0, 2.0, 0.5, 10.0, &mut st), 1.0);
    }

    #[test]
    fn smooth_sps_max_examples() {
        let frac = 128.0 / 50000.0;
        let mut st = RuleState::default();
        let g = smooth_sps_max(1e9, 0.0, 1.0, 1.0, 2.0, frac, 1.0, &mut st);
        assert!((g - 2f64.powf(frac)).abs() < 1e-15);
        assert!((g - 1.00178).abs() < 1e-5);
        assert_eq!(st.steps_clipped, 1);

        let g2 = smooth_sps_max(1e9, 0.0, 1.0, 1.0, 2.0, frac, 1.0, &mut st);
        assert!((g2 - 2f64.powf(2.0 * frac)).abs() < 1e-15);
        assert_eq!(st.steps_clipped, 2);

        let mut st = RuleState::default();
        assert_eq!(smooth_sps_max(1.0, 1.0, 1.0, 1.0, 2.0, frac, 1.0, &mut st), 0.0);
        assert_eq!(st.gamma_prev, Some(1.0));
    }

    #[test]
    fn sps_star_examples() {
        assert_eq!(sps_star(2.0, 2.0, 1.0).unwrap(), 0.0);
        assert_eq!(sps_star(1.0, 2.0, 1.0).unwrap(), 0.0);
        assert_eq!(sps_star(5.0, 2.0, 2.0).unwrap(), 1.5);
        assert_eq!(sps_star(1.0, 1.0, 0.0).unwrap(), 0.0);
        assert!(matches!(sps_star(3.0, 1.0, 0.0), Err(Error::ZeroSubgradient { numerator }) if numerator == 2.0));
    }

    #[test]
    fn ima_sps_safe_examples() {
        let g = [0.5f64.sqrt(), 0.0];
        // ⟨g, x_t − x_prev⟩ = −0.1
        let x_t = [-0.1 / 0.5f64.sqrt(), 0.0];
        let x_prev = [0.0, 0.0];
        let eta = ima_sps_safe(1.0, 0.0, &g, &x_t, &x_prev, 9.0, 1.0).unwrap();
        assert!((eta - 0.1).abs() < 1e-15);

        assert_eq!(ima_sps_safe(1.0, 0.0, &g, &[-10.0, 0.0], &x_prev, 9.0, 1.0).unwrap(), 0.0);
        assert!(ima_sps_safe(1.0, 0.0, &g, &[0.0], &x_prev, 9.0, 1.0).is_err());
    }

    #[test]
    fn ima_sps_examples() {
        let g = [2.0, 0.0];
        let z = [0.0, 0.0];
        assert_eq!(ima_sps(1.0, 1.0, &g, &z, &z, 0.0).unwrap(), 0.0);
        assert_eq!(ima_sps(1.0, 2.0, &g, &z, &z, 3.0).unwrap(), 0.0);
        assert_eq!(ima_sps(3.0, 1.0, &g, &z, &z, 0.0).unwrap(), 0.5);
        assert!(ima_sps(3.0, 1.0, &[0.0, 0.0], &z, &z, 0.0).is_err());
    }

    #[test]
    fn clipped_gamma_examples() {
        let c = 0.7;
        assert!((clipped_adaptive_gamma(1.3, 0.2, 0.3, c) - 1.1 / (c * c)).abs() < 1e-15);
        assert_eq!(clipped_adaptive_gamma(2.0 * c * c, 0.0, 2.0 * c, c), 1.0);
        assert_eq!(clipped_adaptive_gamma(0.4, 0.4, 3.0, c), 0.0);
    }

    #[test]
    fn ema_examples() {
        let mut st = RuleState::default();
        for q in [3.0, 1.0, 7.0] {
            assert_eq!(update_safeguard_ema(&mut st, q, 0.0, DEFAULT_EMA_FLOOR), q);
        }

        let mut st = RuleState::default();
        for _ in 0..20 {
            assert_eq!(update_safeguard_ema(&mut st, 4.0, 0.9, DEFAULT_EMA_FLOOR), 4.0);
        }

        let mut st = RuleState::default();
        assert_eq!(update_safeguard_ema(&mut st, 1.0, 0.9, DEFAULT_EMA_FLOOR), 1.0);
        let m1 = update_safeguard_ema(&mut st, 2.0, 0.9, DEFAULT_EMA_FLOOR);
        assert!((m1 - 1.1).abs() < 1e-15);

        let mut st = RuleState::default();
        assert_eq!(update_safeguard_ema(&mut st, 0.0, 0.9, DEFAULT_EMA_FLOOR), DEFAULT_EMA_FLOOR);
    }

    #[test]
    fn step_dispatch_counts_and_requires_reference() {
        let cfg = RuleConfig::new(RuleKind::SpsStar);
        let mut st = RuleState::default();
        let input = StepInput {
            f_val: 1.0,
            lower: 0.0,
            f_at_xstar: None,
            g_norm_sq: 1.0,
            momentum: 0.0,
        };
        assert!(matches!(cfg.step(&mut st, &input), Err(Error::InvalidConfig(_))));
        let cfg = RuleConfig::constant(0.25);
        assert_eq!(cfg.step(&mut st, &input).unwrap(), 0.25);
        assert_eq!(st.clip_fraction(), 0.0);
    }

    #[test]
    fn validate_rejects_bad_parameters() {
        assert!(RuleConfig::sps_safe(0.0).validate().is_err());
        assert!(RuleConfig::sps_safe(-1.0).validate().is_err());
        assert!(RuleConfig::sps_safe(1.0).validate().is_ok());
        let mut cfg = RuleConfig::new(RuleKind::SmoothSpsMax);
        cfg.tau = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RuleConfig::new(RuleKind::SpsSafeEma);
        cfg.beta = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RuleConfig::new(RuleKind::SpsMax);
        cfg.gamma_b = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rule_names_round_trip() {
        for k in RuleKind::ALL {
            assert_eq!(k.as_str().parse::<RuleKind>().unwrap(), k);
        }
        assert!("adam".parse::<RuleKind>().is_err());
    }

    proptest! {
        #[test]
        fn sps_safe_is_capped_both_ways(gap in 0.0..100.0f64, q in 1e-6..1e3f64, m in 1e-3..1e3f64) {
            let gamma = sps_safe(gap, 0.0, q, m);
            prop_assert!(gamma >= 0.0);
            prop_assert!(gamma <= gap / m * (1.0 + 1e-15));
            prop_assert!(gamma <= gap / q * (1.0 + 1e-15));
        }

        #[test]
        fn sps_safe_non_increasing_in_m(gap in 0.0..100.0f64, q in 0.0..1e3f64, m1 in 1e-3..1e3f64, m2 in 1e-3..1e3f64) {
            let (lo, hi) = if m1 <= m2 { (m1, m2) } else { (m2, m1) };
            prop_assert!(sps_safe(gap, 0.0, q, hi) <= sps_safe(gap, 0.0, q, lo));
        }

        #[test]
        fn all_rules_nonnegative(gap in 0.0..50.0f64, q in 0.0..50.0f64, mom in -10.0..10.0f64) {
            for kind in RuleKind::ALL {
                let cfg = RuleConfig::new(kind);
                let mut st = RuleState::default();
                let input = StepInput { f_val: gap, lower: 0.0, f_at_xstar: Some(0.0), g_norm_sq: q, momentum: mom };
                if let Ok(gamma) = cfg.step(&mut st, &input) {
                    prop_assert!(gamma >= 0.0, "{kind}: {gamma}");
                }
                prop_assert!(st.steps_clipped <= st.steps_total);
            }
        }

        #[test]
        fn ima_with_zero_lambda_is_bitwise_sps_safe(
            f in 0.0..50.0f64, l in -5.0..0.0f64, g in proptest::collection::vec(-5.0..5.0f64, 3),
            xt in proptest::collection::vec(-5.0..5.0f64, 3), xp in proptest::collection::vec(-5.0..5.0f64, 3),
            m in 1e-3..100.0f64,
        ) {
            let a = ima_sps_safe(f, l, &g, &xt, &xp, 0.0, m).unwrap();
            let b = sps_safe(f, l, norm_sq(&g), m);
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }

        #[test]
        fn smooth_sps_max_growth_is_bounded(steps in proptest::collection::vec((0.0..10.0f64, 0.0..10.0f64), 1..40)) {
            let mut st = RuleState::default();
            for (gap, q) in steps {
                let prev = st.gamma_prev.unwrap_or(1.0);
                let gamma = smooth_sps_max(gap, 0.0, q, 1.0, 2.0, 0.1, 1.0, &mut st);
                prop_assert!(gamma <= 2f64.powf(0.1) * prev * (1.0 + 1e-15));
                prop_assert!(st.gamma_prev.unwrap() > 0.0);
            }
        }

        #[test]
        fn ema_stays_within_observed_range(first in 1e-3..10.0f64, rest in proptest::collection::vec(0.0..10.0f64, 1..50), beta in 0.0..0.99f64) {
            let mut st = RuleState::default();
            let mut lo = first;
            let mut hi = first;
            update_safeguard_ema(&mut st, first, beta, DEFAULT_EMA_FLOOR);
            for q in rest {
                lo = lo.min(q);
                hi = hi.max(q);
                let m = update_safeguard_ema(&mut st, q, beta, DEFAULT_EMA_FLOOR);
                prop_assert!(m >= lo * (1.0 - 1e-12) - 1e-300 && m <= hi * (1.0 + 1e-12));
            }
        }
    }
}
