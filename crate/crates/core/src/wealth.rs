//! Per-threshold wealth processes and threshold extraction.
//!
//! For every grid point β a nonnegative wealth process starts at 1 and is
//! multiplied each step by `1 + λ·g` where `g` is the step's payoff argument.
//! Under the null "risk at β is still ≥ θ" each process is a supermartingale
//! with initial value 1, so by Ville's inequality it exceeds `1/α` with
//! probability at most α. Crossing the threshold therefore rejects the null
//! at β, and rejection is sticky.
//!
//! Three payoff forms are supported, all sharing one arithmetic path so the
//! documented reductions hold bit-exactly:
//!
//! ```text
//! plain:      g = θ − R(β)                       (every point labeled)
//! active:     g = θ − (L/q)·R(β)                 (labels queried w.p. q)
//! predicted:  g = θ − r̂(β) − (L/q)·(R(β) − r̂(β))
//! ```
//!
//! Wealth accumulates in log space; a rejected β's wealth is frozen so a
//! decided hypothesis stops consuming bets and cannot overflow.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::BetaGrid;

/// Tiny negative factors from boundary bets are rounding dust; anything more
/// negative is a caller error.
const FACTOR_DUST: f64 = -1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum WealthError {
    #[error("alpha must be in (0, 1), got {0}")]
    BadAlpha(f64),
    #[error("expected {expected} per-grid values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("bet {lambda} at grid index {index} outside [0, {cap}]")]
    BetOutOfBounds { index: usize, lambda: f64, cap: f64 },
    #[error("risk value {value} at grid index {index} outside [0, 1]")]
    RiskOutOfRange { index: usize, value: f64 },
    #[error("predictor value {value} at grid index {index} outside [0, 1]")]
    PredictorOutOfRange { index: usize, value: f64 },
    #[error("step was queried but carries no risk values")]
    MissingRisk,
    #[error("query probability {q} invalid for floor {q_min}")]
    BadQueryProbability { q: f64, q_min: f64 },
    #[error("wealth factor {factor} negative at grid index {index}")]
    NegativeFactor { index: usize, factor: f64 },
}

/// Largest bet keeping the active/predicted factor nonnegative when labels
/// arrive with probability at least `q_min`: λ ≤ 1/(1/q_min − θ).
pub fn validity_cap(theta: f64, q_min: f64) -> f64 {
    1.0 / (1.0 / q_min - theta)
}

/// Everything the wealth update needs to know about one stream step.
///
/// `lambda` and `predictor` must be predictable (computed before the step's
/// data were seen); `query_prob` is the probability actually played for the
/// label draw and `q_min` the policy's analytic floor.
#[derive(Debug, Clone, Copy)]
pub struct StepObservation<'a> {
    /// Per-grid bets, each in `[0, validity_cap(theta, q_min)]`.
    pub lambda: &'a [f64],
    /// Per-grid predicted risk r̂(x, β) in [0, 1]; `None` bets without one.
    pub predictor: Option<&'a [f64]>,
    /// Per-grid realized risk; present iff the label was queried.
    pub risk: Option<&'a [f64]>,
    /// Whether the label was queried this step.
    pub queried: bool,
    /// Probability the label draw used, in `[q_min, 1]`.
    pub query_prob: f64,
    /// Analytic lower bound on the policy's query probability.
    pub q_min: f64,
}

/// Payoff argument shared by all update modes. `ipw` is L/q: zero for an
/// unlabeled step, 1/q for a labeled one (exactly 1 for plain updates).
#[inline]
pub fn growth_argument(theta: f64, r_hat: f64, ipw: f64, risk: f64) -> f64 {
    theta - r_hat - ipw * (risk - r_hat)
}

/// Wealth state across the grid: log-wealth, sticky rejection flags, and the
/// current safe threshold estimate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WealthGrid {
    grid: BetaGrid,
    alpha: f64,
    log_threshold: f64,
    log_wealth: Vec<f64>,
    rejected: Vec<bool>,
    beta_hat_idx: usize,
    step: u64,
}

impl WealthGrid {
    pub fn new(grid: BetaGrid, alpha: f64) -> Result<Self, WealthError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(WealthError::BadAlpha(alpha));
        }
        let n = grid.len();
        Ok(Self {
            grid,
            alpha,
            log_threshold: (1.0 / alpha).ln(),
            log_wealth: vec![0.0; n],
            rejected: vec![false; n],
            beta_hat_idx: n - 1,
            step: 0,
        })
    }

    pub fn grid(&self) -> &BetaGrid {
        &self.grid
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn wealth(&self, idx: usize) -> f64 {
        self.log_wealth[idx].exp()
    }

    pub fn log_wealth(&self) -> &[f64] {
        &self.log_wealth
    }

    pub fn rejected(&self) -> &[bool] {
        &self.rejected
    }

    pub fn rejected_count(&self) -> usize {
        self.rejected.iter().filter(|&&r| r).count()
    }

    /// Current anytime-safe threshold estimate.
    pub fn beta_hat(&self) -> f64 {
        self.grid.get(self.beta_hat_idx)
    }

    pub fn beta_hat_index(&self) -> usize {
        self.beta_hat_idx
    }

    /// Smallest grid point of the maximal rejected suffix, or 1.0 when
    /// nothing is rejected. Rejecting β certifies its risk is below θ, and
    /// monotonicity extends that to everything above; the estimate never
    /// steps below the certified block.
    pub fn extract_beta_hat(&self) -> f64 {
        self.grid.get(self.extract_index())
    }

    fn extract_index(&self) -> usize {
        let n = self.rejected.len();
        let mut start = n;
        while start > 0 && self.rejected[start - 1] {
            start -= 1;
        }
        if start == n {
            n - 1
        } else {
            start
        }
    }

    /// Plain betting update: every step labeled, factor `1 + λ(θ − R)`.
    pub fn update_plain(
        &mut self,
        theta: f64,
        lambda: &[f64],
        risk: &[f64],
    ) -> Result<(), WealthError> {
        self.check_len(lambda)?;
        self.check_len(risk)?;
        self.check_bets(lambda, validity_cap(theta, 1.0))?;
        check_unit_range(risk, |index, value| WealthError::RiskOutOfRange { index, value })?;
        self.apply(theta, lambda, None, Some(risk), 1.0)
    }

    /// Active update with inverse-propensity weighting: factor
    /// `1 + λ(θ − (L/q)·R)`; an unlabeled step contributes `1 + λθ`.
    pub fn update_active(&mut self, theta: f64, obs: &StepObservation) -> Result<(), WealthError> {
        self.check_obs(theta, obs)?;
        let ipw = if obs.queried { 1.0 / obs.query_prob } else { 0.0 };
        self.apply(theta, obs.lambda, None, obs.risk, ipw)
    }

    /// Prediction-powered update: factor `1 + λ(θ − r̂ − (L/q)(R − r̂))`.
    /// With r̂ ≡ 0 this is the active update exactly.
    pub fn update_predicted(
        &mut self,
        theta: f64,
        obs: &StepObservation,
    ) -> Result<(), WealthError> {
        self.check_obs(theta, obs)?;
        if let Some(p) = obs.predictor {
            self.check_len(p)?;
            check_unit_range(p, |index, value| WealthError::PredictorOutOfRange {
                index,
                value,
            })?;
        }
        let ipw = if obs.queried { 1.0 / obs.query_prob } else { 0.0 };
        self.apply(theta, obs.lambda, obs.predictor, obs.risk, ipw)
    }

    fn apply(
        &mut self,
        theta: f64,
        lambda: &[f64],
        predictor: Option<&[f64]>,
        risk: Option<&[f64]>,
        ipw: f64,
    ) -> Result<(), WealthError> {
        let n = self.grid.len();
        // Dry run first so a reported error leaves the state untouched.
        for i in 0..n {
            if self.rejected[i] {
                continue;
            }
            let factor = 1.0 + lambda[i] * self.argument(predictor, risk, theta, ipw, i);
            if factor < FACTOR_DUST {
                return Err(WealthError::NegativeFactor { index: i, factor });
            }
        }
        for i in 0..n {
            if self.rejected[i] {
                continue;
            }
            let factor = 1.0 + lambda[i] * self.argument(predictor, risk, theta, ipw, i);
            self.log_wealth[i] += factor.max(0.0).ln();
            if self.log_wealth[i] >= self.log_threshold {
                self.rejected[i] = true;
            }
        }
        self.step += 1;
        self.beta_hat_idx = self.extract_index();
        Ok(())
    }

    #[inline]
    fn argument(
        &self,
        predictor: Option<&[f64]>,
        risk: Option<&[f64]>,
        theta: f64,
        ipw: f64,
        i: usize,
    ) -> f64 {
        let r_hat = predictor.map_or(0.0, |p| p[i]);
        let r = risk.map_or(0.0, |r| r[i]);
        growth_argument(theta, r_hat, ipw, r)
    }

    fn check_len(&self, values: &[f64]) -> Result<(), WealthError> {
        if values.len() != self.grid.len() {
            return Err(WealthError::LengthMismatch {
                expected: self.grid.len(),
                got: values.len(),
            });
        }
        Ok(())
    }

    fn check_bets(&self, lambda: &[f64], cap: f64) -> Result<(), WealthError> {
        for (index, &l) in lambda.iter().enumerate() {
            if !(l >= 0.0) || l > cap {
                return Err(WealthError::BetOutOfBounds {
                    index,
                    lambda: l,
                    cap,
                });
            }
        }
        Ok(())
    }

    fn check_obs(&self, theta: f64, obs: &StepObservation) -> Result<(), WealthError> {
        self.check_len(obs.lambda)?;
        if !(obs.q_min > 0.0 && obs.q_min <= 1.0)
            || !(obs.query_prob >= obs.q_min && obs.query_prob <= 1.0)
        {
            return Err(WealthError::BadQueryProbability {
                q: obs.query_prob,
                q_min: obs.q_min,
            });
        }
        self.check_bets(obs.lambda, validity_cap(theta, obs.q_min))?;
        match obs.risk {
            Some(r) => {
                self.check_len(r)?;
                check_unit_range(r, |index, value| WealthError::RiskOutOfRange {
                    index,
                    value,
                })?;
            }
            None if obs.queried => return Err(WealthError::MissingRisk),
            None => {}
        }
        Ok(())
    }
}

fn check_unit_range(
    values: &[f64],
    err: impl Fn(usize, f64) -> WealthError,
) -> Result<(), WealthError> {
    for (i, &v) in values.iter().enumerate() {
        if !(0.0..=1.0).contains(&v) || v.is_nan() {
            return Err(err(i, v));
        }
    }
    Ok(())
}
