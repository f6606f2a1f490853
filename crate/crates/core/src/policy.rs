//! Labeling policies and the budget game.
//!
//! A policy maps each arriving point to a query probability. The adaptive
//! policies play `q(x) = σ̂(x, β̂_prev) / exp(c)`, clipped to `[q_floor, 1]`,
//! where the normalizer `c` is learned online so the realized labeling rate
//! tracks the budget B. The Lagrangian game behind `c` pits a primal player
//! maximizing `−c − ν(σ̂ e^{−c} − B)` against a dual player ν ≥ 0 penalizing
//! budget overruns; both default to parameter-free online updates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

use crate::optim::CocobScalar;

/// Default floor on emitted query probabilities. The floor also caps the
/// bets (λ ≤ 1/(1/floor − θ)), so very small floors throttle growth; 0.25
/// keeps the cap wide while staying below the default budget.
pub const DEFAULT_Q_FLOOR: f64 = 0.25;
/// Default window for the windowed-best-response dual.
pub const DEFAULT_DUAL_WINDOW: usize = 100;
/// The normalizer lives in log space; beyond this band the policy is fully
/// saturated for any practical σ̂ scale, so wandering further is pointless.
const C_BAND: f64 = 8.0;
/// Clip on the game gradients (equilibrium gradients are O(1)).
const GAME_GRAD_CLIP: f64 = 5.0;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("budget must be in (0, 1], got {0}")]
    BadBudget(f64),
    #[error("query floor must be in (0, 1), got {0}")]
    BadFloor(f64),
    #[error("optimal policy infeasible: q*({x}) = {q} exceeds 1")]
    OptimalPolicyInfeasible { x: f64, q: f64 },
    #[error("mean of sigma is zero; optimal policy undefined")]
    DegenerateSigma,
}

/// How the policy chooses query probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyBehavior {
    /// Label everything.
    All,
    /// Label a fixed B fraction, ignoring covariates.
    Oblivious,
    /// Label proportionally to a σ̂ estimate, normalizer learned online.
    Adaptive,
}

/// How the dual variable ν is played.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DualKind {
    /// Parameter-free online ascent on the realized budget gap (default;
    /// targets the spend actually played).
    Ascent,
    /// Average of bang-bang best responses over a recent window.
    Windowed,
}

impl Default for DualKind {
    fn default() -> Self {
        DualKind::Ascent
    }
}

impl std::str::FromStr for DualKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ascent" => Ok(DualKind::Ascent),
            "windowed" => Ok(DualKind::Windowed),
            other => Err(format!("unknown dual kind `{other}` (expected ascent|windowed)")),
        }
    }
}

enum DualState {
    Ascent(CocobScalar),
    Windowed {
        responses: VecDeque<f64>,
        window: usize,
        nu: f64,
    },
}

/// The budget game state: log-normalizer c and dual variable ν.
pub struct Normalizer {
    budget: f64,
    c: CocobScalar,
    dual: DualState,
    nu_max: f64,
}

impl Normalizer {
    pub fn new(budget: f64, dual_kind: DualKind, window: usize) -> Self {
        let nu_max = 2.0 / budget;
        let dual = match dual_kind {
            DualKind::Ascent => DualState::Ascent(
                CocobScalar::bounded(1.0 / budget, 0.0, nu_max).with_grad_clip(GAME_GRAD_CLIP),
            ),
            DualKind::Windowed => DualState::Windowed {
                responses: VecDeque::with_capacity(window),
                window,
                nu: 0.0,
            },
        };
        Self {
            budget,
            c: CocobScalar::bounded((1.0 / budget).ln(), -C_BAND, C_BAND)
                .with_grad_clip(GAME_GRAD_CLIP),
            dual,
            nu_max,
        }
    }

    pub fn log_scale(&self) -> f64 {
        self.c.value()
    }

    pub fn dual_value(&self) -> f64 {
        match &self.dual {
            DualState::Ascent(opt) => opt.value(),
            DualState::Windowed { nu, .. } => *nu,
        }
    }

    /// Raw policy value σ̂ / exp(c) before clipping.
    pub fn raw_probability(&self, sigma: f64) -> f64 {
        sigma * (-self.c.value()).exp()
    }

    /// One game round: dual responds to the spend actually played, then the
    /// primal takes a step on `∂/∂c [−c − ν(σ̂ e^{−c} − B)] = −1 + ν σ̂ e^{−c}`.
    ///
    /// A step with σ̂ = 0 leaves the primal untouched: the emitted probability
    /// is floor-pinned there for every c, so the step carries no budget
    /// signal, and feeding its constant −1 gradient would only run up
    /// optimizer debt that later distorts the spend. The dual still counts
    /// such steps against the budget.
    pub fn update(&mut self, sigma: f64, q_played: f64) {
        let nu = match &mut self.dual {
            DualState::Ascent(opt) => {
                // dual ascent: minimize −(q − B)·ν in ν ⇒ gradient −(q − B)
                opt.observe(-(q_played - self.budget))
            }
            DualState::Windowed {
                responses,
                window,
                nu,
            } => {
                let br = if q_played > self.budget { self.nu_max } else { 0.0 };
                if responses.len() == *window {
                    responses.pop_front();
                }
                responses.push_back(br);
                *nu = responses.iter().sum::<f64>() / responses.len() as f64;
                *nu
            }
        };
        if sigma > 0.0 {
            let ascent_grad = -1.0 + nu * sigma * (-self.c.value()).exp();
            self.c.observe(-ascent_grad);
        }
    }
}

/// One label decision: probability played and the Bernoulli outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryDecision {
    pub q: f64,
    pub queried: bool,
}

/// A labeling policy with its own seeded randomness.
pub struct LabelPolicy {
    behavior: PolicyBehavior,
    budget: f64,
    q_floor: f64,
    normalizer: Option<Normalizer>,
    rng: ChaCha12Rng,
}

impl LabelPolicy {
    pub fn new(
        behavior: PolicyBehavior,
        budget: f64,
        q_floor: f64,
        dual_kind: DualKind,
        dual_window: usize,
        seed: u64,
    ) -> Result<Self, PolicyError> {
        if !(budget > 0.0 && budget <= 1.0) {
            return Err(PolicyError::BadBudget(budget));
        }
        if !(q_floor > 0.0 && q_floor < 1.0) {
            return Err(PolicyError::BadFloor(q_floor));
        }
        let normalizer = matches!(behavior, PolicyBehavior::Adaptive)
            .then(|| Normalizer::new(budget, dual_kind, dual_window));
        Ok(Self {
            behavior,
            budget,
            q_floor,
            normalizer,
            rng: ChaCha12Rng::seed_from_u64(seed),
        })
    }

    pub fn behavior(&self) -> PolicyBehavior {
        self.behavior
    }

    /// Query probability for a point whose σ̂(x, β̂_prev) is `sigma_hat`.
    pub fn query_probability(&self, sigma_hat: f64) -> f64 {
        match self.behavior {
            PolicyBehavior::All => 1.0,
            PolicyBehavior::Oblivious => self.budget.clamp(self.q_floor, 1.0),
            PolicyBehavior::Adaptive => {
                let norm = self.normalizer.as_ref().expect("adaptive has a normalizer");
                norm.raw_probability(sigma_hat).clamp(self.q_floor, 1.0)
            }
        }
    }

    /// Analytic lower bound on every probability this policy can emit; the
    /// bettor caps bets against this floor.
    pub fn min_probability(&self) -> f64 {
        match self.behavior {
            PolicyBehavior::All => 1.0,
            PolicyBehavior::Oblivious => self.budget.clamp(self.q_floor, 1.0),
            PolicyBehavior::Adaptive => self.q_floor,
        }
    }

    /// Draw the label decision from the policy's seeded stream.
    pub fn draw_label_decision(&mut self, q: f64) -> QueryDecision {
        debug_assert!(q >= self.min_probability() - 1e-12 && q <= 1.0);
        let queried = self.rng.random::<f64>() < q;
        QueryDecision { q, queried }
    }

    /// One normalizer game round (no-op for the fixed policies).
    pub fn update_normalizer(&mut self, sigma_hat: f64, q_played: f64) {
        if let Some(norm) = self.normalizer.as_mut() {
            norm.update(sigma_hat, q_played);
        }
    }

    pub fn normalizer(&self) -> Option<&Normalizer> {
        self.normalizer.as_ref()
    }
}

/// The growth-optimal labeling policy for a known conditional σ:
/// `q*(x) = σ(x)·B / E[σ(X)]`.
#[derive(Debug, Clone)]
pub struct OraclePolicy {
    pub mean_sigma: f64,
    pub budget: f64,
    /// False when σ vanishes somewhere, so q* breaks the positivity floor
    /// assumption there.
    pub floor_ok: bool,
}

impl OraclePolicy {
    pub fn query_probability(&self, sigma_x: f64) -> f64 {
        sigma_x * self.budget / self.mean_sigma
    }
}

/// Builds the oracle policy for a σ function on [0, 1] under a uniform
/// covariate, integrating E[σ] by the trapezoid rule on `n_points` panels.
/// Errors when the resulting q* exceeds 1 anywhere on the evaluation grid.
pub fn oracle_optimal_policy(
    sigma: impl Fn(f64) -> f64,
    budget: f64,
    n_points: usize,
) -> Result<OraclePolicy, PolicyError> {
    if !(budget > 0.0 && budget <= 1.0) {
        return Err(PolicyError::BadBudget(budget));
    }
    let n = n_points.max(2);
    let h = 1.0 / n as f64;
    let mut mean = 0.0;
    let mut floor_ok = true;
    let mut values = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let x = i as f64 * h;
        let s = sigma(x);
        if s <= 0.0 {
            floor_ok = false;
        }
        values.push((x, s));
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        mean += w * s * h;
    }
    if mean <= 0.0 {
        return Err(PolicyError::DegenerateSigma);
    }
    for &(x, s) in &values {
        let q = s * budget / mean;
        if q > 1.0 {
            return Err(PolicyError::OptimalPolicyInfeasible { x, q });
        }
    }
    Ok(OraclePolicy {
        mean_sigma: mean,
        budget,
        floor_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const B: f64 = 0.3;

    fn adaptive(seed: u64) -> LabelPolicy {
        LabelPolicy::new(
            PolicyBehavior::Adaptive,
            B,
            DEFAULT_Q_FLOOR,
            DualKind::Ascent,
            DEFAULT_DUAL_WINDOW,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn all_policy_always_queries() {
        let mut p = LabelPolicy::new(
            PolicyBehavior::All,
            B,
            DEFAULT_Q_FLOOR,
            DualKind::Ascent,
            DEFAULT_DUAL_WINDOW,
            1,
        )
        .unwrap();
        assert_eq!(p.query_probability(0.0), 1.0);
        assert_eq!(p.min_probability(), 1.0);
        for _ in 0..100 {
            assert!(p.draw_label_decision(1.0).queried);
        }
    }

    #[test]
    fn oblivious_policy_plays_the_budget() {
        let p = LabelPolicy::new(
            PolicyBehavior::Oblivious,
            B,
            DEFAULT_Q_FLOOR,
            DualKind::Ascent,
            DEFAULT_DUAL_WINDOW,
            1,
        )
        .unwrap();
        assert_eq!(p.query_probability(0.7), 0.3);
        assert_eq!(p.min_probability(), 0.3);
    }

    #[test]
    fn adaptive_with_unit_sigma_and_matched_normalizer_plays_budget() {
        let mut p = adaptive(1);
        // force c = log(1/B): raw q = σ̂·B = 0.3 for σ̂ = 1
        let c = p.normalizer().unwrap().log_scale();
        assert!((c - (1.0f64 / B).ln()).abs() < 1e-12, "fresh c is ln(1/B)");
        assert!((p.query_probability(1.0) - B).abs() < 1e-12);
        // emitted probabilities always respect the floor
        assert_eq!(p.query_probability(0.0), DEFAULT_Q_FLOOR);
        let _ = p.draw_label_decision(0.3);
    }

    #[test]
    fn normalizer_converges_to_log_sigma_over_budget() {
        // constant σ̂ = 0.5: equilibrium c* = ln(0.5/0.3) ≈ 0.5108
        for dual in [DualKind::Ascent, DualKind::Windowed] {
            let mut norm = Normalizer::new(B, dual, DEFAULT_DUAL_WINDOW);
            let sigma = 0.5;
            let mut c_final = 0.0;
            for _ in 0..5000 {
                let q = norm.raw_probability(sigma).clamp(DEFAULT_Q_FLOOR, 1.0);
                norm.update(sigma, q);
                c_final = norm.log_scale();
            }
            let target = (sigma / B).ln();
            let tol = match dual {
                DualKind::Ascent => 1e-2,
                // bang-bang responses keep a small limit cycle
                DualKind::Windowed => 0.35,
            };
            assert!(
                (c_final - target).abs() < tol,
                "{dual:?}: c = {c_final}, target = {target}"
            );
        }
    }

    #[test]
    fn normalizer_equilibrium_other_sigmas() {
        for sigma in [0.2, 0.35] {
            let mut norm = Normalizer::new(B, DualKind::Ascent, DEFAULT_DUAL_WINDOW);
            for _ in 0..5000 {
                let q = norm.raw_probability(sigma).clamp(0.05, 1.0);
                norm.update(sigma, q);
            }
            let target: f64 = (sigma / B).ln();
            assert!(
                (norm.log_scale() - target).abs() < 1e-2,
                "sigma {sigma}: c = {}, target = {target}",
                norm.log_scale()
            );
        }
    }

    #[test]
    fn zero_dual_pressure_deflates_c() {
        // with ν pinned at 0 the payoff gradient in c is −1: c must drop
        let mut norm = Normalizer::new(B, DualKind::Windowed, 4);
        let c0 = norm.log_scale();
        // tiny σ̂ keeps q at the floor, under budget: best responses stay 0
        for _ in 0..50 {
            norm.update(0.01, DEFAULT_Q_FLOOR);
            assert_eq!(norm.dual_value(), 0.0);
        }
        assert!(norm.log_scale() < c0);
        // and the band keeps it finite
        for _ in 0..10_000 {
            norm.update(0.01, DEFAULT_Q_FLOOR);
        }
        assert!(norm.log_scale() >= -C_BAND);
    }

    #[test]
    fn zero_sigma_steps_leave_the_normalizer_in_place() {
        // floor-pinned points carry no budget signal for the primal player
        let mut norm = Normalizer::new(B, DualKind::Ascent, DEFAULT_DUAL_WINDOW);
        let c0 = norm.log_scale();
        for _ in 0..1000 {
            norm.update(0.0, DEFAULT_Q_FLOOR);
        }
        assert_eq!(norm.log_scale(), c0);
    }

    #[test]
    fn label_draws_match_probability() {
        let mut p = adaptive(123);
        let q = DEFAULT_Q_FLOOR;
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| p.draw_label_decision(q).queried)
            .count() as f64;
        let rate = hits / n as f64;
        let sd = (q * (1.0 - q) / n as f64).sqrt();
        assert!(
            (rate - q).abs() < 3.0 * sd,
            "rate {rate} vs q {q} (3σ = {})",
            3.0 * sd
        );
    }

    #[test]
    fn fixed_seed_reproduces_decisions() {
        let mut a = adaptive(7);
        let mut b = adaptive(7);
        for _ in 0..1000 {
            assert_eq!(a.draw_label_decision(0.4), b.draw_label_decision(0.4));
        }
    }

    #[test]
    fn oracle_policy_constant_sigma_is_budget() {
        let p = oracle_optimal_policy(|_| 0.4, B, 10_000).unwrap();
        assert!((p.query_probability(0.4) - B).abs() < 1e-9);
        assert!(p.floor_ok);
    }

    #[test]
    fn oracle_policy_simulation_shape() {
        // σ_β(x) = 1{x ≥ β}·√(x(1−x)) at β = 0.5
        let beta = 0.5;
        let sigma = |x: f64| if x >= beta { (x * (1.0 - x)).sqrt() } else { 0.0 };
        let p = oracle_optimal_policy(sigma, B, 10_000).unwrap();
        // E[σ] by an independent finer quadrature
        let n = 200_000;
        let mean: f64 = (0..=n)
            .map(|i| {
                let x = i as f64 / n as f64;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * sigma(x) / n as f64
            })
            .sum();
        // σ jumps at β, so the trapezoid rule converges only O(h) there
        assert!((p.mean_sigma - mean).abs() < 1e-4);
        let x = 0.7;
        assert!((p.query_probability(sigma(x)) - sigma(x) * B / p.mean_sigma).abs() < 1e-12);
        // σ vanishes below β: positivity floor broken, flagged not errored
        assert!(!p.floor_ok);
    }

    #[test]
    fn oracle_policy_infeasible_when_q_exceeds_one() {
        // spike σ: tiny mean, huge peak → q* > 1 at the peak
        let sigma = |x: f64| if (x - 0.5).abs() < 0.01 { 1.0 } else { 0.001 };
        let err = oracle_optimal_policy(sigma, 0.9, 10_000);
        assert!(matches!(
            err,
            Err(PolicyError::OptimalPolicyInfeasible { .. })
        ));
    }

    #[test]
    fn policy_validation() {
        assert!(matches!(
            LabelPolicy::new(PolicyBehavior::All, 0.0, 0.1, DualKind::Ascent, 10, 0),
            Err(PolicyError::BadBudget(_))
        ));
        assert!(matches!(
            LabelPolicy::new(PolicyBehavior::All, 0.3, 0.0, DualKind::Ascent, 10, 0),
            Err(PolicyError::BadFloor(_))
        ));
    }
}
