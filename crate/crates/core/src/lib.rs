//! Streaming calibration of a risk-control threshold by betting.
//!
//! The engine maintains a family of nonnegative wealth processes, one per
//! candidate threshold β on a grid over [0, 1]. Each process bets against the
//! hypothesis "the population risk at β is still too high"; once a process
//! exceeds the Ville threshold 1/α its β is rejected for good, and the
//! running estimate β̂ is the smallest rejected grid point of the top
//! contiguous block. By Ville's inequality the estimate keeps the risk below
//! θ at every step simultaneously with probability at least 1 − α.
//!
//! Labels may be expensive, so a labeling policy decides per point whether to
//! query the label, subject to an expected budget; inverse-propensity
//! weighting keeps the wealth processes valid. A risk predictor derived from
//! the classifier being calibrated shrinks the payoff variance further.
//!
//! Module map:
//! - [`grid`]: the candidate-threshold grid.
//! - [`risk`]: prediction sets, miscoverage and false-positive-rate risks.
//! - [`wealth`]: wealth processes, the three update modes, β̂ extraction.
//! - [`betting`]: online bet sizing and the closed-form oracle bet.
//! - [`predictor`]: pretrained and online-learned conditional risk/σ models.
//! - [`policy`]: labeling policies and the budget-tracking normalizer game.
//! - [`optim`]: the parameter-free scalar optimizer used by the learners.
//! - [`harness`]: data sources, the per-trial loop, and experiment running.

pub mod betting;
pub mod grid;
pub mod harness;
pub mod optim;
pub mod policy;
pub mod predictor;
pub mod risk;
pub mod wealth;

pub use betting::{oracle_growth_bound, oracle_lambda_star, BettorKind, OnsBettor};
pub use grid::BetaGrid;
pub use harness::{
    evaluate_safety, run_trial, ExperimentOutcome, Method, MethodSummary, StopRule, TrialConfig,
    TrialRecord,
};
pub use policy::{LabelPolicy, PolicyBehavior, QueryDecision};
pub use predictor::{pretrain_risk, pretrain_sigma, LearnedRegressor, Predictor};
pub use risk::{
    build_prediction_set, fpr_risk, miscoverage_risk, FprRisk, LabeledPoint, MiscoverageRisk,
    PredictionSet, RiskFunction, ScoreVector,
};
pub use wealth::{StepObservation, WealthGrid};
