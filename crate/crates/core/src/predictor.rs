//! Conditional risk predictors r̂(x, β) and conditional-σ estimators σ̂(x, β).
//!
//! The pretrained pair reads the classifier's own scores: r̂ is the score
//! mass the prediction set leaves out, σ̂ the Bernoulli deviation it implies.
//! The learned pair refines those with per-bin linear models fit online on
//! labeled points only, one model per (bin, grid point).

use std::sync::Arc;

use crate::grid::BetaGrid;
use crate::optim::CocobScalar;
use crate::risk::{build_prediction_set, LabeledPoint, RiskFunction, ScoreVector};

/// Model-implied miscoverage at β: the score mass outside the prediction set.
pub fn pretrain_risk(scores: &ScoreVector, beta: f64) -> f64 {
    let set = build_prediction_set(scores, beta);
    (1.0 - set.mass(scores)).clamp(0.0, 1.0)
}

/// Bernoulli deviation implied by the model's miscoverage estimate.
pub fn pretrain_sigma(scores: &ScoreVector, beta: f64) -> f64 {
    sigma_of(pretrain_risk(scores, beta))
}

#[inline]
fn sigma_of(r_hat: f64) -> f64 {
    (r_hat * (1.0 - r_hat)).max(0.0).sqrt()
}

/// True conditional risk of the synthetic binary stream (X ~ U[0,1],
/// Y | X ~ Bern(X), false-positive-rate risk): E[r | X = x] = 1{x ≥ β}(1 − x).
pub fn oracle_conditional_risk(x: f64, beta: f64) -> f64 {
    if x >= beta {
        1.0 - x
    } else {
        0.0
    }
}

/// A conditional risk/σ model evaluated over the wealth grid. Predictions are
/// predictable: `update` must only be called after the step's wealth update,
/// and only for labeled steps.
pub trait Predictor: Send {
    /// Fill r̂(x, ·) over the grid; values in [0, 1].
    fn risk_curve(&mut self, scores: &ScoreVector, grid: &BetaGrid, out: &mut [f64]);

    /// σ̂(x, β) for the labeling policy.
    fn sigma(&mut self, scores: &ScoreVector, beta: f64) -> f64;

    /// Online update on a labeled point. No-op for fixed predictors.
    fn update(&mut self, point: &LabeledPoint);

    /// Number of labeled points consumed by `update`.
    fn update_count(&self) -> u64 {
        0
    }
}

/// Fixed predictor evaluated analytically from the score vector.
pub struct PretrainPredictor {
    risk: Arc<dyn RiskFunction>,
}

impl PretrainPredictor {
    pub fn new(risk: Arc<dyn RiskFunction>) -> Self {
        Self { risk }
    }
}

impl Predictor for PretrainPredictor {
    fn risk_curve(&mut self, scores: &ScoreVector, grid: &BetaGrid, out: &mut [f64]) {
        self.risk.expected_risk_curve(scores, grid, out);
    }

    fn sigma(&mut self, scores: &ScoreVector, beta: f64) -> f64 {
        sigma_of(self.risk.expected_risk(scores, beta))
    }

    fn update(&mut self, _point: &LabeledPoint) {}
}

/// Binned linear regressors on the pretrained features, one (weight, bias)
/// pair per (bin, grid point) for the risk model and for the variance model.
///
/// The risk model maps feature f = r̂_pretrain(x, β) through its bin's line;
/// the variance model maps v = f(1 − f), binned on σ = √v, and regresses the
/// squared residual of the risk model. Identity initialization (weight 1,
/// bias 0) makes a fresh regressor reproduce the pretrained pair exactly.
pub struct LearnedRegressor {
    grid: BetaGrid,
    bins: usize,
    risk_w: Vec<CocobScalar>,
    risk_b: Vec<CocobScalar>,
    var_w: Vec<CocobScalar>,
    var_b: Vec<CocobScalar>,
    update_count: u64,
}

/// Default bin count over each feature's range.
pub const DEFAULT_BINS: usize = 10;
/// Regression gradients are bounded by construction; clip defensively anyway.
const REG_GRAD_CLIP: f64 = 8.0;

impl LearnedRegressor {
    pub fn new(grid: BetaGrid, bins: usize) -> Self {
        assert!(bins >= 1);
        let cells = bins * grid.len();
        let mk = |init: f64| -> Vec<CocobScalar> {
            (0..cells)
                .map(|_| CocobScalar::new(init).with_grad_clip(REG_GRAD_CLIP))
                .collect()
        };
        Self {
            grid,
            bins,
            risk_w: mk(1.0),
            risk_b: mk(0.0),
            var_w: mk(1.0),
            var_b: mk(0.0),
            update_count: 0,
        }
    }

    pub fn grid(&self) -> &BetaGrid {
        &self.grid
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    /// Bin of a feature value over `[0, range]`.
    #[inline]
    fn bin(&self, value: f64, range: f64) -> usize {
        ((value / range * self.bins as f64) as usize).min(self.bins - 1)
    }

    #[inline]
    fn cell(&self, bin: usize, grid_idx: usize) -> usize {
        bin * self.grid.len() + grid_idx
    }

    /// r̂ at one grid point given the pretrained feature there. Predictions
    /// are served from the optimizer's suffix-averaged iterates, which track
    /// the per-cell least-squares solution with far less wobble than the
    /// raw coin-betting trajectory.
    pub fn predict_risk(&self, grid_idx: usize, feature: f64) -> f64 {
        let c = self.cell(self.bin(feature, 1.0), grid_idx);
        (self.risk_w[c].averaged_value() * feature + self.risk_b[c].averaged_value())
            .clamp(0.0, 1.0)
    }

    /// σ̂ at one grid point given the pretrained feature there; the variance
    /// prediction is clamped to [0, 1/4], the maximum for a [0,1] variable.
    pub fn predict_sigma(&self, grid_idx: usize, feature: f64) -> f64 {
        let v = feature * (1.0 - feature);
        let c = self.cell(self.bin(v.max(0.0).sqrt(), 0.5), grid_idx);
        (self.var_w[c].averaged_value() * v + self.var_b[c].averaged_value())
            .clamp(0.0, 0.25)
            .sqrt()
    }

    /// One squared-loss step at a single grid point: the risk model toward
    /// the realized risk, the variance model toward the squared residual of
    /// the r̂ the wealth update used.
    pub fn update_at(&mut self, grid_idx: usize, feature: f64, risk: f64, r_hat_used: f64) {
        let kb = self.bin(feature, 1.0);
        let c = self.cell(kb, grid_idx);
        let raw = self.risk_w[c].value() * feature + self.risk_b[c].value();
        let resid = risk - raw;
        self.risk_w[c].observe(-2.0 * resid * feature);
        self.risk_b[c].observe(-2.0 * resid);

        let v = feature * (1.0 - feature);
        let cv = self.cell(self.bin(v.max(0.0).sqrt(), 0.5), grid_idx);
        let var_raw = self.var_w[cv].value() * v + self.var_b[cv].value();
        let target = (risk - r_hat_used) * (risk - r_hat_used);
        let vres = target - var_raw;
        self.var_w[cv].observe(-2.0 * vres * v);
        self.var_b[cv].observe(-2.0 * vres);
    }

    /// One labeled point: a step at every grid index.
    pub fn update_point(&mut self, features: &[f64], risks: &[f64], r_hat_used: &[f64]) {
        assert_eq!(features.len(), self.grid.len());
        assert_eq!(risks.len(), self.grid.len());
        assert_eq!(r_hat_used.len(), self.grid.len());
        for i in 0..self.grid.len() {
            self.update_at(i, features[i], risks[i], r_hat_used[i]);
        }
        self.update_count += 1;
    }
}

/// Learned predictor: pretrained features in, binned linear corrections out.
/// Keeps its own (possibly coarser) grid; evaluation at a wealth grid point
/// maps to the nearest regressor point.
pub struct LearnedPredictor {
    risk: Arc<dyn RiskFunction>,
    reg: LearnedRegressor,
    feature_scratch: Vec<f64>,
    risk_scratch: Vec<f64>,
    used_scratch: Vec<f64>,
    /// wealth grid index -> regressor grid index (identity when grids match)
    index_map: Vec<usize>,
}

impl LearnedPredictor {
    pub fn new(risk: Arc<dyn RiskFunction>, wealth_grid: &BetaGrid, reg: LearnedRegressor) -> Self {
        let index_map = wealth_grid
            .points()
            .iter()
            .map(|&b| reg.grid.nearest_index(b))
            .collect();
        let n = reg.grid.len();
        Self {
            risk,
            reg,
            feature_scratch: vec![0.0; n],
            risk_scratch: vec![0.0; n],
            used_scratch: vec![0.0; n],
            index_map,
        }
    }

    pub fn regressor(&self) -> &LearnedRegressor {
        &self.reg
    }
}

impl Predictor for LearnedPredictor {
    fn risk_curve(&mut self, scores: &ScoreVector, grid: &BetaGrid, out: &mut [f64]) {
        self.risk
            .expected_risk_curve(scores, &self.reg.grid, &mut self.feature_scratch);
        for (i, o) in out.iter_mut().enumerate().take(grid.len()) {
            let j = self.index_map[i];
            *o = self.reg.predict_risk(j, self.feature_scratch[j]);
        }
    }

    fn sigma(&mut self, scores: &ScoreVector, beta: f64) -> f64 {
        let j = self.reg.grid.nearest_index(beta);
        let f = self.risk.expected_risk(scores, self.reg.grid.get(j));
        self.reg.predict_sigma(j, f)
    }

    fn update(&mut self, point: &LabeledPoint) {
        self.risk
            .expected_risk_curve(&point.scores, &self.reg.grid, &mut self.feature_scratch);
        self.risk
            .risk_curve(point, &self.reg.grid, &mut self.risk_scratch);
        for j in 0..self.reg.grid.len() {
            self.used_scratch[j] = self.reg.predict_risk(j, self.feature_scratch[j]);
        }
        self.reg
            .update_point(&self.feature_scratch, &self.risk_scratch, &self.used_scratch);
    }

    fn update_count(&self) -> u64 {
        self.reg.update_count
    }
}

/// Bets without a predictor (the active e-process).
pub struct NoPredictor;

impl Predictor for NoPredictor {
    fn risk_curve(&mut self, _scores: &ScoreVector, _grid: &BetaGrid, out: &mut [f64]) {
        out.fill(0.0);
    }

    fn sigma(&mut self, _scores: &ScoreVector, _beta: f64) -> f64 {
        0.0
    }

    fn update(&mut self, _point: &LabeledPoint) {}
}
