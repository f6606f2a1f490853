//! Parameter-free scalar optimizer for the online learners.
//!
//! Coin-betting style minimizer: no learning rate, the step size adapts to
//! the observed gradient range. Used for the policy normalizer, the dual
//! variable, and the binned regressors. Gradients can be clipped and the
//! iterate confined to a box so that long stretches of one-sided gradients
//! (which the budget game produces while the policy is saturated) cannot run
//! the state off to infinity.

/// Curvature guard: the denominator never drops below `alpha * max_grad`.
const TRUST_ALPHA: f64 = 100.0;
/// Initial gradient-scale guess; any observed gradient overrides it.
const INITIAL_SCALE: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct CocobScalar {
    initial: f64,
    value: f64,
    max_grad: f64,
    grad_abs_sum: f64,
    reward: f64,
    neg_grad_sum: f64,
    lo: f64,
    hi: f64,
    grad_clip: f64,
    avg_sum: f64,
    avg_count: u64,
    observations: u64,
}

impl CocobScalar {
    pub fn new(initial: f64) -> Self {
        Self {
            initial,
            value: initial,
            max_grad: INITIAL_SCALE,
            grad_abs_sum: 0.0,
            reward: 0.0,
            neg_grad_sum: 0.0,
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
            grad_clip: f64::INFINITY,
            avg_sum: 0.0,
            avg_count: 0,
            observations: 0,
        }
    }

    /// Confine the iterate to `[lo, hi]`.
    pub fn bounded(initial: f64, lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= initial && initial <= hi);
        Self {
            lo,
            hi,
            ..Self::new(initial)
        }
    }

    pub fn with_grad_clip(mut self, clip: f64) -> Self {
        debug_assert!(clip > 0.0);
        self.grad_clip = clip;
        self
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    /// Suffix-averaged iterate: the mean value since the last power-of-two
    /// observation count. Restarting the window at doubling boundaries
    /// washes out the initial transient while still averaging over at least
    /// the most recent half of the trajectory, which smooths the coin-betting
    /// wobble out of served predictions.
    pub fn averaged_value(&self) -> f64 {
        if self.avg_count == 0 {
            self.value
        } else {
            self.avg_sum / self.avg_count as f64
        }
    }

    /// One minimization step given the loss gradient at the current value.
    /// Returns the updated value.
    pub fn observe(&mut self, gradient: f64) -> f64 {
        let g = gradient.clamp(-self.grad_clip, self.grad_clip);
        self.max_grad = self.max_grad.max(g.abs());
        self.grad_abs_sum += g.abs();
        self.reward = (self.reward + (self.value - self.initial) * (-g)).max(0.0);
        self.neg_grad_sum += -g;
        let denom =
            self.max_grad * (self.grad_abs_sum + self.max_grad).max(TRUST_ALPHA * self.max_grad);
        let w = self.initial + self.neg_grad_sum / denom * (self.max_grad + self.reward);
        self.value = w.clamp(self.lo, self.hi);
        self.observations += 1;
        if self.observations.is_power_of_two() {
            self.avg_sum = 0.0;
            self.avg_count = 0;
        }
        self.avg_sum += self.value;
        self.avg_count += 1;
        self.value
    }
}
