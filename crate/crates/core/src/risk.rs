//! Risk functions over classifier scores.
//!
//! Two concrete risks are provided: miscoverage of top-probability prediction
//! sets for multiclass scores, and the false-positive rate for a binary score
//! used by the synthetic stream. Both are {0,1}-valued, non-increasing in the
//! threshold β, and exactly zero at β = 1.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::BetaGrid;

/// Tolerance for probability vectors summing to one.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum RiskError {
    #[error("score vector is empty")]
    EmptyScores,
    #[error("probability {value} at class {class} outside [0, 1]")]
    ProbabilityOutOfRange { class: usize, value: f64 },
    #[error("probabilities sum to {0}, beyond simplex tolerance")]
    NotASimplex(f64),
    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },
}

/// A classifier's probability vector over classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    probs: Vec<f64>,
}

impl ScoreVector {
    pub fn new(probs: Vec<f64>) -> Result<Self, RiskError> {
        if probs.is_empty() {
            return Err(RiskError::EmptyScores);
        }
        for (class, &p) in probs.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) || p.is_nan() {
                return Err(RiskError::ProbabilityOutOfRange { class, value: p });
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(RiskError::NotASimplex(sum));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn classes(&self) -> usize {
        self.probs.len()
    }

    /// In-place access for stream generators that keep the simplex invariant
    /// themselves (avoids a fresh allocation per stream element).
    pub(crate) fn probs_mut(&mut self) -> &mut Vec<f64> {
        &mut self.probs
    }
}

/// One stream element: a score vector and its true class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub scores: ScoreVector,
    pub label: u32,
}

impl LabeledPoint {
    pub fn new(scores: ScoreVector, label: u32) -> Result<Self, RiskError> {
        if label as usize >= scores.classes() {
            return Err(RiskError::ClassOutOfRange {
                index: label as usize,
                classes: scores.classes(),
            });
        }
        Ok(Self { scores, label })
    }
}

/// Top-probability prediction set at threshold γ(x, β).
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    /// The score threshold actually attained.
    pub gamma: f64,
    /// Classes with score ≥ gamma, ascending.
    pub members: Vec<usize>,
}

impl PredictionSet {
    pub fn contains(&self, class: usize) -> bool {
        self.members.binary_search(&class).is_ok()
    }

    /// Total probability mass of the members.
    pub fn mass(&self, scores: &ScoreVector) -> f64 {
        self.members.iter().map(|&y| scores.probs()[y]).sum()
    }
}

/// Sorted view of a score vector with tie groups merged, used to sweep
/// thresholds. `group_mass[g]` is the cumulative mass of groups 0..=g.
struct SortedScores {
    /// (score value, cumulative mass through this tie group)
    groups: Vec<(f64, f64)>,
    /// tie-group index of each class
    group_of: Vec<usize>,
}

impl SortedScores {
    fn new(scores: &ScoreVector) -> Self {
        let probs = scores.probs();
        let mut order: Vec<usize> = (0..probs.len()).collect();
        order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap());
        let mut groups: Vec<(f64, f64)> = Vec::new();
        let mut group_of = vec![0usize; probs.len()];
        let mut mass = 0.0;
        for &idx in &order {
            let p = probs[idx];
            mass += p;
            match groups.last_mut() {
                Some(last) if last.0 == p => last.1 = mass,
                _ => groups.push((p, mass)),
            }
            group_of[idx] = groups.len() - 1;
        }
        Self { groups, group_of }
    }

    /// Index of the last tie group included at level β, or `None` for the
    /// empty prefix (γ = 1). Candidates are the distinct score values plus
    /// 1.0; the largest threshold whose included mass still reaches β wins.
    fn included_groups(&self, beta: f64) -> Option<usize> {
        if beta <= 0.0 && self.groups[0].0 < 1.0 {
            // γ = 1 has zero mass, which suffices for β = 0
            return None;
        }
        for (g, &(_, mass)) in self.groups.iter().enumerate() {
            if mass >= beta {
                return Some(g);
            }
        }
        // The full sum can fall short of β only by simplex tolerance at β≈1;
        // fall back to the complete set.
        Some(self.groups.len() - 1)
    }

    fn gamma(&self, included: Option<usize>) -> f64 {
        match included {
            None => 1.0,
            Some(g) => self.groups[g].0,
        }
    }
}

/// Builds the set of highest-probability classes whose mass reaches β.
///
/// γ is the largest candidate threshold (a score value or 1.0) at which the
/// included mass is still at least β; classes scoring exactly γ are included,
/// so equal-probability classes enter and leave together.
pub fn build_prediction_set(scores: &ScoreVector, beta: f64) -> PredictionSet {
    let sorted = SortedScores::new(scores);
    let included = sorted.included_groups(beta);
    let gamma = sorted.gamma(included);
    let members: Vec<usize> = match included {
        None => (0..scores.classes())
            .filter(|&y| scores.probs()[y] >= 1.0)
            .collect(),
        Some(g) => (0..scores.classes())
            .filter(|&y| sorted.group_of[y] <= g)
            .collect(),
    };
    PredictionSet { gamma, members }
}

/// 1 when the true class falls outside the prediction set at β.
pub fn miscoverage_risk(scores: &ScoreVector, label: usize, beta: f64) -> Result<f64, RiskError> {
    if label >= scores.classes() {
        return Err(RiskError::ClassOutOfRange {
            index: label,
            classes: scores.classes(),
        });
    }
    let set = build_prediction_set(scores, beta);
    Ok(if set.contains(label) { 0.0 } else { 1.0 })
}

/// False-positive rate risk for a binary task with score x = P(class 1):
/// 1 when x ≥ β and the true class is 0.
pub fn fpr_risk(x: f64, label: u32, beta: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&x));
    if x >= beta && label == 0 {
        1.0
    } else {
        0.0
    }
}

/// A {0,1}-valued risk, non-increasing in β with zero risk at β = 1, plus its
/// model-implied expectation under the score vector (the basis of the
/// pretrained predictor). Implementations declare the contract; the harness
/// spot-checks monotonicity and range on samples at startup.
pub trait RiskFunction: Send + Sync {
    fn risk(&self, point: &LabeledPoint, beta: f64) -> f64;

    /// E over Y ~ scores of risk(x, Y, β): what the classifier itself thinks
    /// the risk at β is.
    fn expected_risk(&self, scores: &ScoreVector, beta: f64) -> f64;

    /// Realized risk swept over the grid. `out.len()` must equal the grid size.
    fn risk_curve(&self, point: &LabeledPoint, grid: &BetaGrid, out: &mut [f64]) {
        for (i, &b) in grid.points().iter().enumerate() {
            out[i] = self.risk(point, b);
        }
    }

    /// Model-implied risk swept over the grid.
    fn expected_risk_curve(&self, scores: &ScoreVector, grid: &BetaGrid, out: &mut [f64]) {
        for (i, &b) in grid.points().iter().enumerate() {
            out[i] = self.expected_risk(scores, b);
        }
    }
}

/// Miscoverage of top-probability prediction sets.
#[derive(Debug, Clone, Copy, Default)]
pub struct MiscoverageRisk;

impl RiskFunction for MiscoverageRisk {
    fn risk(&self, point: &LabeledPoint, beta: f64) -> f64 {
        miscoverage_risk(&point.scores, point.label as usize, beta).expect("label validated")
    }

    fn expected_risk(&self, scores: &ScoreVector, beta: f64) -> f64 {
        let set = build_prediction_set(scores, beta);
        // rounding in the score sum can push the excluded mass a hair
        // outside [0, 1]; it is a probability, clamp it
        (1.0 - set.mass(scores)).clamp(0.0, 1.0)
    }

    fn risk_curve(&self, point: &LabeledPoint, grid: &BetaGrid, out: &mut [f64]) {
        let sorted = SortedScores::new(&point.scores);
        let label_group = sorted.group_of[point.label as usize];
        sweep(&sorted, grid, out, |included, _| match included {
            None => 1.0,
            Some(g) => {
                if label_group <= g {
                    0.0
                } else {
                    1.0
                }
            }
        });
    }

    fn expected_risk_curve(&self, scores: &ScoreVector, grid: &BetaGrid, out: &mut [f64]) {
        let sorted = SortedScores::new(scores);
        sweep(&sorted, grid, out, |included, sorted| match included {
            None => 1.0,
            Some(g) => (1.0 - sorted.groups[g].1).clamp(0.0, 1.0),
        });
    }
}

/// Walks the ascending grid once, advancing the included-group pointer.
fn sweep(
    sorted: &SortedScores,
    grid: &BetaGrid,
    out: &mut [f64],
    value: impl Fn(Option<usize>, &SortedScores) -> f64,
) {
    assert_eq!(out.len(), grid.len());
    let n_groups = sorted.groups.len();
    let mut g = 0usize;
    for (i, &beta) in grid.points().iter().enumerate() {
        let included = if beta <= 0.0 && sorted.groups[0].0 < 1.0 {
            None
        } else {
            while g + 1 < n_groups && sorted.groups[g].1 < beta {
                g += 1;
            }
            Some(g)
        };
        out[i] = value(included, sorted);
    }
}

/// False-positive rate on a binary stream; the covariate is P(class 1).
#[derive(Debug, Clone, Copy, Default)]
pub struct FprRisk;

impl FprRisk {
    fn x(scores: &ScoreVector) -> f64 {
        debug_assert_eq!(scores.classes(), 2, "FPR risk expects binary scores");
        scores.probs()[1]
    }
}

impl RiskFunction for FprRisk {
    fn risk(&self, point: &LabeledPoint, beta: f64) -> f64 {
        fpr_risk(Self::x(&point.scores), point.label, beta)
    }

    fn expected_risk(&self, scores: &ScoreVector, beta: f64) -> f64 {
        let x = Self::x(scores);
        if x >= beta {
            scores.probs()[0]
        } else {
            0.0
        }
    }

    fn risk_curve(&self, point: &LabeledPoint, grid: &BetaGrid, out: &mut [f64]) {
        let x = Self::x(&point.scores);
        let hit = point.label == 0;
        for (i, &b) in grid.points().iter().enumerate() {
            out[i] = if hit && x >= b { 1.0 } else { 0.0 };
        }
    }

    fn expected_risk_curve(&self, scores: &ScoreVector, grid: &BetaGrid, out: &mut [f64]) {
        let x = Self::x(scores);
        let p0 = scores.probs()[0];
        for (i, &b) in grid.points().iter().enumerate() {
            out[i] = if x >= b { p0 } else { 0.0 };
        }
    }
}
