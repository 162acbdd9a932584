//! Risk-coverage metrics for selective models.
//!
//! Coverage is the fraction of questions answered; risk is the mean error
//! (one minus accuracy) over the answered portion only, and is undefined at
//! zero coverage. Sweeping the decision threshold over the confidence values
//! traces a risk-coverage curve, from which AUC and maximum
//! coverage-at-risk are derived.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// One scored example: the selection function's confidence plus the
/// already-computed accuracy of the model's answer.
///
/// `correct_top1` is binary correctness against the most frequent reference
/// answer (used by ECE). `difficulty` and `unfair` carry the optional
/// difficulty level and label-noise flag through from the record.
#[derive(Debug, Clone)]
pub struct ScoredExample {
    pub id: String,
    pub confidence: f64,
    pub accuracy: f64,
    pub correct_top1: bool,
    pub difficulty: Option<u8>,
    pub unfair: bool,
}

impl ScoredExample {
    pub fn new(id: impl Into<String>, confidence: f64, accuracy: f64) -> Self {
        Self {
            id: id.into(),
            confidence,
            accuracy,
            correct_top1: accuracy > 0.0,
            difficulty: None,
            unfair: false,
        }
    }
}

/// A point on the risk-coverage curve: the prefix reached by thresholding
/// at `threshold` with the `confidence >= threshold` rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RcPoint {
    pub coverage: f64,
    pub risk: f64,
    pub threshold: f64,
}

/// Risk-coverage curve: coverage strictly increases along the points and
/// the final point has coverage 1.
#[derive(Debug, Clone, PartialEq)]
pub struct RcCurve {
    pub points: Vec<RcPoint>,
}

impl RcCurve {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Fraction of examples answered.
pub fn coverage(decisions: &[bool]) -> Result<f64> {
    if decisions.is_empty() {
        return Err(Error::Domain("coverage of an empty decision sequence".into()));
    }
    let answered = decisions.iter().filter(|&&d| d).count();
    Ok(answered as f64 / decisions.len() as f64)
}

/// Mean error over the answered examples: `Σ (1 - acc_i) g_i / Σ g_i`.
///
/// Errors with [`Error::UndefinedRisk`] at zero coverage; callers must skip
/// such thresholds rather than coerce the value to 0.
pub fn risk(examples: &[ScoredExample], decisions: &[bool]) -> Result<f64> {
    if examples.len() != decisions.len() {
        return Err(Error::Dimension(format!(
            "{} examples vs {} decisions",
            examples.len(),
            decisions.len()
        )));
    }
    let mut answered = 0usize;
    let mut error_sum = 0.0;
    for (example, &answer) in examples.iter().zip(decisions) {
        if answer {
            answered += 1;
            error_sum += 1.0 - example.accuracy;
        }
    }
    if answered == 0 {
        return Err(Error::UndefinedRisk);
    }
    Ok(error_sum / answered as f64)
}

/// Sort order for the curve: confidence descending, id ascending.
fn curve_order(examples: &[ScoredExample], key: impl Fn(&ScoredExample) -> f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.sort_by(|&a, &b| {
        key(&examples[b])
            .partial_cmp(&key(&examples[a]))
            .unwrap_or(Ordering::Equal)
            .then_with(|| examples[a].id.cmp(&examples[b].id))
    });
    order
}

fn prefix_curve(
    examples: &[ScoredExample],
    key: impl Fn(&ScoredExample) -> f64,
    merge_ties: bool,
) -> RcCurve {
    let order = curve_order(examples, &key);
    let n = examples.len() as f64;
    let mut points = Vec::new();
    let mut answered = 0usize;
    let mut error_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let group_key = key(&examples[order[i]]);
        // Examples tied on the key form an atomic group when thresholding:
        // the `>= threshold` rule cannot separate them.
        loop {
            answered += 1;
            error_sum += 1.0 - examples[order[i]].accuracy;
            i += 1;
            if !merge_ties || i >= order.len() || key(&examples[order[i]]) != group_key {
                break;
            }
        }
        points.push(RcPoint {
            coverage: answered as f64 / n,
            risk: error_sum / answered as f64,
            threshold: group_key,
        });
    }
    RcCurve { points }
}

/// Risk-coverage curve of a confidence assignment.
///
/// Examples are sorted by confidence descending (ids break ties
/// deterministically), equal confidences merge into atomic groups, and one
/// point is emitted per group boundary. Thresholding at any emitted
/// threshold with the `confidence >= threshold` rule reproduces exactly that
/// prefix.
pub fn rc_curve(examples: &[ScoredExample]) -> Result<RcCurve> {
    if examples.is_empty() {
        return Err(Error::Domain("risk-coverage curve of an empty set".into()));
    }
    Ok(prefix_curve(examples, |e| e.confidence, true))
}

/// The oracle frontier: the curve of a selector that ranks by true accuracy,
/// i.e. abstains only on the least correct answers. Its coverage-at-risk
/// upper-bounds every realizable selector's.
///
/// Unlike [`rc_curve`], every prefix is emitted: the oracle is free to
/// separate examples with equal accuracy, so equal values do not form
/// atomic groups here.
pub fn best_possible_curve(examples: &[ScoredExample]) -> Result<RcCurve> {
    if examples.is_empty() {
        return Err(Error::Domain("best-possible curve of an empty set".into()));
    }
    Ok(prefix_curve(examples, |e| e.accuracy, false))
}

/// Area under the risk-coverage curve (lower is better).
///
/// Trapezoidal integration over the curve's points, with the curve extended
/// left by a constant segment from `(0, risk of the first point)`.
pub fn auc(curve: &RcCurve) -> f64 {
    let Some(first) = curve.points.first() else { return 0.0 };
    let mut area = first.risk * first.coverage;
    for pair in curve.points.windows(2) {
        area += (pair[1].coverage - pair[0].coverage) * (pair[0].risk + pair[1].risk) / 2.0;
    }
    area
}

/// Maximum coverage among curve points with risk at most `target_risk`;
/// 0 when no point qualifies.
pub fn coverage_at_risk(curve: &RcCurve, target_risk: f64) -> f64 {
    curve
        .points
        .iter()
        .filter(|p| p.risk <= target_risk)
        .map(|p| p.coverage)
        .fold(0.0, f64::max)
}

/// Expected calibration error over equal-width confidence bins.
///
/// The unit interval splits into `bins` bins, right-closed except the first;
/// ECE is the bin-size-weighted mean absolute gap between mean confidence
/// and the top-1 correctness rate. Confidences must be probabilities in
/// `[0, 1]`.
pub fn ece(examples: &[ScoredExample], bins: usize) -> Result<f64> {
    if bins == 0 {
        return Err(Error::Domain("ece needs at least one bin".into()));
    }
    if examples.is_empty() {
        return Err(Error::Domain("ece of an empty set".into()));
    }
    struct Bin {
        count: usize,
        confidence_sum: f64,
        correct_sum: f64,
    }
    let mut table: BTreeMap<usize, Bin> = BTreeMap::new();
    for example in examples {
        let c = example.confidence;
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::Domain(format!(
                "ece confidence {c} outside [0, 1] (example '{}')",
                example.id
            )));
        }
        let index = ((c * bins as f64).ceil() as usize).clamp(1, bins);
        let bin = table.entry(index).or_insert(Bin { count: 0, confidence_sum: 0.0, correct_sum: 0.0 });
        bin.count += 1;
        bin.confidence_sum += c;
        bin.correct_sum += if example.correct_top1 { 1.0 } else { 0.0 };
    }
    let n = examples.len() as f64;
    let mut total = 0.0;
    for bin in table.values() {
        let weight = bin.count as f64 / n;
        let gap = (bin.correct_sum - bin.confidence_sum).abs() / bin.count as f64;
        total += weight * gap;
    }
    Ok(total)
}
