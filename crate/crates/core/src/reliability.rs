//! Effective reliability and threshold selection.
//!
//! The effective reliability score of one example is its accuracy when the
//! model answers at least partially correctly, `-c` when it answers with
//! zero accuracy, and 0 when it abstains; the set-level score is the mean.
//! A model that abstains exactly on its zero-accuracy answers scores its
//! mean accuracy, which also upper-bounds the score for every decision
//! vector and every cost.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::metrics::{self, ScoredExample};

/// Penalty charged for an answered, fully incorrect question.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cost(f64);

impl Cost {
    pub fn new(c: f64) -> Result<Self> {
        if !c.is_finite() || c < 0.0 {
            return Err(Error::Domain(format!("cost must be a non-negative real, got {c}")));
        }
        Ok(Self(c))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Decision threshold on confidences: answer iff `confidence >= gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold(f64);

impl Threshold {
    pub fn new(gamma: f64) -> Result<Self> {
        if !gamma.is_finite() {
            return Err(Error::Domain("threshold must be finite".into()));
        }
        Ok(Self(gamma))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Apply the threshold to a set of examples.
    pub fn decisions(self, examples: &[ScoredExample]) -> Vec<bool> {
        examples.iter().map(|e| e.confidence >= self.0).collect()
    }
}

/// Evaluation of a threshold on a test set: the effective reliability score
/// plus the risk (undefined at zero coverage) and coverage it traded for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReliabilityReport {
    pub phi: f64,
    pub risk: Option<f64>,
    pub coverage: f64,
    pub threshold: Threshold,
    pub cost: Cost,
}

fn check_lengths(examples: &[ScoredExample], decisions: &[bool]) -> Result<()> {
    if examples.len() != decisions.len() {
        return Err(Error::Dimension(format!(
            "{} examples vs {} decisions",
            examples.len(),
            decisions.len()
        )));
    }
    if examples.is_empty() {
        return Err(Error::Domain("effective reliability of an empty set".into()));
    }
    Ok(())
}

fn phi_term(accuracy: f64, answered: bool, cost: Cost) -> f64 {
    if !answered {
        0.0
    } else if accuracy > 0.0 {
        accuracy
    } else {
        -cost.value()
    }
}

/// Mean effective reliability over a set of examples and decisions.
pub fn phi_score(examples: &[ScoredExample], decisions: &[bool], cost: Cost) -> Result<f64> {
    check_lengths(examples, decisions)?;
    let total: f64 = examples
        .iter()
        .zip(decisions)
        .map(|(e, &g)| phi_term(e.accuracy, g, cost))
        .sum();
    Ok(total / examples.len() as f64)
}

/// How flagged answered-and-incorrect examples are treated when
/// recomputing the score under label-noise overrides.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OverrideMode {
    /// Count the flagged question as an abstention (lower bound).
    Abstain,
    /// Count it as answered with full accuracy (upper bound).
    Correct,
}

/// Effective reliability with label-noise overrides applied.
///
/// Examples flagged `unfair` that were answered with zero accuracy are
/// rescored per `mode`; everything else is unchanged. With no flags this
/// equals [`phi_score`].
pub fn phi_with_overrides(
    examples: &[ScoredExample],
    decisions: &[bool],
    cost: Cost,
    mode: OverrideMode,
) -> Result<f64> {
    check_lengths(examples, decisions)?;
    let total: f64 = examples
        .iter()
        .zip(decisions)
        .map(|(e, &g)| {
            if e.unfair && g && e.accuracy == 0.0 {
                match mode {
                    OverrideMode::Abstain => 0.0,
                    OverrideMode::Correct => 1.0,
                }
            } else {
                phi_term(e.accuracy, g, cost)
            }
        })
        .sum();
    Ok(total / examples.len() as f64)
}

/// Candidate thresholds for an exact sweep: midpoints between consecutive
/// distinct confidences, plus one sentinel below the minimum (answer
/// everything) and one above the maximum (abstain on everything). The score
/// of a `>= gamma` rule is piecewise constant between distinct confidences,
/// so this grid is exhaustive.
pub fn candidate_thresholds(examples: &[ScoredExample]) -> Vec<f64> {
    let mut confidences: Vec<f64> = examples.iter().map(|e| e.confidence).collect();
    confidences.sort_by(|a, b| a.partial_cmp(b).expect("finite confidences"));
    confidences.dedup();
    let mut candidates = Vec::with_capacity(confidences.len() + 1);
    candidates.push(confidences[0] - 1.0);
    for pair in confidences.windows(2) {
        candidates.push((pair[0] + pair[1]) / 2.0);
    }
    candidates.push(confidences[confidences.len() - 1] + 1.0);
    candidates
}

/// The threshold maximizing effective reliability on a validation set.
///
/// Ties break toward the larger threshold (more abstention).
pub fn choose_threshold_phi(val_examples: &[ScoredExample], cost: Cost) -> Result<Threshold> {
    if val_examples.is_empty() {
        return Err(Error::Domain("threshold selection on an empty validation set".into()));
    }
    let mut best: Option<(f64, f64)> = None;
    for gamma in candidate_thresholds(val_examples) {
        let decisions: Vec<bool> = val_examples.iter().map(|e| e.confidence >= gamma).collect();
        let phi = phi_score(val_examples, &decisions, cost)?;
        // `>=` so a later (larger) candidate wins ties.
        if best.map_or(true, |(_, best_phi)| phi >= best_phi) {
            best = Some((gamma, phi));
        }
    }
    let (gamma, _) = best.expect("candidate grid is non-empty");
    Threshold::new(gamma)
}

/// The smallest threshold whose validation risk is at most `target_risk`,
/// i.e. the feasible threshold with maximum coverage. Zero-coverage
/// candidates have undefined risk and are skipped.
pub fn choose_threshold_risk(val_examples: &[ScoredExample], target_risk: f64) -> Result<Threshold> {
    if val_examples.is_empty() {
        return Err(Error::Domain("threshold selection on an empty validation set".into()));
    }
    if !(0.0..=1.0).contains(&target_risk) {
        return Err(Error::Domain(format!("target risk {target_risk} outside [0, 1]")));
    }
    for gamma in candidate_thresholds(val_examples) {
        let decisions: Vec<bool> = val_examples.iter().map(|e| e.confidence >= gamma).collect();
        match metrics::risk(val_examples, &decisions) {
            Ok(risk) if risk <= target_risk => return Threshold::new(gamma),
            Ok(_) => {}
            Err(Error::UndefinedRisk) => {}
            Err(e) => return Err(e),
        }
    }
    Err(Error::UnreachableRisk(target_risk))
}

/// Apply a threshold to a test set and report score, risk, and coverage.
pub fn evaluate_at_threshold(
    test_examples: &[ScoredExample],
    gamma: Threshold,
    cost: Cost,
) -> Result<ReliabilityReport> {
    if test_examples.is_empty() {
        return Err(Error::Domain("evaluation of an empty test set".into()));
    }
    let decisions = gamma.decisions(test_examples);
    let phi = phi_score(test_examples, &decisions, cost)?;
    let coverage = metrics::coverage(&decisions)?;
    let risk = match metrics::risk(test_examples, &decisions) {
        Ok(r) => Some(r),
        Err(Error::UndefinedRisk) => None,
        Err(e) => return Err(e),
    };
    Ok(ReliabilityReport { phi, risk, coverage, threshold: gamma, cost })
}

/// Transfer of a validation-chosen threshold to a test set for one target
/// risk level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferPoint {
    pub target_risk: f64,
    pub gamma: Threshold,
    /// Test risk at the validation threshold minus the target risk.
    pub delta_risk: f64,
    /// Test coverage at the validation threshold minus the test curve's
    /// maximum coverage at the target risk.
    pub delta_coverage: f64,
}

/// For each target risk, choose the threshold on validation and measure how
/// its risk and coverage generalize to the test set. Unreachable targets
/// propagate their error per entry.
pub fn threshold_generalization(
    val_examples: &[ScoredExample],
    test_examples: &[ScoredExample],
    targets: &[f64],
) -> Vec<(f64, Result<TransferPoint>)> {
    targets
        .iter()
        .map(|&target| (target, transfer_one(val_examples, test_examples, target)))
        .collect()
}

fn transfer_one(
    val_examples: &[ScoredExample],
    test_examples: &[ScoredExample],
    target: f64,
) -> Result<TransferPoint> {
    let gamma = choose_threshold_risk(val_examples, target)?;
    let decisions = gamma.decisions(test_examples);
    let test_risk = metrics::risk(test_examples, &decisions)?;
    let test_coverage = metrics::coverage(&decisions)?;
    let curve = metrics::rc_curve(test_examples)?;
    let best_coverage = metrics::coverage_at_risk(&curve, target);
    Ok(TransferPoint {
        target_risk: target,
        gamma,
        delta_risk: test_risk - target,
        delta_coverage: test_coverage - best_coverage,
    })
}

/// Per-key mean and sample standard deviation over per-seed metric
/// mappings. All reports must share an identical key set; the standard
/// deviation uses the `n - 1` denominator and is 0 for a single report.
pub fn aggregate_seeds(
    reports: &[BTreeMap<String, f64>],
) -> Result<(BTreeMap<String, f64>, BTreeMap<String, f64>)> {
    let Some(first) = reports.first() else {
        return Err(Error::Domain("aggregate_seeds needs at least one report".into()));
    };
    for (i, report) in reports.iter().enumerate().skip(1) {
        if report.len() != first.len() || !report.keys().eq(first.keys()) {
            return Err(Error::Validation(format!(
                "report {i} has a different key set from report 0"
            )));
        }
    }
    let n = reports.len() as f64;
    let mut means = BTreeMap::new();
    let mut stds = BTreeMap::new();
    for key in first.keys() {
        let values: Vec<f64> = reports.iter().map(|r| r[key]).collect();
        let mean = values.iter().sum::<f64>() / n;
        let std = if reports.len() == 1 {
            0.0
        } else {
            let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
            (ss / (n - 1.0)).sqrt()
        };
        means.insert(key.clone(), mean);
        stds.insert(key.clone(), std);
    }
    Ok((means, stds))
}

/// Difficulty bucket for grouped metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DifficultyGroup {
    Level(u8),
    Unlabeled,
}

impl std::fmt::Display for DifficultyGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DifficultyGroup::Level(l) => write!(f, "level{l}"),
            DifficultyGroup::Unlabeled => f.write_str("unlabeled"),
        }
    }
}

/// Per-difficulty answered counts and level-local coverage/risk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DifficultyMetrics {
    pub total: usize,
    pub answered: usize,
    pub coverage: f64,
    /// Undefined (None) when the level has no answered questions.
    pub risk: Option<f64>,
}

/// Group examples by difficulty level and report counts, coverage, and risk
/// per group. Unlabeled examples land in their own bucket.
pub fn metrics_by_difficulty(
    examples: &[ScoredExample],
    decisions: &[bool],
) -> Result<BTreeMap<DifficultyGroup, DifficultyMetrics>> {
    check_lengths(examples, decisions)?;
    let mut groups: BTreeMap<DifficultyGroup, Vec<usize>> = BTreeMap::new();
    for (i, example) in examples.iter().enumerate() {
        let group = match example.difficulty {
            Some(level) => DifficultyGroup::Level(level),
            None => DifficultyGroup::Unlabeled,
        };
        groups.entry(group).or_default().push(i);
    }
    let mut out = BTreeMap::new();
    for (group, indices) in groups {
        let members: Vec<ScoredExample> = indices.iter().map(|&i| examples[i].clone()).collect();
        let member_decisions: Vec<bool> = indices.iter().map(|&i| decisions[i]).collect();
        let coverage = metrics::coverage(&member_decisions)?;
        let answered = member_decisions.iter().filter(|&&d| d).count();
        let risk = match metrics::risk(&members, &member_decisions) {
            Ok(r) => Some(r),
            Err(Error::UndefinedRisk) => None,
            Err(e) => return Err(e),
        };
        out.insert(group, DifficultyMetrics { total: indices.len(), answered, coverage, risk });
    }
    Ok(out)
}
