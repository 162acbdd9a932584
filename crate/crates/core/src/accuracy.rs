//! Multi-reference answer accuracy.
//!
//! A prediction is scored against ten human annotations: for each of the ten
//! leave-one-out subsets of nine references, the subset score is
//! `min(matches / 3, 1)`, and the accuracy is the mean of the ten subset
//! scores. With ten references the attainable values are exactly
//! `{0, 0.3, 0.6, 0.9, 1.0}`.
//!
//! All scores here are computed as an integer numerator over 30, so equal
//! match counts give bit-identical results regardless of reference order.

use crate::error::{Error, Result};
use crate::records::{AnnotationSet, AnswerText, ANNOTATION_COUNT};

/// The attainable accuracy values with ten references.
pub const ACCURACY_LATTICE: [f64; 5] = [0.0, 0.3, 0.6, 0.9, 1.0];

/// Tolerance used when asserting membership in the accuracy lattice.
pub const LATTICE_TOLERANCE: f64 = 1e-12;

/// A multi-reference accuracy score in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracyValue(f64);

impl AccuracyValue {
    /// Wrap a value that must already lie on the accuracy lattice.
    pub fn from_level(value: f64) -> Result<Self> {
        if !ACCURACY_LATTICE.iter().any(|&l| (l - value).abs() <= LATTICE_TOLERANCE) {
            return Err(Error::Domain(format!("{value} is not an attainable accuracy value")));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Whether the answer earned any credit at all.
    pub fn is_correct(self) -> bool {
        self.0 > 0.0
    }
}

/// Accuracy of a prediction against ten references.
///
/// `matches` counts references whose normalized text equals the prediction's;
/// each leave-one-out subset keeps `matches` or `matches - 1` of them.
pub fn vqa_accuracy(prediction: &AnswerText, refs: &AnnotationSet) -> AccuracyValue {
    debug_assert_eq!(refs.answers().len(), ANNOTATION_COUNT);
    let mut numerator = 0u32;
    let k = refs.count_matches(prediction) as u32;
    for held_out in refs.answers() {
        let subset_matches = k - u32::from(held_out.matches(prediction));
        numerator += subset_matches.min(3);
    }
    let value = f64::from(numerator) / 30.0;
    debug_assert!(
        ACCURACY_LATTICE.iter().any(|&l| (l - value).abs() <= LATTICE_TOLERANCE),
        "accuracy {value} off the lattice"
    );
    AccuracyValue(value)
}

/// Closed form of [`vqa_accuracy`] as a function of the match count `k`:
/// `(k * min(k - 1, 3) + (10 - k) * min(k, 3)) / 30`.
pub fn closed_form_accuracy(k: usize) -> Result<AccuracyValue> {
    if k > ANNOTATION_COUNT {
        return Err(Error::Domain(format!("match count {k} exceeds {ANNOTATION_COUNT}")));
    }
    let k = k as u32;
    let with_match = k * k.saturating_sub(1).min(3);
    let without_match = (ANNOTATION_COUNT as u32 - k) * k.min(3);
    Ok(AccuracyValue(f64::from(with_match + without_match) / 30.0))
}

/// Per-vocabulary-entry accuracy targets for one question.
///
/// Entry `j` is `vqa_accuracy(vocabulary[j], refs)`; answers absent from the
/// references score 0. These are the soft labels used to train the
/// vector-scaling calibrator.
pub fn soft_targets(refs: &AnnotationSet, vocabulary: &[AnswerText]) -> Vec<f64> {
    vocabulary.iter().map(|answer| vqa_accuracy(answer, refs).value()).collect()
}
