//! Data model for per-example prediction records.
//!
//! A record file is UTF-8 with one JSON object per line. Required keys are
//! `id`, `image_id`, `predicted_answer`, and `annotations` (array of exactly
//! 10 strings); optional keys are `confidence`, `features` (object with
//! arrays `q`, `v`, `v_tilde`, `r`, `logits`), `difficulty` (1|2|3), and
//! `noise_override` ("unfair"). When any record carries logits, a sidecar
//! vocabulary file (one answer string per line, index-aligned with the
//! logits) must accompany the records.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::Deserializer;
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of reference annotations every record must carry.
pub const ANNOTATION_COUNT: usize = 10;

// ---------------------------------------------------------------------------
// Answer text
// ---------------------------------------------------------------------------

/// An answer string together with its normalized form.
///
/// Normalization lowercases, trims surrounding whitespace, and collapses
/// internal whitespace runs to single spaces. It is idempotent. Answer
/// matching everywhere in this crate is equality of normalized forms; any
/// richer canonicalization (punctuation, number words) belongs in a
/// preprocessing step before records are written.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AnswerText {
    raw: String,
    normalized: String,
}

impl AnswerText {
    pub fn new(raw: impl Into<String>) -> Self {
        let raw = raw.into();
        let normalized = normalize_answer(&raw);
        Self { raw, normalized }
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn normalized(&self) -> &str {
        &self.normalized
    }

    /// Answer equality under normalization.
    pub fn matches(&self, other: &AnswerText) -> bool {
        self.normalized == other.normalized
    }
}

impl fmt::Display for AnswerText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

impl Serialize for AnswerText {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.raw)
    }
}

impl<'de> Deserialize<'de> for AnswerText {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        Ok(AnswerText::new(String::deserialize(deserializer)?))
    }
}

fn normalize_answer(raw: &str) -> String {
    raw.to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

// ---------------------------------------------------------------------------
// Annotations
// ---------------------------------------------------------------------------

/// The ten human reference annotations for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnnotationSet(Vec<AnswerText>);

impl AnnotationSet {
    /// Build an annotation set, rejecting wrong counts and empty strings.
    pub fn new(answers: Vec<AnswerText>) -> Result<Self> {
        let set = Self(answers);
        set.check()?;
        Ok(set)
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.0.len() != ANNOTATION_COUNT {
            return Err(Error::Validation(format!(
                "annotation count {} ≠ {ANNOTATION_COUNT}",
                self.0.len()
            )));
        }
        if self.0.iter().any(|a| a.normalized().is_empty()) {
            return Err(Error::Validation("empty annotation string".into()));
        }
        Ok(())
    }

    pub fn answers(&self) -> &[AnswerText] {
        &self.0
    }

    /// How many references match `prediction` under normalization.
    pub fn count_matches(&self, prediction: &AnswerText) -> usize {
        self.0.iter().filter(|a| a.matches(prediction)).count()
    }

    /// The most frequent reference answer, ties broken by lexicographic
    /// order of the normalized strings.
    pub fn most_frequent(&self) -> &AnswerText {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for a in &self.0 {
            *counts.entry(a.normalized()).or_insert(0) += 1;
        }
        // BTreeMap iterates keys in lexicographic order, so the first
        // maximal count wins the tie-break.
        let (best, _) = counts
            .iter()
            .fold(("", 0usize), |acc, (&k, &c)| if c > acc.1 { (k, c) } else { acc });
        self.0
            .iter()
            .find(|a| a.normalized() == best)
            .expect("winner comes from this set")
    }
}

// ---------------------------------------------------------------------------
// Features
// ---------------------------------------------------------------------------

/// Optional per-record representation vectors extracted from the model.
///
/// `q` is the question representation, `v` the question-conditioned image
/// representation, `v_tilde` the unimodal image representation, `r` the
/// multimodal representation, and `logits` the pre-softmax scores over the
/// answer vocabulary.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureBundle {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_tilde: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<Vec<f64>>,
}

impl FeatureBundle {
    /// Named channels in canonical order.
    pub fn channels(&self) -> [(&'static str, Option<&Vec<f64>>); 5] {
        [
            ("q", self.q.as_ref()),
            ("v", self.v.as_ref()),
            ("v_tilde", self.v_tilde.as_ref()),
            ("r", self.r.as_ref()),
            ("logits", self.logits.as_ref()),
        ]
    }

    fn check(&self) -> Result<()> {
        for (name, vec) in self.channels() {
            if let Some(vec) = vec {
                if vec.is_empty() {
                    return Err(Error::Validation(format!("feature channel `{name}` is empty")));
                }
                if vec.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Validation(format!(
                        "feature channel `{name}` has a non-finite entry"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Annotation-noise override from manual label review.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseOverride {
    /// The record was judged unfairly penalized by its references.
    Unfair,
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

/// One evaluated example: the model's predicted answer plus everything
/// needed to score it and to run a selection function over it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub image_id: String,
    pub predicted_answer: AnswerText,
    /// Precomputed confidence g'(x), if a selection function already ran.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureBundle>,
    pub annotations: AnnotationSet,
    /// Question difficulty level in {1, 2, 3}, when labeled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_override: Option<NoiseOverride>,
}

impl Record {
    /// Per-record structural checks (set-level checks live on `RecordSet`).
    pub fn check(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Validation("empty record id".into()));
        }
        if self.image_id.is_empty() {
            return Err(Error::Validation(format!("record '{}': empty image_id", self.id)));
        }
        if self.predicted_answer.normalized().is_empty() {
            return Err(Error::Validation(format!(
                "record '{}': empty predicted answer",
                self.id
            )));
        }
        self.annotations
            .check()
            .map_err(|e| Error::Validation(format!("record '{}': {e}", self.id)))?;
        if let Some(c) = self.confidence {
            if !c.is_finite() {
                return Err(Error::Validation(format!(
                    "record '{}': non-finite confidence",
                    self.id
                )));
            }
        }
        if let Some(features) = &self.features {
            features
                .check()
                .map_err(|e| Error::Validation(format!("record '{}': {e}", self.id)))?;
        }
        if let Some(d) = self.difficulty {
            if !(1..=3).contains(&d) {
                return Err(Error::Validation(format!(
                    "record '{}': difficulty {d} outside {{1,2,3}}",
                    self.id
                )));
            }
        }
        Ok(())
    }

    pub fn logits(&self) -> Option<&Vec<f64>> {
        self.features.as_ref().and_then(|f| f.logits.as_ref())
    }
}

/// An ordered collection of records, optionally with the answer vocabulary
/// aligned to the records' logits.
#[derive(Debug, Clone)]
pub struct RecordSet {
    records: Vec<Record>,
    vocabulary: Option<Vec<AnswerText>>,
}

impl RecordSet {
    /// Build and validate a record set.
    pub fn new(records: Vec<Record>, vocabulary: Option<Vec<AnswerText>>) -> Result<Self> {
        let set = Self { records, vocabulary };
        set.validate()?;
        Ok(set)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.records.len());
        let mut dims: BTreeMap<&'static str, usize> = BTreeMap::new();
        for record in &self.records {
            record.check()?;
            if !seen.insert(record.id.as_str()) {
                return Err(Error::Validation(format!("duplicate record id '{}'", record.id)));
            }
            if let Some(features) = &record.features {
                for (name, vec) in features.channels() {
                    let Some(vec) = vec else { continue };
                    match dims.get(name) {
                        None => {
                            dims.insert(name, vec.len());
                        }
                        Some(&d) if d != vec.len() => {
                            return Err(Error::Validation(format!(
                                "record '{}': channel `{name}` has dimension {} but the set uses {d}",
                                record.id,
                                vec.len()
                            )));
                        }
                        Some(_) => {}
                    }
                }
            }
        }
        if let Some(&logits_dim) = dims.get("logits") {
            match &self.vocabulary {
                None => {
                    return Err(Error::Validation(
                        "records carry logits but no vocabulary is attached".into(),
                    ));
                }
                Some(vocab) if vocab.len() != logits_dim => {
                    return Err(Error::Validation(format!(
                        "vocabulary length {} ≠ logits dimension {logits_dim}",
                        vocab.len()
                    )));
                }
                Some(_) => {}
            }
        }
        if let Some(vocab) = &self.vocabulary {
            if vocab.iter().any(|a| a.normalized().is_empty()) {
                return Err(Error::Validation("empty vocabulary entry".into()));
            }
        }
        Ok(())
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn vocabulary(&self) -> Option<&[AnswerText]> {
        self.vocabulary.as_deref()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Record> {
        self.records.iter()
    }
}

// ---------------------------------------------------------------------------
// Loading and saving
// ---------------------------------------------------------------------------

/// Load a line-delimited record file, preserving file order.
///
/// Answers are normalized on load. Fails with a parse error naming the line
/// number on malformed lines, and with validation errors on bad records
/// (wrong annotation counts, duplicate ids, inconsistent feature
/// dimensions).
pub fn load_records(path: impl AsRef<Path>) -> Result<RecordSet> {
    load_records_inner(path.as_ref(), None)
}

/// Load records together with their sidecar vocabulary file.
pub fn load_records_with_vocabulary(
    records_path: impl AsRef<Path>,
    vocab_path: impl AsRef<Path>,
) -> Result<RecordSet> {
    let vocab = load_vocabulary(vocab_path)?;
    load_records_inner(records_path.as_ref(), Some(vocab))
}

fn load_records_inner(path: &Path, vocabulary: Option<Vec<AnswerText>>) -> Result<RecordSet> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = index + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        record.check().map_err(|e| Error::Validation(format!("line {line_no}: {e}")))?;
        records.push(record);
    }
    RecordSet::new(records, vocabulary)
}

/// Load a vocabulary file: one answer string per line, index-aligned with
/// record logits.
pub fn load_vocabulary(path: impl AsRef<Path>) -> Result<Vec<AnswerText>> {
    let file = File::open(path.as_ref())?;
    let reader = BufReader::new(file);
    let mut vocab = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        let answer = AnswerText::new(line);
        if answer.normalized().is_empty() {
            return Err(Error::Validation(format!(
                "vocabulary line {}: empty answer",
                index + 1
            )));
        }
        vocab.push(answer);
    }
    if vocab.is_empty() {
        return Err(Error::Validation("vocabulary file is empty".into()));
    }
    Ok(vocab)
}

/// Write records as one JSON object per line, preserving order.
pub fn save_records(set: &RecordSet, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut writer = BufWriter::new(file);
    for record in set.records() {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::Validation(format!("serialize record '{}': {e}", record.id)))?;
        writer.write_all(line.as_bytes())?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

/// Write a vocabulary file, one raw answer string per line.
pub fn save_vocabulary(vocab: &[AnswerText], path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut writer = BufWriter::new(file);
    for answer in vocab {
        writer.write_all(answer.raw().as_bytes())?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

/// Conventional sidecar vocabulary path for a records file
/// (`dir/name.jsonl` → `dir/name.vocab`).
pub fn vocabulary_sidecar_path(records_path: impl AsRef<Path>) -> PathBuf {
    records_path.as_ref().with_extension("vocab")
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

/// Dev/Val/Test split ratios plus the shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Fractions of distinct images assigned to (dev, val, test).
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(ratios: [f64; 3], seed: u64) -> Result<Self> {
        if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::Config("split ratios must be non-negative".into()));
        }
        let sum: f64 = ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios sum to {sum}, expected 1")));
        }
        Ok(Self { ratios, seed })
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { ratios: [0.40, 0.10, 0.50], seed: 0 }
    }
}

/// Partition a record set into dev/val/test by image.
///
/// Distinct image ids are sorted, shuffled by a seeded Fisher-Yates pass
/// (ChaCha8, so the same seed reproduces the same split on every platform),
/// and assigned by image count: dev takes `floor(r_dev * m)` images, val
/// `floor(r_val * m)`, test the remainder. All records sharing an image land
/// in the same split, and each split keeps the input record order.
pub fn split_by_image(
    set: &RecordSet,
    spec: &SplitSpec,
) -> Result<(RecordSet, RecordSet, RecordSet)> {
    let mut images: Vec<&str> = set
        .records()
        .iter()
        .map(|r| r.image_id.as_str())
        .collect::<HashSet<_>>()
        .into_iter()
        .collect();
    images.sort_unstable();
    let m = images.len();
    if spec.ratios.iter().all(|&r| r > 0.0) && m < 3 {
        return Err(Error::Validation(format!(
            "cannot populate all splits: {m} distinct images with all ratios positive"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for i in (1..m).rev() {
        let j = rng.gen_range(0..=i);
        images.swap(i, j);
    }

    let dev_n = (spec.ratios[0] * m as f64).floor() as usize;
    let val_n = (spec.ratios[1] * m as f64).floor() as usize;
    let mut assignment: BTreeMap<&str, usize> = BTreeMap::new();
    for (rank, image) in images.iter().enumerate() {
        let split = if rank < dev_n {
            0
        } else if rank < dev_n + val_n {
            1
        } else {
            2
        };
        assignment.insert(image, split);
    }

    let mut parts: [Vec<Record>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for record in set.records() {
        let split = assignment[record.image_id.as_str()];
        parts[split].push(record.clone());
    }
    let [dev, val, test] = parts;
    let vocab = set.vocabulary.clone();
    Ok((
        RecordSet::new(dev, vocab.clone())?,
        RecordSet::new(val, vocab.clone())?,
        RecordSet::new(test, vocab)?,
    ))
}

// ---------------------------------------------------------------------------
// Feature pooling
// ---------------------------------------------------------------------------

/// Element-wise maximum over a set of equal-length vectors.
///
/// Used to collapse a per-record set of representations into one vector
/// before it enters a selection function.
pub fn pool_features(vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(first) = vectors.first() else {
        return Err(Error::Domain("pool_features on an empty sequence".into()));
    };
    let dim = first.len();
    let mut pooled = first.clone();
    for (i, vec) in vectors.iter().enumerate().skip(1) {
        if vec.len() != dim {
            return Err(Error::Dimension(format!(
                "pool_features: vector {i} has length {} but expected {dim}",
                vec.len()
            )));
        }
        for (p, &x) in pooled.iter_mut().zip(vec) {
            *p = p.max(x);
        }
    }
    Ok(pooled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::tempdir;

    fn answer(s: &str) -> AnswerText {
        AnswerText::new(s)
    }

    fn annotations(entries: &[&str]) -> AnnotationSet {
        AnnotationSet::new(entries.iter().map(|s| answer(s)).collect()).unwrap()
    }

    pub(crate) fn record(id: &str, image: &str, prediction: &str, refs: &[&str]) -> Record {
        Record {
            id: id.to_string(),
            image_id: image.to_string(),
            predicted_answer: answer(prediction),
            confidence: None,
            features: None,
            annotations: annotations(refs),
            difficulty: None,
            noise_override: None,
        }
    }

    fn ten_yes() -> Vec<&'static str> {
        vec!["yes"; 10]
    }

    #[test]
    fn normalization_lowercases_and_collapses_whitespace() {
        let a = answer("  Red   Apple \t");
        assert_eq!(a.normalized(), "red apple");
        assert_eq!(a.raw(), "  Red   Apple \t");
        // idempotent
        let again = answer(a.normalized());
        assert_eq!(again.normalized(), a.normalized());
    }

    #[test]
    fn annotation_set_rejects_wrong_count() {
        let nine: Vec<AnswerText> = (0..9).map(|i| answer(&format!("a{i}"))).collect();
        let err = AnnotationSet::new(nine).unwrap_err();
        assert!(err.to_string().contains("annotation count 9 ≠ 10"), "{err}");
    }

    #[test]
    fn annotation_set_rejects_empty_strings() {
        let mut answers: Vec<AnswerText> = (0..9).map(|i| answer(&format!("a{i}"))).collect();
        answers.push(answer("   "));
        assert!(AnnotationSet::new(answers).is_err());
    }

    #[test]
    fn most_frequent_breaks_ties_lexicographically() {
        let refs = annotations(&["b", "b", "a", "a", "c", "d", "e", "f", "g", "h"]);
        assert_eq!(refs.most_frequent().normalized(), "a");
        let refs = annotations(&["b", "b", "b", "a", "a", "c", "d", "e", "f", "g"]);
        assert_eq!(refs.most_frequent().normalized(), "b");
    }

    #[test]
    fn load_preserves_order_and_normalizes() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        let line = |id: &str| {
            format!(
                r#"{{"id":"{id}","image_id":"img1","predicted_answer":"  YES ","annotations":["yes","yes","yes","yes","yes","yes","yes","yes","yes","yes"]}}"#
            )
        };
        std::fs::write(&path, format!("{}\n{}\n{}\n", line("q1"), line("q2"), line("q3"))).unwrap();
        let set = load_records(&path).unwrap();
        assert_eq!(set.len(), 3);
        let ids: Vec<&str> = set.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["q1", "q2", "q3"]);
        assert_eq!(set.records()[0].predicted_answer.normalized(), "yes");
    }

    #[test]
    fn load_rejects_malformed_line_with_line_number() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        std::fs::write(&path, "{\"id\": broken\n").unwrap();
        let err = load_records(&path).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn load_rejects_nine_annotations() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        let refs = vec!["\"yes\""; 9].join(",");
        std::fs::write(
            &path,
            format!(
                r#"{{"id":"q1","image_id":"i","predicted_answer":"yes","annotations":[{refs}]}}"#
            ) + "\n",
        )
        .unwrap();
        let err = load_records(&path).unwrap_err();
        assert!(err.to_string().contains("annotation count 9 ≠ 10"), "{err}");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let records = vec![
            record("q1", "i1", "yes", &ten_yes()),
            record("q1", "i2", "no", &ten_yes()),
        ];
        let err = RecordSet::new(records, None).unwrap_err();
        assert!(err.to_string().contains("duplicate record id 'q1'"), "{err}");
    }

    #[test]
    fn logits_require_vocabulary() {
        let mut r = record("q1", "i1", "yes", &ten_yes());
        r.features = Some(FeatureBundle { logits: Some(vec![1.0, 0.0]), ..Default::default() });
        let err = RecordSet::new(vec![r.clone()], None).unwrap_err();
        assert!(err.to_string().contains("no vocabulary"), "{err}");

        let vocab = vec![answer("yes")];
        let err = RecordSet::new(vec![r.clone()], Some(vocab)).unwrap_err();
        assert!(err.to_string().contains("vocabulary length 1 ≠ logits dimension 2"), "{err}");

        let vocab = vec![answer("yes"), answer("no")];
        assert!(RecordSet::new(vec![r], Some(vocab)).is_ok());
    }

    #[test]
    fn inconsistent_channel_dimension_rejected() {
        let mut a = record("q1", "i1", "yes", &ten_yes());
        a.features = Some(FeatureBundle { r: Some(vec![1.0, 2.0]), ..Default::default() });
        let mut b = record("q2", "i2", "yes", &ten_yes());
        b.features = Some(FeatureBundle { r: Some(vec![1.0]), ..Default::default() });
        let err = RecordSet::new(vec![a, b], None).unwrap_err();
        assert!(err.to_string().contains("channel `r`"), "{err}");
    }

    #[test]
    fn round_trip_preserves_records() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        let mut r = record("q1", "i1", " Red  Apple", &ten_yes());
        r.confidence = Some(0.75);
        r.difficulty = Some(2);
        r.noise_override = Some(NoiseOverride::Unfair);
        r.features = Some(FeatureBundle {
            q: Some(vec![0.5, -1.25]),
            logits: Some(vec![2.0, 1.0]),
            ..Default::default()
        });
        let vocab = vec![answer("red apple"), answer("no")];
        let set = RecordSet::new(vec![r], Some(vocab.clone())).unwrap();
        save_records(&set, &path).unwrap();
        let vocab_path = vocabulary_sidecar_path(&path);
        save_vocabulary(&vocab, &vocab_path).unwrap();

        let loaded = load_records_with_vocabulary(&path, &vocab_path).unwrap();
        assert_eq!(loaded.len(), 1);
        let got = &loaded.records()[0];
        let want = &set.records()[0];
        assert_eq!(got.id, want.id);
        assert_eq!(got.predicted_answer, want.predicted_answer);
        assert_eq!(got.annotations, want.annotations);
        assert_eq!(got.confidence, want.confidence);
        assert_eq!(got.features, want.features);
        assert_eq!(got.difficulty, want.difficulty);
        assert_eq!(got.noise_override, want.noise_override);
        assert_eq!(loaded.vocabulary().unwrap(), vocab.as_slice());
    }

    fn set_with_images(n_images: usize, per_image: usize) -> RecordSet {
        let mut records = Vec::new();
        for i in 0..n_images {
            for j in 0..per_image {
                records.push(record(
                    &format!("q{i}_{j}"),
                    &format!("img{i:03}"),
                    "yes",
                    &ten_yes(),
                ));
            }
        }
        RecordSet::new(records, None).unwrap()
    }

    #[test]
    fn split_sizes_follow_floor_rule() {
        // 10 images at 0.4/0.1/0.5 -> 4/1/5 images.
        let set = set_with_images(10, 2);
        let spec = SplitSpec::new([0.4, 0.1, 0.5], 7).unwrap();
        let (dev, val, test) = split_by_image(&set, &spec).unwrap();
        let images = |s: &RecordSet| {
            s.iter().map(|r| r.image_id.clone()).collect::<HashSet<_>>().len()
        };
        assert_eq!(images(&dev), 4);
        assert_eq!(images(&val), 1);
        assert_eq!(images(&test), 5);
        assert_eq!(dev.len() + val.len() + test.len(), set.len());
    }

    #[test]
    fn degenerate_ratio_sends_everything_to_dev() {
        let set = set_with_images(2, 1);
        let spec = SplitSpec::new([1.0, 0.0, 0.0], 0).unwrap();
        let (dev, val, test) = split_by_image(&set, &spec).unwrap();
        assert_eq!(dev.len(), 2);
        assert!(val.is_empty());
        assert!(test.is_empty());
    }

    #[test]
    fn too_few_images_with_positive_ratios_errors() {
        let set = set_with_images(2, 1);
        let spec = SplitSpec::default();
        let err = split_by_image(&set, &spec).unwrap_err();
        assert!(err.to_string().contains("cannot populate all splits"), "{err}");
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let set = set_with_images(20, 3);
        let spec = SplitSpec::new([0.4, 0.1, 0.5], 42).unwrap();
        let (d1, v1, t1) = split_by_image(&set, &spec).unwrap();
        let (d2, v2, t2) = split_by_image(&set, &spec).unwrap();
        let ids = |s: &RecordSet| s.iter().map(|r| r.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&d1), ids(&d2));
        assert_eq!(ids(&v1), ids(&v2));
        assert_eq!(ids(&t1), ids(&t2));

        let other = SplitSpec::new([0.4, 0.1, 0.5], 43).unwrap();
        let (d3, _, _) = split_by_image(&set, &other).unwrap();
        assert_ne!(ids(&d1), ids(&d3), "different seeds should shuffle differently");
    }

    #[test]
    fn records_sharing_an_image_stay_together() {
        let set = set_with_images(8, 4);
        let spec = SplitSpec::new([0.4, 0.1, 0.5], 3).unwrap();
        let (dev, val, test) = split_by_image(&set, &spec).unwrap();
        let image_split: BTreeMap<String, usize> = dev
            .iter()
            .map(|r| (r.image_id.clone(), 0))
            .chain(val.iter().map(|r| (r.image_id.clone(), 1)))
            .chain(test.iter().map(|r| (r.image_id.clone(), 2)))
            .collect();
        for (split_idx, part) in [&dev, &val, &test].iter().enumerate() {
            for r in part.iter() {
                assert_eq!(image_split[&r.image_id], split_idx);
            }
        }
    }

    #[test]
    fn pool_features_examples() {
        assert_eq!(pool_features(&[vec![1.0, 2.0], vec![3.0, 0.0]]).unwrap(), vec![3.0, 2.0]);
        assert_eq!(pool_features(&[vec![5.0, 6.0]]).unwrap(), vec![5.0, 6.0]);
        assert_eq!(
            pool_features(&[vec![-1.0, -2.0], vec![-3.0, -1.0]]).unwrap(),
            vec![-1.0, -1.0]
        );
        assert!(pool_features(&[]).is_err());
        assert!(pool_features(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    proptest! {
        #[test]
        fn split_partitions_the_input(n_images in 3usize..30, per_image in 1usize..4, seed in 0u64..1000) {
            let set = set_with_images(n_images, per_image);
            let spec = SplitSpec::new([0.4, 0.1, 0.5], seed).unwrap();
            let (dev, val, test) = split_by_image(&set, &spec).unwrap();
            let mut all: Vec<String> = dev.iter().chain(val.iter()).chain(test.iter()).map(|r| r.id.clone()).collect();
            all.sort();
            let mut want: Vec<String> = set.iter().map(|r| r.id.clone()).collect();
            want.sort();
            prop_assert_eq!(all, want);

            let di: HashSet<_> = dev.iter().map(|r| r.image_id.clone()).collect();
            let vi: HashSet<_> = val.iter().map(|r| r.image_id.clone()).collect();
            let ti: HashSet<_> = test.iter().map(|r| r.image_id.clone()).collect();
            prop_assert!(di.is_disjoint(&vi));
            prop_assert!(di.is_disjoint(&ti));
            prop_assert!(vi.is_disjoint(&ti));
        }

        #[test]
        fn pool_features_is_permutation_invariant(vectors in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 4), 1..6), shift in 0usize..6) {
            let pooled = pool_features(&vectors).unwrap();
            let mut rotated = vectors.clone();
            rotated.rotate_left(shift % vectors.len());
            prop_assert_eq!(pooled, pool_features(&rotated).unwrap());
        }
    }
}
