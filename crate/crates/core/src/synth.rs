//! Deterministic synthetic benchmark generator.
//!
//! Each generated record draws an accuracy level from a configured lattice
//! distribution and realizes it exactly by construction: the annotation set
//! holds `k` copies of the predicted answer plus distinct filler strings,
//! where `k` inverts the closed-form accuracy. Logits are built so the
//! MaxProb confidence correlates with correctness but is sharpened by a
//! configurable distortion exponent, and feature channels carry an
//! accuracy-indicating direction of configurable strength. Generation is
//! index-split: record `i` draws from stream `i` of the seeded generator,
//! so per-record output is order-independent and reproducible.
//!
//! The generator also emits a latent sidecar (one JSON object per line with
//! the record's true level and calibrated confidence) backing a Bayes
//! reference selector that upper-bounds learned selectors.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::accuracy::{closed_form_accuracy, ACCURACY_LATTICE};
use crate::error::{Error, Result};
use crate::nn::seeded_rng;
use crate::records::{AnnotationSet, AnswerText, FeatureBundle, Record, RecordSet};

/// Signal coefficients per channel, relative to `signal_strength`: `r` is
/// the most informative, `v` half as strong, `q` weakly informative, and
/// `v_tilde` pure noise.
const SIGNAL_COEFF: [(ChannelId, f64); 4] =
    [(ChannelId::R, 1.0), (ChannelId::V, 0.5), (ChannelId::Q, 0.1), (ChannelId::VTilde, 0.0)];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ChannelId {
    Q,
    V,
    VTilde,
    R,
}

/// Per-channel feature dimensionalities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelDims {
    pub q: usize,
    pub v: usize,
    pub v_tilde: usize,
    pub r: usize,
}

impl Default for ChannelDims {
    fn default() -> Self {
        Self { q: 8, v: 8, v_tilde: 8, r: 8 }
    }
}

impl ChannelDims {
    fn get(&self, id: ChannelId) -> usize {
        match id {
            ChannelId::Q => self.q,
            ChannelId::V => self.v,
            ChannelId::VTilde => self.v_tilde,
            ChannelId::R => self.r,
        }
    }
}

/// Generator configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    /// Answer vocabulary size (>= 2).
    pub vocab_size: usize,
    /// Accuracy lattice levels and their frequencies (summing to 1).
    pub lattice: Vec<(f64, f64)>,
    /// Confidence sharpening exponent (>= 1; 1 leaves MaxProb calibrated).
    pub distortion: f64,
    pub dims: ChannelDims,
    /// Correlation strength between the feature channels and the true
    /// accuracy, in [0, 1].
    pub signal_strength: f64,
    /// Per-coordinate Gaussian feature noise.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 10_000,
            vocab_size: 8,
            lattice: vec![(0.0, 0.35), (0.3, 0.05), (0.6, 0.05), (0.9, 0.05), (1.0, 0.5)],
            distortion: 2.0,
            dims: ChannelDims::default(),
            signal_strength: 0.8,
            noise_std: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::Config("vocab_size must be at least 2".into()));
        }
        if self.lattice.is_empty() {
            return Err(Error::Config("lattice must not be empty".into()));
        }
        let sum: f64 = self.lattice.iter().map(|&(_, f)| f).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("lattice frequencies sum to {sum}, expected 1")));
        }
        for &(level, freq) in &self.lattice {
            if !(0.0..=1.0).contains(&freq) {
                return Err(Error::Config(format!("lattice frequency {freq} outside [0, 1]")));
            }
            if freq > 0.0 {
                match_count_for_level(level)?;
            }
        }
        if self.distortion < 1.0 || !self.distortion.is_finite() {
            return Err(Error::Config(format!("distortion must be >= 1, got {}", self.distortion)));
        }
        if !(0.0..=1.0).contains(&self.signal_strength) {
            return Err(Error::Config(format!(
                "signal_strength {} outside [0, 1]",
                self.signal_strength
            )));
        }
        if self.noise_std < 0.0 || !self.noise_std.is_finite() {
            return Err(Error::Config(format!("noise_std must be >= 0, got {}", self.noise_std)));
        }
        if [self.dims.q, self.dims.v, self.dims.v_tilde, self.dims.r].contains(&0) {
            return Err(Error::Config("feature dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Mean accuracy of the configured lattice.
    pub fn lattice_mean(&self) -> f64 {
        self.lattice.iter().map(|&(level, freq)| level * freq).sum()
    }

    /// Probability of a non-zero accuracy level.
    fn positive_mass(&self) -> f64 {
        self.lattice.iter().filter(|&&(l, _)| l > 0.0).map(|&(_, f)| f).sum()
    }

    /// Support of the calibrated-confidence distribution: a uniform band
    /// centered at the positive mass so that the marginal accuracy
    /// distribution matches the lattice exactly. Falls back to a constant
    /// when the band cannot fit inside `(1/V, 1)`.
    fn confidence_band(&self) -> (f64, f64) {
        let mu = self.positive_mass();
        let floor = 1.0 / self.vocab_size as f64;
        let half = 0.9 * (mu - floor).min(1.0 - mu);
        if half > 1e-9 {
            (mu - half, mu + half)
        } else {
            let p = mu.clamp(floor + 0.01, 0.99);
            (p, p)
        }
    }
}

/// The smallest match count whose closed-form accuracy equals `level`.
fn match_count_for_level(level: f64) -> Result<usize> {
    for k in 0..=10 {
        if (closed_form_accuracy(k)?.value() - level).abs() <= 1e-9 {
            return Ok(k);
        }
    }
    Err(Error::Config(format!(
        "lattice level {level} is not realizable; attainable values are {ACCURACY_LATTICE:?}"
    )))
}

/// Hidden generation state for one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    pub id: String,
    /// Realized accuracy level.
    pub level: f64,
    /// Calibrated correctness probability the logits were derived from.
    pub confidence: f64,
}

/// Lookup table of per-record latents.
#[derive(Debug, Clone, Default)]
pub struct LatentTable(BTreeMap<String, Latent>);

impl LatentTable {
    pub fn get(&self, id: &str) -> Option<&Latent> {
        self.0.get(id)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = File::create(path.as_ref())?;
        let mut writer = BufWriter::new(file);
        for latent in self.0.values() {
            let line = serde_json::to_string(latent)
                .map_err(|e| Error::Validation(format!("serialize latent: {e}")))?;
            writer.write_all(line.as_bytes())?;
            writer.write_all(b"\n")?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path.as_ref())?;
        let reader = BufReader::new(file);
        let mut table = BTreeMap::new();
        for (index, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let latent: Latent = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: index + 1,
                message: e.to_string(),
            })?;
            table.insert(latent.id.clone(), latent);
        }
        Ok(Self(table))
    }
}

/// Generate a benchmark: a validated record set (with vocabulary) plus the
/// latent sidecar. Fully reproducible from the seed.
pub fn generate(config: &SynthConfig) -> Result<(RecordSet, LatentTable)> {
    config.validate()?;
    let vocab: Vec<AnswerText> =
        (0..config.vocab_size).map(|i| AnswerText::new(format!("ans{i:03}"))).collect();
    let positive_mass = config.positive_mass();
    let (lo, hi) = config.confidence_band();
    // Cumulative distribution over positive levels, ascending by level.
    let mut positive_levels: Vec<(f64, f64)> =
        config.lattice.iter().filter(|&&(l, f)| l > 0.0 && f > 0.0).copied().collect();
    positive_levels.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let mut records = Vec::with_capacity(config.n);
    let mut latents = BTreeMap::new();
    for index in 0..config.n {
        let mut rng = seeded_rng(config.seed, index as u64);
        let id = format!("synth{index:06}");

        // Calibrated confidence p, then correctness b ~ Bernoulli(p).
        let p = if hi > lo { rng.gen_range(lo..hi) } else { lo };
        let correct = if positive_mass <= 0.0 {
            false
        } else if positive_mass >= 1.0 {
            true
        } else if hi > lo {
            rng.gen::<f64>() < p
        } else {
            // Degenerate band: keep the lattice marginal exact even though
            // the constant confidence cannot be calibrated.
            rng.gen::<f64>() < positive_mass
        };

        // Level selection. Within the correct records, higher confidence
        // maps to higher accuracy via quantile coupling, which preserves
        // the configured lattice marginal exactly.
        let level = if !correct {
            0.0
        } else if hi > lo {
            let quantile = (p * p - lo * lo) / (2.0 * positive_mass * (hi - lo));
            level_at_quantile(&positive_levels, positive_mass, quantile)
        } else {
            level_at_quantile(&positive_levels, positive_mass, rng.gen::<f64>())
        };
        let matches = match_count_for_level(level)?;

        let answer_index = rng.gen_range(0..config.vocab_size);
        let predicted = vocab[answer_index].clone();
        let mut annotations: Vec<AnswerText> = (0..matches).map(|_| predicted.clone()).collect();
        // Fillers sort after every vocabulary answer, so the most frequent
        // reference is the prediction exactly when it appears at all.
        annotations.extend((matches..10).map(|j| AnswerText::new(format!("zzz filler {index} {j}"))));

        let observed = p.powf(1.0 / config.distortion);
        let mut logits = vec![0.0; config.vocab_size];
        logits[answer_index] =
            (observed * (config.vocab_size - 1) as f64 / (1.0 - observed)).ln();

        let features = FeatureBundle {
            q: Some(feature_vector(config, ChannelId::Q, level, &mut rng)),
            v: Some(feature_vector(config, ChannelId::V, level, &mut rng)),
            v_tilde: Some(feature_vector(config, ChannelId::VTilde, level, &mut rng)),
            r: Some(feature_vector(config, ChannelId::R, level, &mut rng)),
            logits: Some(logits),
        };

        records.push(Record {
            id: id.clone(),
            image_id: format!("img{index:06}"),
            predicted_answer: predicted,
            confidence: None,
            features: Some(features),
            annotations: AnnotationSet::new(annotations)?,
            difficulty: Some(rng.gen_range(1..=3)),
            noise_override: None,
        });
        latents.insert(id.clone(), Latent { id, level, confidence: p });
    }
    let set = RecordSet::new(records, Some(vocab))?;
    Ok((set, LatentTable(latents)))
}

fn level_at_quantile(positive_levels: &[(f64, f64)], positive_mass: f64, quantile: f64) -> f64 {
    let mut cumulative = 0.0;
    for &(level, freq) in positive_levels {
        cumulative += freq / positive_mass;
        if quantile <= cumulative {
            return level;
        }
    }
    positive_levels.last().map(|&(l, _)| l).unwrap_or(0.0)
}

/// Signal mean of a channel for a given accuracy level: a constant unit
/// direction scaled by `coeff * signal_strength * level`.
fn channel_mean(config: &SynthConfig, id: ChannelId, level: f64) -> (usize, f64) {
    let dim = config.dims.get(id);
    let coeff = SIGNAL_COEFF.iter().find(|&&(c, _)| c == id).map(|&(_, k)| k).unwrap_or(0.0);
    let direction = 1.0 / (dim as f64).sqrt();
    (dim, coeff * config.signal_strength * level * direction)
}

fn feature_vector(config: &SynthConfig, id: ChannelId, level: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (dim, mean) = channel_mean(config, id, level);
    (0..dim)
        .map(|_| {
            let noise = if config.noise_std > 0.0 { config.noise_std * standard_normal(rng) } else { 0.0 };
            mean + noise
        })
        .collect()
}

/// Box-Muller standard normal draw.
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// The generator's own conditional expected accuracy for one record: the
/// posterior mean over lattice levels given the informative feature
/// channels. This is an upper-bound reference selector for anything
/// learned from the same features.
///
/// With zero noise the features determine the level exactly, so the stored
/// latent level is returned; with zero signal the posterior equals the
/// prior and the value is the constant lattice mean.
pub fn bayes_confidence(config: &SynthConfig, record: &Record, latents: &LatentTable) -> Result<f64> {
    let latent = latents.get(&record.id).ok_or_else(|| {
        Error::Validation(format!("record '{}' has no latent entry", record.id))
    })?;
    if config.signal_strength == 0.0 {
        return Ok(config.lattice_mean());
    }
    if config.noise_std == 0.0 {
        return Ok(latent.level);
    }
    let features = record
        .features
        .as_ref()
        .ok_or_else(|| Error::Validation(format!("record '{}' has no features", record.id)))?;

    // log P(level | features) up to a constant:
    // log freq(level) - sum_channels ||x - mean(level)||^2 / (2 sigma^2).
    let channels: [(ChannelId, Option<&Vec<f64>>); 3] = [
        (ChannelId::R, features.r.as_ref()),
        (ChannelId::V, features.v.as_ref()),
        (ChannelId::Q, features.q.as_ref()),
    ];
    let two_sigma_sq = 2.0 * config.noise_std * config.noise_std;
    let mut log_weights = Vec::with_capacity(config.lattice.len());
    for &(level, freq) in &config.lattice {
        if freq == 0.0 {
            continue;
        }
        let mut log_w = freq.ln();
        for &(id, vec) in &channels {
            let Some(vec) = vec else { continue };
            let (_, mean) = channel_mean(config, id, level);
            if mean == 0.0 && channel_mean(config, id, 1.0).1 == 0.0 {
                continue; // uninformative channel, likelihood is level-independent
            }
            let sq: f64 = vec.iter().map(|&x| (x - mean) * (x - mean)).sum();
            log_w -= sq / two_sigma_sq;
        }
        log_weights.push((level, log_w));
    }
    let max = log_weights.iter().map(|&(_, w)| w).fold(f64::NEG_INFINITY, f64::max);
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    for &(level, log_w) in &log_weights {
        let w = (log_w - max).exp();
        numerator += level * w;
        denominator += w;
    }
    Ok(numerator / denominator)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accuracy::vqa_accuracy;
    use crate::selectors::maxprob_confidence;

    fn small_config(seed: u64) -> SynthConfig {
        SynthConfig { n: 200, seed, ..SynthConfig::default() }
    }

    #[test]
    fn generated_records_validate_and_realize_their_level() {
        let (set, latents) = generate(&small_config(0)).unwrap();
        assert_eq!(set.len(), 200);
        assert_eq!(latents.len(), 200);
        for record in set.iter() {
            let latent = latents.get(&record.id).unwrap();
            let accuracy = vqa_accuracy(&record.predicted_answer, &record.annotations).value();
            assert_eq!(accuracy, latent.level, "record {}", record.id);
        }
    }

    #[test]
    fn maxprob_recovers_the_distorted_confidence() {
        let config = small_config(1);
        let (set, latents) = generate(&config).unwrap();
        for record in set.iter().take(50) {
            let latent = latents.get(&record.id).unwrap();
            let expected = latent.confidence.powf(1.0 / config.distortion);
            let got = maxprob_confidence(record).unwrap();
            assert!((got - expected).abs() < 1e-9, "{} vs {expected}", got);
        }
    }

    #[test]
    fn degenerate_lattice_gives_unit_accuracy_everywhere() {
        let config = SynthConfig {
            n: 50,
            lattice: vec![(1.0, 1.0)],
            ..small_config(2)
        };
        let (set, _) = generate(&config).unwrap();
        for record in set.iter() {
            assert_eq!(vqa_accuracy(&record.predicted_answer, &record.annotations).value(), 1.0);
        }
    }

    #[test]
    fn generation_is_reproducible_and_seed_sensitive() {
        let (a, _) = generate(&small_config(7)).unwrap();
        let (b, _) = generate(&small_config(7)).unwrap();
        let line = |set: &RecordSet| serde_json::to_string(set.records()).unwrap();
        assert_eq!(line(&a), line(&b));
        let (c, _) = generate(&small_config(8)).unwrap();
        assert_ne!(line(&a), line(&c));
    }

    #[test]
    fn unrealizable_lattice_level_is_a_config_error() {
        let config = SynthConfig {
            lattice: vec![(0.5, 1.0)],
            ..small_config(0)
        };
        let err = generate(&config).unwrap_err();
        assert!(err.to_string().contains("not realizable"), "{err}");
    }

    #[test]
    fn lattice_frequencies_must_sum_to_one() {
        let config = SynthConfig {
            lattice: vec![(0.0, 0.5), (1.0, 0.6)],
            ..small_config(0)
        };
        assert!(generate(&config).is_err());
    }

    #[test]
    fn realized_level_distribution_tracks_the_lattice() {
        let config = SynthConfig { n: 10_000, ..SynthConfig::default() };
        let (set, latents) = generate(&config).unwrap();
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for record in set.iter() {
            let level = latents.get(&record.id).unwrap().level;
            *counts.entry(format!("{level:.1}")).or_insert(0) += 1;
        }
        for &(level, freq) in &config.lattice {
            let got = counts.get(&format!("{level:.1}")).copied().unwrap_or(0) as f64
                / config.n as f64;
            // 4-sigma binomial bound at n = 10_000.
            let bound = 4.0 * (freq * (1.0 - freq) / config.n as f64).sqrt();
            assert!(
                (got - freq).abs() <= bound,
                "level {level}: got {got:.4}, want {freq:.4} ± {bound:.4}"
            );
        }
    }

    #[test]
    fn bayes_with_zero_noise_equals_realized_accuracy() {
        let config = SynthConfig { noise_std: 0.0, ..small_config(3) };
        let (set, latents) = generate(&config).unwrap();
        for record in set.iter().take(50) {
            let bayes = bayes_confidence(&config, record, &latents).unwrap();
            let accuracy = vqa_accuracy(&record.predicted_answer, &record.annotations).value();
            assert_eq!(bayes, accuracy);
        }
    }

    #[test]
    fn bayes_with_zero_signal_is_the_lattice_mean() {
        let config = SynthConfig { signal_strength: 0.0, ..small_config(4) };
        let (set, latents) = generate(&config).unwrap();
        let mean = config.lattice_mean();
        for record in set.iter().take(20) {
            assert_eq!(bayes_confidence(&config, record, &latents).unwrap(), mean);
        }
    }

    #[test]
    fn bayes_posterior_tracks_the_level_at_low_noise() {
        let config = small_config(5); // noise_std 0.05, signal 0.8
        let (set, latents) = generate(&config).unwrap();
        let mut abs_error = 0.0;
        for record in set.iter() {
            let bayes = bayes_confidence(&config, record, &latents).unwrap();
            let level = latents.get(&record.id).unwrap().level;
            abs_error += (bayes - level).abs();
        }
        let mean_abs_error = abs_error / set.len() as f64;
        assert!(mean_abs_error < 0.03, "posterior mean is off by {mean_abs_error:.4} on average");
    }

    #[test]
    fn missing_latent_is_an_error() {
        let (set, _) = generate(&small_config(6)).unwrap();
        let empty = LatentTable::default();
        assert!(bayes_confidence(&small_config(6), &set.records()[0], &empty).is_err());
    }

    #[test]
    fn latent_table_round_trips() {
        let (_, latents) = generate(&small_config(9)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("latents.jsonl");
        latents.save(&path).unwrap();
        let loaded = LatentTable::load(&path).unwrap();
        assert_eq!(loaded.len(), latents.len());
        for (id, latent) in &latents.0 {
            assert_eq!(loaded.get(id).unwrap(), latent);
        }
    }
}
