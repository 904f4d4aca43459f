//! Synthetic labelled-corpus generator.
//!
//! Each class draws words from a class-biased unigram profile over a shared
//! lexicon plus a class-exclusive lexicon, giving a corpus that is cheap to
//! generate, learnable by the toy models, and separable by construction.

use crate::corpus::{Corpus, DataSplits, Label, Review};
use crate::corpus::sample::split_ratio;
use crate::error::{Error, Result};
use crate::tensor::rng::SplitRng;

/// Words common to both classes. Kept small so that n-gram statistics at
/// desk scale have usable collision mass.
pub const SHARED_LEXICON: &[&str] = &[
    "the", "this", "it", "was", "and", "movie", "film", "plot", "story", "acting",
    "ending", "watch", "i", "very", "so", "again",
];

/// Words that only the positive profile emits (up to cross-class noise).
pub const POSITIVE_LEXICON: &[&str] = &[
    "great", "wonderful", "excellent", "amazing", "loved", "beautiful", "brilliant",
    "fantastic", "perfect", "superb",
];

/// Words that only the negative profile emits (up to cross-class noise).
pub const NEGATIVE_LEXICON: &[&str] = &[
    "terrible", "awful", "horrible", "boring", "hated", "dreadful", "poor", "waste",
    "worst", "disappointing",
];

/// Lexicon for a class.
pub fn exclusive_lexicon(label: Label) -> &'static [&'static str] {
    match label {
        Label::Positive => POSITIVE_LEXICON,
        Label::Negative => NEGATIVE_LEXICON,
    }
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    /// Reviews generated per class.
    pub per_class: usize,
    /// Token length range (inclusive).
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a word comes from the class's own exclusive lexicon.
    pub exclusive_rate: f64,
    /// Probability that a word leaks from the opposite class's lexicon.
    pub cross_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            per_class: 700,
            min_len: 8,
            max_len: 18,
            exclusive_rate: 0.4,
            cross_noise: 0.01,
            seed: crate::tensor::rng::DEFAULT_SEED,
        }
    }
}

fn generate_review(label: Label, rng: &mut SplitRng, config: &SynthConfig) -> Review {
    let len = config.min_len + rng.below(config.max_len - config.min_len + 1);
    let own = exclusive_lexicon(label);
    let other = exclusive_lexicon(label.opposite());
    let mut words = Vec::with_capacity(len);
    for _ in 0..len {
        let u = rng.uniform();
        let w = if u < config.exclusive_rate {
            own[rng.below(own.len())]
        } else if u < config.exclusive_rate + config.cross_noise {
            other[rng.below(other.len())]
        } else {
            SHARED_LEXICON[rng.below(SHARED_LEXICON.len())]
        };
        words.push(w);
    }
    let rating = match label {
        Label::Positive => 4 + rng.below(2) as u8,
        Label::Negative => 1 + rng.below(2) as u8,
    };
    Review::new(words.join(" "))
        .with_rating(rating)
        .with_label(label)
}

/// Generate a labelled corpus, `per_class` reviews for each label,
/// deterministic per seed. Ratings are drawn consistently with the label so
/// the preprocessing pipeline can re-derive labels from scratch.
pub fn synth_corpus(config: &SynthConfig) -> Result<Corpus> {
    if config.min_len == 0 || config.max_len < config.min_len {
        return Err(Error::config(format!(
            "invalid synthetic length range {}..={}",
            config.min_len, config.max_len
        )));
    }
    if config.exclusive_rate + config.cross_noise > 1.0 {
        return Err(Error::config(
            "exclusive_rate + cross_noise exceeds 1".to_string(),
        ));
    }
    let root = SplitRng::new(config.seed);
    let mut reviews = Vec::with_capacity(config.per_class * 2);
    for (ci, label) in [Label::Negative, Label::Positive].into_iter().enumerate() {
        let class_rng = root.derive(ci as u64);
        for i in 0..config.per_class {
            let mut rng = class_rng.derive(i as u64);
            reviews.push(generate_review(label, &mut rng, config));
        }
    }
    // interleave classes so prefixes of the corpus stay balanced
    let (neg, pos) = reviews.split_at(config.per_class);
    let mut interleaved = Vec::with_capacity(reviews.len());
    for i in 0..config.per_class {
        interleaved.push(neg[i].clone());
        interleaved.push(pos[i].clone());
    }
    Ok(Corpus::new(
        interleaved,
        format!("synthetic(seed={})", config.seed),
    ))
}

/// Generate and split 5:1:1 per class.
pub fn synth_splits(config: &SynthConfig) -> Result<DataSplits> {
    let corpus = synth_corpus(config)?;
    split_ratio(&corpus, (5, 1, 1), config.seed ^ 0x5eed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_per_label() {
        let c = synth_corpus(&SynthConfig {
            per_class: 100,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(c.len(), 200);
        assert_eq!(c.count_label(Label::Positive), 100);
        assert_eq!(c.count_label(Label::Negative), 100);
    }

    #[test]
    fn same_seed_same_corpus() {
        let cfg = SynthConfig {
            per_class: 50,
            seed: 9,
            ..Default::default()
        };
        let a = synth_corpus(&cfg).unwrap();
        let b = synth_corpus(&cfg).unwrap();
        for (x, y) in a.reviews.iter().zip(&b.reviews) {
            assert_eq!(x.text, y.text);
            assert_eq!(x.rating, y.rating);
        }
    }

    #[test]
    fn ratings_are_consistent_with_labels() {
        let c = synth_corpus(&SynthConfig {
            per_class: 80,
            ..Default::default()
        })
        .unwrap();
        c.validate().unwrap();
    }

    #[test]
    fn exclusive_words_concentrate_in_their_class() {
        // counting oracle over generated output: at least 95% of
        // positive-exclusive token occurrences are in positive reviews
        let c = synth_corpus(&SynthConfig {
            per_class: 500,
            ..Default::default()
        })
        .unwrap();
        let pos_set: std::collections::HashSet<&str> =
            POSITIVE_LEXICON.iter().copied().collect();
        let mut in_pos = 0usize;
        let mut total = 0usize;
        for r in &c.reviews {
            for w in r.text.split_whitespace() {
                if pos_set.contains(w) {
                    total += 1;
                    if r.label == Some(Label::Positive) {
                        in_pos += 1;
                    }
                }
            }
        }
        assert!(total > 0);
        let frac = in_pos as f64 / total as f64;
        assert!(frac >= 0.95, "positive-exclusive concentration {frac}");
    }

    #[test]
    fn splits_follow_table_ratio() {
        let splits = synth_splits(&SynthConfig {
            per_class: 70,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(splits.train.len(), 100);
        assert_eq!(splits.validation.len(), 20);
        assert_eq!(splits.test.len(), 20);
        assert_eq!(splits.train.count_label(Label::Positive), 50);
    }

    #[test]
    fn lexicons_are_disjoint() {
        let shared: std::collections::HashSet<&str> = SHARED_LEXICON.iter().copied().collect();
        for w in POSITIVE_LEXICON.iter().chain(NEGATIVE_LEXICON) {
            assert!(!shared.contains(w), "{w} is in the shared lexicon");
        }
        let pos: std::collections::HashSet<&str> = POSITIVE_LEXICON.iter().copied().collect();
        for w in NEGATIVE_LEXICON {
            assert!(!pos.contains(w), "{w} is in both exclusive lexicons");
        }
    }
}
