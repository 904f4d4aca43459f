//! Property tests for the corpus-normalization and decoding invariants.

use proptest::prelude::*;

use promptgen_core::corpus::sample::apportion;
use promptgen_core::corpus::{clean_text, dedup_exact, Corpus, Review, Vocabulary};
use promptgen_core::decoding::{top_k_filter, top_p_filter};
use promptgen_core::tensor::softmax_slice;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clean_text_is_idempotent(raw in ".{0,200}") {
        let once = clean_text(&raw);
        prop_assert_eq!(clean_text(&once), once);
    }

    #[test]
    fn clean_text_output_alphabet(raw in ".{0,200}") {
        let cleaned = clean_text(&raw);
        prop_assert!(cleaned
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == ' '));
        prop_assert!(!cleaned.starts_with(' '));
        prop_assert!(!cleaned.ends_with(' '));
        prop_assert!(!cleaned.contains("  "));
    }

    #[test]
    fn tokenize_round_trips_in_vocab_text(words in prop::collection::vec("[a-z]{1,8}", 1..20)) {
        let text = words.join(" ");
        let corpus = Corpus::new(vec![Review::new(text.clone())], "prop");
        let vocab = Vocabulary::build(&corpus, 4 + words.len() * 2).unwrap();
        let ids = vocab.tokenize(&text);
        prop_assert_eq!(vocab.detokenize(&ids), text);
    }

    #[test]
    fn dedup_keeps_unique_texts_in_order(texts in prop::collection::vec("[a-c ]{0,6}", 0..30)) {
        let corpus = Corpus::new(texts.iter().map(|t| Review::new(t.clone())).collect(), "prop");
        let deduped = dedup_exact(&corpus);
        // unique
        let mut seen = std::collections::HashSet::new();
        for r in &deduped.reviews {
            prop_assert!(seen.insert(r.text.clone()));
        }
        // order preserved: deduped is a subsequence of the input
        let mut it = texts.iter();
        for r in &deduped.reviews {
            prop_assert!(it.any(|t| *t == r.text));
        }
        // first occurrences all survive
        prop_assert_eq!(deduped.len(), seen.len());
    }

    #[test]
    fn nucleus_filter_output_is_a_distribution(
        logits in prop::collection::vec(-8.0..8.0f64, 2..40),
        p in 0.05..1.0f64,
        k in 0usize..40,
    ) {
        let probs = softmax_slice(&logits);
        let filtered = top_p_filter(&top_k_filter(&probs, k), p).unwrap();
        prop_assert!(filtered.iter().all(|&v| v >= 0.0));
        let total: f64 = filtered.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        // support shrinks, never grows
        for (f, q) in filtered.iter().zip(&probs) {
            prop_assert!(*f == 0.0 || *q > 0.0);
        }
        // kept mass in the pre-filter distribution reaches p
        let kept: f64 = filtered
            .iter()
            .zip(&probs)
            .filter(|(f, _)| **f > 0.0)
            .map(|(_, q)| q)
            .sum();
        if k == 0 || k >= logits.len() {
            prop_assert!(kept >= p - 1e-9);
        }
    }

    #[test]
    fn apportion_conserves_and_respects_capacity(
        counts in prop::collection::vec(0usize..50, 1..12),
        frac in 0.0..1.0f64,
    ) {
        let total: usize = counts.iter().sum();
        let target = (total as f64 * frac) as usize;
        let quotas = apportion(&counts, target);
        prop_assert_eq!(quotas.iter().sum::<usize>(), target);
        for (q, c) in quotas.iter().zip(&counts) {
            prop_assert!(q <= c);
        }
    }
}
