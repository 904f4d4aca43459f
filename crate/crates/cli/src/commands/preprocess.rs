//! Preprocessing pipeline: clean, label by rating, dedup, downsample per
//! label, carve the pool into three disjoint datasets, split each 5:1:1,
//! and build the vocabulary from the union of train splits.

use std::collections::BTreeMap;
use std::path::Path;

use promptgen_core::config::ExperimentConfig;
use promptgen_core::corpus::{
    clean_text, dedup_exact, label_by_rating, length_preserving_downsample, synth_corpus, Corpus,
    Label, LabelDecision, Review, Vocabulary,
};
use promptgen_core::tensor::rng::SplitRng;
use promptgen_core::{Error, Result};

#[derive(Debug, Default, serde::Serialize)]
struct Summary {
    input_records: usize,
    discarded_neutral_rating: usize,
    discarded_missing_rating: usize,
    duplicates_removed: usize,
    kept_per_label: BTreeMap<String, usize>,
    /// dataset -> split -> label -> count
    datasets: BTreeMap<String, BTreeMap<String, BTreeMap<String, usize>>>,
    vocab_size: usize,
}

pub fn run(
    config: &ExperimentConfig,
    out_dir: &Path,
    input: Option<&Path>,
    synth: bool,
) -> Result<()> {
    let raw = match (input, synth) {
        (Some(_), true) => {
            return Err(Error::config(
                "--input and --synth are mutually exclusive".to_string(),
            ))
        }
        (Some(path), false) => {
            super::require_file(path, "raw input corpus")?;
            let mut corpus = Corpus::read_jsonl(path)?;
            // raw records carry text + rating; labels are derived below
            for r in &mut corpus.reviews {
                r.label = None;
            }
            corpus
        }
        (None, true) => {
            let mut pool = synth_corpus(&config.corpus.synth_config(config.seed))?;
            for r in &mut pool.reviews {
                r.label = None;
            }
            pool
        }
        (None, false) => {
            return Err(Error::config(
                "preprocess needs --input <file> or --synth".to_string(),
            ))
        }
    };

    let mut summary = Summary {
        input_records: raw.len(),
        ..Default::default()
    };

    // clean + label
    let mut labelled: Vec<Review> = Vec::with_capacity(raw.len());
    for r in &raw.reviews {
        let text = clean_text(&r.text);
        match label_by_rating(r.rating)? {
            LabelDecision::Keep(label) => {
                let mut review = Review::new(text).with_label(label);
                review.rating = r.rating;
                labelled.push(review);
            }
            LabelDecision::Discard => {
                if r.rating.is_none() {
                    summary.discarded_missing_rating += 1;
                } else {
                    summary.discarded_neutral_rating += 1;
                }
            }
        }
    }

    // dedup on normalized text
    let pool = Corpus::new(labelled, "preprocessed");
    let deduped = dedup_exact(&pool);
    summary.duplicates_removed = pool.len() - deduped.len();

    let per_label_total = config.corpus.per_label_total();
    let need = per_label_total * config.corpus.dataset_count;
    let rng = SplitRng::new(config.seed ^ 0x9e3779b97f4a7c15);

    let mut datasets: Vec<Vec<Vec<Review>>> =
        vec![vec![Vec::new(); 3]; config.corpus.dataset_count];
    for label in [Label::Negative, Label::Positive] {
        let pool_l = deduped.filter_label(label);
        summary
            .kept_per_label
            .insert(label.as_str().to_string(), pool_l.len());
        if pool_l.len() < need {
            return Err(Error::data(format!(
                "{} pool has {} reviews, need {need} \
                 ({} datasets x {per_label_total} per label)",
                label,
                pool_l.len(),
                config.corpus.dataset_count,
            )));
        }
        let sampled =
            length_preserving_downsample(&pool_l, need, rng.derive(label.index() as u64).seed())?;
        let mut order: Vec<usize> = (0..sampled.len()).collect();
        rng.derive(100 + label.index() as u64).shuffle(&mut order);
        for (k, &idx) in order.iter().enumerate() {
            let dataset = k / per_label_total;
            let within = k % per_label_total;
            let split = if within < config.corpus.train_per_label {
                0
            } else if within < config.corpus.train_per_label + config.corpus.val_per_label {
                1
            } else {
                2
            };
            datasets[dataset][split].push(sampled.reviews[idx].clone());
        }
    }

    // write datasets and accumulate counts
    let split_names = ["train", "validation", "test"];
    let mut train_union = Vec::new();
    for (d, splits) in datasets.into_iter().enumerate() {
        let dataset_name = format!("dataset-{}", d + 1);
        let dir = out_dir.join(&dataset_name);
        std::fs::create_dir_all(&dir)?;
        let mut dataset_counts = BTreeMap::new();
        for (s, reviews) in splits.into_iter().enumerate() {
            let mut label_counts = BTreeMap::new();
            for label in [Label::Negative, Label::Positive] {
                label_counts.insert(
                    label.as_str().to_string(),
                    reviews.iter().filter(|r| r.label == Some(label)).count(),
                );
            }
            dataset_counts.insert(split_names[s].to_string(), label_counts);
            if s == 0 {
                train_union.extend(reviews.iter().cloned());
            }
            let corpus = Corpus::new(reviews, format!("{dataset_name}/{}", split_names[s]));
            corpus.write_jsonl(&dir.join(format!("{}.jsonl", split_names[s])))?;
        }
        summary.datasets.insert(dataset_name, dataset_counts);
    }

    // vocabulary from the union of train splits only (no val/test leakage)
    let vocab = Vocabulary::build(
        &Corpus::new(train_union, "train-union"),
        config.corpus.max_vocab,
    )?;
    vocab.save(&out_dir.join("vocab.txt"))?;
    summary.vocab_size = vocab.len();

    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::data(format!("serialize summary: {e}")))?;
    std::fs::write(out_dir.join("preprocess-summary.json"), &json)?;

    let mut text = String::new();
    text.push_str(&format!("input records        {}\n", summary.input_records));
    text.push_str(&format!(
        "discarded (rating 3) {}\n",
        summary.discarded_neutral_rating
    ));
    text.push_str(&format!(
        "discarded (unrated)  {}\n",
        summary.discarded_missing_rating
    ));
    text.push_str(&format!(
        "duplicates removed   {}\n",
        summary.duplicates_removed
    ));
    for (label, n) in &summary.kept_per_label {
        text.push_str(&format!("kept {label:<14} {n}\n"));
    }
    for (name, splits) in &summary.datasets {
        for (split, labels) in splits {
            let total: usize = labels.values().sum();
            text.push_str(&format!(
                "{name}/{split}: {total} ({})\n",
                labels
                    .iter()
                    .map(|(l, n)| format!("{l} {n}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            ));
        }
    }
    text.push_str(&format!("vocabulary size      {}\n", summary.vocab_size));
    std::fs::write(out_dir.join("preprocess-summary.txt"), &text)?;
    print!("{text}");

    super::write_snapshot(config, out_dir, "preprocess")
}
