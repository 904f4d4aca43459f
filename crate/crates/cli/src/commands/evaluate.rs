//! Evaluation battery.
//!
//! Intrinsic mode judges generated corpora with a trained classifier and
//! computes similarity to the generation inputs, perplexity under the
//! generator, Dist-n diversity, and n-gram overlap against the generator's
//! training data. Extrinsic mode trains a fresh classifier on generated
//! data and tests it on the real test split, attaching attribution
//! listings for a sample of test inputs.

use std::path::Path;

use promptgen_core::classifier::{report, train_classifier, ClassifierModel};
use promptgen_core::config::ExperimentConfig;
use promptgen_core::corpus::Corpus;
use promptgen_core::eval::{
    distinct_n, greedy_match_similarity, lime_explain, ngram_overlap, perplexity, LimeOptions,
    MetricsReport, TableEmbedder,
};
use promptgen_core::model::LmModel;
use promptgen_core::{Error, Result};

pub struct Paths<'a> {
    pub generated: &'a [std::path::PathBuf],
    pub generated_val: &'a [std::path::PathBuf],
    pub judge: Option<&'a Path>,
    pub generator: Option<&'a Path>,
    pub inputs: Option<&'a Path>,
    pub train_ref: Option<&'a Path>,
    pub test: Option<&'a Path>,
}

fn load_concatenated(
    paths: &[std::path::PathBuf],
    vocab: &promptgen_core::corpus::Vocabulary,
    hint: &str,
) -> Result<Corpus> {
    let mut all = Vec::new();
    for p in paths {
        let corpus = super::load_tokenized(p, vocab, hint)?;
        all.extend(corpus.reviews);
    }
    Ok(Corpus::new(all, hint.to_string()))
}

fn write_report(report: &MetricsReport, out_dir: &Path, stem: &str) -> Result<()> {
    std::fs::write(out_dir.join(format!("{stem}.txt")), report.to_string())?;
    std::fs::write(out_dir.join(format!("{stem}.json")), report.to_json()?)?;
    println!("{report}");
    println!("report -> {stem}.txt / {stem}.json");
    Ok(())
}

fn intrinsic(
    config: &ExperimentConfig,
    out_dir: &Path,
    paths: &Paths,
    tag: Option<&str>,
) -> Result<()> {
    let vocab = super::load_vocab(out_dir)?;
    if paths.generated.is_empty() {
        return Err(Error::config(
            "intrinsic evaluation needs --generated <file>".to_string(),
        ));
    }
    let generated = load_concatenated(paths.generated, &vocab, "generated corpus")?;
    let generated_name = paths
        .generated
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(" + ");

    let judge_path = super::resolve(paths.judge, out_dir, "classifier.plm");
    super::require_file(&judge_path, "judge classifier checkpoint")?;
    let judge = ClassifierModel::load(&judge_path)?;

    let mut metrics = MetricsReport::new(format!("intrinsic evaluation of {generated_name}"));

    // judge classification against intended labels
    let preds = judge.predict_corpus(&generated)?;
    let gold: Result<Vec<_>> = generated
        .reviews
        .iter()
        .enumerate()
        .map(|(i, r)| {
            r.label
                .ok_or_else(|| Error::data(format!("generated record {i} has no label")))
        })
        .collect();
    metrics.classifier = Some(report(&preds, &gold?)?);

    // similarity against the inputs that seeded generation, paired by the
    // same cycling rule generation used
    let inputs_path = super::resolve(paths.inputs, out_dir, "dataset-3/train.jsonl");
    if inputs_path.exists() {
        let mut inputs = Corpus::read_jsonl(&inputs_path)?;
        inputs.tokenize(&vocab);
        // pair generation i with the input it was conditioned on
        let refs: Vec<Vec<u32>> = (0..generated.len())
            .map(|i| {
                let label = generated.reviews[i].label;
                let labelled = match label {
                    Some(l) => {
                        let f = inputs.filter_label(l);
                        if f.is_empty() {
                            inputs.clone()
                        } else {
                            f
                        }
                    }
                    None => inputs.clone(),
                };
                labelled.reviews[i % labelled.len()]
                    .token_ids
                    .clone()
                    .unwrap_or_default()
            })
            .collect();
        let cands: Vec<Vec<u32>> = generated
            .reviews
            .iter()
            .map(|r| r.token_ids.clone().unwrap_or_default())
            .collect();
        let generator_path = super::resolve(paths.generator, out_dir, "generator-positive.plm");
        if generator_path.exists() {
            let generator = LmModel::load(&generator_path)?;
            let embedder = TableEmbedder::from_model(&generator);
            metrics.similarity = Some(greedy_match_similarity(&cands, &refs, &embedder)?);
            metrics.quality.perplexity = Some(perplexity(&generator, &generated)?);
        } else {
            log::warn!(
                "generator checkpoint not found at {}; skipping similarity and perplexity",
                generator_path.display()
            );
        }
    }

    for &n in &config.eval.distinct_ns {
        metrics.quality.distinct.push((n, distinct_n(&generated, n)?));
    }

    let train_ref_path = super::resolve(paths.train_ref, out_dir, "dataset-2/train.jsonl");
    if train_ref_path.exists() {
        let train_ref = super::load_tokenized(&train_ref_path, &vocab, "overlap reference")?;
        for &n in &config.eval.overlap_ns {
            metrics.overlap.push((n, ngram_overlap(&generated, &train_ref, n)?));
        }
    }

    let stem = tag.map(|t| t.to_string()).unwrap_or_else(|| "eval-intrinsic".to_string());
    write_report(&metrics, out_dir, &stem)?;
    super::write_snapshot(config, out_dir, "evaluate")
}

fn extrinsic(
    config: &ExperimentConfig,
    out_dir: &Path,
    paths: &Paths,
    tag: Option<&str>,
) -> Result<()> {
    let vocab = super::load_vocab(out_dir)?;
    if paths.generated.is_empty() {
        return Err(Error::config(
            "extrinsic evaluation needs --generated <train file>".to_string(),
        ));
    }
    let generated_train = load_concatenated(paths.generated, &vocab, "generated training corpus")?;
    let generated_val = if paths.generated_val.is_empty() {
        generated_train.clone()
    } else {
        load_concatenated(paths.generated_val, &vocab, "generated validation corpus")?
    };
    let generated_name = paths
        .generated
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(" + ");
    let test_path = super::resolve(paths.test, out_dir, "dataset-1/test.jsonl");
    let test = super::load_tokenized(&test_path, &vocab, "real test split")?;

    let (model, log) = train_classifier(
        config.classifier.model_config(vocab.len()),
        &generated_train,
        &generated_val,
        &config.classifier.train_options(),
    )?;
    log::info!(
        "extrinsic classifier: best val accuracy {:.4} at epoch {}",
        log.best_val_accuracy,
        log.best_epoch
    );

    let preds = model.predict_corpus(&test)?;
    let gold: Result<Vec<_>> = test
        .reviews
        .iter()
        .enumerate()
        .map(|(i, r)| {
            r.label
                .ok_or_else(|| Error::data(format!("test record {i} has no label")))
        })
        .collect();

    let mut metrics = MetricsReport::new(format!(
        "extrinsic evaluation: classifier trained on {generated_name}"
    ));
    metrics.classifier = Some(report(&preds, &gold?)?);

    // attribution listings for the first few test inputs
    let lime_opts = LimeOptions {
        num_samples: config.eval.lime_samples,
        kernel_width: config.eval.lime_kernel_width,
        ridge: config.eval.lime_ridge,
        seed: config.seed,
    };
    for r in test.reviews.iter().take(config.eval.lime_examples) {
        let ids = r.token_ids.clone().unwrap_or_default();
        if ids.is_empty() {
            continue;
        }
        let names: Vec<String> = ids
            .iter()
            .map(|&id| vocab.token(id).unwrap_or("<unk>").to_string())
            .collect();
        let target = r.label.unwrap_or(promptgen_core::corpus::Label::Positive);
        let explanation = lime_explain(
            |kept| Ok(model.predict_proba(kept)?[target.index()]),
            &ids,
            &names,
            &lime_opts,
        )?;
        metrics.explanations.push(explanation);
    }

    let stem = tag.map(|t| t.to_string()).unwrap_or_else(|| "eval-extrinsic".to_string());
    write_report(&metrics, out_dir, &stem)?;
    super::write_snapshot(config, out_dir, "evaluate")
}

pub fn run(
    config: &ExperimentConfig,
    out_dir: &Path,
    mode: &str,
    paths: Paths,
    tag: Option<&str>,
) -> Result<()> {
    match mode {
        "intrinsic" => intrinsic(config, out_dir, &paths, tag),
        "extrinsic" => extrinsic(config, out_dir, &paths, tag),
        other => Err(Error::config(format!(
            "unknown evaluation mode {other:?}; use intrinsic or extrinsic"
        ))),
    }
}
