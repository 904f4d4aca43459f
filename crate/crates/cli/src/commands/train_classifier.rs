//! Sentiment-classifier training on a labelled corpus (real or generated).

use std::path::Path;

use promptgen_core::classifier::train_classifier;
use promptgen_core::config::ExperimentConfig;
use promptgen_core::Result;

pub fn run(
    config: &ExperimentConfig,
    out_dir: &Path,
    train: Option<&Path>,
    val: Option<&Path>,
    output: Option<&Path>,
) -> Result<()> {
    let vocab = super::load_vocab(out_dir)?;
    let train_path = super::resolve(train, out_dir, "dataset-1/train.jsonl");
    let val_path = super::resolve(val, out_dir, "dataset-1/validation.jsonl");
    let train_corpus = super::load_tokenized(&train_path, &vocab, "classifier training corpus")?;
    let val_corpus = super::load_tokenized(&val_path, &vocab, "classifier validation corpus")?;

    let model_config = config.classifier.model_config(vocab.len());
    let opts = config.classifier.train_options();
    log::info!(
        "training classifier: {} sequences, {} epochs",
        train_corpus.len(),
        opts.epochs
    );
    let (model, log) = train_classifier(model_config, &train_corpus, &val_corpus, &opts)?;

    let out_path = super::resolve(output, out_dir, "classifier.plm");
    model.save(&out_path)?;
    log.write_jsonl(&out_dir.join("train-classifier-log.jsonl"))?;
    println!(
        "classifier: best val accuracy {:.4} at epoch {} -> {}",
        log.best_val_accuracy,
        log.best_epoch,
        out_path.display()
    );
    super::write_snapshot(config, out_dir, "train-classifier")
}
