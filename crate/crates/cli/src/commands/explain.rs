//! Attribution listings for individual classifier decisions.

use std::path::Path;

use promptgen_core::classifier::ClassifierModel;
use promptgen_core::config::ExperimentConfig;
use promptgen_core::corpus::Label;
use promptgen_core::eval::{lime_explain, LimeOptions, MetricsReport};
use promptgen_core::Result;

pub fn run(
    config: &ExperimentConfig,
    out_dir: &Path,
    classifier: Option<&Path>,
    input: Option<&Path>,
    count: Option<usize>,
) -> Result<()> {
    let vocab = super::load_vocab(out_dir)?;
    let classifier_path = super::resolve(classifier, out_dir, "classifier.plm");
    super::require_file(&classifier_path, "classifier checkpoint")?;
    let model = ClassifierModel::load(&classifier_path)?;

    let input_path = super::resolve(input, out_dir, "dataset-1/test.jsonl");
    let corpus = super::load_tokenized(&input_path, &vocab, "corpus to explain")?;

    let lime_opts = LimeOptions {
        num_samples: config.eval.lime_samples,
        kernel_width: config.eval.lime_kernel_width,
        ridge: config.eval.lime_ridge,
        seed: config.seed,
    };
    let count = count.unwrap_or(config.eval.lime_examples);

    let mut metrics = MetricsReport::new(format!(
        "attribution listings for {}",
        input_path.display()
    ));
    for r in corpus.reviews.iter().take(count) {
        let ids = r.token_ids.clone().unwrap_or_default();
        if ids.is_empty() {
            continue;
        }
        let names: Vec<String> = ids
            .iter()
            .map(|&id| vocab.token(id).unwrap_or("<unk>").to_string())
            .collect();
        // explain the predicted class so listings read as supporting
        // evidence for the decision actually made
        let predicted: Label = model.predict(&ids)?;
        let explanation = lime_explain(
            |kept| Ok(model.predict_proba(kept)?[predicted.index()]),
            &ids,
            &names,
            &lime_opts,
        )?;
        metrics.explanations.push(explanation);
    }

    std::fs::write(out_dir.join("explain-report.txt"), metrics.to_string())?;
    std::fs::write(out_dir.join("explain-report.json"), metrics.to_json()?)?;
    println!("{metrics}");
    super::write_snapshot(config, out_dir, "explain")
}
